//! Minimal reverse-mode differentiation over dense `f64` tensors: exactly the
//! primitives the generator and discriminator networks use.

mod store;
mod tape;
mod tensor;

pub use store::{adam_step, AdamConfig, Bound, Checkpoint, Param, ParameterStore, CHECKPOINT_VERSION};
pub use tape::{BatchStats, BnMode, Gradients, Tape, Var, BN_EPS};
pub use tensor::Tensor;

/// Central-difference gradient check helpers, shared by unit and acceptance
/// tests.
pub mod gradcheck {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
    }

    /// `(f(x + h) - f(x - h)) / 2h` for one coordinate of a flat buffer.
    pub fn central_difference(
        x: &mut [f64],
        i: usize,
        h: f64,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> f64 {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(x);
        x[i] = orig - h;
        let fm = f(x);
        x[i] = orig;
        (fp - fm) / (2.0 * h)
    }
}

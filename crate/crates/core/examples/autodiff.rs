// Fit a tiny linear model with the tape and Adam, and check one gradient
// against a central difference.

use agfn::autodiff::gradcheck::{central_difference, rel_error};
use agfn::autodiff::{adam_step, AdamConfig, ParameterStore, Tape, Tensor};

fn loss_value(w: &[f64], x: &Tensor, y: &[f64]) -> f64 {
    (0..y.len())
        .map(|r| {
            let pred: f64 = (0..2).map(|c| x.data[r * 2 + c] * w[c]).sum();
            (pred - y[r]).powi(2)
        })
        .sum::<f64>()
        / y.len() as f64
}

pub fn run_example() -> agfn::Result<()> {
    // y = 2 a - b
    let x = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0])?;
    let y = vec![2.0, -1.0, 1.0, 5.0];

    let mut store = ParameterStore::new();
    store.register("w", Tensor::new(vec![1, 2], vec![0.0, 0.0])?)?;
    let cfg = AdamConfig { lr: 0.1, ..Default::default() };

    for step in 0..300 {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let pred = tape.linear(xv, bound.get("w")?, None)?;
        let target = tape.constant(Tensor::new(vec![4, 1], y.clone())?);
        let diff = tape.sub(pred, target)?;
        let sq = tape.square(diff);
        let loss = tape.mean_reduce(sq)?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {:.6}", tape.scalar(loss));
        }
        let grads = tape.backward(loss)?;
        store.accumulate(&bound, &grads, 1.0);
        if step == 0 {
            let analytic = store.grad("w").unwrap()[0];
            let mut w = store.get("w").unwrap().data.clone();
            let numeric = central_difference(&mut w, 0, 1e-5, |w| loss_value(w, &x, &y));
            println!("dL/dw0 analytic {analytic:.8} numeric {numeric:.8} rel err {:.2e}", rel_error(analytic, numeric, 1e-6));
        }
        adam_step(&mut store, &cfg);
    }
    let w = &store.get("w").unwrap().data;
    println!("learned w = [{:.4}, {:.4}]", w[0], w[1]);
    assert!((w[0] - 2.0).abs() < 1e-2 && (w[1] + 1.0).abs() < 1e-2);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

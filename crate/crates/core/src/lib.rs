pub mod autodiff;
pub mod baselines;
pub mod bench_cli;
pub mod decoder;
pub mod discriminator;
pub mod error;
pub mod gflownet_loss;
pub mod gnn;
pub mod instance;
pub mod local_search;
pub mod policy_net;
pub mod rng;
pub mod sparse_graph;
pub mod trainer;

pub use error::{AgfnError, Result};

pub mod autograd;
pub mod baseline;
pub mod cli;
pub mod config;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod propagate;
pub mod train;
pub mod volume;

pub use error::{Error, Result};

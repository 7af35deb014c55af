pub mod acs;
pub mod admm;
pub mod diffops;
pub mod energy;
pub mod error;
pub mod grid;
pub mod linsolve;
pub mod outer;
pub mod pdhg;
pub mod phantom;
pub mod prox;
pub mod recon;
pub mod sampling;
pub mod sparse;
pub mod subsolve;
pub mod wave;

pub use error::{Error, Result};

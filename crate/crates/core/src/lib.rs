//! Blind super-resolution by learning correction errors: a small
//! reverse-mode tensor engine plus everything built on it.

pub mod analysis;
pub mod degrade;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nets;
pub mod par;
pub mod real;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Tape, Tensor, Var};

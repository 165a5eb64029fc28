pub mod bilevel;
pub mod cli;
pub mod data;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nets;
pub mod oracle;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Param, Tape, Tensor, Var};

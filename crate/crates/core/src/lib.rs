pub mod autograd;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod unlearn;

pub use error::{Error, Result};

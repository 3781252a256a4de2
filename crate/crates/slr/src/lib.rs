pub mod env;
pub mod error;
pub mod ppo;
pub mod reward;
pub mod slr;
pub mod tensor;
pub mod variants;

pub use error::{Error, Result};

pub mod construct;
pub mod error;
pub mod expfam;
pub mod expr;
pub mod harness;
pub mod quad;
pub mod reference;
pub mod sde;

pub use error::{Error, Result};

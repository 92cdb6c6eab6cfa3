pub mod bounds;
pub mod chaining;
pub mod error;
pub mod metric;
pub mod paths;
pub mod phi;
pub mod sim;

pub use error::{Error, Result};

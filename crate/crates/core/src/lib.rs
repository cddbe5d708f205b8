pub mod error;
pub mod harness;
pub mod imaging;
pub mod model;
pub mod protocols;
pub mod training;

pub use error::{load_toml, Error, Result};

pub mod error;
pub mod funcalc;
pub mod khomology;
pub mod lattice;
pub mod linalg;
pub mod parametrix;
pub mod quantize;
pub mod quasiloc;
pub mod symbols;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

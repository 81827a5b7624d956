pub mod error;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub mod image;
pub mod render;
pub mod volume;
pub mod path;
pub mod dataset;
pub mod cleansing;
pub mod losses;
pub mod train;
pub mod checkpoint;
pub mod gradcheck;
pub mod eval;
pub mod toy;
pub mod session;

pub mod analysis;
pub mod error;
pub mod io;
pub mod lifting;
pub mod model;
pub mod simulate;
pub mod precise;
pub mod spectral;
pub mod synthesis;

pub use error::{Error, Result};

pub mod backbone;
pub mod criterion;
pub mod detection;
pub mod distortions;
pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod model;
pub mod progressive;
pub mod sccm;
pub mod synth;
pub mod tensorfile;

pub use error::{Error, Result};

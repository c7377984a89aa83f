//! Potential output and output gap estimation from large macroeconomic
//! panels with a non-stationary dynamic factor model.

pub mod analysis;
pub mod covid;
pub mod dataset;
pub mod dates;
pub mod dfm;
pub mod error;
pub mod filters;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod simulate;
pub mod statespace;
pub mod stats;
pub mod trend;

pub use dates::Quarter;
pub use error::{GapError, Result};

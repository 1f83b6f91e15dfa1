//! Local Climate Zone (LCZ) prediction from urban morphometrics computed over
//! enclosed tessellation cells, with optional fusion of raster features.

pub mod context;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod fusion;
pub mod geom;
pub mod ingest;
pub mod tessellation;
pub mod io;
pub mod synth;
pub mod morphometrics;
pub mod pipeline;

pub use error::{Error, Result};

//! File formats: vector layers, GeoTIFF rasters and numeric CSV tables.

pub mod raster;
pub mod table;
pub mod vector;

pub use raster::{read_geotiff, write_geotiff_f32, write_geotiff_u8, GridGeometry, Raster};
pub use table::FeatureTable;
pub use vector::{read_vector, write_geojson, write_gpkg, VectorFeature, VectorLayer};

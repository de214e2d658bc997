//! File formats: PPM images, `MNW1` weight files, run configs and CSV reports.

pub mod config;
pub mod ppm;
pub mod weights;

pub use config::{csv_string, RunConfig};
pub use ppm::{read_image, write_image};
pub use weights::WeightFile;

//! Multispectral microscopy analysis for harmful-algae monitoring.
//!
//! The pipeline ingests nine-band image cubes (two fluorescence and seven
//! absorption LED wavelengths), flat-field-corrects them, segments organisms
//! with Otsu's threshold, crops each one to a fixed-size nine-band ROI and
//! classifies it into one of six algae classes with an 18-layer residual
//! network trained from scratch.
//!
//! | module         | stage                                              |
//! |----------------|----------------------------------------------------|
//! | [`cube`]       | band model and the `SAMSCUBE` file format          |
//! | [`preprocess`] | dark/flat calibration                              |
//! | [`segment`]    | histogram, Otsu, connected components, ROI crops   |
//! | [`phantom`]    | labelled synthetic fields and datasets             |
//! | [`nn`]         | tensor engine, residual network, training          |
//! | [`eval`]       | stratified split, confusion matrix, accuracy       |
//! | [`cli`]        | config-driven batch commands behind the `samson` binary |

pub mod cli;
pub mod cube;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod nn;
pub mod phantom;
pub mod preprocess;
pub mod segment;

pub use cube::{Band, Image2D, ImageCube, Modality};
pub use error::{Error, Result};

/// Number of algae classes the classifier distinguishes.
pub const NUM_CLASSES: usize = 6;

//! Optimal Bayes decisions: minimize expected posterior loss over a library
//! of loss functions and posterior representations.

pub mod bma;
pub mod calibration;
pub mod cli;
pub mod decision;
pub mod design;
pub mod eigen;
pub mod error;
pub mod loss;
pub mod model_selection;
pub mod numeric;
pub mod posterior;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

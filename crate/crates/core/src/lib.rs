//! Cross-spectral stereo depth from gated NIR and RCCB cameras.
//!
//! The crate simulates a four-camera rig (gated stereo + RCCB stereo), decodes
//! depth from gated slices, registers the two spectra, fuses their features,
//! estimates disparity on correlation volumes and scores the result.

pub mod camera;
pub mod error;
pub mod eval;
pub mod features;
pub mod gating;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod matching;
pub mod poserefine;
pub mod scenesim;
pub mod se3;
pub mod tofdecode;

pub use camera::CameraModel;
pub use error::{Error, Result};
pub use image::{DepthMap, DisparityMap, Image, MaskedMap};
pub use se3::{exp_twist, log_twist, RigidTransform};

//! Federated masked-image-modeling pre-training for ultrasound images.
//!
//! The crate is organized bottom-up: [`imgcore`] holds the pixel
//! container and kernels; [`smat`], [`corrupt`] and [`tgm`] implement the
//! ultrasound-specific preprocessing; [`model`] is the masked autoencoder
//! with analytic gradients; [`fed`] runs the federated rounds; [`synth`]
//! produces phantom datasets; [`metrics`] evaluates results.

pub mod corrupt;
pub mod error;
pub mod fed;
pub mod imgcore;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod smat;
pub mod synth;
pub mod tgm;

pub use error::{Error, Result};
pub use imgcore::{Image, Kernel, PatchGrid};
pub use model::{ModelConfig, ParameterVector, Sample};
pub use rng::Rng;
pub use smat::{ScanGeometry, ScanMode};
pub use tgm::MaskPartition;

//! Synthetic cryo-ET subtomogram engine and numerics toolkit.
//!
//! The simulation side turns atomic models into density maps, scatters them
//! into a virtual sample, simulates and aligns a tilt series, reconstructs a
//! tomogram by weighted back-projection and cuts noise-calibrated
//! subtomograms out of it. The numerics side provides adaptive phase
//! tokenization with an equivariance harness, rotation parameterizations and
//! the noise-resilient contrastive losses.

pub mod apt;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod io;
pub mod nrcl;
pub mod pipeline;
pub mod recon;
pub mod rng;
pub mod scene;
pub mod structure;
pub mod subtomo;
pub mod tiltalign;
pub mod tiltsim;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{Quaternion, RigidTransform, RotationMatrix};
pub use volume::{DensityVolume, Image2};

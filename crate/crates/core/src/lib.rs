//! Geometry-adaptive microphone-array speech enhancement in simulation.
//!
//! The numeric core is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`); the aliases at the crate root fix it to `f64`, which the
//! pipeline and CLI use throughout.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamform;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod linalg;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod scene;
pub mod ssl;
pub mod stft;
pub mod wav;

pub use error::{Error, IkFailure, Result};
pub use scalar::Real;

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Signal = stft::TimeSignal<f64>;
pub type Spectrogram = stft::MultichannelSpectrogram<f64>;
pub type Mask = masking::TfMask<f64>;
pub type Scm = ssl::ScmPair<f64>;
pub type Chain = kinematics::KinematicChain<f64>;
pub type Joints = kinematics::JointConfig<f64>;
pub type Point = geometry::Vec3<f64>;

//! Character proposals from a fully convolutional network.
//!
//! A single network scores every receptive-field-sized window of an image
//! for characterness and regresses a refined box for each of several
//! aspect-ratio templates. The crate covers the whole loop: the dense
//! layers ([`tensor`]), the architectures ([`network`]), sample selection
//! and SGD ([`training`]), multi-scale proposal generation ([`inference`]),
//! recall evaluation ([`evaluation`]) and the data plumbing around them
//! ([`annotations`], [`synth`], [`raster`]).

pub mod annotations;
pub mod bbox;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod network;
pub mod raster;
pub mod synth;
pub mod templates;
pub mod tensor;
pub mod training;

pub use bbox::BBox;
pub use error::{Error, Result};

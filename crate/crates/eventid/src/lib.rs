//! Power-system event identification from synchrophasor measurements.
//!
//! Pipeline: multi-signal matrix-pencil modal decomposition per channel
//! group ([`modal`]), modal feature assembly ([`features`]), bootstrapped
//! filter-method feature selection ([`select`]), and classification with
//! bootstrap evaluation ([`learn`]), plus a subspace-angle baseline
//! ([`baseline`]) and a synthetic event generator ([`synth`]).

pub mod baseline;
pub mod core;
pub mod error;
pub mod cli;
pub mod config;
pub mod features;
pub mod io;
pub mod learn;
pub mod modal;
pub mod par;
pub mod preprocess;
pub mod select;
pub mod stats;
pub mod synth;

pub use crate::core::{
    ChannelKind, Dataset, EventRecord, FeatureVector, Label, ModalDecomposition, Mode,
    ResiduePolar,
};
pub use crate::error::{Error, Result};

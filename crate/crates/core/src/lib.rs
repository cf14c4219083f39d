//! Phase retrieval from short-time Fourier transform magnitudes.
//!
//! * [`primitives`]: signals, periodic windows, dictionaries, sparse instances
//!   and the uniqueness-condition checker.
//! * [`stft`]: forward transform, overlap-add inversion, quadratic measurement operator.
//! * [`direct`]: exact recovery of nonvanishing signals from a stride-1
//!   spectrogram, plus constructions of signal pairs with equal spectrograms.
//! * [`altproj`]: Griffin-Lim and principal-components generalized projections.
//! * [`gespar`]: greedy sparse recovery from quadratic measurements.
//! * [`harness`]: randomized experiments, metrics, CSV/SVG export and file formats.

pub mod altproj;
pub mod direct;
pub mod error;
pub mod gespar;
pub mod harness;
pub mod primitives;
pub mod stft;

pub use error::{Error, Result};
pub use primitives::{
    check_uniqueness_conditions, make_window, sample_sparse_instance, ConditionReport, Dictionary,
    DictionaryKind, Signal, SparseInstance, Window, WindowKind,
};
pub use stft::{
    build_measurement_operator, istft, magnitude_sq, measure, stft_forward, Geometry,
    MeasurementOperator, MeasurementSet, StftGrid, StftPlan,
};

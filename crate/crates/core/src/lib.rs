//! Core of the stress-monitoring pipeline.
//!
//! Raw PPG windows are cleaned and reduced to beat locations ([`signal`]),
//! turned into thirteen HR/HRV features ([`hrv`]), streamed through the
//! density-proportional EMA query engine ([`query`]) and finally used to
//! train and evaluate binary stress classifiers ([`model`]).

pub mod dataset;
pub mod ema;
pub mod hrv;
pub mod model;
pub mod pipeline;
pub mod query;
pub mod signal;

pub use ema::{Activity, StressLevel};
pub use hrv::{FeatureFlags, FeatureVector, NnSeries};
pub use pipeline::{process_window, PipelineConfig, PipelineError, PipelineOutput};

pub use query::{QueryConfig, QueryDecision, QueryEngine};
pub use signal::{FilterCoefficients, FilterSpec, PeakList, RawWindow};

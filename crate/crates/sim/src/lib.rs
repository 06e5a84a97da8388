//! Synthetic wearers for end-to-end runs of the ingestion service.

pub mod clock;
pub mod cohort;
pub mod endpoint;
pub mod profile;
pub mod sim;

pub use clock::SimClock;
pub use cohort::make_cohort;
pub use endpoint::{EndpointError, HttpEndpoint, ServiceEndpoint};
pub use profile::{
    DailyOff, Dropout, DropoutKind, ProfileError, ResponseDelay, StressEffect, StressSegment,
    SubjectProfile,
};
pub use sim::{
    run, run_cohort, ReportRow, SimError, SimOptions, SimReport, SubjectSim, CADENCE_MS, WINDOW_MS,
};

//! Cloud-side ingestion service: window processing, query decisions, EMA
//! prompts, label intake, durable per-subject storage and dataset export.

pub mod config;
pub mod error;
pub mod http;
pub mod service;
pub mod state;
pub mod store;
pub mod types;

pub use config::ServiceConfig;
pub use error::ServiceError;
pub use service::{now_ms, Service, WINDOW_SECONDS};
pub use types::*;

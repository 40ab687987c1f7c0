//! HTTP service, error body and text rendering behind the `macro-router`
//! binary.

pub mod error;
pub mod render;
pub mod service;
pub mod train;

pub use error::{ApiError, ErrorCode};
pub use service::{router, AppState, SharedState};

//! HTTP service and CLI around the lensbox visualizers.
//!
//! Both front ends share [`pipeline::Engine`], so identical inputs give
//! identical PNG bytes whichever path produced them.

pub mod api;
pub mod cli;
pub mod error;
pub mod pipeline;
pub mod server;
pub mod session;

pub use error::{ServiceError, ServiceResult};
pub use pipeline::{Engine, VisualizationJobResult};
pub use server::{serve, start_service, ServiceHandle};

//! HTTP chat gateway in front of the dialogue engine.
//!
//! [`ChatService`] owns the per-sender sessions and serializes turns for each
//! sender; [`http::router`] exposes it as a small JSON API.

pub mod config;
pub mod http;
pub mod service;

pub use config::{ConfigError, GatewayConfig};
pub use http::{router, run, serve, RunError};
pub use service::{ChatService, Engine, InboundMessage, OutboundBundle, ServiceError};

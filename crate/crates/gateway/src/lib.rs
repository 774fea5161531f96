//! HTTP gateway and `aw` command line over the workflow engine.

pub mod cli;
pub mod error;
pub mod http;
pub mod ops;
pub mod sim;

pub use error::ApiError;

//! Command line pipeline and HTTP session service.

pub mod commands;
pub mod server;

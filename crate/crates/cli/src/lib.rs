//! Command-line tools and the HTTP editing service for the scene grammar.

pub mod cli;
pub mod service;
pub mod session;

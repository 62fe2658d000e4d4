//! Library side of the `mbtrack` command-line tool.

pub mod app;
pub mod commands;
pub mod config;
pub mod overlay;
pub mod report;

//! Command-line front end: CSV and JSON handling and the four commands.

pub mod commands;
pub mod config;
pub mod data;
pub mod output;

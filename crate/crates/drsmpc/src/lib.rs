//! Std companion of `drsmpc-core`: seeded Monte-Carlo drivers, the
//! experiment configuration format, CSV output and the `drsmpc` command line.

pub mod cli;
pub mod config;
pub mod io;
pub mod sim;

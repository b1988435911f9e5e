//! File formats, a thread-pool executor and the `grail` command line on top
//! of `grail-core`.

pub mod commands;
pub mod error;
pub mod io;
pub mod parallel;
pub mod runconfig;

pub use grail_core as core;

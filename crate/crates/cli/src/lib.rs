//! Command-line surface of the stitcher: file formats, reports and commands.

pub mod commands;
pub mod format;
pub mod report;

pub use commands::run;

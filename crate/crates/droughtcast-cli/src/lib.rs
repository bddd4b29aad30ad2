//! File formats, pipeline orchestration and report emission behind the
//! `droughtcast` command-line tool.

pub mod formats;
pub mod pipeline;
pub mod report;

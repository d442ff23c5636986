//! Stage orchestration: configuration, artifacts, manifests and reports.

pub mod artifacts;
pub mod config;
pub mod manifest;
pub mod report;
pub mod run;
pub mod stages;

//! File formats, dataset loaders and run orchestration for `sofar-core`,
//! plus the pieces behind the `sofar` command-line tool.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod golden;
pub mod graphio;
pub mod metrics;
pub mod run;

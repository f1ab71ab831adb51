//! MIG benchmark orchestration: catalog and file formats, the benchmark
//! service, its HTTP daemon and the command-line front end.

pub mod catalog;
pub mod cli;
pub mod command;
pub mod engine;
pub mod error;
pub mod export;
pub mod external;
pub mod http;
pub mod remote;
pub mod series;

//! `kgalign` command line and curation service.

pub mod cli;
pub mod decisions;
pub mod server;

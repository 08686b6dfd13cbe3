//! File formats, run bookkeeping, threaded execution and the `dsft` command-line tool
//! around [`dsft_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod manifest;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use exec::Threaded;
pub use manifest::RunManifest;

//! File formats, checkpoints, configuration and the experiment pipeline
//! around [`ctharm_core`].
//!
//! A run directory written by [`pipeline::run_all`] looks like
//!
//! ```text
//! config.toml            resolved config echo
//! data/                  manifest.json, pairs/<id>/{A.cts,B.cts,roi.msk}
//! checkpoints/           codec.ctck, denoiser.ctck
//! report/                metric CSVs, summary.txt, feature CSVs
//! manifest.json          artifacts with checksums, timings, metrics
//! ```

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};

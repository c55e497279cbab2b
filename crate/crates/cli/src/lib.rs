//! Pipeline stages, run configuration and the annotation service behind the
//! `vitatlas` binary.

pub mod config;
pub mod error;
pub mod server;
pub mod stages;
pub mod store;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use stages::{Context, Layout, StageManifest};

//! Stage-per-subcommand orchestration over a run directory.

pub mod config;
pub mod report;
pub mod run;
pub mod stages;

use thiserror::Error;

pub use config::{ProviderKind, RunConfig};
pub use run::{RunDir, RunManifest};
pub use stages::{Pipeline, StageSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("provider failure: {0}")]
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Provider(_) => EXIT_PROVIDER,
        }
    }
}

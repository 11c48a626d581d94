use std::path::{Path, PathBuf};

use splatpress_core::codec::CodecError;
use splatpress_core::metrics::MetricError;
use splatpress_core::pipeline::PipelineError;
use splatpress_core::ply::PlyError;
use splatpress_core::pruning::PruneError;
use splatpress_core::quantization::QuantError;
use splatpress_core::render::RenderError;
use splatpress_core::synth::SynthError;
use splatpress_core::views::ViewError;
use thiserror::Error;

/// Every failure the CLI reports, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Io { .. } => 2,
            Self::Data(_) => 3,
            Self::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    /// Prefixes a data or numerical error with the file it came from.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            Self::Data(m) => Self::Data(format!("{}: {m}", path.display())),
            Self::Numerical(m) => Self::Numerical(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

fn quant_is_numerical(e: &QuantError) -> bool {
    matches!(e, QuantError::NonFinite(_) | QuantError::InvalidStep(_))
}

impl From<PlyError> for CliError {
    fn from(e: PlyError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<QuantError> for CliError {
    fn from(e: QuantError) -> Self {
        if quant_is_numerical(&e) {
            Self::Numerical(e.to_string())
        } else {
            Self::Data(e.to_string())
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Quant(q) => q.into(),
            CodecError::NonFinite(_) => Self::Numerical(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::NonFinite => Self::Numerical(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Prune(p) => p.into(),
            PipelineError::Quant(q) => q.into(),
            PipelineError::Codec(c) => c.into(),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<ViewError> for CliError {
    fn from(e: ViewError) -> Self {
        match e {
            ViewError::Io { path, source } => Self::Io { path, source },
            other => Self::Data(other.to_string()),
        }
    }
}

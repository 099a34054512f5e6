use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error(transparent)]
    Core(#[from] dynprobe_core::Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: dynprobe_core::Error },
    #[error("io: {0}")]
    Io(String),
    #[error("missing input: {0}")]
    Missing(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl LabError {
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            LabError::Core(source) => LabError::Stage { stage: stage.to_string(), source },
            other => other,
        }
    }

    /// 2 for violated hypotheses (including rejected configurations), 3 for
    /// numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> ExitCode {
        let core = match self {
            LabError::Core(e) | LabError::Stage { source: e, .. } => Some(e),
            _ => None,
        };
        match (self, core) {
            (LabError::Config(_), _) => ExitCode::from(2),
            (_, Some(e)) if e.is_hypothesis() => ExitCode::from(2),
            (_, Some(_)) => ExitCode::from(3),
            _ => ExitCode::from(1),
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: biplanar_core::Error,
    },

    #[error("{stage}: {msg}")]
    Input { stage: &'static str, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Stage { .. } | CliError::Input { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Stage { .. } => "stage",
            CliError::Input { .. } => "input",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let stage = match self {
            CliError::Stage { stage, .. } | CliError::Input { stage, .. } => Some(*stage),
            _ => None,
        };
        serde_json::json!({ "error": { "kind": self.kind(), "stage": stage, "message": self.to_string() } })
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("analysis failed: {0}")]
    Analysis(#[from] qudit_homodyne::Error),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self::Config(vec![message.into()])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Analysis(_) => 2,
        }
    }
}

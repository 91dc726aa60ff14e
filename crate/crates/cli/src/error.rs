use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure{}: {source}", stage.map(|s| format!(" in stage {s}")).unwrap_or_default())]
    Numerical {
        stage: Option<&'static str>,
        source: lossnet::Error,
    },
    #[error("every exit-time replica was censored")]
    CensoredOnly,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical { .. } => 3,
            Self::CensoredOnly => 4,
            Self::Io(_) => 1,
        }
    }

    pub fn in_stage(stage: &'static str) -> impl Fn(lossnet::Error) -> Self {
        move |source| Self::Numerical {
            stage: Some(stage),
            source,
        }
    }
}

impl From<lossnet::Error> for CliError {
    fn from(source: lossnet::Error) -> Self {
        Self::Numerical { stage: None, source }
    }
}

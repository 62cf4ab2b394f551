use std::process::ExitCode;

use serde_json::json;

/// Why a subcommand failed; each variant maps to a stable exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Partial { failed: usize, total: usize },
}

impl Failure {
    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Partial { .. } => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Partial { .. } => "partial",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m.clone(),
            Failure::Partial { failed, total } => format!("{failed} of {total} requests failed"),
        }
    }

    pub fn report(&self, json_diagnostics: bool) -> ExitCode {
        if json_diagnostics {
            let line = json!({
                "level": "error",
                "kind": self.kind(),
                "exit_code": self.code(),
                "message": self.message(),
            });
            eprintln!("{line}");
        } else {
            eprintln!("error: {}", self.message());
        }
        ExitCode::from(self.code())
    }
}

impl From<stepground_core::Error> for Failure {
    fn from(e: stepground_core::Error) -> Self {
        match e {
            stepground_core::Error::InvalidConfig(m) => Failure::Usage(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

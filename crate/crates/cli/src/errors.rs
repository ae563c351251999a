//! Exit codes and machine-readable error JSON.
//!
//! 0 success, 2 input error, 3 infeasible, 4 internal. Errors land on
//! stderr as one JSON object: `{"code":"E_...","message":"..."}`.

use mixbit_core::Error as CoreError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: i32,
}

impl CliError {
    pub fn input(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
            exit: EXIT_INPUT,
        }
    }

    pub fn missing_file(code: &'static str, path: &std::path::Path) -> Self {
        CliError::input(code, format!("file not found: {}", path.display()))
    }

    pub fn emit(&self) -> i32 {
        let payload = serde_json::json!({
            "code": self.code,
            "message": self.message,
        });
        eprintln!("{payload}");
        self.exit
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Infeasible(report) => CliError {
                code: "E_INFEASIBLE",
                message: report.to_string(),
                exit: EXIT_INFEASIBLE,
            },
            CoreError::InvalidConfig(_)
            | CoreError::InvalidInput(_)
            | CoreError::ShapeMismatch { .. }
            | CoreError::UnknownLayer(_)
            | CoreError::NotQuantizable(_)
            | CoreError::EmptyDataset
            | CoreError::MissingLatency(_)
            | CoreError::Csv(_)
            | CoreError::Toml(_)
            | CoreError::Json(_) => CliError {
                code: "E_INVALID_INPUT",
                message: e.to_string(),
                exit: EXIT_INPUT,
            },
            _ => CliError {
                code: "E_INTERNAL",
                message: e.to_string(),
                exit: EXIT_INTERNAL,
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::from(CoreError::from(e))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: "E_IO",
            message: e.to_string(),
            exit: EXIT_INTERNAL,
        }
    }
}

/// Load helper that maps a missing path to a stage-specific error code.
pub fn require_file(path: &std::path::Path, code: &'static str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::missing_file(code, path));
    }
    Ok(())
}

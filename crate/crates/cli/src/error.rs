use thiserror::Error;

/// Failure classes of a harness run, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        CliError::Validation(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags errors from the setup phase as validation failures.
pub trait Validate<T> {
    fn invalid(self) -> CliResult<T>;
}

/// Tags errors from a running experiment as runtime failures.
pub trait Runtime<T> {
    fn failed(self) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> Validate<T> for Result<T, E> {
    fn invalid(self) -> CliResult<T> {
        self.map_err(CliError::validation)
    }
}

impl<T, E: std::fmt::Display> Runtime<T> for Result<T, E> {
    fn failed(self) -> CliResult<T> {
        self.map_err(CliError::runtime)
    }
}

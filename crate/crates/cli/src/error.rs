use std::fmt;

/// Failure of one CLI invocation, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Rejected input: exit code 1.
    Validation(String),
    /// Failure while computing or writing: exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn field(field: &str, message: impl fmt::Display) -> Self {
        CliError::Validation(format!("invalid {field}: {message}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lts_core::Error> for CliError {
    fn from(e: lts_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

macro_rules! from_module {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                lts_core::Error::from(e).into()
            }
        }
    )*};
}

from_module!(
    lts_core::tree::TreeError,
    lts_core::signs::SignError,
    lts_core::info::InfoError,
    lts_core::synthesis::SynthesisError
);

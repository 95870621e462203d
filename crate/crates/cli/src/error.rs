use std::fmt;

/// Exit status 2: bad flags, configuration or input data.
pub const EXIT_USAGE: u8 = 2;
/// Exit status 3: the run itself failed.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { code: EXIT_RUNTIME, message: message.into() }
    }

    pub fn from_csv(e: csv::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<e2ek::Error> for CliError {
    fn from(e: e2ek::Error) -> Self {
        use e2ek::Error as E;
        let code = match &e {
            E::Diverged { .. } | E::Io(_) => EXIT_RUNTIME,
            _ => EXIT_USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

use edgefl::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(what: &std::path::Path, e: std::io::Error) -> Self {
        Self { code: EXIT_OTHER, message: format!("{}: {e}", what.display()) }
    }

    /// Reading or parsing an input the user supplied.
    pub fn input(what: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::config(format!("{}: {e}", what.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Infeasible(_) => EXIT_INFEASIBLE,
            Error::InsufficientMeasurements(_) => EXIT_NUMERIC,
            e if e.is_numeric() => EXIT_NUMERIC,
            Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::Json(_) | Error::Csv(_) => EXIT_CONFIG,
            _ => EXIT_OTHER,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self { code: EXIT_OTHER, message: format!("csv output: {e}") }
    }
}

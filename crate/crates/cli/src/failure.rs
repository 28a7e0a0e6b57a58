use std::fmt;

use polhin::{Error, ErrorCategory};

/// A command failure with its process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    pub fn io(what: impl fmt::Display, e: std::io::Error) -> Self {
        Failure::Io(format!("{what}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Data(m) => write!(f, "data: {m}"),
            Failure::Numerical(m) => write!(f, "numerical: {m}"),
            Failure::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e.category() {
            ErrorCategory::Config => Failure::Config(msg),
            ErrorCategory::Data => Failure::Data(msg),
            ErrorCategory::Numerical => Failure::Numerical(msg),
            ErrorCategory::Io => Failure::Io(msg),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(format!("json: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(format!("csv: {e}"))
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Input datasets: anything wrong with them, unreadable included, is a data error.
pub fn load_data(path: &std::path::Path) -> CmdResult<(polhin::hin::Hin, polhin::objectives::ExpertLabels)> {
    polhin::data_io::load_dataset(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Data(e.to_string()),
        other => other.into(),
    })
}

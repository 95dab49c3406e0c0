use std::fmt;
use std::io;

use rme::cooccur::CooccurError;
use rme::eval::EvalError;
use rme::ingest::IngestError;
use rme::model::ModelError;
use rme::negsample::NegSampleError;
use rme::persist::PersistError;

/// A failure with a short machine-readable category, printed as
/// `error: <category>: <message>`.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn artifact(message: impl Into<String>) -> Self {
        Self::new("artifact", message)
    }

    /// Prefixes the message, keeping the category.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one line, whatever the source produced
        write!(f, "error: {}: {}", self.category, self.message.replace('\n', " "))
    }
}

impl std::error::Error for CliError {}

macro_rules! category {
    ($ty:ty, $name:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($name, e.to_string())
            }
        }
    };
}

category!(io::Error, "io");
category!(IngestError, "ingest");
category!(CooccurError, "sppmi");
category!(ModelError, "model");
category!(NegSampleError, "negsample");
category!(EvalError, "eval");
category!(PersistError, "model-file");
category!(toml::de::Error, "config");
category!(toml::ser::Error, "config");

pub type CliResult<T> = Result<T, CliError>;

pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}

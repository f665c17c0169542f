use std::fmt;

/// Exit code 2 for usage errors, 1 for everything that fails at run time.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<latent_probe::Error> for CliError {
    fn from(e: latent_probe::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Maps a library validation failure to a usage error.
pub fn usage(e: latent_probe::Error) -> CliError {
    CliError::Usage(e.to_string())
}

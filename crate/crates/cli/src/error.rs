use std::fmt;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed input files or parameters outside their domain.
    Validation(String),
    /// A numerical procedure could not produce a usable answer.
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_CONVERGENCE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<sipmstat::Error> for CliError {
    fn from(e: sipmstat::Error) -> Self {
        use sipmstat::Error as E;
        match e {
            E::Io(err) => CliError::Io(err.to_string()),
            E::IllConditioned { .. } => CliError::Numerical(e.to_string()),
            E::NoPeriodicity(_) => CliError::Numerical(format!(
                "{e}\nhint: the pulse histogram needs at least two resolved photon peaks; \
                 extend the range or use finer bins"
            )),
            other => CliError::Validation(other.to_string()),
        }
    }
}

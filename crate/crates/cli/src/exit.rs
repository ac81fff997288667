use ganaug_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Code {
    Config = 2,
    Data = 3,
    Numeric = 4,
}

/// A command failure and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub error: anyhow::Error,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

fn classify(err: &Error) -> Code {
    match err {
        Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_) => Code::Numeric,
        Error::InvalidConfig(_)
        | Error::IndivisibleInputSize { .. }
        | Error::BadMagic
        | Error::VersionMismatch { .. }
        | Error::TruncatedFile
        | Error::CorruptFile(_) => Code::Config,
        _ => Code::Data,
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error.chain().find_map(|e| e.downcast_ref::<Error>()).map_or(Code::Data, classify);
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self { code: classify(&error), error: error.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(error: std::io::Error) -> Self {
        Self { code: Code::Data, error: error.into() }
    }
}

pub fn fail(code: Code, msg: impl std::fmt::Display) -> Failure {
    Failure { code, error: anyhow::anyhow!("{msg}") }
}

pub trait Coded<T> {
    /// Fails with `code` regardless of the error kind.
    fn code(self, code: Code) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Coded<T> for Result<T, E> {
    fn code(self, code: Code) -> CmdResult<T> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

//! Errors carrying a process exit code.

pub const EXIT_MISSING: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;
pub const EXIT_STAGE: i32 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{err:#}")]
pub struct Fail {
    pub code: i32,
    err: anyhow::Error,
}

impl Fail {
    pub fn new(code: i32, err: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            err: err.into(),
        }
    }

    pub fn msg(code: i32, msg: impl Into<String>) -> Self {
        Self::new(code, anyhow::anyhow!(msg.into()))
    }

    pub fn context(self, ctx: String) -> Self {
        Self {
            code: self.code,
            err: self.err.context(ctx),
        }
    }
}

/// Exit code for a library error.
pub fn code_for(e: &tastr_core::Error) -> i32 {
    use tastr_core::Error as E;
    match e {
        E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
        E::Config(_) => EXIT_CONFIG,
        E::Dimension { .. } => EXIT_INCOMPATIBLE,
        _ => EXIT_STAGE,
    }
}

impl From<tastr_core::Error> for Fail {
    fn from(e: tastr_core::Error) -> Self {
        Self::new(code_for(&e), e)
    }
}

pub trait ResultExt<T> {
    fn with_code(self, code: i32, ctx: impl FnOnce() -> String) -> Result<T, Fail>;
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn with_code(self, code: i32, ctx: impl FnOnce() -> String) -> Result<T, Fail> {
        self.map_err(|e| Fail::new(code, anyhow::Error::new(e).context(ctx())))
    }
}

/// Attaches context to a library error while keeping its exit code.
pub trait CoreExt<T> {
    fn stage(self, ctx: impl FnOnce() -> String) -> Result<T, Fail>;
}

impl<T> CoreExt<T> for tastr_core::Result<T> {
    fn stage(self, ctx: impl FnOnce() -> String) -> Result<T, Fail> {
        self.map_err(|e| Fail::from(e).context(ctx()))
    }
}

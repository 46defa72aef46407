use std::fmt;

/// An error carrying the process exit code.
#[derive(Debug)]
pub struct ExitError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for ExitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ExitError {}

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

pub fn input_error(message: impl Into<String>) -> anyhow::Error {
    ExitError { code: EXIT_INPUT, message: message.into() }.into()
}

pub fn nonconvergence(message: impl Into<String>) -> anyhow::Error {
    ExitError { code: EXIT_NONCONVERGENCE, message: message.into() }.into()
}

pub fn code_of(err: &anyhow::Error) -> i32 {
    err.chain().find_map(|e| e.downcast_ref::<ExitError>()).map_or(1, |e| e.code)
}

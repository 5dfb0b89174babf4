//! Command-line front end: configuration, artifact layout and the
//! subcommands of the `f4flow` binary.

pub mod commands;
pub mod config;
pub mod descriptor;
pub mod pipeline;

/// Bad flags or contradictory options; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for an error: 2 for usage problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

//! Library side of the `morphopt` command-line tool: configuration loading
//! and the four commands, usable from tests without spawning a process.

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

/// Exit code for a failed command: 2 configuration, 3 checkpoint,
/// 4 numerical divergence, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use morphopt_core::Error;
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Checkpoint(_)) => 3,
        Some(Error::Diverged(_) | Error::NonFiniteLoss(_)) => 4,
        _ => 1,
    }
}

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "MORPHOPT_OUT";

//! Reproducible experiment driver: corpus synthesis, mixing, training,
//! enhancement and evaluation.

pub mod commands;
pub mod config;

use denoise_core::Error;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::DivergedLoss { .. } => 4,
        _ => 3,
    }
}

/// Sizes the global worker pool from `DENOISE_THREADS`, if set.
pub fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("DENOISE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("DENOISE_THREADS must be a positive integer, got {value:?}")))?;
    // A pool that is already running keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

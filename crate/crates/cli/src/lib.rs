//! Command implementations behind the `hetscene` binary.

pub mod args;
pub mod commands;

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use commands::*;

/// Exit status of a command that failed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hetscene::Error),
    #[error("gradient check failed: max relative error {worst:.3e} exceeds {tolerance:.0e}")]
    GradcheckFailed { worst: f64, tolerance: f64 },
}

pub type CliResult<T> = Result<T, CliError>;

pub mod exit {
    pub const RUNTIME: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const MISSING_FILE: i32 = 3;
    pub const INVALID_CONFIG: i32 = 4;
    pub const GRADCHECK_FAILED: i32 = 5;
    pub const BAD_DATA: i32 = 6;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use hetscene::Error as E;
        match self {
            CliError::GradcheckFailed { .. } => exit::GRADCHECK_FAILED,
            CliError::Core(e) => match e {
                E::MissingFile(_) => exit::MISSING_FILE,
                E::Config(_) => exit::INVALID_CONFIG,
                E::Parse { .. } | E::Schema(_) | E::Reference(_) | E::Geometry(_) | E::Checkpoint(_) | E::Json(_) => {
                    exit::BAD_DATA
                }
                _ => exit::RUNTIME,
            },
        }
    }
}

/// Reads a JSON config file; unknown fields and type errors are config
/// errors naming the offending path.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => hetscene::Error::MissingFile(path.to_path_buf()),
        _ => hetscene::Error::Io(e),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        hetscene::Error::Config(format!("{} at `{}`: {}", path.display(), e.path(), e.inner())).into()
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(hetscene::Error::Io)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(hetscene::Error::Json)?;
    text.push('\n');
    fs::write(path, text).map_err(hetscene::Error::Io)?;
    Ok(())
}

/// SHA-256 of the compact JSON encoding, hex encoded.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Worker pool capped by `HETSCENE_THREADS` (all cores when unset).
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var("HETSCENE_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| hetscene::Error::Config(format!("HETSCENE_THREADS = `{v}` is not a positive integer")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| hetscene::Error::Config(format!("cannot start worker threads: {e}")).into())
}

//! Process exit codes and the error markers that select them.

use std::fmt;

pub const SUCCESS: u8 = 0;
pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERIC: u8 = 3;

/// Invalid flags or configuration.
#[derive(Debug)]
pub struct Usage(pub String);

/// Missing or malformed input data.
#[derive(Debug)]
pub struct Data(pub String);

/// A numeric check failed or training diverged.
#[derive(Debug)]
pub struct CheckFailed(pub String);

macro_rules! marker {
    ($($t:ident),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
        impl std::error::Error for $t {}
    )*};
}

marker!(Usage, Data, CheckFailed);

fn library_code(e: &sepkern::Error) -> u8 {
    use sepkern::Error::*;
    match e {
        Config(_) | ConfigMismatch(_) | Contract(_) => USAGE,
        Diverged { .. } => NUMERIC,
        Shape(_) | Indivisible { .. } | Corrupt { .. } | Version { .. } | Image { .. } | Io(_) => DATA,
    }
}

/// Exit code for `err`: an explicit marker anywhere in its context chain
/// first, then the class of the first recognized underlying error.
pub fn code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return USAGE;
    }
    if err.downcast_ref::<Data>().is_some() {
        return DATA;
    }
    if err.downcast_ref::<CheckFailed>().is_some() {
        return NUMERIC;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sepkern::Error>() {
            return library_code(e);
        }
        if cause.is::<serde_json::Error>() {
            return USAGE;
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return DATA;
        }
    }
    USAGE
}

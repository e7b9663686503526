//! Command-line front end: run configuration, CSV I/O and the commands.

pub mod commands;
pub mod config;
pub mod io;

use proxyfuse::ErrorCategory;

/// Process exit code for a failure: 2 configuration, 3 data, 4 numerical, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let category = err
        .chain()
        .find_map(|c| c.downcast_ref::<proxyfuse::Error>())
        .map(proxyfuse::Error::category);
    match category {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Numeric) => 4,
        None => 1,
    }
}

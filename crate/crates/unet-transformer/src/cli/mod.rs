//! Command-line entry point.
pub fn run_from_env() -> i32 { 0 }

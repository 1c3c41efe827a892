//! Run configuration and the command-line entry point.

pub fn cli_entry() -> i32 {
    eprintln!("command-line interface not wired up yet");
    2
}

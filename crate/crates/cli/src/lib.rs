//! Library side of the `softdice` command-line tool: file formats and the
//! subcommand implementations, kept separate from argument parsing so they
//! can be tested directly.

pub mod commands;
pub mod format;
pub mod io;

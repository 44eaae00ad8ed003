//! Command-line front end for `certmetric`: dataset files, model files and
//! the train / eval / margin / noise-bench / search / toy commands.

pub mod cli;
pub mod commands;
pub mod error;
pub mod io;
pub mod model;

pub use cli::Cli;
pub use error::{CliError, CliResult};

/// Parses `args` (program name first) and runs the command, writing the
/// report to `out`. Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match commands::run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

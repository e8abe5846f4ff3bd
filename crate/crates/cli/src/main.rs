mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

/// Exit codes: 0 ok, 2 usage, 3 data or format, 4 numerical failure.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERICAL: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: Self::DATA,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: Self::NUMERICAL,
            message: message.into(),
        }
    }
}

impl<E: Into<parrot_core::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        let e = e.into();
        if e.is_numerical() {
            Self::numerical(e.to_string())
        } else {
            Self::data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}

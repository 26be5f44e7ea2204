//! Front end of the `lagflow` binary: config parsing, the on-disk formats
//! of traces and reports, and the `run`, `blowup`, `verify` and `plot`
//! subcommands. Each command returns its exit code instead of exiting, so
//! the commands can be driven from tests.

mod commands;
mod config;
mod formats;
mod plot;

pub use commands::{cmd_blowup, cmd_plot, cmd_run, cmd_verify, LambdaCloudFile, PlanesFile, Report};
pub use config::{load_config, BlowupSection, FlowSection, RunConfig, VerifySection};
pub use formats::{
    load_trace, read_csv, read_json, save_trace, DecayCsvRow, DensityCsvRow, IndicatorRow,
    PsiRow, PsiSummary, SingularitySummary, SnapshotFile, StepRow, Summary, TypeStats,
};
pub use plot::{plot_csv, svg_path, PlotKind};

use lagflow_core::Error;

/// Version stamped into every JSON and CSV output.
pub const FORMAT_VERSION: u32 = 1;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    CheckFailure = 1,
    Usage = 2,
    Numerical = 3,
    MissingPrerequisite = 4,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// An error message with the exit code it maps to.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Failure {
            exit: Exit::MissingPrerequisite,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match e {
            Error::UnknownScenario(_)
            | Error::Resolution(_)
            | Error::InvalidParameter(_)
            | Error::NotAlmostCalibrated(_)
            | Error::UnknownSuite(_)
            | Error::Dimension { .. }
            | Error::TimeNotBeforeReference { .. }
            | Error::TimeOutsideTrace(_) => Exit::Usage,
            Error::NoSingularityReport
            | Error::UnreliableEstimate(_)
            | Error::NotEnoughSnapshots { .. } => Exit::MissingPrerequisite,
            _ => Exit::Numerical,
        };
        Failure {
            exit,
            message: e.to_string(),
        }
    }
}

/// Print the failure, if any, and return the exit code.
pub fn finish(result: Result<Exit, Failure>) -> Exit {
    match result {
        Ok(e) => e,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.exit
        }
    }
}

/// Size the global worker pool from the value of LAGFLOW_THREADS.
pub fn configure_threads(value: Option<&str>) -> Result<Option<usize>, Failure> {
    let Some(v) = value else { return Ok(None) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::usage(format!("LAGFLOW_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot size the worker pool: {e}")))?;
    Ok(Some(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes() {
        let code = |e: Error| Failure::from(e).exit;
        assert_eq!(code(Error::NonFinite("H".into())), Exit::Numerical);
        assert_eq!(code(Error::DegenerateMetric { vertex: 0, det: 0.0 }), Exit::Numerical);
        assert_eq!(code(Error::UnknownSuite("x".into())), Exit::Usage);
        assert_eq!(code(Error::NoSingularityReport), Exit::MissingPrerequisite);
        assert_eq!(Exit::MissingPrerequisite.code(), 4);
    }

    #[test]
    fn thread_variable() {
        assert_eq!(configure_threads(None), Ok(None));
        for bad in ["0", "-2", "many", ""] {
            assert_eq!(configure_threads(Some(bad)).unwrap_err().exit, Exit::Usage);
        }
    }
}

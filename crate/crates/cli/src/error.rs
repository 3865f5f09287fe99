use std::fmt;

use tac_core::TacError;

/// A library error tagged with the pipeline stage it came from.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub source: TacError,
}

impl CliError {
    pub fn new(stage: &'static str, source: TacError) -> Self {
        Self { stage, source }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> u8 {
        exit_code(&self.source)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a stage tag to library results.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for tac_core::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(stage, e))
    }
}

impl<T> Stage<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(stage, TacError::Io(e)))
    }
}

pub const EXIT_USAGE: u8 = 2;

pub fn exit_code(e: &TacError) -> u8 {
    match e {
        TacError::Parameter(_) => 3,
        TacError::Dimension(_) => 4,
        TacError::Format(_) => 5,
        TacError::Data(_) => 6,
        TacError::Normalization => 7,
        TacError::Selection(_) => 8,
        TacError::TrainingDiverged { .. } => 9,
        TacError::Io(_) => 10,
    }
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0   success
  2   invalid command line
  3   invalid parameter value
  4   dimension mismatch between inputs
  5   malformed or missing input file
  6   invalid data (NaN, label count mismatch, ...)
  7   zero vector where a direction is required
  8   noun selection produced nothing
  9   training diverged
  10  I/O failure while writing outputs";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let errors = [
            TacError::Parameter(String::new()),
            TacError::Dimension(String::new()),
            TacError::Format(String::new()),
            TacError::Data(String::new()),
            TacError::Normalization,
            TacError::Selection(String::new()),
            TacError::TrainingDiverged {
                step: 0,
                detail: String::new(),
            },
            TacError::Io(std::io::Error::other("x")),
        ];
        let mut codes: Vec<u8> = errors.iter().map(exit_code).collect();
        codes.push(EXIT_USAGE);
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), errors.len() + 1);
        assert!(!codes.contains(&0));
        for c in codes {
            assert!(EXIT_CODES_HELP.contains(&format!("  {c} ")));
        }
    }

    #[test]
    fn display_carries_stage() {
        let e = CliError::new("manifest", TacError::Format("missing".into()));
        assert_eq!(e.to_string(), "[manifest] format error: missing");
        assert_eq!(e.exit_code(), 5);
    }
}

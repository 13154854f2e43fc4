use std::fmt;
use std::process::ExitCode;

/// Failures surfaced to the shell. Each class maps to a fixed exit code so
/// scripts can branch on what went wrong: 2 bad configuration, 3 missing or
/// malformed data (corpora, vocabularies, checkpoints, score files), 4
/// numeric failure such as a non-finite loss.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(3),
            CliError::Numeric(_) => ExitCode::from(4),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "error[config]: {msg}"),
            CliError::Data(msg) => write!(f, "error[data]: {msg}"),
            CliError::Numeric(msg) => write!(f, "error[numeric]: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<qbslt::Error> for CliError {
    fn from(e: qbslt::Error) -> CliError {
        match e {
            qbslt::Error::Config(msg) => CliError::Config(msg),
            qbslt::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_render_and_map() {
        let cases = [
            (CliError::Config("bad".into()), "error[config]: bad", 2u8),
            (CliError::Data("gone".into()), "error[data]: gone", 3),
            (CliError::Numeric("inf".into()), "error[numeric]: inf", 4),
        ];
        for (err, text, code) in cases {
            assert_eq!(err.to_string(), text);
            assert_eq!(err.exit_code(), ExitCode::from(code));
        }
    }

    #[test]
    fn library_errors_classify() {
        let e: CliError = qbslt::Error::Config("x".into()).into();
        assert!(matches!(e, CliError::Config(_)));
        let e: CliError = qbslt::Error::NonFinite { step: 3, value: f64::NAN }.into();
        assert!(matches!(e, CliError::Numeric(_)));
        let e: CliError = qbslt::Error::NotFound("y".into()).into();
        assert!(matches!(e, CliError::Data(_)));
        let e: CliError = qbslt::Error::Checkpoint("z".into()).into();
        assert!(matches!(e, CliError::Data(_)));
    }
}

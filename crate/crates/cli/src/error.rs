use derivdoa::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

/// Exit status and category name for an error chain: 2 for configuration
/// problems, 3 for missing or malformed data, 4 for numeric failures.
pub fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => (2, "config"),
                CliError::Data(_) => (3, "data"),
            };
        }
        if let Some(e) = cause.downcast_ref::<derivdoa::Error>() {
            return match e.kind() {
                ErrorKind::Config => (2, "config"),
                ErrorKind::Data => (3, "data"),
                ErrorKind::Numeric => (4, "numeric"),
            };
        }
    }
    (3, "data")
}

/// Single-line, machine-readable description of a failure.
pub fn error_line(err: &anyhow::Error) -> String {
    let (code, kind) = classify(err);
    let message = format!("{err:#}")
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', " ");
    format!("error: kind={kind} code={code} message=\"{message}\"")
}

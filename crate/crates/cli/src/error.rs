use std::path::PathBuf;

use thiserror::Error;

use sbice_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or a missing prerequisite the user can fix.
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Config(_)
        | CoreError::UnknownParameter(_)
        | CoreError::MissingParameter(_)
        | CoreError::SchemaMismatch(_)
        | CoreError::Csv { .. }
        | CoreError::CsvRow { .. } => EXIT_CONFIG,
        CoreError::Protocol(_) => EXIT_PROTOCOL,
        CoreError::Simulation { source, .. } => match core_exit_code(source) {
            EXIT_PROTOCOL => EXIT_PROTOCOL,
            _ => EXIT_RUNTIME,
        },
        _ => EXIT_RUNTIME,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => core_exit_code(e),
            CliError::Io { .. } | CliError::Json { .. } => EXIT_RUNTIME,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbice_core::error::ProtocolError;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Core(CoreError::CsvRow {
                path: "a".into(),
                row: 1,
                message: "m".into()
            })
            .exit_code(),
            2
        );
        assert_eq!(CliError::Core(CoreError::Estimation("x".into())).exit_code(), 3);
        let protocol = CoreError::Protocol(ProtocolError::UnexpectedEof);
        assert_eq!(
            CliError::Core(CoreError::Simulation {
                index: 3,
                source: Box::new(protocol)
            })
            .exit_code(),
            4
        );
        let domain = CoreError::Domain("x".into());
        assert_eq!(
            CliError::Core(CoreError::Simulation {
                index: 3,
                source: Box::new(domain)
            })
            .exit_code(),
            3
        );
    }
}

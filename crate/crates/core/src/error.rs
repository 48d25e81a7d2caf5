use thiserror::Error;

/// Every failure the toolkit can surface.
///
/// Variants are split by how the CLI reports them: input problems
/// (`Schema`, `Validation`, `Record`, `Config`, `Io`) exit with code 2,
/// numerical failures exit with code 3.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("schema error: missing column `{column}` in {file}")]
    Schema { file: String, column: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("record `{id}`: {reason}")]
    Record { id: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("perfect separation: {0}")]
    Separation(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("fold degeneracy: {0}")]
    FoldDegenerate(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("{module}::{operation}: {source}")]
    Context {
        module: &'static str,
        operation: &'static str,
        #[source]
        source: Box<AuditError>,
    },
}

pub type Result<T> = std::result::Result<T, AuditError>;

impl AuditError {
    pub fn record(id: impl Into<String>, reason: impl Into<String>) -> Self {
        AuditError::Record {
            id: id.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn csv(path: impl AsRef<std::path::Path>, source: csv::Error) -> Self {
        AuditError::Csv {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wrap with the module and operation that raised the error.
    pub fn within(self, module: &'static str, operation: &'static str) -> Self {
        AuditError::Context {
            module,
            operation,
            source: Box::new(self),
        }
    }

    /// The innermost error, with context layers peeled off.
    pub fn root(&self) -> &AuditError {
        match self {
            AuditError::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for input/validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            AuditError::Schema { .. }
            | AuditError::Validation(_)
            | AuditError::Record { .. }
            | AuditError::Config(_)
            | AuditError::Io { .. }
            | AuditError::Csv { .. } => 2,
            _ => 3,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn within(self, module: &'static str, operation: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn within(self, module: &'static str, operation: &'static str) -> Result<T> {
        self.map_err(|e| e.within(module, operation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_cause() {
        let e = AuditError::Validation("bad".into()).within("core_data", "ingest_loans");
        assert_eq!(e.exit_code(), 2);
        let e = AuditError::Numerical("diverged".into()).within("irr", "irr");
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().starts_with("irr::irr"));
    }
}

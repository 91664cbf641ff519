use serde::Serialize;

/// Error reported to the user as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: String,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            error: kind.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

impl From<roadsafe_core::Error> for Failure {
    fn from(e: roadsafe_core::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}

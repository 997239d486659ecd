use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Config,
    Data,
}

/// A run-ending error, reported on stderr as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Data => 3,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": self.kind,
            "exit_code": self.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl From<tiltsr::Error> for Failure {
    fn from(e: tiltsr::Error) -> Self {
        if e.is_config() {
            Failure::config(e.to_string())
        } else {
            Failure::data(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::data(e.to_string())
    }
}

use fockrg_core::Error;
use serde_json::json;

/// Command failure, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    Property(String),
    /// Exit 2.
    Config { field: String, message: String },
    /// Exit 2.
    Usage(String),
    /// Exit 3.
    Numerical { kind: &'static str, message: String },
    /// Exit 2; the run could not read or write its files.
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Property(_) => 1,
            Failure::Config { .. } | Failure::Usage(_) | Failure::Io(_) => 2,
            Failure::Numerical { .. } => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Failure::Property(m) => json!({"error": "property", "message": m}),
            Failure::Config { field, message } => {
                json!({"error": "config", "field": field, "message": message})
            }
            Failure::Usage(m) => json!({"error": "usage", "message": m}),
            Failure::Numerical { kind, message } => {
                json!({"error": "numerical", "kind": kind, "message": message})
            }
            Failure::Io(m) => json!({"error": "io", "message": m}),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let kind = match e {
            Error::InvalidParameter { name, reason } => {
                let section = match name {
                    "g" | "rho" | "omega0" | "modes" | "max_total" | "max_per_mode" => "model",
                    _ => "flow",
                };
                return Failure::Config {
                    field: format!("{section}.{name}"),
                    message: reason,
                };
            }
            Error::DimensionOverflow { .. } | Error::DenseCapExceeded { .. } => {
                return Failure::Config {
                    field: "model".into(),
                    message,
                }
            }
            Error::NotInvertible { .. } => "not_invertible",
            Error::FlowTruncated { .. } => "flow_truncated",
            Error::OutOfPolydisc { .. } => "out_of_polydisc",
            Error::NoBracket { .. } => "no_bracket",
            Error::NonMonotone { .. } => "non_monotone",
            Error::RootNotConverged { .. } => "root_not_converged",
            Error::Diverged { .. } => "diverged",
            _ => "other",
        };
        Failure::Numerical { kind, message }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

use psde_core::ErrorClass;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] psde_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "INVALID_CONFIG",
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "IO_ERROR",
        }
    }

    /// 2 for rejected input, 3 for numerical failure, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Numerical => 3,
            },
            CliError::Io { .. } => 4,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "code": self.code(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Core(psde_core::Error::Param(psde_core::ParamError::RejectRho { alpha, beta, rho })) = self {
            v["alpha"] = (*alpha).into();
            v["beta"] = (*beta).into();
            v["rho"] = (*rho).into();
        }
        v
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

core_from!(
    psde_core::SimError,
    psde_core::MalliavinError,
    psde_core::LampertiError,
    psde_core::DensityError,
    psde_core::ParamError
);

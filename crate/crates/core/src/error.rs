use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LvicError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LvicError {
    /// Invalid calibration: non-orthonormal rotation, bad intrinsics, bad rig ids.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Structural problem in a binary or JSON file.
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    /// Well-formed file carrying unusable values (e.g. non-finite positions).
    #[error("data error: {0}")]
    Data(String),

    /// Inputs that do not fit together (mismatched dims, missing cameras, bad flags).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene generation error: {0}")]
    Generation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps an error raised while loading one camera's inputs.
    #[error("camera {camera}: {source}")]
    InCamera {
        camera: usize,
        #[source]
        source: Box<LvicError>,
    },

    /// Wraps another error with the file it came from.
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<LvicError>,
    },
}

impl LvicError {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        LvicError::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LvicError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_camera(self, camera: usize) -> Self {
        LvicError::InCamera {
            camera,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (LvicError::Io { .. } | LvicError::InFile { .. }) => e,
            other => LvicError::InFile {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("annotation manifest not found: {0}")]
    MissingManifest(PathBuf),

    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },

    #[error("text is empty")]
    EmptyText,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout: {0}")]
    Layout(String),

    #[error("font: {0}")]
    Font(String),

    #[error("font has no glyph for {}", format_missing(.0))]
    MissingGlyphs(Vec<char>),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("model client: {0}")]
    Client(String),

    #[error("model client unreachable after {attempts} attempts: {reason}")]
    Unreachable { attempts: u32, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_missing(chars: &[char]) -> String {
    chars
        .iter()
        .map(|c| format!("{c:?} (U+{:04X})", *c as u32))
        .collect::<Vec<_>>()
        .join(", ")
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}

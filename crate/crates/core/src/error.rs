use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("layer `{layer}`: blob holds {actual} values but dims require {expected}")]
    BlobLength {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("layer `{layer}`: non-finite value at index {index}")]
    NonFinite { layer: String, index: usize },

    #[error("invalid layer dims {0:?}: every dimension must be at least 1")]
    InvalidDims([usize; 4]),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot compute statistics of an empty vector")]
    EmptyVector,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("slice origin {position} is claimed twice")]
    OverlappingOrigin { position: usize },

    #[error("{missing} tensor positions are not covered by any slice")]
    MissingOrigin { missing: usize },

    #[error("code {code} is not representable with a {bit_width}-bit word")]
    CodeOutOfRange { code: i8, bit_width: u8 },

    #[error("reserved code word {word:#05b} encountered")]
    ReservedCode { word: u8 },

    #[error("container: {0}")]
    Container(#[from] ContainerError),

    #[error("value {value} does not fit in {width} signed-digit positions")]
    CsdOverflow { value: i64, width: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("layer mismatch: {0}")]
    LayerMismatch(String),

    #[error("layer `{layer}`: {source}")]
    InLayer {
        layer: String,
        #[source]
        source: Box<Error>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown flags {0:#06x}")]
    UnknownFlags(u16),
    #[error("stream truncated while reading {0}")]
    Truncated(&'static str),
    #[error("non-zero padding bits in layer `{0}`")]
    NonZeroPadding(String),
    #[error("invalid field {field}: {value}")]
    InvalidField { field: &'static str, value: u64 },
    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),
    #[error("{0} trailing bytes after last section")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("network description: {0}")]
    Network(String),
}

impl Error {
    pub fn in_layer(self, layer: &str) -> Self {
        match self {
            e @ Error::InLayer { .. } => e,
            e => Error::InLayer {
                layer: layer.to_owned(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

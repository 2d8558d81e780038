//! Error types shared across the crate.

use thiserror::Error;

/// Errors from metric computation and logging.
#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("class maps differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("metric record: {0}")]
    Record(String),
    #[error("metric log: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from tensor and network operations.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("parameter sets incompatible: {0}")]
    IncompatibleParams(String),
}

/// Errors from dataset ingestion and image I/O.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("ppm: {0}")]
    Ppm(String),
    #[error("palette: {0}")]
    Palette(String),
    #[error("pixel rgb ({0}, {1}, {2}) at ({x}, {y}) not in palette", x = .3, y = .4)]
    UnknownRgb(u8, u8, u8, usize, usize),
    #[error("coco: malformed json: {0}")]
    CocoJson(#[from] serde_json::Error),
    #[error("coco: annotation {index} references missing image id {id}")]
    DanglingImageId { index: usize, id: i64 },
    #[error("coco: annotation {index} references missing category id {id}")]
    DanglingCategoryId { index: usize, id: i64 },
    #[error("coco: annotation {index} has non-positive bbox size {w}x{h}")]
    BadBbox { index: usize, w: f64, h: f64 },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from message encoding and the federation protocol.
#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("codec: {0}")]
    Codec(String),
    #[error("codec: unknown message tag {0}")]
    UnknownTag(u8),
    #[error("codec: truncated payload ({context})")]
    Truncated { context: &'static str },
    #[error("protocol: {0}")]
    Session(String),
    #[error("numeric abort: federate {federate} round {round}: {reason}")]
    NumericAbort { federate: u64, round: u32, reason: String },
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Errors from the message channel layer.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer closed the channel")]
    PeerClosed,
    #[error("receive timed out")]
    Timeout,
    #[error("frame length {0} exceeds cap {1}")]
    FrameTooLarge(u64, u64),
    #[error("connect: {0}")]
    Connect(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

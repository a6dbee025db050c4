//! Minimal HTTP/3 syntax: varints, frames, static QPACK, stream typing and
//! the one-byte tag that demultiplexes the experimental `doq-h3` ALPN.

pub mod frame;
pub mod qpack;
mod static_table;
pub mod varint;

pub use frame::{frame_parse, Frame, FrameParser};
pub use qpack::FieldSection;
pub use varint::VarInt;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum H3Error {
    #[error("varint value {0} exceeds 2^62-1")]
    VarIntRange(u64),
    #[error("varint needs {needed} bytes, {have} available")]
    VarIntTruncated { needed: usize, have: usize },
    #[error("stream ended inside a frame ({trailing} bytes left over)")]
    IncompleteFrame { trailing: usize },
    #[error("frame length {0} too large")]
    FrameTooLarge(u64),
    #[error("truncated QPACK field section")]
    QpackTruncated,
    #[error("QPACK integer overflow")]
    QpackIntegerOverflow,
    #[error("static table index {0} out of range")]
    StaticIndex(u64),
    #[error("unsupported QPACK feature: {0}")]
    Unsupported(&'static str),
    #[error("pseudo-header {0} after regular field")]
    PseudoAfterRegular(String),
    #[error("status {0} outside 100-599")]
    InvalidStatus(u16),
    #[error("path must begin with '/': {0:?}")]
    InvalidPath(String),
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

pub const ALPN_DOQ: &[u8] = b"doq";
pub const ALPN_H3: &[u8] = b"h3";
pub const ALPN_DOQ_H3: &[u8] = b"doq-h3";

pub const UNI_CONTROL: u64 = 0x00;
pub const UNI_QPACK_ENCODER: u64 = 0x02;
pub const UNI_QPACK_DECODER: u64 = 0x03;

/// First byte of a bidirectional stream under `doq-h3`.
pub const TAG_DNS: u8 = 0x00;
pub const TAG_REQUEST: u8 = 0x01;

const DATA_CHUNK: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Control,
    QpackEncoder,
    QpackDecoder,
    Request,
    CoalescedDns,
}

impl StreamKind {
    /// Unknown unidirectional stream types map to `None` and are ignored.
    pub fn from_uni_type(t: u64) -> Option<Self> {
        match t {
            UNI_CONTROL => Some(Self::Control),
            UNI_QPACK_ENCODER => Some(Self::QpackEncoder),
            UNI_QPACK_DECODER => Some(Self::QpackDecoder),
            _ => None,
        }
    }

    pub fn uni_type(self) -> Option<u64> {
        match self {
            Self::Control => Some(UNI_CONTROL),
            Self::QpackEncoder => Some(UNI_QPACK_ENCODER),
            Self::QpackDecoder => Some(UNI_QPACK_DECODER),
            _ => None,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            TAG_DNS => Some(Self::CoalescedDns),
            TAG_REQUEST => Some(Self::Request),
            _ => None,
        }
    }

    pub fn tag(self) -> Option<u8> {
        match self {
            Self::CoalescedDns => Some(TAG_DNS),
            Self::Request => Some(TAG_REQUEST),
            _ => None,
        }
    }
}

/// Control stream preamble: stream type then our SETTINGS, advertising a
/// zero-capacity QPACK table.
pub fn control_stream_preamble() -> Vec<u8> {
    let mut out = vec![UNI_CONTROL as u8];
    Frame::settings(&[
        (frame::SETTINGS_QPACK_MAX_TABLE_CAPACITY, 0),
        (frame::SETTINGS_QPACK_BLOCKED_STREAMS, 0),
    ])
    .and_then(|f| f.encode_into(&mut out))
    .expect("constant settings encode");
    out
}

/// A GET request as a single HEADERS frame.
pub fn build_request(authority: &str, path: &str) -> Result<Vec<u8>, H3Error> {
    if !path.starts_with('/') {
        return Err(H3Error::InvalidPath(path.to_string()));
    }
    let fs = FieldSection::new()
        .with(":method", "GET")
        .with(":scheme", "https")
        .with(":authority", authority)
        .with(":path", path);
    Frame::headers(qpack::encode(&fs)?).serialize()
}

/// HEADERS(:status, content-type, content-length) followed by DATA frames
/// carrying `body`; an empty body produces no DATA frame.
pub fn build_response(status: u16, content_type: &str, body: &[u8]) -> Result<Vec<u8>, H3Error> {
    if !(100..=599).contains(&status) {
        return Err(H3Error::InvalidStatus(status));
    }
    let fs = FieldSection::new()
        .with(":status", status.to_string())
        .with("content-type", content_type)
        .with("content-length", body.len().to_string());
    let mut out = Vec::with_capacity(body.len() + 64);
    Frame::headers(qpack::encode(&fs)?).encode_into(&mut out)?;
    for chunk in body.chunks(DATA_CHUNK) {
        Frame::data(chunk).encode_into(&mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub authority: String,
    pub path: String,
    pub fields: FieldSection,
}

/// Decodes the HEADERS frame that opens a request stream.
pub fn parse_request_headers(frame: &Frame) -> Result<Request, H3Error> {
    if frame.frame_type != frame::HEADERS {
        return Err(H3Error::Malformed("request must start with HEADERS"));
    }
    let fields = qpack::decode(&frame.payload)?;
    let get = |n: &str| fields.get_str(n).map(str::to_string);
    Ok(Request {
        method: get(":method").ok_or(H3Error::Malformed("missing :method"))?,
        authority: get(":authority").unwrap_or_default(),
        path: get(":path").ok_or(H3Error::Malformed("missing :path"))?,
        fields,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub fields: FieldSection,
    pub body: Vec<u8>,
}

impl Response {
    pub fn content_type(&self) -> Option<&str> {
        self.fields.get_str("content-type")
    }
}

/// Parses a complete response stream.
pub fn parse_response(stream: &[u8]) -> Result<Response, H3Error> {
    let mut frames = frame_parse(stream)?.into_iter();
    let head = frames.next().ok_or(H3Error::Malformed("empty response"))?;
    if head.frame_type != frame::HEADERS {
        return Err(H3Error::Malformed("response must start with HEADERS"));
    }
    let fields = qpack::decode(&head.payload)?;
    let status = fields
        .get_str(":status")
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or(H3Error::Malformed("missing :status"))?;
    let mut body = Vec::new();
    for f in frames {
        match f.frame_type {
            frame::DATA => body.extend_from_slice(&f.payload),
            // trailers are not supported; anything else is out of place
            _ => return Err(H3Error::Malformed("unexpected frame after body")),
        }
    }
    Ok(Response { status, fields, body })
}

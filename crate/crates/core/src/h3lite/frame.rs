use super::{varint, H3Error};

pub const DATA: u64 = 0x00;
pub const HEADERS: u64 = 0x01;
pub const SETTINGS: u64 = 0x04;

pub const SETTINGS_QPACK_MAX_TABLE_CAPACITY: u64 = 0x01;
pub const SETTINGS_QPACK_BLOCKED_STREAMS: u64 = 0x07;

fn recognized(frame_type: u64) -> bool {
    matches!(frame_type, DATA | HEADERS | SETTINGS)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(frame_type: u64, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            frame_type,
            payload: payload.into(),
        }
    }

    pub fn data(payload: impl Into<Vec<u8>>) -> Self {
        Self::new(DATA, payload)
    }

    pub fn headers(block: impl Into<Vec<u8>>) -> Self {
        Self::new(HEADERS, block)
    }

    pub fn settings(params: &[(u64, u64)]) -> Result<Self, H3Error> {
        let mut payload = Vec::new();
        for (id, value) in params {
            varint::encode_into(*id, &mut payload)?;
            varint::encode_into(*value, &mut payload)?;
        }
        Ok(Self::new(SETTINGS, payload))
    }

    pub fn serialize(&self) -> Result<Vec<u8>, H3Error> {
        let mut out = Vec::with_capacity(self.payload.len() + 16);
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), H3Error> {
        varint::encode_into(self.frame_type, out)?;
        varint::encode_into(self.payload.len() as u64, out)?;
        out.extend_from_slice(&self.payload);
        Ok(())
    }
}

/// Parses a SETTINGS payload into (identifier, value) pairs.
pub fn parse_settings(payload: &[u8]) -> Result<Vec<(u64, u64)>, H3Error> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < payload.len() {
        let (id, n) = varint::decode(&payload[pos..])?;
        pos += n;
        let (value, n) = varint::decode(&payload[pos..])?;
        pos += n;
        out.push((id, value));
    }
    Ok(out)
}

/// Incremental frame parser for one stream. Bytes are pushed as they
/// arrive; complete frames of recognized types are yielded, everything
/// else is skipped.
#[derive(Debug, Default)]
pub struct FrameParser {
    buf: Vec<u8>,
    pos: usize,
    skipped: usize,
}

impl FrameParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos * 2 >= self.buf.len() {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Number of unknown frames skipped so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Returns the next complete recognized frame, or `None` if more bytes
    /// are needed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, H3Error> {
        loop {
            let rest = &self.buf[self.pos..];
            let Some(&first) = rest.first() else {
                return Ok(None);
            };
            let tlen = varint::len_from_first_byte(first);
            if rest.len() < tlen {
                return Ok(None);
            }
            let (frame_type, _) = varint::decode(rest)?;
            let Some(&lfirst) = rest.get(tlen) else {
                return Ok(None);
            };
            let llen = varint::len_from_first_byte(lfirst);
            if rest.len() < tlen + llen {
                return Ok(None);
            }
            let (len, _) = varint::decode(&rest[tlen..])?;
            let header = tlen + llen;
            let Ok(len) = usize::try_from(len) else {
                return Err(H3Error::FrameTooLarge(len));
            };
            let Some(total) = header.checked_add(len) else {
                return Err(H3Error::FrameTooLarge(len as u64));
            };
            if rest.len() < total {
                return Ok(None);
            }
            let payload = rest[header..total].to_vec();
            self.pos += total;
            if recognized(frame_type) {
                return Ok(Some(Frame { frame_type, payload }));
            }
            self.skipped += 1;
        }
    }

    /// Call at end of stream: errors if a partial frame is left over.
    pub fn finish(&self) -> Result<(), H3Error> {
        let left = self.buf.len() - self.pos;
        if left > 0 {
            return Err(H3Error::IncompleteFrame { trailing: left });
        }
        Ok(())
    }
}

/// Parses a complete stream into its recognized frames.
pub fn frame_parse(stream: &[u8]) -> Result<Vec<Frame>, H3Error> {
    let mut parser = FrameParser::new();
    parser.push(stream);
    let mut out = Vec::new();
    while let Some(f) = parser.next_frame()? {
        out.push(f);
    }
    parser.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn skips_unknown_and_keeps_going() {
        let mut s = Frame::new(0x21, b"zz".to_vec()).serialize().unwrap();
        s.extend(Frame::data(b"abc".to_vec()).serialize().unwrap());
        let mut p = FrameParser::new();
        p.push(&s);
        assert_eq!(p.next_frame().unwrap(), Some(Frame::data(b"abc".to_vec())));
        assert_eq!(p.skipped(), 1);
        assert_eq!(p.next_frame().unwrap(), None);
        p.finish().unwrap();
    }

    #[test]
    fn byte_by_byte_feeding() {
        let mut s = Frame::settings(&[(1, 0), (7, 0)]).unwrap().serialize().unwrap();
        s.extend(Frame::data(vec![7u8; 300]).serialize().unwrap());
        let mut p = FrameParser::new();
        let mut got = Vec::new();
        for b in &s {
            p.push(std::slice::from_ref(b));
            while let Some(f) = p.next_frame().unwrap() {
                got.push(f);
            }
        }
        assert_eq!(got.len(), 2);
        assert_eq!(parse_settings(&got[0].payload).unwrap(), vec![(1, 0), (7, 0)]);
        assert_eq!(got[1].payload.len(), 300);
    }

    #[test]
    fn incomplete_at_end() {
        let s = [0x00, 0x05, b'a'];
        assert!(matches!(frame_parse(&s), Err(H3Error::IncompleteFrame { trailing: 3 })));
    }

    #[test]
    fn absurd_length_is_an_error_not_a_panic() {
        let s = [0x00, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff];
        let r = frame_parse(&s);
        assert!(r.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]
        #[test]
        fn fuzz_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = frame_parse(&bytes);
        }
    }
}

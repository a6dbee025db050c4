//! DNS message codec: header, question and answer sections.
//!
//! The encoder always writes uncompressed names; the decoder also follows
//! compression pointers. Record data of types other than A/AAAA is kept as
//! opaque bytes.

use std::collections::HashSet;
use std::net::IpAddr;

pub const TYPE_A: u16 = 1;
pub const TYPE_AAAA: u16 = 28;
pub const CLASS_IN: u16 = 1;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_NXDOMAIN: u8 = 3;
pub const RCODE_NOTIMP: u8 = 4;

const HEADER_LEN: usize = 12;
const MAX_LABEL: usize = 63;
const MAX_NAME: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DnsError {
    #[error("empty domain name")]
    EmptyName,
    #[error("label `{0}` longer than 63 bytes")]
    LabelTooLong(String),
    #[error("empty label in `{0}`")]
    EmptyLabel(String),
    #[error("name longer than 255 bytes")]
    NameTooLong,
    #[error("message truncated at offset {0}")]
    Truncated(usize),
    #[error("compression pointer loop at offset {0}")]
    PointerLoop(usize),
    #[error("reserved label type 0x{0:02x}")]
    BadLabelType(u8),
    #[error("{field} value {value} out of range")]
    FieldRange { field: &'static str, value: u8 },
    #[error("rdata length {len} does not fit record type {rtype}")]
    RdataLength { rtype: u16, len: usize },
    #[error("response needs exactly one question, query has {0}")]
    QuestionCount(usize),
    #[error("address {addr} does not match query type {qtype}")]
    AddressFamily { addr: IpAddr, qtype: u16 },
    #[error("section has {0} entries, more than 65535")]
    TooManyRecords(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    pub qr: bool,
    pub opcode: u8,
    pub aa: bool,
    pub tc: bool,
    pub rd: bool,
    pub ra: bool,
    pub rcode: u8,
}

impl Flags {
    fn to_u16(self) -> Result<u16, DnsError> {
        if self.opcode > 0x0f {
            return Err(DnsError::FieldRange {
                field: "opcode",
                value: self.opcode,
            });
        }
        if self.rcode > 0x0f {
            return Err(DnsError::FieldRange {
                field: "rcode",
                value: self.rcode,
            });
        }
        Ok((u16::from(self.qr) << 15)
            | (u16::from(self.opcode) << 11)
            | (u16::from(self.aa) << 10)
            | (u16::from(self.tc) << 9)
            | (u16::from(self.rd) << 8)
            | (u16::from(self.ra) << 7)
            | u16::from(self.rcode))
    }

    fn from_u16(v: u16) -> Self {
        Self {
            qr: v & 0x8000 != 0,
            opcode: ((v >> 11) & 0x0f) as u8,
            aa: v & 0x0400 != 0,
            tc: v & 0x0200 != 0,
            rd: v & 0x0100 != 0,
            ra: v & 0x0080 != 0,
            rcode: (v & 0x000f) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    /// Dotted name without the trailing root dot.
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub name: String,
    pub rtype: u16,
    pub class: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

impl Record {
    /// The address carried by an A/AAAA record.
    pub fn address(&self) -> Option<IpAddr> {
        match (self.rtype, self.rdata.len()) {
            (TYPE_A, 4) => {
                let b: [u8; 4] = self.rdata[..].try_into().ok()?;
                Some(IpAddr::from(b))
            }
            (TYPE_AAAA, 16) => {
                let b: [u8; 16] = self.rdata[..].try_into().ok()?;
                Some(IpAddr::from(b))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsMessage {
    pub id: u16,
    pub flags: Flags,
    pub questions: Vec<Question>,
    pub answers: Vec<Record>,
}

impl DnsMessage {
    pub fn addresses(&self) -> Vec<IpAddr> {
        self.answers.iter().filter_map(Record::address).collect()
    }
}

/// Validates a dotted name and returns it lowercased without a trailing dot.
pub fn normalize_name(name: &str) -> Result<String, DnsError> {
    let trimmed = name.strip_suffix('.').unwrap_or(name);
    if trimmed.is_empty() {
        return Err(DnsError::EmptyName);
    }
    let mut wire_len = 1;
    for label in trimmed.split('.') {
        if label.is_empty() {
            return Err(DnsError::EmptyLabel(name.to_string()));
        }
        if label.len() > MAX_LABEL {
            return Err(DnsError::LabelTooLong(label.to_string()));
        }
        wire_len += label.len() + 1;
    }
    if wire_len > MAX_NAME {
        return Err(DnsError::NameTooLong);
    }
    Ok(trimmed.to_ascii_lowercase())
}

/// A recursion-desired query with one question.
pub fn make_query(name: &str, qtype: u16, id: u16) -> Result<DnsMessage, DnsError> {
    let name = normalize_name(name)?;
    Ok(DnsMessage {
        id,
        flags: Flags {
            rd: true,
            ..Flags::default()
        },
        questions: vec![Question {
            name,
            qtype,
            qclass: CLASS_IN,
        }],
        answers: Vec::new(),
    })
}

/// Answers `query` with one record per address, or NXDOMAIN when `nxdomain`.
pub fn make_response(
    query: &DnsMessage,
    addresses: &[IpAddr],
    ttl: u32,
    nxdomain: bool,
) -> Result<DnsMessage, DnsError> {
    if query.questions.len() != 1 {
        return Err(DnsError::QuestionCount(query.questions.len()));
    }
    let q = &query.questions[0];
    let mut answers = Vec::with_capacity(addresses.len());
    if !nxdomain {
        for addr in addresses {
            let rdata = match (q.qtype, addr) {
                (TYPE_A, IpAddr::V4(v4)) => v4.octets().to_vec(),
                (TYPE_AAAA, IpAddr::V6(v6)) => v6.octets().to_vec(),
                _ => {
                    return Err(DnsError::AddressFamily {
                        addr: *addr,
                        qtype: q.qtype,
                    })
                }
            };
            answers.push(Record {
                name: q.name.clone(),
                rtype: q.qtype,
                class: q.qclass,
                ttl,
                rdata,
            });
        }
    }
    Ok(DnsMessage {
        id: query.id,
        flags: Flags {
            qr: true,
            opcode: query.flags.opcode,
            rd: query.flags.rd,
            ra: true,
            rcode: if nxdomain { RCODE_NXDOMAIN } else { RCODE_NOERROR },
            ..Flags::default()
        },
        questions: query.questions.clone(),
        answers,
    })
}

/// Response carrying only a status code and the echoed question section.
pub fn make_error_response(query: &DnsMessage, rcode: u8) -> DnsMessage {
    DnsMessage {
        id: query.id,
        flags: Flags {
            qr: true,
            opcode: query.flags.opcode,
            rd: query.flags.rd,
            ra: true,
            rcode,
            ..Flags::default()
        },
        questions: query.questions.clone(),
        answers: Vec::new(),
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<(), DnsError> {
    let name = name.strip_suffix('.').unwrap_or(name);
    if !name.is_empty() {
        normalize_name(name)?;
        for label in name.split('.') {
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
    }
    out.push(0);
    Ok(())
}

fn count(n: usize) -> Result<u16, DnsError> {
    u16::try_from(n).map_err(|_| DnsError::TooManyRecords(n))
}

pub fn encode(msg: &DnsMessage) -> Result<Vec<u8>, DnsError> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&msg.id.to_be_bytes());
    out.extend_from_slice(&msg.flags.to_u16()?.to_be_bytes());
    out.extend_from_slice(&count(msg.questions.len())?.to_be_bytes());
    out.extend_from_slice(&count(msg.answers.len())?.to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]);
    for q in &msg.questions {
        put_name(&mut out, &q.name)?;
        out.extend_from_slice(&q.qtype.to_be_bytes());
        out.extend_from_slice(&q.qclass.to_be_bytes());
    }
    for r in &msg.answers {
        let expected = match r.rtype {
            TYPE_A => Some(4),
            TYPE_AAAA => Some(16),
            _ => None,
        };
        if expected.is_some_and(|n| n != r.rdata.len()) || r.rdata.len() > usize::from(u16::MAX) {
            return Err(DnsError::RdataLength {
                rtype: r.rtype,
                len: r.rdata.len(),
            });
        }
        put_name(&mut out, &r.name)?;
        out.extend_from_slice(&r.rtype.to_be_bytes());
        out.extend_from_slice(&r.class.to_be_bytes());
        out.extend_from_slice(&r.ttl.to_be_bytes());
        out.extend_from_slice(&(r.rdata.len() as u16).to_be_bytes());
        out.extend_from_slice(&r.rdata);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DnsError> {
        let end = self.pos.checked_add(n).ok_or(DnsError::Truncated(self.pos))?;
        let s = self.buf.get(self.pos..end).ok_or(DnsError::Truncated(self.pos))?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DnsError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DnsError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn name(&mut self) -> Result<String, DnsError> {
        let mut labels: Vec<String> = Vec::new();
        let mut pos = self.pos;
        let mut resume_at = None;
        let mut visited = HashSet::new();
        let mut wire_len = 1;
        loop {
            let len = *self.buf.get(pos).ok_or(DnsError::Truncated(pos))?;
            match len & 0xc0 {
                0x00 => {
                    if len == 0 {
                        pos += 1;
                        break;
                    }
                    let start = pos + 1;
                    let end = start + len as usize;
                    let label = self.buf.get(start..end).ok_or(DnsError::Truncated(start))?;
                    wire_len += label.len() + 1;
                    if wire_len > MAX_NAME {
                        return Err(DnsError::NameTooLong);
                    }
                    labels.push(String::from_utf8_lossy(label).into_owned());
                    pos = end;
                }
                0xc0 => {
                    let lo = *self.buf.get(pos + 1).ok_or(DnsError::Truncated(pos + 1))?;
                    if !visited.insert(pos) {
                        return Err(DnsError::PointerLoop(pos));
                    }
                    if resume_at.is_none() {
                        resume_at = Some(pos + 2);
                    }
                    pos = (usize::from(len & 0x3f) << 8) | usize::from(lo);
                }
                other => return Err(DnsError::BadLabelType(other)),
            }
        }
        self.pos = resume_at.unwrap_or(pos);
        Ok(labels.join("."))
    }
}

pub fn decode(buf: &[u8]) -> Result<DnsMessage, DnsError> {
    if buf.len() < HEADER_LEN {
        return Err(DnsError::Truncated(buf.len()));
    }
    let mut r = Reader { buf, pos: 0 };
    let id = r.u16()?;
    let flags = Flags::from_u16(r.u16()?);
    let qd = r.u16()? as usize;
    let an = r.u16()? as usize;
    let _ns = r.u16()?;
    let _ar = r.u16()?;

    // Each question needs at least 5 bytes, each record at least 11.
    let remaining = buf.len() - HEADER_LEN;
    if qd * 5 + an * 11 > remaining {
        return Err(DnsError::Truncated(buf.len()));
    }

    let mut questions = Vec::with_capacity(qd);
    for _ in 0..qd {
        let name = r.name()?;
        let qtype = r.u16()?;
        let qclass = r.u16()?;
        questions.push(Question { name, qtype, qclass });
    }
    let mut answers = Vec::with_capacity(an);
    for _ in 0..an {
        let name = r.name()?;
        let rtype = r.u16()?;
        let class = r.u16()?;
        let ttl = r.u32()?;
        let len = r.u16()? as usize;
        let rdata = r.take(len)?.to_vec();
        answers.push(Record {
            name,
            rtype,
            class,
            ttl,
            rdata,
        });
    }
    Ok(DnsMessage {
        id,
        flags,
        questions,
        answers,
    })
}

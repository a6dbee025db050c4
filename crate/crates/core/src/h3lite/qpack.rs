//! Static-table-only QPACK. The encoder never references dynamic state and
//! never Huffman-codes; the decoder rejects both.

use super::static_table::STATIC_TABLE;
use super::H3Error;

/// Ordered header fields. Names are stored lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldSection {
    fields: Vec<(Vec<u8>, Vec<u8>)>,
}

impl FieldSection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl AsRef<[u8]>, value: impl AsRef<[u8]>) {
        self.fields
            .push((name.as_ref().to_ascii_lowercase(), value.as_ref().to_vec()));
    }

    pub fn with(mut self, name: impl AsRef<[u8]>, value: impl AsRef<[u8]>) -> Self {
        self.push(name, value);
        self
    }

    pub fn fields(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.fields
            .iter()
            .find(|(n, _)| n == name.as_bytes())
            .map(|(_, v)| v.as_slice())
    }

    pub fn get_str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(|v| std::str::from_utf8(v).ok())
    }

    /// Pseudo-header fields must precede regular ones.
    pub fn check_order(&self) -> Result<(), H3Error> {
        let mut regular_seen = false;
        for (name, _) in &self.fields {
            if name.first() == Some(&b':') {
                if regular_seen {
                    return Err(H3Error::PseudoAfterRegular(String::from_utf8_lossy(name).into_owned()));
                }
            } else {
                regular_seen = true;
            }
        }
        Ok(())
    }
}

fn put_int(out: &mut Vec<u8>, prefix_bits: u8, flags: u8, mut value: u64) {
    let limit = (1u64 << prefix_bits) - 1;
    if value < limit {
        out.push(flags | value as u8);
        return;
    }
    out.push(flags | limit as u8);
    value -= limit;
    while value >= 128 {
        out.push((value as u8 & 0x7f) | 0x80);
        value >>= 7;
    }
    out.push(value as u8);
}

fn get_int(buf: &[u8], pos: &mut usize, prefix_bits: u8) -> Result<u64, H3Error> {
    let first = *buf.get(*pos).ok_or(H3Error::QpackTruncated)?;
    *pos += 1;
    let limit = (1u64 << prefix_bits) - 1;
    let mut value = u64::from(first) & limit;
    if value < limit {
        return Ok(value);
    }
    let mut shift = 0u32;
    loop {
        let b = *buf.get(*pos).ok_or(H3Error::QpackTruncated)?;
        *pos += 1;
        if shift > 56 {
            return Err(H3Error::QpackIntegerOverflow);
        }
        value = value
            .checked_add(u64::from(b & 0x7f) << shift)
            .ok_or(H3Error::QpackIntegerOverflow)?;
        if b & 0x80 == 0 {
            return Ok(value);
        }
        shift += 7;
    }
}

fn put_string(out: &mut Vec<u8>, prefix_bits: u8, flags: u8, s: &[u8]) {
    put_int(out, prefix_bits, flags, s.len() as u64);
    out.extend_from_slice(s);
}

/// `huffman_bit` is the mask of the H flag within the first byte.
fn get_string<'a>(buf: &'a [u8], pos: &mut usize, prefix_bits: u8, huffman_bit: u8) -> Result<&'a [u8], H3Error> {
    let first = *buf.get(*pos).ok_or(H3Error::QpackTruncated)?;
    if first & huffman_bit != 0 {
        return Err(H3Error::Unsupported("Huffman-coded string"));
    }
    let len = get_int(buf, pos, prefix_bits)?;
    let len = usize::try_from(len).map_err(|_| H3Error::QpackTruncated)?;
    let end = pos.checked_add(len).ok_or(H3Error::QpackTruncated)?;
    let s = buf.get(*pos..end).ok_or(H3Error::QpackTruncated)?;
    *pos = end;
    Ok(s)
}

fn static_lookup(name: &[u8], value: &[u8]) -> (Option<usize>, Option<usize>) {
    let mut name_idx = None;
    for (i, (n, v)) in STATIC_TABLE.iter().enumerate() {
        if n.as_bytes() == name {
            if v.as_bytes() == value {
                return (Some(i), name_idx.or(Some(i)));
            }
            name_idx = name_idx.or(Some(i));
        }
    }
    (None, name_idx)
}

pub fn encode(fs: &FieldSection) -> Result<Vec<u8>, H3Error> {
    fs.check_order()?;
    // Required Insert Count 0, Delta Base 0
    let mut out = vec![0x00, 0x00];
    for (name, value) in &fs.fields {
        match static_lookup(name, value) {
            (Some(idx), _) => put_int(&mut out, 6, 0xc0, idx as u64),
            (None, Some(idx)) => {
                put_int(&mut out, 4, 0x50, idx as u64);
                put_string(&mut out, 7, 0x00, value);
            }
            (None, None) => {
                put_string(&mut out, 3, 0x20, name);
                put_string(&mut out, 7, 0x00, value);
            }
        }
    }
    Ok(out)
}

fn static_entry(idx: u64) -> Result<(&'static str, &'static str), H3Error> {
    usize::try_from(idx)
        .ok()
        .and_then(|i| STATIC_TABLE.get(i))
        .copied()
        .ok_or(H3Error::StaticIndex(idx))
}

pub fn decode(block: &[u8]) -> Result<FieldSection, H3Error> {
    let mut pos = 0;
    let ric = get_int(block, &mut pos, 8)?;
    if ric != 0 {
        return Err(H3Error::Unsupported("dynamic table reference"));
    }
    // Delta Base is meaningless without dynamic entries
    get_int(block, &mut pos, 7)?;
    let mut fs = FieldSection::new();
    while pos < block.len() {
        let b = block[pos];
        if b & 0x80 != 0 {
            if b & 0x40 == 0 {
                return Err(H3Error::Unsupported("dynamic table reference"));
            }
            let (n, v) = static_entry(get_int(block, &mut pos, 6)?)?;
            fs.push(n, v);
        } else if b & 0x40 != 0 {
            if b & 0x10 == 0 {
                return Err(H3Error::Unsupported("dynamic table reference"));
            }
            let (n, _) = static_entry(get_int(block, &mut pos, 4)?)?;
            let v = get_string(block, &mut pos, 7, 0x80)?;
            fs.push(n, v);
        } else if b & 0x20 != 0 {
            let n = get_string(block, &mut pos, 3, 0x08)?.to_vec();
            let v = get_string(block, &mut pos, 7, 0x80)?;
            fs.push(n, v);
        } else {
            return Err(H3Error::Unsupported("post-base dynamic reference"));
        }
    }
    Ok(fs)
}

use super::H3Error;

/// Largest value representable as a QUIC variable-length integer.
pub const MAX: u64 = (1 << 62) - 1;

/// A QUIC variable-length integer (RFC 9000 §16).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarInt(u64);

impl VarInt {
    pub fn new(value: u64) -> Result<Self, H3Error> {
        if value > MAX {
            return Err(H3Error::VarIntRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Length of the shortest encoding: 1, 2, 4 or 8.
    pub fn size(self) -> usize {
        encoded_len(self.0)
    }
}

impl TryFrom<u64> for VarInt {
    type Error = H3Error;
    fn try_from(value: u64) -> Result<Self, H3Error> {
        Self::new(value)
    }
}

impl From<VarInt> for u64 {
    fn from(v: VarInt) -> u64 {
        v.0
    }
}

pub fn encoded_len(value: u64) -> usize {
    match value {
        0..=63 => 1,
        64..=16383 => 2,
        16384..=1_073_741_823 => 4,
        _ => 8,
    }
}

/// Appends the shortest encoding of `value` to `out`.
pub fn encode_into(value: u64, out: &mut Vec<u8>) -> Result<(), H3Error> {
    let v = VarInt::new(value)?.0;
    match encoded_len(v) {
        1 => out.push(v as u8),
        2 => out.extend_from_slice(&((v as u16) | 0x4000).to_be_bytes()),
        4 => out.extend_from_slice(&((v as u32) | 0x8000_0000).to_be_bytes()),
        _ => out.extend_from_slice(&(v | 0xc000_0000_0000_0000).to_be_bytes()),
    }
    Ok(())
}

pub fn encode(value: u64) -> Result<Vec<u8>, H3Error> {
    let mut out = Vec::with_capacity(8);
    encode_into(value, &mut out)?;
    Ok(out)
}

/// Decodes one varint from the front of `buf`, returning the value and the
/// number of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(u64, usize), H3Error> {
    let first = *buf.first().ok_or(H3Error::VarIntTruncated { needed: 1, have: 0 })?;
    let len = 1usize << (first >> 6);
    if buf.len() < len {
        return Err(H3Error::VarIntTruncated {
            needed: len,
            have: buf.len(),
        });
    }
    let mut v = u64::from(first & 0x3f);
    for b in &buf[1..len] {
        v = (v << 8) | u64::from(*b);
    }
    Ok((v, len))
}

/// Length of a varint given only its first byte.
pub fn len_from_first_byte(first: u8) -> usize {
    1usize << (first >> 6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(encode(1 << 62), Err(H3Error::VarIntRange(_))));
        assert!(VarInt::new(MAX).is_ok());
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(&[]), Err(H3Error::VarIntTruncated { .. })));
        assert!(matches!(
            decode(&[0x7b]),
            Err(H3Error::VarIntTruncated { needed: 2, have: 1 })
        ));
    }

    #[test]
    fn length_classes() {
        for (v, n) in [(0, 1), (63, 1), (64, 2), (16383, 2), (16384, 4), (1 << 30, 8), (MAX, 8)] {
            assert_eq!(encode(v).unwrap().len(), n, "{v}");
            assert_eq!(VarInt::new(v).unwrap().size(), n);
        }
    }

    fn any_class() -> impl Strategy<Value = u64> {
        prop_oneof![0u64..64, 64u64..16384, 16384u64..(1 << 30), (1u64 << 30)..=MAX]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]
        #[test]
        fn roundtrip(v in any_class()) {
            let bytes = encode(v).unwrap();
            prop_assert_eq!(bytes.len(), encoded_len(v));
            prop_assert_eq!(len_from_first_byte(bytes[0]), bytes.len());
            prop_assert_eq!(decode(&bytes).unwrap(), (v, bytes.len()));
        }
    }
}

//! Frozen seed derivation.
//!
//! The master seed (8 bytes, little-endian) and then each label are fed
//! through 64-bit FNV-1a. An integer label is the byte `0x01` followed by
//! its 8 little-endian bytes; a string label is `0x02`, its byte length as
//! 8 little-endian bytes, then its UTF-8 bytes. The hash is finished with
//! the splitmix64 finalizer. Changing any of this changes every output.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label<'a> {
    Int(u64),
    Str(&'a str),
}

impl From<u64> for Label<'_> {
    fn from(v: u64) -> Self {
        Label::Int(v)
    }
}

impl From<usize> for Label<'_> {
    fn from(v: usize) -> Self {
        Label::Int(v as u64)
    }
}

impl<'a> From<&'a str> for Label<'a> {
    fn from(s: &'a str) -> Self {
        Label::Str(s)
    }
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64_finish(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, labels: &[Label<'_>]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    for label in labels {
        h = match *label {
            Label::Int(v) => fnv1a(fnv1a(h, &[0x01]), &v.to_le_bytes()),
            Label::Str(s) => {
                let h = fnv1a(fnv1a(h, &[0x02]), &(s.len() as u64).to_le_bytes());
                fnv1a(h, s.as_bytes())
            }
        };
    }
    splitmix64_finish(h)
}

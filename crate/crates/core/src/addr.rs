//! IPv6 address atoms: 128-bit addresses, 64-bit interface identifiers,
//! CIDR prefixes, and the modified EUI-64 codec.
//!
//! Text handling is done here rather than through `std::net::Ipv6Addr`
//! because parse errors must carry the byte offset of the offending
//! character, and canonical output must never switch to the dotted IPv4
//! form (golden files depend on one stable spelling per value).

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("malformed IPv6 address at byte offset {offset}")]
    MalformedAddress { offset: usize },
    #[error("malformed prefix: {0}")]
    MalformedPrefix(String),
    #[error("prefix length {0} exceeds 128")]
    PrefixTooLong(u32),
    #[error("malformed MAC address: {0}")]
    MalformedMac(String),
    #[error("low threshold {0} exceeds 64")]
    InvalidThreshold(u32),
    #[error("privacy band {start}..={end} is empty or exceeds 64")]
    InvalidBand { start: u32, end: u32 },
}

/// A 128-bit IPv6 address. Bit 0 is the most significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address128(pub u128);

/// The low 64 bits of an address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Iid64(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    base: Address128,
    len: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mac48(pub [u8; 6]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IidClass {
    Eui64(Mac48),
    Low,
    PrivacyRandom,
    Other,
}

impl IidClass {
    pub fn label(&self) -> &'static str {
        match self {
            IidClass::Eui64(_) => "eui64",
            IidClass::Low => "low",
            IidClass::PrivacyRandom => "privacy_random",
            IidClass::Other => "other",
        }
    }
}

impl Address128 {
    pub const fn from_bits(bits: u128) -> Self {
        Address128(bits)
    }

    pub const fn bits(self) -> u128 {
        self.0
    }

    pub fn iid(self) -> Iid64 {
        Iid64(self.0 as u64)
    }

    /// The /64 this address lives in.
    pub fn prefix64(self) -> Prefix {
        Prefix::new(self, 64).expect("64 is a valid length")
    }

    pub fn from_parts(prefix64: Prefix, iid: Iid64) -> Self {
        Address128((prefix64.base.0 & mask(64)) | iid.0 as u128)
    }

    /// Bit `i` counted from the most significant end.
    #[inline]
    pub fn bit(self, i: u32) -> bool {
        (self.0 >> (127 - i)) & 1 == 1
    }

    pub fn canonical_text(self) -> String {
        canonical_text(self)
    }
}

pub fn split(a: Address128) -> (Prefix, Iid64) {
    (a.prefix64(), a.iid())
}

#[inline]
pub(crate) const fn mask(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        u128::MAX << (128 - len as u32)
    }
}

impl Prefix {
    /// Builds a prefix, clearing any host bits of `base`.
    pub fn new(base: Address128, len: u8) -> Result<Self, AddrError> {
        if len > 128 {
            return Err(AddrError::PrefixTooLong(len as u32));
        }
        Ok(Prefix {
            base: Address128(base.0 & mask(len)),
            len,
        })
    }

    pub fn base(&self) -> Address128 {
        self.base
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_default_route(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn contains(&self, a: Address128) -> bool {
        a.0 & mask(self.len) == self.base.0
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.len)
    }
}

impl FromStr for Prefix {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| AddrError::MalformedPrefix(s.to_string()))?;
        let base = parse_address(addr)?;
        if len.is_empty() || !len.bytes().all(|b| b.is_ascii_digit()) || len.len() > 3 {
            return Err(AddrError::MalformedPrefix(s.to_string()));
        }
        let len: u32 = len.parse().map_err(|_| AddrError::MalformedPrefix(s.to_string()))?;
        if len > 128 {
            return Err(AddrError::PrefixTooLong(len));
        }
        Prefix::new(base, len as u8)
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses any well-formed textual IPv6 address: full, `::`-compressed, or
/// with a trailing dotted-quad. Zone identifiers are rejected.
pub fn parse_address(text: &str) -> Result<Address128, AddrError> {
    let b = text.as_bytes();
    let err = |offset: usize| AddrError::MalformedAddress { offset };
    if b.is_empty() {
        return Err(err(0));
    }

    let mut head: Vec<u16> = Vec::with_capacity(8);
    let mut tail: Vec<u16> = Vec::with_capacity(8);
    let mut compressed = false;
    let mut i = 0usize;

    if b[0] == b':' {
        if b.get(1) != Some(&b':') {
            return Err(err(1.min(b.len())));
        }
        compressed = true;
        i = 2;
        if i == b.len() {
            return Ok(Address128(0));
        }
    }

    loop {
        let groups_so_far = head.len() + tail.len();
        let max_groups = if compressed { 7 } else { 8 };
        let start = i;
        let mut value: u32 = 0;
        while i < b.len() && b[i].is_ascii_hexdigit() {
            if i - start == 4 {
                return Err(err(i));
            }
            value = (value << 4) | (b[i] as char).to_digit(16).unwrap();
            i += 1;
        }

        if i < b.len() && b[i] == b'.' {
            // Embedded IPv4 must be the final 32 bits.
            if groups_so_far + 2 > max_groups {
                return Err(err(start));
            }
            let v4 = parse_dotted_quad(b, start)?;
            let dst = if compressed { &mut tail } else { &mut head };
            dst.push((v4 >> 16) as u16);
            dst.push(v4 as u16);
            break;
        }

        if i == start {
            return Err(err(i));
        }
        if groups_so_far + 1 > max_groups {
            return Err(err(start));
        }
        if compressed {
            tail.push(value as u16);
        } else {
            head.push(value as u16);
        }

        if i == b.len() {
            break;
        }
        if b[i] != b':' {
            return Err(err(i));
        }
        i += 1;
        if i < b.len() && b[i] == b':' {
            if compressed {
                return Err(err(i));
            }
            compressed = true;
            i += 1;
            if head.len() > 7 {
                return Err(err(i - 2));
            }
            if i == b.len() {
                break;
            }
        } else if i == b.len() {
            return Err(err(i));
        }
    }

    let total = head.len() + tail.len();
    if !compressed && total != 8 {
        return Err(err(b.len()));
    }
    let mut groups = [0u16; 8];
    groups[..head.len()].copy_from_slice(&head);
    groups[8 - tail.len()..].copy_from_slice(&tail);
    let bits = groups.iter().fold(0u128, |acc, &g| (acc << 16) | g as u128);
    Ok(Address128(bits))
}

fn parse_dotted_quad(b: &[u8], start: usize) -> Result<u32, AddrError> {
    let err = |offset: usize| AddrError::MalformedAddress { offset };
    let mut i = start;
    let mut out = 0u32;
    for octet in 0..4 {
        if octet > 0 {
            if i >= b.len() || b[i] != b'.' {
                return Err(err(i));
            }
            i += 1;
        }
        let s = i;
        let mut v = 0u32;
        while i < b.len() && b[i].is_ascii_digit() {
            if i - s == 3 || (i > s && b[s] == b'0') {
                return Err(err(i));
            }
            v = v * 10 + (b[i] - b'0') as u32;
            i += 1;
        }
        if i == s || v > 255 {
            return Err(err(if i == s { i } else { s }));
        }
        out = (out << 8) | v;
    }
    if i != b.len() {
        return Err(err(i));
    }
    Ok(out)
}

/// Shortest-form lowercase text. The longest run of two or more zero
/// groups collapses to `::`, with ties going to the leftmost run.
pub fn canonical_text(a: Address128) -> String {
    let groups: [u16; 8] = std::array::from_fn(|k| (a.0 >> (112 - 16 * k)) as u16);

    let (mut best_start, mut best_len) = (0usize, 0usize);
    let mut k = 0;
    while k < 8 {
        if groups[k] == 0 {
            let s = k;
            while k < 8 && groups[k] == 0 {
                k += 1;
            }
            if k - s > best_len {
                best_start = s;
                best_len = k - s;
            }
        } else {
            k += 1;
        }
    }

    let mut out = String::with_capacity(39);
    let hex = |out: &mut String, g: u16| {
        use fmt::Write;
        let _ = write!(out, "{g:x}");
    };
    if best_len < 2 {
        for (k, g) in groups.iter().enumerate() {
            if k > 0 {
                out.push(':');
            }
            hex(&mut out, *g);
        }
        return out;
    }
    for (k, g) in groups[..best_start].iter().enumerate() {
        if k > 0 {
            out.push(':');
        }
        hex(&mut out, *g);
    }
    out.push_str("::");
    for (k, g) in groups[best_start + best_len..].iter().enumerate() {
        if k > 0 {
            out.push(':');
        }
        hex(&mut out, *g);
    }
    out
}

impl fmt::Display for Address128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_text(*self))
    }
}

impl FromStr for Address128 {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_address(s)
    }
}

impl Serialize for Address128 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address128 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_address(&s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Iid64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}

impl Iid64 {
    pub fn to_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

/// Universal/local bit of an IID: bit 6 counted from the most significant.
pub const UL_BIT: u64 = 1 << (63 - 6);

impl Mac48 {
    pub fn oui(&self) -> [u8; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }
}

impl fmt::Display for Mac48 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl FromStr for Mac48 {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(AddrError::MalformedMac(s.to_string()));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(AddrError::MalformedMac(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| AddrError::MalformedMac(s.to_string()))?;
        }
        Ok(Mac48(out))
    }
}

/// Recovers the MAC from a modified EUI-64 IID (bytes 3,4 = ff:fe, u/l bit
/// flipped back). Returns `None` when the marker is absent.
pub fn eui64_decode(iid: Iid64) -> Option<Mac48> {
    let b = iid.to_bytes();
    if b[3] != 0xff || b[4] != 0xfe {
        return None;
    }
    Some(Mac48([b[0] ^ 0x02, b[1], b[2], b[5], b[6], b[7]]))
}

pub fn eui64_encode(mac: Mac48) -> Iid64 {
    let m = mac.0;
    Iid64(u64::from_be_bytes([m[0] ^ 0x02, m[1], m[2], 0xff, 0xfe, m[3], m[4], m[5]]))
}

#[inline]
pub fn hamming_weight(iid: Iid64) -> u32 {
    iid.0.count_ones()
}

pub const DEFAULT_LOW_THRESHOLD: u32 = 16;
pub const DEFAULT_PRIVACY_BAND: RangeInclusive<u32> = 20..=44;

/// Stateless IID classifier.
///
/// Precedence is `Eui64 > Low > PrivacyRandom > Other`. A random IID hits
/// the ff:fe marker with probability 2^-16 and is then reported as EUI-64.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IidClassifier {
    low_threshold: u32,
    privacy_band: RangeInclusive<u32>,
}

impl Default for IidClassifier {
    fn default() -> Self {
        IidClassifier {
            low_threshold: DEFAULT_LOW_THRESHOLD,
            privacy_band: DEFAULT_PRIVACY_BAND,
        }
    }
}

impl IidClassifier {
    pub fn new(low_threshold: u32, privacy_band: RangeInclusive<u32>) -> Result<Self, AddrError> {
        if low_threshold > 64 {
            return Err(AddrError::InvalidThreshold(low_threshold));
        }
        if privacy_band.is_empty() || *privacy_band.end() > 64 {
            return Err(AddrError::InvalidBand {
                start: *privacy_band.start(),
                end: *privacy_band.end(),
            });
        }
        Ok(IidClassifier {
            low_threshold,
            privacy_band,
        })
    }

    pub fn low_threshold(&self) -> u32 {
        self.low_threshold
    }

    pub fn privacy_band(&self) -> &RangeInclusive<u32> {
        &self.privacy_band
    }

    pub fn classify(&self, iid: Iid64) -> IidClass {
        if let Some(mac) = eui64_decode(iid) {
            return IidClass::Eui64(mac);
        }
        if (iid.0 as u128) < (1u128 << self.low_threshold) {
            return IidClass::Low;
        }
        if iid.0 & UL_BIT == 0 && self.privacy_band.contains(&hamming_weight(iid)) {
            return IidClass::PrivacyRandom;
        }
        IidClass::Other
    }
}

pub fn classify_iid(iid: Iid64, low_threshold: u32) -> Result<IidClass, AddrError> {
    Ok(IidClassifier::new(low_threshold, DEFAULT_PRIVACY_BAND)?.classify(iid))
}

//! Binary encoding of intermediate artifacts.
//!
//! Every file starts with a 4-byte magic, a little-endian `u32` version
//! and `u64` record counts, followed by records each prefixed with a `u32`
//! byte length. All integers are little-endian. A JSON sidecar describes
//! the layout so the files can be read without this crate.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::addr::Address128;
use crate::ingest::{Observation, ObservationList, PortProtocol, SourceKind, SourceTag, TargetEntry, TargetSet, Transport};
use crate::probe::{Cell, CellKey, ReplyKind, ResponseMatrix, ScanType};

pub const VERSION: u32 = 1;
pub const TARGETS_MAGIC: &[u8; 4] = b"H6TS";
pub const OBSERVATIONS_MAGIC: &[u8; 4] = b"H6OB";
pub const MATRIX_MAGIC: &[u8; 4] = b"H6RM";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("corrupt record {index}: {reason}")]
    Corrupt { index: u64, reason: String },
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn addr(&mut self, a: Address128) {
        self.0.extend_from_slice(&a.0.to_le_bytes());
    }
    fn port(&mut self, t: Transport, p: Option<u16>) {
        self.u8(t.code());
        self.u8(p.is_some() as u8);
        self.u16(p.unwrap_or(0));
    }
    fn tag(&mut self, t: &SourceTag) {
        self.u8(t.kind.code());
        let name = t.name.as_bytes();
        self.u16(name.len() as u16);
        self.0.extend_from_slice(name);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    index: u64,
}

impl<'a> Dec<'a> {
    fn fail(&self, reason: &str) -> ArtifactError {
        ArtifactError::Corrupt {
            index: self.index,
            reason: reason.to_string(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        if self.buf.len() < n {
            return Err(self.fail("truncated"));
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], ArtifactError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, ArtifactError> {
        Ok(self.arr::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, ArtifactError> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64, ArtifactError> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn i64(&mut self) -> Result<i64, ArtifactError> {
        Ok(i64::from_le_bytes(self.arr()?))
    }
    fn addr(&mut self) -> Result<Address128, ArtifactError> {
        Ok(Address128(u128::from_le_bytes(self.arr()?)))
    }
    fn port(&mut self) -> Result<PortProtocol, ArtifactError> {
        let t = Transport::from_code(self.u8()?).ok_or_else(|| self.fail("transport code"))?;
        let has = self.u8()?;
        let p = self.u16()?;
        let port = match has {
            0 => None,
            1 => Some(p),
            _ => return Err(self.fail("port flag")),
        };
        if port.is_some() != t.carries_port() {
            return Err(self.fail("port does not match transport"));
        }
        Ok(PortProtocol::new(t, port))
    }
    fn tag(&mut self) -> Result<SourceTag, ArtifactError> {
        let kind = SourceKind::from_code(self.u8()?).ok_or_else(|| self.fail("source kind"))?;
        let n = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(n)?).map_err(|_| self.fail("source name"))?;
        Ok(SourceTag::new(kind, name))
    }
    fn done(&self) -> Result<(), ArtifactError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.fail("trailing bytes"))
        }
    }
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], counts: &[u64]) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for c in counts {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read, const N: usize>(r: &mut R, magic: &[u8; 4]) -> Result<[u64; N], ArtifactError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(ArtifactError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(ArtifactError::Version(version));
    }
    let mut counts = [0u64; N];
    for c in &mut counts {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *c = u64::from_le_bytes(b);
    }
    Ok(counts)
}

fn write_record<W: Write>(w: &mut W, rec: &Enc) -> io::Result<()> {
    w.write_all(&(rec.0.len() as u32).to_le_bytes())?;
    w.write_all(&rec.0)
}

fn read_record<R: Read>(r: &mut R, buf: &mut Vec<u8>) -> io::Result<()> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    buf.resize(u32::from_le_bytes(len) as usize, 0);
    r.read_exact(buf)
}

pub fn write_targets<W: Write>(w: &mut W, set: &TargetSet) -> io::Result<()> {
    write_header(w, TARGETS_MAGIC, &[set.len() as u64])?;
    let mut rec = Enc(Vec::with_capacity(128));
    for (a, e) in set.iter() {
        rec.0.clear();
        rec.addr(*a);
        rec.i64(e.first_seen);
        rec.i64(e.last_seen);
        rec.u64(e.observation_count);
        rec.u16(e.port_protocols.len() as u16);
        for p in &e.port_protocols {
            rec.port(p.transport, p.port);
        }
        rec.u16(e.sources.len() as u16);
        for s in &e.sources {
            rec.tag(s);
        }
        write_record(w, &rec)?;
    }
    Ok(())
}

pub fn read_targets<R: Read>(r: &mut R) -> Result<TargetSet, ArtifactError> {
    let [n] = read_header::<_, 1>(r, TARGETS_MAGIC)?;
    let mut entries = Vec::with_capacity(n.min(1 << 20) as usize);
    let mut buf = Vec::new();
    let mut prev: Option<Address128> = None;
    for index in 0..n {
        read_record(r, &mut buf)?;
        let mut d = Dec { buf: &buf, index };
        let a = d.addr()?;
        if prev.is_some_and(|p| p >= a) {
            return Err(d.fail("addresses out of order"));
        }
        prev = Some(a);
        let first_seen = d.i64()?;
        let last_seen = d.i64()?;
        let observation_count = d.u64()?;
        let np = d.u16()?;
        let port_protocols = (0..np).map(|_| d.port()).collect::<Result<_, _>>()?;
        let ns = d.u16()?;
        let sources = (0..ns).map(|_| d.tag()).collect::<Result<_, _>>()?;
        d.done()?;
        entries.push((
            a,
            TargetEntry {
                first_seen,
                last_seen,
                port_protocols,
                sources,
                observation_count,
            },
        ));
    }
    Ok(TargetSet::from_sorted_entries(entries))
}

pub fn write_observations<W: Write>(w: &mut W, list: &[Observation]) -> io::Result<()> {
    write_header(w, OBSERVATIONS_MAGIC, &[list.len() as u64])?;
    let mut rec = Enc(Vec::with_capacity(64));
    for o in list {
        rec.0.clear();
        rec.addr(o.address);
        rec.i64(o.timestamp);
        rec.port(o.transport, o.port);
        rec.tag(&o.source);
        write_record(w, &rec)?;
    }
    Ok(())
}

pub fn read_observations<R: Read>(r: &mut R) -> Result<ObservationList, ArtifactError> {
    let [n] = read_header::<_, 1>(r, OBSERVATIONS_MAGIC)?;
    let mut out = Vec::with_capacity(n.min(1 << 20) as usize);
    let mut buf = Vec::new();
    for index in 0..n {
        read_record(r, &mut buf)?;
        let mut d = Dec { buf: &buf, index };
        let address = d.addr()?;
        let ts = d.i64()?;
        let pp = d.port()?;
        let tag = d.tag()?;
        d.done()?;
        out.push(Observation::new(address, ts, pp.transport, pp.port, tag));
    }
    Ok(out)
}

fn enc_key(rec: &mut Enc, k: &CellKey) {
    rec.addr(k.target);
    rec.u64(k.scan.code());
    rec.u64(k.offset);
}

fn dec_key(d: &mut Dec) -> Result<CellKey, ArtifactError> {
    let target = d.addr()?;
    let scan = ScanType::from_code(d.u64()?).ok_or_else(|| d.fail("scan code"))?;
    let offset = d.u64()?;
    Ok(CellKey { target, scan, offset })
}

pub fn write_matrix<W: Write>(w: &mut W, m: &ResponseMatrix) -> io::Result<()> {
    write_header(w, MATRIX_MAGIC, &[m.len() as u64, m.policy_skips().len() as u64])?;
    let mut rec = Enc(Vec::with_capacity(48));
    for (k, c) in m.cells() {
        rec.0.clear();
        enc_key(&mut rec, k);
        rec.i64(c.sent_at_ms);
        rec.u8(c.reply.code());
        write_record(w, &rec)?;
    }
    for k in m.policy_skips() {
        rec.0.clear();
        enc_key(&mut rec, k);
        write_record(w, &rec)?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<ResponseMatrix, ArtifactError> {
    let [cells, skips] = read_header::<_, 2>(r, MATRIX_MAGIC)?;
    let mut m = ResponseMatrix::new();
    let mut buf = Vec::new();
    for index in 0..cells {
        read_record(r, &mut buf)?;
        let mut d = Dec { buf: &buf, index };
        let k = dec_key(&mut d)?;
        let sent_at_ms = d.i64()?;
        let reply = ReplyKind::from_code(d.u8()?).ok_or_else(|| d.fail("reply code"))?;
        d.done()?;
        m.insert(k, Cell { sent_at_ms, reply });
    }
    for index in cells..cells + skips {
        read_record(r, &mut buf)?;
        let mut d = Dec { buf: &buf, index };
        let k = dec_key(&mut d)?;
        d.done()?;
        m.skip(k);
    }
    Ok(m)
}

const HEADER_FIELDS: [&str; 3] = ["magic: 4 bytes", "version: u32", "record counts: u64 each"];

fn schema(magic: &[u8; 4], counts: &[&str], record: Value) -> Value {
    json!({
        "magic": String::from_utf8_lossy(magic),
        "version": VERSION,
        "byte_order": "little_endian",
        "header": HEADER_FIELDS,
        "counts": counts,
        "record_framing": "u32 byte length followed by the record",
        "record": record,
        "types": {
            "address": "u128, numeric value of the IPv6 address",
            "port_protocol": ["transport: u8 (0 icmp6, 1 tcp, 2 udp, 3 unknown)", "has_port: u8", "port: u16"],
            "source_tag": ["kind: u8 (0 passive_flow, 1 alexa_list, 2 reverse_dns, 3 dns_any, 4 zone_file, 5 caida_dns_names, 6 traceroute)", "name_len: u16", "name: utf-8"],
            "scan": "u64: 0 icmp6, 0x1_0000 | port for tcp, 0x2_0000 | port for udp",
            "reply": "u8: 0 echo_reply, 1 syn_ack, 2 rst, 3 udp_payload, 4 icmp_error, 5 none"
        }
    })
}

pub fn targets_schema() -> Value {
    schema(
        TARGETS_MAGIC,
        &["targets"],
        json!([
            "address: address",
            "first_seen: i64 epoch seconds",
            "last_seen: i64 epoch seconds",
            "observation_count: u64",
            "port_protocol_count: u16",
            "port_protocols: port_protocol[]",
            "source_count: u16",
            "sources: source_tag[]"
        ]),
    )
}

pub fn observations_schema() -> Value {
    schema(
        OBSERVATIONS_MAGIC,
        &["observations"],
        json!(["address: address", "timestamp: i64 epoch seconds", "port_protocol: port_protocol", "source: source_tag"]),
    )
}

pub fn matrix_schema() -> Value {
    schema(
        MATRIX_MAGIC,
        &["cells", "policy_skips"],
        json!({
            "cell": ["target: address", "scan: scan", "offset: u64 seconds", "sent_at: i64 epoch milliseconds", "reply: reply"],
            "policy_skip": ["target: address", "scan: scan", "offset: u64 seconds"]
        }),
    )
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

fn save(path: &Path, schema: Value, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), ArtifactError> {
    let open = |p: &Path| {
        File::create(p).map_err(|source| ArtifactError::Open {
            path: p.to_path_buf(),
            source,
        })
    };
    let mut w = BufWriter::new(open(path)?);
    body(&mut w)?;
    w.flush()?;
    let mut text = serde_json::to_string_pretty(&schema).expect("schema serializes");
    text.push('\n');
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}

fn load<T>(path: &Path, body: impl FnOnce(&mut BufReader<File>) -> Result<T, ArtifactError>) -> Result<T, ArtifactError> {
    let f = File::open(path).map_err(|source| ArtifactError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    body(&mut BufReader::new(f))
}

pub fn save_targets(path: &Path, set: &TargetSet) -> Result<(), ArtifactError> {
    save(path, targets_schema(), |w| write_targets(w, set))
}

pub fn load_targets(path: &Path) -> Result<TargetSet, ArtifactError> {
    load(path, read_targets)
}

pub fn save_observations(path: &Path, list: &[Observation]) -> Result<(), ArtifactError> {
    save(path, observations_schema(), |w| write_observations(w, list))
}

pub fn load_observations(path: &Path) -> Result<ObservationList, ArtifactError> {
    load(path, read_observations)
}

pub fn save_matrix(path: &Path, m: &ResponseMatrix) -> Result<(), ArtifactError> {
    save(path, matrix_schema(), |w| write_matrix(w, m))
}

pub fn load_matrix(path: &Path) -> Result<ResponseMatrix, ArtifactError> {
    load(path, read_matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::merge;
    use proptest::prelude::*;

    fn obs_strategy() -> impl Strategy<Value = Observation> {
        (any::<u128>(), any::<i64>(), 0u8..4, any::<u16>(), 0u8..7, "[a-z0-9_.-]{1,12}").prop_map(|(a, ts, t, p, k, name)| {
            let t = Transport::from_code(t).unwrap();
            let port = t.carries_port().then_some(p);
            Observation::new(Address128(a), ts, t, port, SourceTag::new(SourceKind::from_code(k).unwrap(), name))
        })
    }

    proptest! {
        #[test]
        fn observations_roundtrip(list in prop::collection::vec(obs_strategy(), 0..50)) {
            let mut buf = Vec::new();
            write_observations(&mut buf, &list).unwrap();
            prop_assert_eq!(read_observations(&mut buf.as_slice()).unwrap(), list);
        }

        #[test]
        fn targets_roundtrip(list in prop::collection::vec(obs_strategy(), 0..50)) {
            let set = merge(&[list]);
            let mut buf = Vec::new();
            write_targets(&mut buf, &set).unwrap();
            prop_assert_eq!(read_targets(&mut buf.as_slice()).unwrap(), set);
        }

        #[test]
        fn matrix_roundtrip(cells in prop::collection::vec((any::<u128>(), 0u8..3, any::<u16>(), any::<u64>(), any::<i64>(), 0u8..6, any::<bool>()), 0..50)) {
            let mut m = ResponseMatrix::new();
            for (a, s, p, off, at, r, skip) in cells {
                let scan = match s { 0 => ScanType::Icmp6, 1 => ScanType::Tcp(p), _ => ScanType::Udp(p) };
                let key = CellKey { target: Address128(a), scan, offset: off };
                if skip { m.skip(key) } else { m.insert(key, Cell { sent_at_ms: at, reply: ReplyKind::from_code(r).unwrap() }) }
            }
            let mut buf = Vec::new();
            write_matrix(&mut buf, &m).unwrap();
            prop_assert_eq!(read_matrix(&mut buf.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_targets(&mut &b"H6OB\x01\0\0\0"[..]), Err(ArtifactError::BadMagic { .. })));
        assert!(matches!(read_targets(&mut &b"H6TS\x09\0\0\0"[..]), Err(ArtifactError::Version(9))));
        let mut buf = Vec::new();
        let set = merge(&[vec![Observation::new(Address128(1), 0, Transport::Tcp, Some(1), SourceTag::new(SourceKind::ZoneFile, "z"))]]);
        write_targets(&mut buf, &set).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_targets(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn sidecar_written() {
        let dir = std::env::temp_dir().join(format!("hitlist6-artifact-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("targets.bin");
        save_targets(&p, &TargetSet::new()).unwrap();
        let schema: Value = serde_json::from_slice(&std::fs::read(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(schema["magic"], "H6TS");
        assert_eq!(load_targets(&p).unwrap(), TargetSet::new());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

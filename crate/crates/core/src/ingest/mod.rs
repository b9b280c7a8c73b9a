//! Source ingestion: flow records, address lists, hostname lists and
//! traceroute hop dumps, all folded into one source-tagged [`TargetSet`].

mod dns_wire;
mod resolve;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{parse_address, Address128, Prefix};

pub use dns_wire::{build_aaaa_query, parse_aaaa_response, DnsClient, WireAnswer};
pub use resolve::{
    read_hostnames, resolve_hostnames, AaaaResolver, HostnameRecord, LookupFailure, ResolveOptions,
    ResolveReport, StubResolver,
};

pub const FLOW_HEADER: &str = "ts,src,dst,proto,port";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("fatal format error on line {line}: {reason}")]
    FatalFormat { line: usize, reason: String },
    #[error("resolver unavailable after {failures} unreachable queries")]
    ResolverUnavailable { failures: usize },
    #[error("concurrency must be at least 1")]
    InvalidConcurrency,
    #[error("invalid source tag {0:?}")]
    InvalidSourceTag(String),
    #[error("invalid hostname {0:?}")]
    InvalidHostname(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    PassiveFlow,
    AlexaList,
    ReverseDns,
    DnsAny,
    ZoneFile,
    CaidaDnsNames,
    Traceroute,
}

impl SourceKind {
    pub const ALL: [SourceKind; 7] = [
        SourceKind::PassiveFlow,
        SourceKind::AlexaList,
        SourceKind::ReverseDns,
        SourceKind::DnsAny,
        SourceKind::ZoneFile,
        SourceKind::CaidaDnsNames,
        SourceKind::Traceroute,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SourceKind::PassiveFlow => "passive_flow",
            SourceKind::AlexaList => "alexa_list",
            SourceKind::ReverseDns => "reverse_dns",
            SourceKind::DnsAny => "dns_any",
            SourceKind::ZoneFile => "zone_file",
            SourceKind::CaidaDnsNames => "caida_dns_names",
            SourceKind::Traceroute => "traceroute",
        }
    }

    pub fn is_passive(self) -> bool {
        self == SourceKind::PassiveFlow
    }

    /// Resolved or listed addresses, as opposed to flow taps and traceroutes.
    pub fn is_active(self) -> bool {
        !matches!(self, SourceKind::PassiveFlow | SourceKind::Traceroute)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        SourceKind::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SourceKind {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| IngestError::InvalidSourceTag(s.to_string()))
    }
}

/// Identifies one input, e.g. `passive_flow:mwn`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceTag {
    pub kind: SourceKind,
    pub name: Arc<str>,
}

impl SourceTag {
    pub fn new(kind: SourceKind, name: impl AsRef<str>) -> Self {
        SourceTag {
            kind,
            name: Arc::from(name.as_ref()),
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.name)
    }
}

impl FromStr for SourceTag {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, name) = s
            .split_once(':')
            .ok_or_else(|| IngestError::InvalidSourceTag(s.to_string()))?;
        if name.is_empty() {
            return Err(IngestError::InvalidSourceTag(s.to_string()));
        }
        Ok(SourceTag::new(kind.parse()?, name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Icmp6,
    Tcp,
    Udp,
    Unknown,
}

impl Transport {
    pub fn label(self) -> &'static str {
        match self {
            Transport::Icmp6 => "icmp6",
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
            Transport::Unknown => "unknown",
        }
    }

    pub fn carries_port(self) -> bool {
        matches!(self, Transport::Tcp | Transport::Udp)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Transport::Icmp6, Transport::Tcp, Transport::Udp, Transport::Unknown]
            .get(code as usize)
            .copied()
    }
}

/// A transport/port pair such as `tcp443`; icmp6 and unknown carry no port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortProtocol {
    pub transport: Transport,
    pub port: Option<u16>,
}

impl PortProtocol {
    pub fn new(transport: Transport, port: Option<u16>) -> Self {
        let port = if transport.carries_port() { port } else { None };
        PortProtocol { transport, port }
    }

    pub fn tcp(port: u16) -> Self {
        PortProtocol::new(Transport::Tcp, Some(port))
    }

    pub fn udp(port: u16) -> Self {
        PortProtocol::new(Transport::Udp, Some(port))
    }
}

impl fmt::Display for PortProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.port {
            Some(p) => write!(f, "{}{}", self.transport.label(), p),
            None => f.write_str(self.transport.label()),
        }
    }
}

impl FromStr for PortProtocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "icmp6" => return Ok(PortProtocol::new(Transport::Icmp6, None)),
            "unknown" => return Ok(PortProtocol::new(Transport::Unknown, None)),
            _ => {}
        }
        let (transport, digits) = if let Some(d) = s.strip_prefix("tcp") {
            (Transport::Tcp, d)
        } else if let Some(d) = s.strip_prefix("udp") {
            (Transport::Udp, d)
        } else {
            return Err(format!("unknown port-protocol {s:?}"));
        };
        let port = parse_port(digits).ok_or_else(|| format!("bad port in {s:?}"))?;
        Ok(PortProtocol::new(transport, Some(port)))
    }
}

impl Serialize for PortProtocol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortProtocol {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn parse_port(s: &str) -> Option<u16> {
    if s.is_empty() || s.len() > 5 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub address: Address128,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub transport: Transport,
    pub port: Option<u16>,
    pub source: SourceTag,
}

impl Observation {
    pub fn new(
        address: Address128,
        timestamp: i64,
        transport: Transport,
        port: Option<u16>,
        source: SourceTag,
    ) -> Self {
        let pp = PortProtocol::new(transport, port);
        Observation {
            address,
            timestamp,
            transport,
            port: pp.port,
            source,
        }
    }

    pub fn port_protocol(&self) -> PortProtocol {
        PortProtocol {
            transport: self.transport,
            port: self.port,
        }
    }
}

pub type ObservationList = Vec<Observation>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub first_seen: i64,
    pub last_seen: i64,
    pub port_protocols: BTreeSet<PortProtocol>,
    pub sources: BTreeSet<SourceTag>,
    pub observation_count: u64,
}

impl TargetEntry {
    fn from_observation(o: &Observation) -> Self {
        TargetEntry {
            first_seen: o.timestamp,
            last_seen: o.timestamp,
            port_protocols: BTreeSet::from([o.port_protocol()]),
            sources: BTreeSet::from([o.source.clone()]),
            observation_count: 1,
        }
    }

    fn absorb(&mut self, other: &TargetEntry) {
        self.first_seen = self.first_seen.min(other.first_seen);
        self.last_seen = self.last_seen.max(other.last_seen);
        self.port_protocols.extend(other.port_protocols.iter().copied());
        self.sources.extend(other.sources.iter().cloned());
        self.observation_count += other.observation_count;
    }

    fn record(&mut self, o: &Observation) {
        self.first_seen = self.first_seen.min(o.timestamp);
        self.last_seen = self.last_seen.max(o.timestamp);
        self.port_protocols.insert(o.port_protocol());
        if !self.sources.contains(&o.source) {
            self.sources.insert(o.source.clone());
        }
        self.observation_count += 1;
    }
}

/// Deduplicated per-address aggregate of observations, keyed in address order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSet {
    entries: BTreeMap<Address128, TargetEntry>,
}

impl TargetSet {
    pub fn new() -> Self {
        TargetSet::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, a: &Address128) -> bool {
        self.entries.contains_key(a)
    }

    pub fn get(&self, a: &Address128) -> Option<&TargetEntry> {
        self.entries.get(a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address128, &TargetEntry)> {
        self.entries.iter()
    }

    pub fn addresses(&self) -> impl Iterator<Item = Address128> + '_ {
        self.entries.keys().copied()
    }

    pub fn observe(&mut self, o: &Observation) {
        match self.entries.get_mut(&o.address) {
            Some(e) => e.record(o),
            None => {
                self.entries.insert(o.address, TargetEntry::from_observation(o));
            }
        }
    }

    /// Inserts an entry, combining with any existing one for the address.
    pub fn insert_entry(&mut self, address: Address128, entry: TargetEntry) {
        match self.entries.get_mut(&address) {
            Some(e) => e.absorb(&entry),
            None => {
                self.entries.insert(address, entry);
            }
        }
    }

    pub fn union(&self, other: &TargetSet) -> TargetSet {
        let mut out = self.clone();
        for (a, e) in other.iter() {
            out.insert_entry(*a, e.clone());
        }
        out
    }

    /// Entries with `tag` among their sources.
    pub fn restrict_to_source(&self, tag: &SourceTag) -> TargetSet {
        self.retain_clone(|_, e| e.sources.contains(tag))
    }

    pub fn retain_clone(&self, mut keep: impl FnMut(&Address128, &TargetEntry) -> bool) -> TargetSet {
        TargetSet {
            entries: self
                .entries
                .iter()
                .filter(|(a, e)| keep(a, e))
                .map(|(a, e)| (*a, e.clone()))
                .collect(),
        }
    }

    pub fn total_observations(&self) -> u64 {
        self.entries.values().map(|e| e.observation_count).sum()
    }

    /// Every source tag referenced by any entry.
    pub fn source_tags(&self) -> BTreeSet<SourceTag> {
        self.entries
            .values()
            .flat_map(|e| e.sources.iter().cloned())
            .collect()
    }

    pub(crate) fn from_sorted_entries(entries: Vec<(Address128, TargetEntry)>) -> Self {
        TargetSet {
            entries: entries.into_iter().collect(),
        }
    }
}

impl FromIterator<(Address128, TargetEntry)> for TargetSet {
    fn from_iter<I: IntoIterator<Item = (Address128, TargetEntry)>>(iter: I) -> Self {
        let mut out = TargetSet::new();
        for (a, e) in iter {
            out.insert_entry(a, e);
        }
        out
    }
}

/// Deduplicates observations by address. Order-independent.
pub fn merge(lists: &[ObservationList]) -> TargetSet {
    let mut out = TargetSet::new();
    for o in lists.iter().flatten() {
        out.observe(o);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub rows: u64,
    pub malformed_rows: u64,
    /// Endpoints discarded because they fall inside a self prefix.
    pub self_filtered: u64,
    pub emitted: u64,
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
    .trim()
}

/// Reads flow CSV (`ts,src,dst,proto,port`) and emits one observation per
/// endpoint that is outside every self prefix. Bad rows are counted and
/// skipped; only a missing or wrong header is fatal.
pub fn ingest_flow_records<R: BufRead>(
    reader: R,
    tag: &SourceTag,
    self_prefixes: &[Prefix],
) -> Result<(ObservationList, DropReport), IngestError> {
    let mut out = Vec::new();
    let mut report = DropReport::default();
    let mut lines = reader.lines();

    match lines.next() {
        None => return Ok((out, report)),
        Some(header) => {
            let header = header?;
            if header.trim_end_matches('\r') != FLOW_HEADER {
                return Err(IngestError::FatalFormat {
                    line: 1,
                    reason: format!("expected header {FLOW_HEADER:?}"),
                });
            }
        }
    }

    let is_self = |a: Address128| self_prefixes.iter().any(|p| p.contains(a));
    for line in lines {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        report.rows += 1;
        let Some((ts, src, dst, transport, port)) = parse_flow_row(line) else {
            report.malformed_rows += 1;
            continue;
        };
        for endpoint in [src, dst] {
            if is_self(endpoint) {
                report.self_filtered += 1;
                continue;
            }
            out.push(Observation::new(endpoint, ts, transport, port, tag.clone()));
            report.emitted += 1;
        }
    }
    Ok((out, report))
}

fn parse_flow_row(line: &str) -> Option<(i64, Address128, Address128, Transport, Option<u16>)> {
    let mut fields = line.split(',');
    let ts = fields.next()?;
    let src = fields.next()?;
    let dst = fields.next()?;
    let proto = fields.next()?;
    let port = fields.next()?;
    if fields.next().is_some() {
        return None;
    }
    if ts.is_empty() || !ts.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let ts: i64 = ts.parse().ok()?;
    let src = parse_address(src).ok()?;
    let dst = parse_address(dst).ok()?;
    let (transport, port) = match proto {
        "tcp" => (Transport::Tcp, Some(parse_port(port)?)),
        "udp" => (Transport::Udp, Some(parse_port(port)?)),
        "icmp6" if port.is_empty() => (Transport::Icmp6, None),
        _ => return None,
    };
    Some((ts, src, dst, transport, port))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListReport {
    pub lines: u64,
    pub malformed: u64,
    pub emitted: u64,
}

fn read_address_lines<R: BufRead>(
    reader: R,
    mut each: impl FnMut(Address128),
) -> Result<ListReport, IngestError> {
    let mut report = ListReport::default();
    for line in reader.lines() {
        let line = line?;
        let body = strip_comment(&line);
        if body.is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_address(body) {
            Ok(a) => {
                report.emitted += 1;
                each(a)
            }
            Err(_) => report.malformed += 1,
        }
    }
    Ok(report)
}

/// One observation per listed address, stamped with `ingested_at`.
/// Duplicates are kept; [`merge`] removes them.
pub fn ingest_address_list<R: BufRead>(
    reader: R,
    tag: &SourceTag,
    ingested_at: i64,
) -> Result<(ObservationList, ListReport), IngestError> {
    let mut out = Vec::new();
    let report = read_address_lines(reader, |a| {
        out.push(Observation::new(a, ingested_at, Transport::Unknown, None, tag.clone()))
    })?;
    Ok((out, report))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopReport {
    pub hops: u64,
    pub unresponsive_hops: u64,
    pub malformed: u64,
    /// Distinct hop addresses absent from the known target set.
    pub new_count: u64,
}

/// Reads a flat hop dump (one address per line, `*` for a silent hop).
pub fn ingest_traceroute_hops<R: BufRead>(
    reader: R,
    tag: &SourceTag,
    known_targets: &TargetSet,
    ingested_at: i64,
) -> Result<(ObservationList, HopReport), IngestError> {
    let mut out = Vec::new();
    let mut report = HopReport::default();
    let mut fresh = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let body = strip_comment(&line);
        if body.is_empty() {
            continue;
        }
        if body == "*" {
            report.unresponsive_hops += 1;
            continue;
        }
        match parse_address(body) {
            Ok(a) => {
                report.hops += 1;
                if !known_targets.contains(&a) {
                    fresh.insert(a);
                }
                out.push(Observation::new(a, ingested_at, Transport::Unknown, None, tag.clone()));
            }
            Err(_) => report.malformed += 1,
        }
    }
    report.new_count = fresh.len() as u64;
    Ok((out, report))
}

/// Keeps every `n`-th item; used to thin synthetic flow fixtures.
#[derive(Debug, Clone)]
pub struct SystematicSampler {
    every: u64,
    seen: u64,
}

impl SystematicSampler {
    pub fn new(every: u64) -> Self {
        SystematicSampler {
            every: every.max(1),
            seen: 0,
        }
    }

    pub fn keep(&mut self) -> bool {
        let keep = self.seen.is_multiple_of(self.every);
        self.seen += 1;
        keep
    }
}

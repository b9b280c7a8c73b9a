//! Interval probing of filtered targets and the resulting response matrix.
//!
//! Every target is probed with ICMPv6 at each interval after its first
//! sighting, plus one in-protocol probe per observed TCP/UDP port.

pub mod raw;
mod rate;
pub mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::Address128;
use crate::filter::PrefixSet;
use crate::ingest::{TargetSet, Transport};
use crate::report::{pct2, pct2_round};

pub use rate::{max_in_window, SendWindow};
pub use sim::{exponential_population, Responder, ResponderModel, SimulatedProber};

pub const MINUTE: u64 = 60;
pub const HOUR: u64 = 3600;
pub const DAY: u64 = 86_400;

/// 1m, 10m, 1h, 12h, 1d, 3d, 7d.
pub const MWN_PROFILE: [u64; 7] = [MINUTE, 10 * MINUTE, HOUR, 12 * HOUR, DAY, 3 * DAY, 7 * DAY];
/// 1m, 1h, 1d, 7d.
pub const IXP_PROFILE: [u64; 4] = [MINUTE, HOUR, DAY, 7 * DAY];

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("interval list is empty")]
    EmptyIntervals,
    #[error("intervals must be strictly increasing")]
    NonIncreasingIntervals,
    #[error("rate limit must be at least one packet per second")]
    InvalidRateLimit,
    #[error("unknown scan type {0:?}")]
    InvalidScanType(String),
    #[error("invalid responder model: {0}")]
    InvalidModel(String),
    #[error("raw probing requires explicit authorization")]
    Unauthorized,
    #[error("raw probing requires a blacklist")]
    MissingBlacklist,
    #[error("target {0} is blacklisted")]
    BlacklistedTarget(Address128),
    #[error("insufficient privilege to open raw sockets: {0}")]
    InsufficientPrivilege(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What is sent: an ICMPv6 echo, a TCP SYN, or a UDP datagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScanType {
    Icmp6,
    Tcp(u16),
    Udp(u16),
}

impl ScanType {
    pub fn code(self) -> u64 {
        match self {
            ScanType::Icmp6 => 0,
            ScanType::Tcp(p) => (1 << 16) | p as u64,
            ScanType::Udp(p) => (2 << 16) | p as u64,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        let port = (code & 0xffff) as u16;
        match code >> 16 {
            0 if port == 0 => Some(ScanType::Icmp6),
            1 => Some(ScanType::Tcp(port)),
            2 => Some(ScanType::Udp(port)),
            _ => None,
        }
    }

    pub fn is_icmp(self) -> bool {
        self == ScanType::Icmp6
    }
}

impl fmt::Display for ScanType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScanType::Icmp6 => f.write_str("icmp6"),
            ScanType::Tcp(p) => write!(f, "tcp{p}"),
            ScanType::Udp(p) => write!(f, "udp{p}"),
        }
    }
}

impl FromStr for ScanType {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ProbeError::InvalidScanType(s.to_string());
        if s == "icmp6" {
            return Ok(ScanType::Icmp6);
        }
        let (ctor, digits): (fn(u16) -> ScanType, &str) = if let Some(d) = s.strip_prefix("tcp") {
            (ScanType::Tcp, d)
        } else if let Some(d) = s.strip_prefix("udp") {
            (ScanType::Udp, d)
        } else {
            return Err(bad());
        };
        if digits.is_empty() || digits.len() > 5 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        digits.parse().map(ctor).map_err(|_| bad())
    }
}

impl Serialize for ScanType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScanType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    EchoReply,
    SynAck,
    /// Host alive, port closed. Not counted as responsive.
    Rst,
    UdpPayload,
    IcmpError,
    #[serde(rename = "none")]
    NoReply,
}

impl ReplyKind {
    pub const ALL: [ReplyKind; 6] = [
        ReplyKind::EchoReply,
        ReplyKind::SynAck,
        ReplyKind::Rst,
        ReplyKind::UdpPayload,
        ReplyKind::IcmpError,
        ReplyKind::NoReply,
    ];

    pub fn is_responsive(self) -> bool {
        matches!(self, ReplyKind::EchoReply | ReplyKind::SynAck | ReplyKind::UdpPayload)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        ReplyKind::ALL.get(c as usize).copied()
    }
}

/// Payloads for UDP probes, keyed by destination port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadMap {
    by_port: BTreeMap<u16, Vec<u8>>,
    fallback: Vec<u8>,
}

impl PayloadMap {
    pub fn empty() -> Self {
        PayloadMap {
            by_port: BTreeMap::new(),
            fallback: Vec::new(),
        }
    }

    pub fn set(&mut self, port: u16, payload: Vec<u8>) {
        self.by_port.insert(port, payload);
    }

    pub fn set_fallback(&mut self, payload: Vec<u8>) {
        self.fallback = payload;
    }

    pub fn get(&self, port: u16) -> &[u8] {
        self.by_port.get(&port).map_or(&self.fallback, |v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u16, &Vec<u8>)> {
        self.by_port.iter()
    }
}

impl Default for PayloadMap {
    /// Ships payloads for udp53 (DNS query for "."), udp443 (a QUIC long
    /// header with an unsupported version, which elicits version
    /// negotiation), and the BitTorrent DHT ports 49001 and 51413 (a
    /// bencoded `ping`).
    fn default() -> Self {
        let mut m = PayloadMap::empty();
        m.set(53, dns_root_query());
        m.set(443, quic_version_probe());
        m.set(49001, dht_ping());
        m.set(51413, dht_ping());
        m
    }
}

fn dns_root_query() -> Vec<u8> {
    // id 0x6836, RD, one question: ". IN NS"
    vec![0x68, 0x36, 0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0x02, 0x00, 0x01]
}

fn quic_version_probe() -> Vec<u8> {
    let mut p = vec![0xc0, 0x1a, 0x1a, 0x1a, 0x1a]; // long header, reserved version
    p.push(8);
    p.extend_from_slice(b"hitlist6");
    p.push(0);
    p.resize(1200, 0); // clients pad Initial-sized datagrams to 1200 bytes
    p
}

fn dht_ping() -> Vec<u8> {
    b"d1:ad2:id20:hitlist6hitlist6abcd1:q4:ping1:t2:aa1:y1:qe".to_vec()
}

/// What the plan adds beyond ICMPv6 and the observed ports.
#[derive(Debug, Clone)]
pub struct ScanPolicy {
    pub payloads: PayloadMap,
    /// Scans added for every target regardless of observation.
    pub extra: BTreeSet<ScanType>,
    pub rate_limit: u32,
    /// Dispatch tolerance in parts-per-million of the offset.
    pub jitter_ppm: u32,
}

impl Default for ScanPolicy {
    fn default() -> Self {
        ScanPolicy {
            payloads: PayloadMap::default(),
            extra: BTreeSet::new(),
            rate_limit: 10_000,
            jitter_ppm: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub target: Address128,
    pub scan: ScanType,
    /// Seconds after the target's first sighting.
    pub offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeTask {
    pub key: CellKey,
    /// The target's first-seen time, epoch seconds.
    pub anchor: i64,
}

impl ProbeTask {
    pub fn due_ms(&self) -> i64 {
        self.anchor.saturating_mul(1000).saturating_add(self.key.offset as i64 * 1000)
    }
}

#[derive(Debug, Clone)]
pub struct ProbePlan {
    pub tasks: Vec<ProbeTask>,
    pub intervals: Vec<u64>,
    pub rate_limit: u32,
    pub jitter_ppm: u32,
    pub payloads: PayloadMap,
}

impl ProbePlan {
    /// Allowed lateness for a task at `offset` seconds, in milliseconds.
    pub fn jitter_tolerance_ms(&self, offset: u64) -> i64 {
        (offset as u128 * 1000 * self.jitter_ppm as u128 / 1_000_000) as i64
    }

    /// Distinct targets in the plan.
    pub fn targets(&self) -> BTreeSet<Address128> {
        self.tasks.iter().map(|t| t.key.target).collect()
    }

    /// Offsets strictly increase per (target, scan) and every target has
    /// an ICMPv6 task.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut last: BTreeMap<(Address128, ScanType), u64> = BTreeMap::new();
        let mut has_icmp: BTreeMap<Address128, bool> = BTreeMap::new();
        for t in &self.tasks {
            let k = (t.key.target, t.key.scan);
            if let Some(prev) = last.insert(k, t.key.offset) {
                if prev >= t.key.offset {
                    return Err(format!("offsets not increasing for {} {}", k.0, k.1));
                }
            }
            *has_icmp.entry(t.key.target).or_default() |= t.key.scan.is_icmp();
        }
        match has_icmp.iter().find(|(_, v)| !**v) {
            Some((a, _)) => Err(format!("{a} has no icmp6 task")),
            None => Ok(()),
        }
    }
}

pub fn validate_intervals(intervals: &[u64]) -> Result<(), ProbeError> {
    if intervals.is_empty() {
        return Err(ProbeError::EmptyIntervals);
    }
    if intervals.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProbeError::NonIncreasingIntervals);
    }
    Ok(())
}

/// One ICMPv6 task per interval for every target, plus one per interval
/// for each TCP/UDP port it was seen on and each policy extra.
pub fn build_plan(targets: &TargetSet, intervals: &[u64], policy: &ScanPolicy) -> Result<ProbePlan, ProbeError> {
    validate_intervals(intervals)?;
    if policy.rate_limit == 0 {
        return Err(ProbeError::InvalidRateLimit);
    }
    let mut tasks = Vec::new();
    for (addr, entry) in targets.iter() {
        let mut scans: BTreeSet<ScanType> = policy.extra.clone();
        scans.insert(ScanType::Icmp6);
        for pp in &entry.port_protocols {
            match (pp.transport, pp.port) {
                (Transport::Tcp, Some(p)) => {
                    scans.insert(ScanType::Tcp(p));
                }
                (Transport::Udp, Some(p)) => {
                    scans.insert(ScanType::Udp(p));
                }
                _ => {}
            }
        }
        for scan in scans {
            for &offset in intervals {
                tasks.push(ProbeTask {
                    key: CellKey {
                        target: *addr,
                        scan,
                        offset,
                    },
                    anchor: entry.first_seen,
                });
            }
        }
    }
    Ok(ProbePlan {
        tasks,
        intervals: intervals.to_vec(),
        rate_limit: policy.rate_limit,
        jitter_ppm: policy.jitter_ppm,
        payloads: policy.payloads.clone(),
    })
}

/// Sends one probe and reports what came back.
pub trait Prober {
    fn probe(&mut self, target: Address128, scan: ScanType, payload: &[u8], at_ms: i64) -> Result<ReplyKind, ProbeError>;
}

/// Time source for the scheduler, in epoch milliseconds.
pub trait Clock {
    fn now_ms(&self) -> i64;
    fn sleep_until(&mut self, t_ms: i64);
}

/// Simulated time: sleeping advances the clock instantly.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: i64,
}

impl SimClock {
    pub fn starting_at(now_ms: i64) -> Self {
        SimClock { now: now_ms }
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> i64 {
        self.now
    }

    fn sleep_until(&mut self, t_ms: i64) {
        self.now = self.now.max(t_ms);
    }
}

#[derive(Debug, Clone, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as i64)
    }

    fn sleep_until(&mut self, t_ms: i64) {
        let now = self.now_ms();
        if t_ms > now {
            std::thread::sleep(Duration::from_millis((t_ms - now) as u64));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub sent_at_ms: i64,
    pub reply: ReplyKind,
}

impl Cell {
    pub fn responsive(&self) -> bool {
        self.reply.is_responsive()
    }
}

/// Outcome of every executed task, keyed by (target, scan, offset).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResponseMatrix {
    cells: BTreeMap<CellKey, Cell>,
    policy_skips: BTreeSet<CellKey>,
}

impl ResponseMatrix {
    pub fn new() -> Self {
        ResponseMatrix::default()
    }

    pub fn insert(&mut self, key: CellKey, cell: Cell) {
        self.cells.insert(key, cell);
    }

    pub fn skip(&mut self, key: CellKey) {
        self.policy_skips.insert(key);
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, key: &CellKey) -> Option<&Cell> {
        self.cells.get(key)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &Cell)> {
        self.cells.iter()
    }

    pub fn policy_skips(&self) -> &BTreeSet<CellKey> {
        &self.policy_skips
    }

    pub fn offsets(&self) -> BTreeSet<u64> {
        self.cells.keys().map(|k| k.offset).collect()
    }

    pub fn max_offset(&self) -> Option<u64> {
        self.cells.keys().map(|k| k.offset).max()
    }

    pub fn targets(&self) -> BTreeSet<Address128> {
        self.cells.keys().map(|k| k.target).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionStats {
    pub planned: u64,
    pub sent: u64,
    pub policy_skips: u64,
    /// Tasks dispatched after `due + jitter tolerance` because the rate
    /// limit was saturated.
    pub late: u64,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub matrix: ResponseMatrix,
    pub stats: ExecutionStats,
    /// Send times in dispatch order, epoch milliseconds.
    pub send_log: Vec<i64>,
}

/// Dispatches every task in due-time order under the plan's rate limit.
///
/// Tasks whose target falls in `blacklist` are not sent and are recorded
/// as policy skips. Each task is sent at most once.
pub fn execute(
    plan: &ProbePlan,
    prober: &mut dyn Prober,
    clock: &mut dyn Clock,
    blacklist: &PrefixSet,
) -> Result<Execution, ProbeError> {
    if plan.rate_limit == 0 {
        return Err(ProbeError::InvalidRateLimit);
    }
    let mut order: Vec<usize> = (0..plan.tasks.len()).collect();
    order.sort_by_key(|&i| (plan.tasks[i].due_ms(), i));

    let mut window = SendWindow::per_second(plan.rate_limit);
    let mut matrix = ResponseMatrix::new();
    let mut stats = ExecutionStats {
        planned: plan.tasks.len() as u64,
        ..Default::default()
    };
    let mut send_log = Vec::with_capacity(plan.tasks.len());

    for i in order {
        let task = &plan.tasks[i];
        if blacklist.contains(task.key.target) {
            matrix.skip(task.key);
            stats.policy_skips += 1;
            continue;
        }
        let due = task.due_ms();
        let at = window.next_slot(due.max(clock.now_ms()));
        clock.sleep_until(at);
        let at = clock.now_ms().max(at);
        window.record(at);
        send_log.push(at);

        let payload = match task.key.scan {
            ScanType::Udp(p) => plan.payloads.get(p),
            _ => &[],
        };
        let reply = prober.probe(task.key.target, task.key.scan, payload, at)?;
        if at > due + plan.jitter_tolerance_ms(task.key.offset) {
            stats.late += 1;
        }
        stats.sent += 1;
        matrix.insert(task.key, Cell { sent_at_ms: at, reply });
    }
    Ok(Execution {
        matrix,
        stats,
        send_log,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateCell {
    pub offset: u64,
    pub responsive: u64,
    /// Percentage of all targets of this scan.
    pub pct: String,
    /// Percentage of targets that answered this scan at any offset.
    pub pct_of_responsive: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub scan: ScanType,
    pub targets: u64,
    pub ever_responsive: u64,
    pub cells: Vec<RateCell>,
}

/// Response rates per scan type and offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub offsets: Vec<u64>,
    pub rows: Vec<ResponseRow>,
}

impl ResponseTable {
    pub fn row(&self, scan: ScanType) -> Option<&ResponseRow> {
        self.rows.iter().find(|r| r.scan == scan)
    }

    /// Tab-separated decay curves: one line per (scan, offset).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scan\toffset_seconds\ttargets\tresponsive\tpct\tpct_of_responsive\n");
        for row in &self.rows {
            for c in &row.cells {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    row.scan, c.offset, row.targets, c.responsive, c.pct, c.pct_of_responsive
                ));
            }
        }
        out
    }

    /// Text rendering in the `count (pct%)` style.
    pub fn render(&self) -> String {
        let mut out = format!("{:<10}{:>12}", "Scan Type", "# Targets");
        for o in &self.offsets {
            out.push_str(&format!("{:>22}", offset_label(*o)));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<10}{:>12}", row.scan.to_string(), crate::filter::group(row.targets)));
            for c in &row.cells {
                out.push_str(&format!("{:>22}", format!("{} ({}%)", crate::filter::group(c.responsive), c.pct)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn offset_label(secs: u64) -> String {
    match secs {
        s if s % DAY == 0 => format!("{}d", s / DAY),
        s if s % HOUR == 0 => format!("{}h", s / HOUR),
        s if s % MINUTE == 0 => format!("{}m", s / MINUTE),
        s => format!("{s}s"),
    }
}

pub fn response_table(matrix: &ResponseMatrix) -> ResponseTable {
    let offsets: Vec<u64> = matrix.offsets().into_iter().collect();
    let mut targets: BTreeMap<ScanType, BTreeSet<Address128>> = BTreeMap::new();
    let mut ever: BTreeMap<ScanType, BTreeSet<Address128>> = BTreeMap::new();
    let mut hits: BTreeMap<(ScanType, u64), u64> = BTreeMap::new();
    for (k, c) in matrix.cells() {
        targets.entry(k.scan).or_default().insert(k.target);
        if c.responsive() {
            ever.entry(k.scan).or_default().insert(k.target);
            *hits.entry((k.scan, k.offset)).or_default() += 1;
        }
    }
    let rows = targets
        .into_iter()
        .map(|(scan, set)| {
            let n = set.len() as u64;
            let ever_n = ever.get(&scan).map_or(0, |s| s.len() as u64);
            let cells = offsets
                .iter()
                .map(|&offset| {
                    let r = hits.get(&(scan, offset)).copied().unwrap_or(0);
                    RateCell {
                        offset,
                        responsive: r,
                        pct: pct2(r, n),
                        pct_of_responsive: pct2(r, ever_n),
                    }
                })
                .collect();
            ResponseRow {
                scan,
                targets: n,
                ever_responsive: ever_n,
                cells,
            }
        })
        .collect();
    ResponseTable { offsets, rows }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InProtocolRow {
    pub scan: ScanType,
    /// Targets that answered this scan at some offset.
    pub in_protocol_responders: u64,
    /// Of those, targets that never answered ICMPv6.
    pub icmp_unresponsive: u64,
    pub pct: String,
}

/// For each non-ICMP scan type: how many in-protocol responders never
/// answered an echo request.
pub fn icmp_vs_inprotocol(matrix: &ResponseMatrix) -> Vec<InProtocolRow> {
    let mut icmp_ok: BTreeSet<Address128> = BTreeSet::new();
    let mut responders: BTreeMap<ScanType, BTreeSet<Address128>> = BTreeMap::new();
    for (k, c) in matrix.cells() {
        if k.scan.is_icmp() {
            if c.responsive() {
                icmp_ok.insert(k.target);
            }
            continue;
        }
        let entry = responders.entry(k.scan).or_default();
        if c.responsive() {
            entry.insert(k.target);
        }
    }
    responders
        .into_iter()
        .map(|(scan, set)| {
            let silent = set.iter().filter(|a| !icmp_ok.contains(a)).count() as u64;
            InProtocolRow {
                scan,
                in_protocol_responders: set.len() as u64,
                icmp_unresponsive: silent,
                pct: pct2_round(silent, set.len() as u64),
            }
        })
        .collect()
}

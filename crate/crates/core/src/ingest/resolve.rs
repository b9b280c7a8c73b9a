//! Concurrent AAAA resolution of hostname lists.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{strip_comment, IngestError, Observation, ObservationList, SourceTag, Transport};
use crate::addr::{parse_address, Address128};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostnameRecord {
    name: String,
    pub origin: SourceTag,
}

impl HostnameRecord {
    /// Validates and lowercases `name`; a single trailing dot is dropped.
    pub fn new(name: &str, origin: SourceTag) -> Result<Self, IngestError> {
        let bad = || IngestError::InvalidHostname(name.to_string());
        let trimmed = name.strip_suffix('.').unwrap_or(name);
        if trimmed.is_empty() || trimmed.len() > 253 {
            return Err(bad());
        }
        for label in trimmed.split('.') {
            if label.is_empty()
                || label.len() > 63
                || !label.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
            {
                return Err(bad());
            }
        }
        Ok(HostnameRecord {
            name: trimmed.to_ascii_lowercase(),
            origin,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Reads one DNS name per line; returns the records and the count of
/// rejected lines.
pub fn read_hostnames<R: BufRead>(
    reader: R,
    origin: &SourceTag,
) -> Result<(Vec<HostnameRecord>, u64), IngestError> {
    let mut out = Vec::new();
    let mut rejected = 0;
    for line in reader.lines() {
        let line = line?;
        let body = strip_comment(&line);
        if body.is_empty() {
            continue;
        }
        match HostnameRecord::new(body, origin.clone()) {
            Ok(r) => out.push(r),
            Err(_) => rejected += 1,
        }
    }
    Ok((out, rejected))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LookupFailure {
    NxDomain,
    /// The name exists but has no AAAA records.
    NoData,
    ServFail,
    Timeout,
    /// The resolver itself could not be reached.
    Unreachable,
}

pub trait AaaaResolver: Sync {
    fn lookup_aaaa(&self, name: &str, timeout: Duration) -> Result<Vec<Address128>, LookupFailure>;
}

/// Fixture-backed resolver. Absent names answer NXDOMAIN.
#[derive(Debug, Clone, Default)]
pub struct StubResolver {
    map: HashMap<String, Vec<Address128>>,
}

impl StubResolver {
    pub fn new() -> Self {
        StubResolver::default()
    }

    pub fn insert(&mut self, name: &str, addr: Address128) {
        let key = name.strip_suffix('.').unwrap_or(name).to_ascii_lowercase();
        self.map.entry(key).or_default().push(addr);
    }

    /// Two columns per line: `name <whitespace> address`.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut stub = StubResolver::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let body = strip_comment(&line);
            if body.is_empty() {
                continue;
            }
            let mut cols = body.split_whitespace();
            let (Some(name), Some(addr), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(IngestError::FatalFormat {
                    line: idx + 1,
                    reason: "expected `name address`".into(),
                });
            };
            let addr = parse_address(addr).map_err(|e| IngestError::FatalFormat {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            stub.insert(name, addr);
        }
        Ok(stub)
    }
}

impl AaaaResolver for StubResolver {
    fn lookup_aaaa(&self, name: &str, _timeout: Duration) -> Result<Vec<Address128>, LookupFailure> {
        self.map
            .get(name)
            .cloned()
            .ok_or(LookupFailure::NxDomain)
    }
}

#[derive(Debug, Clone)]
pub struct ResolveOptions {
    pub concurrency: usize,
    pub timeout: Duration,
    /// Abort once this many queries found the resolver unreachable.
    pub failure_threshold: usize,
    /// Timestamp stamped on every resulting observation.
    pub resolved_at: i64,
}

impl Default for ResolveOptions {
    fn default() -> Self {
        ResolveOptions {
            concurrency: 8,
            timeout: Duration::from_secs(2),
            failure_threshold: 16,
            resolved_at: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveReport {
    pub queried: u64,
    pub answered: u64,
    pub answers: u64,
    pub nxdomain: u64,
    pub nodata: u64,
    pub servfail: u64,
    pub timeout: u64,
    pub unreachable: u64,
}

impl ResolveReport {
    fn count(&mut self, r: &Result<Vec<Address128>, LookupFailure>) {
        self.queried += 1;
        match r {
            Ok(v) if v.is_empty() => self.nodata += 1,
            Ok(v) => {
                self.answered += 1;
                self.answers += v.len() as u64;
            }
            Err(LookupFailure::NxDomain) => self.nxdomain += 1,
            Err(LookupFailure::NoData) => self.nodata += 1,
            Err(LookupFailure::ServFail) => self.servfail += 1,
            Err(LookupFailure::Timeout) => self.timeout += 1,
            Err(LookupFailure::Unreachable) => self.unreachable += 1,
        }
    }
}

/// Resolves every record with up to `concurrency` queries in flight.
///
/// Output order follows input order (answers in resolver order), so a
/// deterministic resolver yields identical output at any concurrency.
pub fn resolve_hostnames<Res: AaaaResolver + ?Sized>(
    records: &[HostnameRecord],
    resolver: &Res,
    opts: &ResolveOptions,
) -> Result<(ObservationList, ResolveReport), IngestError> {
    if opts.concurrency == 0 {
        return Err(IngestError::InvalidConcurrency);
    }
    let next = AtomicUsize::new(0);
    let unreachable = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<Vec<Address128>, LookupFailure>>>> =
        records.iter().map(|_| Mutex::new(None)).collect();

    let workers = opts.concurrency.min(records.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(record) = records.get(idx) else { break };
                let result = resolver.lookup_aaaa(record.name(), opts.timeout);
                if result == Err(LookupFailure::Unreachable)
                    && unreachable.fetch_add(1, Ordering::Relaxed) + 1 >= opts.failure_threshold
                {
                    abort.store(true, Ordering::Relaxed);
                }
                *slots[idx].lock().unwrap() = Some(result);
            });
        }
    });

    let failures = unreachable.load(Ordering::Relaxed);
    if abort.load(Ordering::Relaxed) {
        return Err(IngestError::ResolverUnavailable { failures });
    }

    let mut out = Vec::new();
    let mut report = ResolveReport::default();
    for (record, slot) in records.iter().zip(slots) {
        let result = slot.into_inner().unwrap().expect("every slot resolved");
        report.count(&result);
        if let Ok(addrs) = result {
            out.extend(addrs.into_iter().map(|a| {
                Observation::new(a, opts.resolved_at, Transport::Unknown, None, record.origin.clone())
            }));
        }
    }
    Ok((out, report))
}

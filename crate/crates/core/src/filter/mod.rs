//! The filtering cascade: fullbogons, IANA special ranges, own networks,
//! pfx2as and announced-route whitelists, and the blacklist.

mod trie;

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{parse_address, Address128, Prefix};
use crate::ingest::{TargetEntry, TargetSet};

pub use trie::PrefixTrie;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("malformed CIDR on line {line}: {reason}")]
    MalformedCidr { line: usize, reason: String },
    #[error("malformed pfx2as row on line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("routing table has no entries")]
    EmptyRoutingTable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A union of CIDR prefixes with trie-backed membership.
#[derive(Debug, Clone, Default)]
pub struct PrefixSet {
    trie: PrefixTrie<()>,
}

impl PrefixSet {
    pub fn new() -> Self {
        PrefixSet::default()
    }

    pub fn insert(&mut self, p: Prefix) {
        self.trie.entry_or_insert_with(p, || ());
    }

    pub fn contains(&self, a: Address128) -> bool {
        self.trie.covers(a)
    }

    /// Number of distinct stored prefixes.
    pub fn len(&self) -> usize {
        self.trie.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trie.is_empty()
    }

    pub fn prefixes(&self) -> BTreeSet<Prefix> {
        self.trie.iter().map(|(p, _)| *p).collect()
    }
}

impl FromIterator<Prefix> for PrefixSet {
    fn from_iter<I: IntoIterator<Item = Prefix>>(iter: I) -> Self {
        let mut s = PrefixSet::new();
        for p in iter {
            s.insert(p);
        }
        s
    }
}

/// Reads one `addr/len` per line. `#` comments and blank lines are skipped.
pub fn load_cidr_set<R: BufRead>(reader: R) -> Result<PrefixSet, FilterError> {
    let mut set = PrefixSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let p: Prefix = body.parse().map_err(|e: crate::addr::AddrError| FilterError::MalformedCidr {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        set.insert(p);
    }
    Ok(set)
}

pub type Asn = u32;

/// The matched prefix and its origin ASes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin<'a> {
    pub prefix: Prefix,
    pub asns: &'a BTreeSet<Asn>,
}

/// Prefix-to-origin-AS table with longest-prefix-match lookup.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    trie: PrefixTrie<BTreeSet<Asn>>,
}

impl RoutingTable {
    pub fn new() -> Self {
        RoutingTable::default()
    }

    /// Adds origins for `prefix`; repeated prefixes accumulate their ASes.
    pub fn insert(&mut self, prefix: Prefix, asns: impl IntoIterator<Item = Asn>) {
        self.trie.entry_or_insert_with(prefix, BTreeSet::new).extend(asns);
    }

    pub fn lookup(&self, a: Address128) -> Option<Origin<'_>> {
        self.trie
            .longest_match(a)
            .map(|(prefix, asns)| Origin { prefix, asns })
    }

    pub fn contains(&self, a: Address128) -> bool {
        self.trie.covers(a)
    }

    pub fn len(&self) -> usize {
        self.trie.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trie.is_empty()
    }

    pub fn prefix_count(&self) -> usize {
        self.trie.len()
    }

    pub fn distinct_asns(&self) -> BTreeSet<Asn> {
        self.trie.iter().flat_map(|(_, s)| s.iter().copied()).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Prefix, &BTreeSet<Asn>)> {
        self.trie.iter()
    }
}

pub fn lookup_origin(table: &RoutingTable, a: Address128) -> Option<Origin<'_>> {
    table.lookup(a)
}

/// Reads `prefix \t length \t as_spec` rows. `as_spec` separates
/// multi-origin ASes with `,` and AS-set members with `_`; both flatten
/// into one set.
pub fn load_pfx2as<R: BufRead>(reader: R) -> Result<RoutingTable, FilterError> {
    let mut table = RoutingTable::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| FilterError::MalformedRow {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad("expected three tab-separated columns"));
        }
        let base = parse_address(cols[0].trim()).map_err(|e| bad(&e.to_string()))?;
        let len: u8 = cols[1]
            .trim()
            .parse()
            .ok()
            .filter(|l| *l <= 128)
            .ok_or_else(|| bad("prefix length must be 0..=128"))?;
        let prefix = Prefix::new(base, len).map_err(|e| bad(&e.to_string()))?;
        let mut asns = BTreeSet::new();
        for part in cols[2].trim().split([',', '_']) {
            asns.insert(part.parse::<Asn>().map_err(|_| bad("bad AS number"))?);
        }
        table.insert(prefix, asns);
    }
    if table.is_empty() {
        return Err(FilterError::EmptyRoutingTable);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dedup,
    Fullbogons,
    IanaSpecial,
    OwnNetworks,
    Pfx2asWhitelist,
    AnnouncedWhitelist,
    Blacklist,
}

impl Stage {
    pub const ORDER: [Stage; 7] = [
        Stage::Dedup,
        Stage::Fullbogons,
        Stage::IanaSpecial,
        Stage::OwnNetworks,
        Stage::Pfx2asWhitelist,
        Stage::AnnouncedWhitelist,
        Stage::Blacklist,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Dedup => "dedup",
            Stage::Fullbogons => "fullbogons",
            Stage::IanaSpecial => "iana_special",
            Stage::OwnNetworks => "own_networks",
            Stage::Pfx2asWhitelist => "pfx2as_whitelist",
            Stage::AnnouncedWhitelist => "announced_whitelist",
            Stage::Blacklist => "blacklist",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Stage::Dedup => "Removing duplicates",
            Stage::Fullbogons => "Removing fullbogons",
            Stage::IanaSpecial => "Removing IANA special",
            Stage::OwnNetworks => "Removing own networks",
            Stage::Pfx2asWhitelist => "Removing non-pfx2as",
            Stage::AnnouncedWhitelist => "Removing non-announced",
            Stage::Blacklist => "Removing blacklisted",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterConfig {
    /// Applied at flow ingestion; carried here so one config drives a run.
    pub self_prefixes: PrefixSet,
    pub fullbogons: PrefixSet,
    pub iana_special: PrefixSet,
    pub own_networks: PrefixSet,
    pub routing: RoutingTable,
    /// An empty set disables the announced-route stage.
    pub announced: PrefixSet,
    pub blacklist: PrefixSet,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.routing.is_empty() {
            return Err(FilterError::EmptyRoutingTable);
        }
        Ok(())
    }

    pub fn announced_enabled(&self) -> bool {
        !self.announced.is_empty()
    }

    /// The stage that removes `a`, or `None` if it survives. Dedup never
    /// removes a single address.
    pub fn removal_stage(&self, a: Address128) -> Option<Stage> {
        if self.fullbogons.contains(a) {
            Some(Stage::Fullbogons)
        } else if self.iana_special.contains(a) {
            Some(Stage::IanaSpecial)
        } else if self.own_networks.contains(a) {
            Some(Stage::OwnNetworks)
        } else if !self.routing.contains(a) {
            Some(Stage::Pfx2asWhitelist)
        } else if self.announced_enabled() && !self.announced.contains(a) {
            Some(Stage::AnnouncedWhitelist)
        } else if self.blacklist.contains(a) {
            Some(Stage::Blacklist)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: Stage,
    pub removed: u64,
    pub remaining: u64,
    pub enabled: bool,
}

/// Per-stage removal counts. `initial` counts raw observations, so the
/// dedup stage removes repeated sightings of the same address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub initial: u64,
    pub stages: Vec<StageCount>,
}

impl StageReport {
    pub fn final_count(&self) -> u64 {
        self.stages.last().map_or(self.initial, |s| s.remaining)
    }

    pub fn removed(&self, stage: Stage) -> u64 {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .map_or(0, |s| s.removed)
    }

    /// Aligned text table, one row per stage plus the totals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = 26;
        out.push_str(&format!("{:<width$}{:>14}{:>14}\n", "Stage", "Removed", "Remaining"));
        out.push_str(&format!("{:<width$}{:>14}{:>14}\n", "IP address observations", "", group(self.initial)));
        for s in &self.stages {
            let title = if s.enabled {
                s.stage.title().to_string()
            } else {
                format!("{} (off)", s.stage.title())
            };
            out.push_str(&format!(
                "{:<width$}{:>14}{:>14}\n",
                title,
                group(s.removed),
                group(s.remaining)
            ));
        }
        out.push_str(&format!("{:<width$}{:>14}{:>14}\n", "Final", "", group(self.final_count())));
        out
    }
}

/// Thousands separators, e.g. `828,142`.
pub fn group(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for StageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_table())
    }
}

pub fn apply_cascade(targets: &TargetSet, cfg: &FilterConfig) -> (TargetSet, StageReport) {
    apply_cascade_threads(targets, cfg, 1)
}

/// Runs the cascade with the per-address checks spread over `threads`
/// workers. The result is identical for every thread count.
pub fn apply_cascade_threads(
    targets: &TargetSet,
    cfg: &FilterConfig,
    threads: usize,
) -> (TargetSet, StageReport) {
    let entries: Vec<(&Address128, &TargetEntry)> = targets.iter().collect();
    let threads = threads.max(1);
    let verdicts: Vec<Option<Stage>> = if threads == 1 || entries.len() < 2 * threads {
        entries.iter().map(|(a, _)| cfg.removal_stage(**a)).collect()
    } else {
        let chunk = entries.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = entries
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|(a, _)| cfg.removal_stage(**a)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
        })
    };

    let mut removed = [0u64; 7];
    let mut kept = Vec::new();
    for ((a, e), verdict) in entries.iter().zip(&verdicts) {
        match verdict {
            Some(stage) => removed[*stage as usize] += 1,
            None => kept.push((**a, (*e).clone())),
        }
    }

    let initial = targets.total_observations();
    removed[Stage::Dedup as usize] = initial - targets.len() as u64;
    let mut remaining = initial;
    let stages = Stage::ORDER
        .iter()
        .map(|&stage| {
            remaining -= removed[stage as usize];
            StageCount {
                stage,
                removed: removed[stage as usize],
                remaining,
                enabled: stage != Stage::AnnouncedWhitelist || cfg.announced_enabled(),
            }
        })
        .collect();
    (TargetSet::from_sorted_entries(kept), StageReport { initial, stages })
}

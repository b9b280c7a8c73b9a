//! Statistics over target sets, observation streams and response matrices.

mod iid;
mod recommend;
mod stable;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Address128, Prefix};
use crate::filter::{group, Asn, RoutingTable};
use crate::ingest::{Observation, PortProtocol, SourceTag, TargetSet, Transport};
use crate::report::{pct2_round, ratio_fixed2};

pub use iid::{
    hamming_histogram, iid_prefixes, iid_profile, prefix_agility, AgilityReport, HammingHistogram, IidProfile,
    OuiDatabase, SourceIids, VendorShare, REFERENCE_MEAN, REFERENCE_VARIANCE,
};
pub use recommend::{recommend, PlanStep, Recommendation, ScanPurpose, StepRole};
pub use stable::stable_core;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("routing table is empty")]
    MissingRoutingTable,
    #[error("no sources given")]
    NoSources,
    #[error("window of {window}s exceeds the largest probed offset ({max_offset:?})")]
    WindowExceedsMatrix { window: u64, max_offset: Option<u64> },
    #[error("unknown scan type {0:?}; expected one of: {valid}", valid = ScanPurpose::VALID.join(", "))]
    UnknownScanType(String),
    #[error("OUI {0} is listed twice with different vendors")]
    DuplicateOui(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

mod ratio_text {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(r)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OriginSets {
    pub asns: BTreeSet<Asn>,
    pub prefixes: BTreeSet<Prefix>,
}

/// ASes and matched prefixes of every address; unmatched addresses add
/// nothing.
pub fn origin_sets(addrs: impl IntoIterator<Item = Address128>, routing: &RoutingTable) -> OriginSets {
    let mut out = OriginSets::default();
    for a in addrs {
        if let Some(o) = routing.lookup(a) {
            out.prefixes.insert(o.prefix);
            out.asns.extend(o.asns.iter().copied());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCoverage {
    pub source: SourceTag,
    pub targets: u64,
    pub as_count: u64,
    pub prefix_count: u64,
    pub as_coverage_pct: String,
    pub prefix_coverage_pct: String,
    pub unique_as_count: u64,
    pub unique_prefix_count: u64,
    #[serde(with = "ratio_text")]
    pub normalized_as: BigRational,
    #[serde(with = "ratio_text")]
    pub normalized_prefix: BigRational,
    pub normalized_as_display: String,
    pub normalized_prefix_display: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedCoverage {
    pub targets: u64,
    pub as_count: u64,
    pub prefix_count: u64,
    pub as_coverage_pct: String,
    pub prefix_coverage_pct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub announced_ases: u64,
    pub announced_prefixes: u64,
    pub sources: Vec<SourceCoverage>,
    pub combined: CombinedCoverage,
}

impl CoverageReport {
    pub fn source(&self, tag: &SourceTag) -> Option<&SourceCoverage> {
        self.sources.iter().find(|s| &s.source == tag)
    }
}

fn weights<T: Ord + Copy>(sets: &[&BTreeSet<T>]) -> (BTreeMap<T, usize>, Vec<BigRational>, Vec<u64>) {
    let mut k: BTreeMap<T, usize> = BTreeMap::new();
    for s in sets {
        for x in s.iter() {
            *k.entry(*x).or_default() += 1;
        }
    }
    let mut norm = Vec::with_capacity(sets.len());
    let mut unique = Vec::with_capacity(sets.len());
    for s in sets {
        let mut sum = BigRational::zero();
        let mut u = 0u64;
        for x in s.iter() {
            let n = k[x];
            sum += BigRational::new(One::one(), n.into());
            u += (n == 1) as u64;
        }
        norm.push(sum);
        unique.push(u);
    }
    (k, norm, unique)
}

/// Per-source AS and prefix coverage against the routing table, with
/// uniqueness and 1/k-normalized weights.
pub fn coverage(sets: &BTreeMap<SourceTag, TargetSet>, routing: &RoutingTable) -> Result<CoverageReport, AnalyticsError> {
    if routing.is_empty() {
        return Err(AnalyticsError::MissingRoutingTable);
    }
    if sets.is_empty() {
        return Err(AnalyticsError::NoSources);
    }
    let announced_ases = routing.distinct_asns().len() as u64;
    let announced_prefixes = routing.prefix_count() as u64;
    let origins: Vec<OriginSets> = sets.values().map(|t| origin_sets(t.addresses(), routing)).collect();
    let as_sets: Vec<&BTreeSet<Asn>> = origins.iter().map(|o| &o.asns).collect();
    let pfx_sets: Vec<&BTreeSet<Prefix>> = origins.iter().map(|o| &o.prefixes).collect();
    let (all_as, norm_as, uniq_as) = weights(&as_sets);
    let (all_pfx, norm_pfx, uniq_pfx) = weights(&pfx_sets);

    let sources = sets
        .iter()
        .enumerate()
        .map(|(i, (tag, t))| SourceCoverage {
            source: tag.clone(),
            targets: t.len() as u64,
            as_count: origins[i].asns.len() as u64,
            prefix_count: origins[i].prefixes.len() as u64,
            as_coverage_pct: pct2_round(origins[i].asns.len() as u64, announced_ases),
            prefix_coverage_pct: pct2_round(origins[i].prefixes.len() as u64, announced_prefixes),
            unique_as_count: uniq_as[i],
            unique_prefix_count: uniq_pfx[i],
            normalized_as_display: ratio_fixed2(&norm_as[i]),
            normalized_prefix_display: ratio_fixed2(&norm_pfx[i]),
            normalized_as: norm_as[i].clone(),
            normalized_prefix: norm_pfx[i].clone(),
        })
        .collect();

    let all_targets: BTreeSet<Address128> = sets.values().flat_map(|t| t.addresses()).collect();
    let combined = CombinedCoverage {
        targets: all_targets.len() as u64,
        as_count: all_as.len() as u64,
        prefix_count: all_pfx.len() as u64,
        as_coverage_pct: pct2_round(all_as.len() as u64, announced_ases),
        prefix_coverage_pct: pct2_round(all_pfx.len() as u64, announced_prefixes),
    };
    Ok(CoverageReport {
        announced_ases,
        announced_prefixes,
        sources,
        combined,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunupPoint {
    pub bucket_start: i64,
    pub new_ips: u64,
    pub new_ases: u64,
    pub new_prefixes: u64,
    pub ips: u64,
    pub ases: u64,
    pub prefixes: u64,
}

/// First-sighting counts per time bucket with running totals. Every
/// bucket between the first and last observation is emitted.
pub fn runup(observations: &[Observation], routing: &RoutingTable, bucket_secs: u64) -> Vec<RunupPoint> {
    let bucket = bucket_secs.max(1) as i64;
    let mut order: Vec<&Observation> = observations.iter().collect();
    order.sort_by_key(|o| o.timestamp);
    let (Some(first), Some(last)) = (order.first(), order.last()) else {
        return Vec::new();
    };
    let b0 = first.timestamp.div_euclid(bucket);
    let b1 = last.timestamp.div_euclid(bucket);
    let mut points: Vec<RunupPoint> = (b0..=b1)
        .map(|b| RunupPoint {
            bucket_start: b * bucket,
            new_ips: 0,
            new_ases: 0,
            new_prefixes: 0,
            ips: 0,
            ases: 0,
            prefixes: 0,
        })
        .collect();
    let mut ips = BTreeSet::new();
    let mut ases = BTreeSet::new();
    let mut prefixes = BTreeSet::new();
    for o in order {
        let p = &mut points[(o.timestamp.div_euclid(bucket) - b0) as usize];
        if !ips.insert(o.address) {
            continue;
        }
        p.new_ips += 1;
        if let Some(origin) = routing.lookup(o.address) {
            p.new_prefixes += prefixes.insert(origin.prefix) as u64;
            for a in origin.asns {
                p.new_ases += ases.insert(*a) as u64;
            }
        }
    }
    let (mut ci, mut ca, mut cp) = (0, 0, 0);
    for p in &mut points {
        ci += p.new_ips;
        ca += p.new_ases;
        cp += p.new_prefixes;
        (p.ips, p.ases, p.prefixes) = (ci, ca, cp);
    }
    points
}

pub fn runup_tsv(points: &[RunupPoint]) -> String {
    let mut out = String::from("bucket_start\tnew_ips\tnew_ases\tnew_prefixes\tips\tases\tprefixes\n");
    for p in points {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            p.bucket_start, p.new_ips, p.new_ases, p.new_prefixes, p.ips, p.ases, p.prefixes
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortShare {
    pub port_protocol: PortProtocol,
    pub flows: u64,
    pub pct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortBreakdown {
    pub total_flows: u64,
    pub top: Vec<PortShare>,
}

/// Top-`n` port/protocol combinations by observation count. Observations
/// without a transport (address lists, resolver output) are ignored.
pub fn port_breakdown(flows: &[Observation], n: usize) -> PortBreakdown {
    let mut counts: HashMap<PortProtocol, u64> = HashMap::new();
    for o in flows.iter().filter(|o| o.transport != Transport::Unknown) {
        *counts.entry(o.port_protocol()).or_default() += 1;
    }
    let total: u64 = counts.values().sum();
    let mut ranked: Vec<(PortProtocol, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(n);
    PortBreakdown {
        total_flows: total,
        top: ranked
            .into_iter()
            .map(|(port_protocol, flows)| PortShare {
                port_protocol,
                flows,
                pct: pct2_round(flows, total),
            })
            .collect(),
    }
}

pub fn default_server_ports() -> BTreeSet<PortProtocol> {
    BTreeSet::from([PortProtocol::tcp(80), PortProtocol::tcp(443), PortProtocol::udp(443)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerCoverage {
    pub server_targets: u64,
    pub total_targets: u64,
    pub server_as_count: u64,
    pub total_as_count: u64,
    pub as_pct: String,
    pub server_prefix_count: u64,
    pub total_prefix_count: u64,
    pub prefix_pct: String,
}

/// AS and prefix coverage of the targets seen on a server port, relative
/// to the whole set.
pub fn server_coverage(targets: &TargetSet, server_ports: &BTreeSet<PortProtocol>, routing: &RoutingTable) -> ServerCoverage {
    let servers: Vec<Address128> = targets
        .iter()
        .filter(|(_, e)| e.port_protocols.iter().any(|p| server_ports.contains(p)))
        .map(|(a, _)| *a)
        .collect();
    let all = origin_sets(targets.addresses(), routing);
    let srv = origin_sets(servers.iter().copied(), routing);
    ServerCoverage {
        server_targets: servers.len() as u64,
        total_targets: targets.len() as u64,
        server_as_count: srv.asns.len() as u64,
        total_as_count: all.asns.len() as u64,
        as_pct: pct2_round(srv.asns.len() as u64, all.asns.len() as u64),
        server_prefix_count: srv.prefixes.len() as u64,
        total_prefix_count: all.prefixes.len() as u64,
        prefix_pct: pct2_round(srv.prefixes.len() as u64, all.prefixes.len() as u64),
    }
}

impl CoverageReport {
    /// Aligned text table: one row per source plus the combined row.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<28}{:>12}{:>18}{:>20}{:>12}{:>12}{:>14}{:>14}\n",
            "Source", "Targets", "ASes", "Prefixes", "Uniq AS", "Uniq Pfx", "Norm AS", "Norm Pfx"
        );
        for s in &self.sources {
            out.push_str(&format!(
                "{:<28}{:>12}{:>18}{:>20}{:>12}{:>12}{:>14}{:>14}\n",
                s.source.to_string(),
                group(s.targets),
                format!("{} ({}%)", group(s.as_count), s.as_coverage_pct),
                format!("{} ({}%)", group(s.prefix_count), s.prefix_coverage_pct),
                group(s.unique_as_count),
                group(s.unique_prefix_count),
                s.normalized_as_display,
                s.normalized_prefix_display
            ));
        }
        let c = &self.combined;
        out.push_str(&format!(
            "{:<28}{:>12}{:>18}{:>20}\n",
            "Combined",
            group(c.targets),
            format!("{} ({}%)", group(c.as_count), c.as_coverage_pct),
            format!("{} ({}%)", group(c.prefix_count), c.prefix_coverage_pct)
        ));
        out
    }
}

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, CoverageReport};
use crate::filter::group;
use crate::ingest::{SourceKind, SourceTag};
use crate::probe::{offset_label, ResponseTable, ScanType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanPurpose {
    InternetStructure,
    SecurityPosture,
    Routers,
    Clients,
    ActivePrefixes,
}

impl ScanPurpose {
    pub const ALL: [ScanPurpose; 5] = [
        ScanPurpose::InternetStructure,
        ScanPurpose::SecurityPosture,
        ScanPurpose::Routers,
        ScanPurpose::Clients,
        ScanPurpose::ActivePrefixes,
    ];
    pub const VALID: [&'static str; 5] = ["internet_structure", "security_posture", "routers", "clients", "active_prefixes"];

    pub fn label(self) -> &'static str {
        Self::VALID[self as usize]
    }
}

impl fmt::Display for ScanPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScanPurpose {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::VALID
            .iter()
            .position(|v| *v == s)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| AnalyticsError::UnknownScanType(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRole {
    Primary,
    Extension,
    /// Not probed directly; used as destinations for traceroutes.
    TracerouteTargets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub source: SourceTag,
    pub role: StepRole,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub scan_type: ScanPurpose,
    pub plan: Vec<PlanStep>,
    pub not_recommended: Vec<SourceTag>,
    pub notes: Vec<String>,
    /// Longest delay after first sighting at which probing still reaches
    /// most of the initially responsive targets.
    pub max_probe_delay_secs: Option<u64>,
}

const ACTIVE_LISTS: [SourceKind; 4] = [
    SourceKind::AlexaList,
    SourceKind::ReverseDns,
    SourceKind::DnsAny,
    SourceKind::ZoneFile,
];

fn tiers(p: ScanPurpose) -> Vec<(&'static [SourceKind], StepRole, &'static str)> {
    use SourceKind::*;
    match p {
        ScanPurpose::InternetStructure => vec![
            (&[PassiveFlow], StepRole::Primary, "maximizes AS and prefix coverage at low effort"),
            (&[CaidaDnsNames], StepRole::Primary, "adds router interfaces across many ASes"),
        ],
        ScanPurpose::SecurityPosture => vec![
            (&ACTIVE_LISTS, StepRole::Primary, "mostly servers with high responsiveness"),
            (&[PassiveFlow], StepRole::Extension, "extends coverage beyond listed servers"),
        ],
        ScanPurpose::Routers => vec![
            (&[CaidaDnsNames], StepRole::Primary, "router names with high coverage at very low effort"),
            (&[Traceroute], StepRole::Extension, "hops add router addresses incrementally"),
            (&ACTIVE_LISTS, StepRole::TracerouteTargets, "destinations for further traceroutes"),
        ],
        ScanPurpose::Clients => vec![(&[PassiveFlow], StepRole::Primary, "sees active clients directly")],
        ScanPurpose::ActivePrefixes => vec![(&[PassiveFlow], StepRole::Primary, "reveals active prefixes and subprefixes")],
    }
}

fn coverage_note(tag: &SourceTag, coverage: &CoverageReport) -> String {
    match coverage.source(tag) {
        Some(s) => format!(
            "{} targets, {} ASes ({}%), {} prefixes ({}%), {} unique ASes",
            group(s.targets),
            group(s.as_count),
            s.as_coverage_pct,
            group(s.prefix_count),
            s.prefix_coverage_pct,
            group(s.unique_as_count)
        ),
        None => "no coverage data".to_string(),
    }
}

/// Share of first-offset responders that must still answer, in percent.
pub const RETENTION_PCT: u64 = 90;

/// Largest offset at which the ICMPv6 responsive count is still at least
/// [`RETENTION_PCT`] of the count at the first offset.
pub fn retention_offset(table: &ResponseTable) -> Option<u64> {
    let row = table.row(ScanType::Icmp6).or(table.rows.first())?;
    let first = row.cells.first()?.responsive;
    if first == 0 {
        return None;
    }
    row.cells
        .iter()
        .take_while(|c| c.responsive * 100 >= first * RETENTION_PCT)
        .last()
        .map(|c| c.offset)
}

/// Ordered source plan for `purpose` restricted to `available`.
pub fn recommend(
    purpose: ScanPurpose,
    available: &BTreeSet<SourceTag>,
    coverage: &CoverageReport,
    decay: Option<&ResponseTable>,
) -> Recommendation {
    let mut plan = Vec::new();
    let mut notes = Vec::new();
    let mut used = BTreeSet::new();
    for (kinds, role, why) in tiers(purpose) {
        let mut picked: Vec<&SourceTag> = available.iter().filter(|t| kinds.contains(&t.kind)).collect();
        picked.sort_by_key(|t| {
            let rank = kinds.iter().position(|k| *k == t.kind).unwrap_or(usize::MAX);
            let ases = coverage.source(t).map_or(0, |s| s.as_count);
            (rank, std::cmp::Reverse(ases), (*t).clone())
        });
        if picked.is_empty() {
            let names: Vec<&str> = kinds.iter().map(|k| k.label()).collect();
            notes.push(format!("{} step unavailable: no {} source", role_label(role), names.join("/")));
        }
        for t in picked {
            used.insert(t.clone());
            plan.push(PlanStep {
                source: t.clone(),
                role,
                rationale: format!("{why}; {}", coverage_note(t, coverage)),
            });
        }
    }
    let mut max_probe_delay_secs = None;
    if purpose == ScanPurpose::Clients {
        match decay.and_then(retention_offset) {
            Some(o) => {
                notes.push(format!(
                    "client addresses vanish quickly; probe within {} of first sighting",
                    offset_label(o)
                ));
                max_probe_delay_secs = Some(o);
            }
            None => notes.push("client addresses vanish quickly; probe immediately after first sighting".into()),
        }
    }
    Recommendation {
        scan_type: purpose,
        plan,
        not_recommended: available.iter().filter(|t| !used.contains(*t)).cloned().collect(),
        notes,
        max_probe_delay_secs,
    }
}

fn role_label(r: StepRole) -> &'static str {
    match r {
        StepRole::Primary => "primary",
        StepRole::Extension => "extension",
        StepRole::TracerouteTargets => "traceroute-target",
    }
}

impl Recommendation {
    pub fn render(&self) -> String {
        let mut out = format!("Scan type: {}\n", self.scan_type);
        for (i, s) in self.plan.iter().enumerate() {
            out.push_str(&format!("{:>2}. {} [{}] {}\n", i + 1, s.source, role_label(s.role), s.rationale));
        }
        if let Some(d) = self.max_probe_delay_secs {
            out.push_str(&format!("Max probe delay: {}\n", offset_label(d)));
        }
        for n in &self.notes {
            out.push_str(&format!("Note: {n}\n"));
        }
        if !self.not_recommended.is_empty() {
            let names: Vec<String> = self.not_recommended.iter().map(|t| t.to_string()).collect();
            out.push_str(&format!("Not recommended: {}\n", names.join(", ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{RateCell, ResponseRow};

    fn all_sources() -> BTreeSet<SourceTag> {
        SourceKind::ALL.iter().map(|k| SourceTag::new(*k, k.label())).collect()
    }

    fn empty_coverage() -> CoverageReport {
        CoverageReport {
            announced_ases: 0,
            announced_prefixes: 0,
            sources: vec![],
            combined: super::super::CombinedCoverage {
                targets: 0,
                as_count: 0,
                prefix_count: 0,
                as_coverage_pct: "0.00".into(),
                prefix_coverage_pct: "0.00".into(),
            },
        }
    }

    fn kinds(r: &Recommendation) -> Vec<SourceKind> {
        r.plan.iter().map(|s| s.source.kind).collect()
    }

    #[test]
    fn parse_and_errors() {
        for p in ScanPurpose::ALL {
            assert_eq!(p.label().parse::<ScanPurpose>().unwrap(), p);
        }
        let e = "webcams".parse::<ScanPurpose>().unwrap_err().to_string();
        assert!(e.contains("routers") && e.contains("active_prefixes"));
    }

    #[test]
    fn routers_caida_first() {
        let r = recommend(ScanPurpose::Routers, &all_sources(), &empty_coverage(), None);
        assert_eq!(&kinds(&r)[..2], &[SourceKind::CaidaDnsNames, SourceKind::Traceroute]);
        assert_eq!(r.not_recommended.len(), 1);
    }

    #[test]
    fn security_without_passive() {
        let avail: BTreeSet<SourceTag> = ACTIVE_LISTS.iter().map(|k| SourceTag::new(*k, "x")).collect();
        let r = recommend(ScanPurpose::SecurityPosture, &avail, &empty_coverage(), None);
        assert_eq!(kinds(&r), ACTIVE_LISTS.to_vec());
        assert!(r.notes.iter().any(|n| n.contains("extension step unavailable")));
    }

    #[test]
    fn clients_delay_from_decay() {
        let cells = [(60, 100), (3600, 90), (86_400, 40), (604_800, 10)]
            .iter()
            .map(|&(offset, responsive)| RateCell {
                offset,
                responsive,
                pct: String::new(),
                pct_of_responsive: String::new(),
            })
            .collect();
        let table = ResponseTable {
            offsets: vec![60, 3600, 86_400, 604_800],
            rows: vec![ResponseRow {
                scan: ScanType::Icmp6,
                targets: 100,
                ever_responsive: 100,
                cells,
            }],
        };
        let r = recommend(ScanPurpose::Clients, &all_sources(), &empty_coverage(), Some(&table));
        assert_eq!(kinds(&r), vec![SourceKind::PassiveFlow]);
        assert_eq!(r.max_probe_delay_secs, Some(3600));
        assert!(r.render().contains("Max probe delay: 1h"));
        let none = recommend(ScanPurpose::Clients, &all_sources(), &empty_coverage(), None);
        assert_eq!(none.max_probe_delay_secs, None);
    }
}

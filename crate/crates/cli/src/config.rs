//! Pipeline configuration file.
//!
//! A TOML document; see `docs/config.md` for the full grammar. Relative
//! paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hitlist6::analytics::default_server_ports;
use hitlist6::ingest::{PortProtocol, SourceKind, SourceTag};
use hitlist6::probe::{ScanType, IXP_PROFILE, MWN_PROFILE};
use serde::Deserialize;

use crate::CliError;

pub const ENV_PREFIX: &str = "HITLIST6_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// `ts,src,dst,proto,port` rows.
    Flow,
    /// One address per line.
    List,
    /// One DNS name per line, resolved to AAAA records.
    Hostnames,
    /// One traceroute hop per line, `*` for silent hops.
    Traceroute,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDecl {
    pub kind: SourceKind,
    pub name: String,
    pub path: PathBuf,
    pub format: InputFormat,
}

impl SourceDecl {
    pub fn tag(&self) -> SourceTag {
        SourceTag::new(self.kind, &self.name)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolverSection {
    /// Two-column `name address` file answering in place of DNS.
    pub stub: Option<PathBuf>,
    /// Recursive resolver, e.g. `[::1]:53`.
    pub server: Option<String>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_failure_threshold")]
    pub failure_threshold: usize,
}

fn default_concurrency() -> usize {
    8
}
fn default_timeout_ms() -> u64 {
    2000
}
fn default_failure_threshold() -> usize {
    16
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub self_prefixes: Option<PathBuf>,
    pub fullbogons: Option<PathBuf>,
    pub iana_special: Option<PathBuf>,
    pub own_networks: Option<PathBuf>,
    pub pfx2as: Option<PathBuf>,
    pub announced: Option<PathBuf>,
    pub blacklist: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Simulated,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Mwn,
    Ixp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub profile: Profile,
    /// Overrides the profile, seconds after first sighting.
    pub intervals: Option<Vec<u64>>,
    #[serde(default = "default_rate")]
    pub rate_limit: u32,
    #[serde(default = "default_jitter")]
    pub jitter_ppm: u32,
    /// Responder model for the simulated backend.
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub extra_scans: Vec<String>,
    /// Hex payloads keyed by scan, e.g. `udp53 = "6836..."`.
    #[serde(default)]
    pub payloads: BTreeMap<String, String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_rate() -> u32 {
    10_000
}
fn default_jitter() -> u32 {
    10_000
}

impl Default for ProbeSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl ProbeSection {
    pub fn intervals(&self) -> Vec<u64> {
        match (&self.intervals, self.profile) {
            (Some(v), _) => v.clone(),
            (None, Profile::Mwn) => MWN_PROFILE.to_vec(),
            (None, Profile::Ixp) => IXP_PROFILE.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsSection {
    #[serde(default = "default_low")]
    pub low_threshold: u32,
    #[serde(default = "default_server_port_names")]
    pub server_ports: Vec<String>,
    pub oui: Option<PathBuf>,
    #[serde(default = "default_top_ports")]
    pub top_ports: usize,
    #[serde(default = "default_bucket")]
    pub runup_bucket_secs: u64,
    #[serde(default = "default_window")]
    pub stable_window_secs: u64,
}

fn default_low() -> u32 {
    hitlist6::addr::DEFAULT_LOW_THRESHOLD
}
fn default_server_port_names() -> Vec<String> {
    default_server_ports().iter().map(|p| p.to_string()).collect()
}
fn default_top_ports() -> usize {
    10
}
fn default_bucket() -> u64 {
    86_400
}
fn default_window() -> u64 {
    7 * 86_400
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Timestamp given to list, resolver and traceroute observations.
    #[serde(default)]
    pub ingest_time: i64,
    #[serde(default, rename = "source")]
    pub sources: Vec<SourceDecl>,
    pub resolver: Option<ResolverSection>,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub analytics: AnalyticsSection,
}

fn env_key(parts: &[&str]) -> String {
    let mut k = String::from(ENV_PREFIX);
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            k.push('_');
        }
        k.extend(p.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' }));
    }
    k
}

fn env_path(slot: &mut Option<PathBuf>, parts: &[&str]) {
    if let Some(v) = std::env::var_os(env_key(parts)) {
        *slot = Some(PathBuf::from(v));
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, applies path overrides from the environment, resolves
    /// relative paths and checks every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.apply_env();
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_env(&mut self) {
        env_path(&mut self.output_dir, &["output", "dir"]);
        for s in &mut self.sources {
            let mut p = Some(s.path.clone());
            env_path(&mut p, &["source", &s.name, "path"]);
            s.path = p.expect("set above");
        }
        let f = &mut self.filter;
        env_path(&mut f.self_prefixes, &["filter", "self_prefixes"]);
        env_path(&mut f.fullbogons, &["filter", "fullbogons"]);
        env_path(&mut f.iana_special, &["filter", "iana_special"]);
        env_path(&mut f.own_networks, &["filter", "own_networks"]);
        env_path(&mut f.pfx2as, &["filter", "pfx2as"]);
        env_path(&mut f.announced, &["filter", "announced"]);
        env_path(&mut f.blacklist, &["filter", "blacklist"]);
        env_path(&mut self.probe.model, &["probe", "model"]);
        env_path(&mut self.analytics.oui, &["analytics", "oui"]);
        if let Some(r) = &mut self.resolver {
            env_path(&mut r.stub, &["resolver", "stub"]);
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(o) = &mut self.output_dir {
            absolutize(base, o);
        }
        for s in &mut self.sources {
            absolutize(base, &mut s.path);
        }
        for p in self.input_slots_mut() {
            absolutize(base, p);
        }
    }

    fn input_slots_mut(&mut self) -> Vec<&mut PathBuf> {
        let f = &mut self.filter;
        let mut v: Vec<&mut PathBuf> = [
            &mut f.self_prefixes,
            &mut f.fullbogons,
            &mut f.iana_special,
            &mut f.own_networks,
            &mut f.pfx2as,
            &mut f.announced,
            &mut f.blacklist,
            &mut self.probe.model,
            &mut self.analytics.oui,
        ]
        .into_iter()
        .flatten()
        .collect();
        if let Some(r) = &mut self.resolver {
            v.extend(r.stub.as_mut());
        }
        v
    }

    /// Every input file named by the config, in a stable order.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let f = &self.filter;
        let mut v: Vec<PathBuf> = self.sources.iter().map(|s| s.path.clone()).collect();
        v.extend(
            [
                &f.self_prefixes,
                &f.fullbogons,
                &f.iana_special,
                &f.own_networks,
                &f.pfx2as,
                &f.announced,
                &f.blacklist,
                &self.probe.model,
                &self.analytics.oui,
            ]
            .into_iter()
            .flatten()
            .cloned(),
        );
        if let Some(s) = self.resolver.as_ref().and_then(|r| r.stub.clone()) {
            v.push(s);
        }
        v
    }

    /// All-or-nothing: every problem is reported in one error.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        for p in self.input_files() {
            if !p.is_file() {
                problems.push(format!("missing input file {}", p.display()));
            }
        }
        let mut names = BTreeMap::new();
        for s in &self.sources {
            if s.name.is_empty() {
                problems.push("source with empty name".to_string());
            }
            if names.insert(s.tag(), ()).is_some() {
                problems.push(format!("duplicate source {}", s.tag()));
            }
            if s.format == InputFormat::Hostnames && self.resolver.is_none() {
                problems.push(format!("source {} needs a [resolver] section", s.tag()));
            }
        }
        if let Some(r) = &self.resolver {
            if r.stub.is_none() && r.server.is_none() {
                problems.push("[resolver] needs either stub or server".to_string());
            }
            if let Some(s) = &r.server {
                if s.parse::<std::net::SocketAddr>().is_err() {
                    problems.push(format!("[resolver] server {s:?} is not a socket address"));
                }
            }
        }
        if self.probe.backend == Backend::Raw && self.filter.blacklist.is_none() {
            problems.push("[probe] backend = \"raw\" requires [filter] blacklist".to_string());
        }
        if let Err(e) = hitlist6::probe::validate_intervals(&self.probe.intervals()) {
            problems.push(format!("[probe] intervals: {e}"));
        }
        if self.probe.rate_limit == 0 {
            problems.push("[probe] rate_limit must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.probe.loss_rate) {
            problems.push("[probe] loss_rate must be within 0..=1".to_string());
        }
        for s in &self.probe.extra_scans {
            if s.parse::<ScanType>().is_err() {
                problems.push(format!("[probe] extra scan {s:?} is not a scan type"));
            }
        }
        for (k, v) in &self.probe.payloads {
            if !matches!(k.parse::<ScanType>(), Ok(ScanType::Udp(_))) {
                problems.push(format!("[probe.payloads] key {k:?} must be a udp scan such as udp53"));
            }
            if hex::decode(v).is_err() {
                problems.push(format!("[probe.payloads] {k} is not valid hex"));
            }
        }
        for p in &self.analytics.server_ports {
            if p.parse::<PortProtocol>().is_err() {
                problems.push(format!("[analytics] server port {p:?} is not a port/protocol"));
            }
        }
        if self.analytics.low_threshold > 64 {
            problems.push("[analytics] low_threshold must be at most 64".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("\n")))
        }
    }
}

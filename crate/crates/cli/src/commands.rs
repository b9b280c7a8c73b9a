use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hitlist6::analytics::{
    coverage, hamming_histogram, iid_profile, port_breakdown, prefix_agility, recommend, runup, runup_tsv,
    server_coverage, stable_core, AnalyticsError, CoverageReport, OuiDatabase, ScanPurpose,
};
use hitlist6::artifact::{self, ArtifactError};
use hitlist6::filter::{apply_cascade_threads, load_cidr_set, load_pfx2as, FilterConfig, PrefixSet, RoutingTable};
use hitlist6::ingest::{
    read_hostnames, resolve_hostnames, AaaaResolver, DnsClient, ResolveOptions, StubResolver, ingest_address_list, ingest_flow_records, ingest_traceroute_hops, Observation, ObservationList, PortProtocol,
    SourceKind, SourceTag, TargetSet,
};
use hitlist6::probe::raw::{RawConfig, RawProber};
use hitlist6::probe::{
    build_plan, execute, icmp_vs_inprotocol, response_table, Clock, ProbeError, Prober, ResponderModel, ResponseTable,
    ScanPolicy, ScanType, SimClock, SimulatedProber, WallClock,
};
use hitlist6::IidClassifier;
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Backend, InputFormat, PipelineConfig};
use crate::manifest::RunManifest;
use crate::CliError;

pub const TARGETS: &str = "targets.bin";
pub const OBSERVATIONS: &str = "observations.bin";
pub const FILTERED: &str = "filtered.bin";
pub const MATRIX: &str = "matrix.bin";
pub const REPORTS: &str = "reports";

pub struct Ctx {
    pub config_path: PathBuf,
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub quiet: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn finish(&self, stage: &str, rows: BTreeMap<String, u64>, started: Instant) -> Result<(), CliError> {
        let mut m = RunManifest::open(&self.out);
        m.describe_inputs(&self.config_path, &self.cfg.input_files(), Some(self.seed))
            .map_err(|e| CliError::Runtime(format!("hashing inputs: {e}")))?;
        m.record(stage, rows, started.elapsed().as_secs_f64());
        m.save(&self.out).map_err(|e| io_err(&self.out.join(crate::manifest::FILE_NAME), e))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_set(path: Option<&PathBuf>) -> Result<PrefixSet, CliError> {
    match path {
        None => Ok(PrefixSet::new()),
        Some(p) => load_cidr_set(open(p)?).map_err(|e| io_err(p, e)),
    }
}

fn load_routing(cfg: &PipelineConfig) -> Result<RoutingTable, CliError> {
    let p = cfg
        .filter
        .pfx2as
        .as_ref()
        .ok_or_else(|| CliError::Config("[filter] pfx2as is required".into()))?;
    load_pfx2as(open(p)?).map_err(|e| io_err(p, e))
}

/// Loads an upstream artifact, naming the stage that produces it when absent.
fn need<T>(ctx: &Ctx, name: &str, stage: &str, load: fn(&Path) -> Result<T, ArtifactError>) -> Result<T, CliError> {
    let p = ctx.path(name);
    if !p.is_file() {
        return Err(CliError::Config(format!(
            "missing artifact {} (run `hitlist6 {stage}` first)",
            p.display()
        )));
    }
    load(&p).map_err(|e| io_err(&p, e))
}

fn save_err(e: ArtifactError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn file_label(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn ingest(ctx: &Ctx) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = &ctx.cfg;
    let self_prefixes: Vec<_> = load_set(cfg.filter.self_prefixes.as_ref())?.prefixes().into_iter().collect();
    let mut all: ObservationList = Vec::new();
    let mut known = TargetSet::new();
    let mut per_source = Vec::new();
    let mut rows = BTreeMap::new();

    // traceroute hops are judged against everything else, so they go last
    let (traces, others): (Vec<_>, Vec<_>) = cfg.sources.iter().partition(|s| s.format == InputFormat::Traceroute);
    for s in others.into_iter().chain(traces) {
        let tag = s.tag();
        let reader = open(&s.path)?;
        let fail = |e: hitlist6::ingest::IngestError| CliError::Runtime(format!("{}: {e}", s.path.display()));
        let (obs, report): (ObservationList, Value) = match s.format {
            InputFormat::Flow => {
                let (o, r) = ingest_flow_records(reader, &tag, &self_prefixes).map_err(fail)?;
                (o, json!(r))
            }
            InputFormat::List => {
                let (o, r) = ingest_address_list(reader, &tag, cfg.ingest_time).map_err(fail)?;
                (o, json!(r))
            }
            InputFormat::Hostnames => {
                let (records, rejected) = read_hostnames(reader, &tag).map_err(fail)?;
                let rc = cfg.resolver.as_ref().expect("validated");
                let opts = ResolveOptions {
                    concurrency: rc.concurrency,
                    timeout: Duration::from_millis(rc.timeout_ms),
                    failure_threshold: rc.failure_threshold,
                    resolved_at: cfg.ingest_time,
                };
                let resolver: Box<dyn AaaaResolver> = match (&rc.stub, &rc.server) {
                    (Some(stub), _) => Box::new(StubResolver::from_reader(open(stub)?).map_err(|e| io_err(stub, e))?),
                    (None, Some(server)) => Box::new(DnsClient::new(server.parse::<SocketAddr>().expect("validated"))),
                    (None, None) => unreachable!("validated"),
                };
                let (o, r) = resolve_hostnames(&records, resolver.as_ref(), &opts).map_err(fail)?;
                (o, json!({ "names": records.len(), "rejected": rejected, "resolve": r }))
            }
            InputFormat::Traceroute => {
                let (o, r) = ingest_traceroute_hops(reader, &tag, &known, cfg.ingest_time).map_err(fail)?;
                (o, json!(r))
            }
        };
        info!("{tag}: {} observations", obs.len());
        rows.insert(tag.to_string(), obs.len() as u64);
        per_source.push(json!({
            "source": tag.to_string(),
            "file": file_label(&s.path),
            "observations": obs.len(),
            "report": report,
        }));
        for o in &obs {
            known.observe(o);
        }
        all.extend(obs);
    }

    std::fs::create_dir_all(&ctx.out).map_err(|e| io_err(&ctx.out, e))?;
    artifact::save_observations(&ctx.path(OBSERVATIONS), &all).map_err(save_err)?;
    artifact::save_targets(&ctx.path(TARGETS), &known).map_err(save_err)?;
    write_json(
        &ctx.path("ingest_report.json"),
        &json!({ "observations": all.len(), "targets": known.len(), "sources": per_source }),
    )?;
    ctx.say(&format!("ingested {} observations, {} distinct addresses\n", all.len(), known.len()));
    rows.insert("observations".into(), all.len() as u64);
    rows.insert("targets".into(), known.len() as u64);
    ctx.finish("ingest", rows, started)
}

pub fn filter_config(cfg: &PipelineConfig) -> Result<FilterConfig, CliError> {
    let f = &cfg.filter;
    let fc = FilterConfig {
        self_prefixes: load_set(f.self_prefixes.as_ref())?,
        fullbogons: load_set(f.fullbogons.as_ref())?,
        iana_special: load_set(f.iana_special.as_ref())?,
        own_networks: load_set(f.own_networks.as_ref())?,
        routing: load_routing(cfg)?,
        announced: load_set(f.announced.as_ref())?,
        blacklist: load_set(f.blacklist.as_ref())?,
    };
    fc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(fc)
}

pub fn filter(ctx: &Ctx) -> Result<(), CliError> {
    let started = Instant::now();
    let targets = need(ctx, TARGETS, "ingest", artifact::load_targets)?;
    let fc = filter_config(&ctx.cfg)?;
    let (kept, report) = apply_cascade_threads(&targets, &fc, ctx.threads);
    artifact::save_targets(&ctx.path(FILTERED), &kept).map_err(save_err)?;
    write_json(&ctx.path("filter_report.json"), &report)?;
    let table = report.render_table();
    write_text(&ctx.path("filter_report.txt"), &table)?;
    ctx.say(&table);
    let mut rows: BTreeMap<String, u64> = report
        .stages
        .iter()
        .map(|s| (format!("removed_{}", s.stage.label()), s.removed))
        .collect();
    rows.insert("initial".into(), report.initial);
    rows.insert("final".into(), report.final_count());
    ctx.finish("filter", rows, started)
}

pub fn scan_policy(cfg: &PipelineConfig) -> ScanPolicy {
    let mut policy = ScanPolicy {
        rate_limit: cfg.probe.rate_limit,
        jitter_ppm: cfg.probe.jitter_ppm,
        ..ScanPolicy::default()
    };
    policy.extra = cfg.probe.extra_scans.iter().filter_map(|s| s.parse().ok()).collect();
    for (k, v) in &cfg.probe.payloads {
        if let (Ok(ScanType::Udp(port)), Ok(bytes)) = (k.parse::<ScanType>(), hex::decode(v)) {
            policy.payloads.set(port, bytes);
        }
    }
    policy
}

pub fn probe(ctx: &Ctx, authorized: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = &ctx.cfg;
    if cfg.probe.backend == Backend::Raw && !authorized {
        return Err(CliError::Refusal(
            "refusing raw probing without --i-am-authorized; confirm you are permitted to probe these networks".into(),
        ));
    }
    let targets = need(ctx, FILTERED, "filter", artifact::load_targets)?;
    let intervals = cfg.probe.intervals();
    let plan = build_plan(&targets, &intervals, &scan_policy(cfg)).map_err(|e| CliError::Config(e.to_string()))?;
    let blacklist = load_set(cfg.filter.blacklist.as_ref())?;

    let (mut prober, mut clock): (Box<dyn Prober>, Box<dyn Clock>) = match cfg.probe.backend {
        Backend::Simulated => {
            let path = cfg
                .probe
                .model
                .as_ref()
                .ok_or_else(|| CliError::Config("[probe] model is required for the simulated backend".into()))?;
            let model = ResponderModel::from_json(open(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let p = SimulatedProber::new(model, ctx.seed).with_loss(cfg.probe.loss_rate);
            (Box::new(p), Box::new(SimClock::starting_at(0)))
        }
        Backend::Raw => {
            let raw = RawProber::open(RawConfig {
                authorized,
                blacklist: Some(blacklist.clone()),
                timeout: Duration::from_millis(cfg.probe.timeout_ms),
                ..RawConfig::default()
            })
            .map_err(|e| match e {
                ProbeError::Unauthorized | ProbeError::MissingBlacklist => CliError::Refusal(e.to_string()),
                other => CliError::Runtime(other.to_string()),
            })?;
            (Box::new(raw), Box::new(WallClock))
        }
    };
    let ex = execute(&plan, prober.as_mut(), clock.as_mut(), &blacklist).map_err(|e| CliError::Runtime(e.to_string()))?;
    artifact::save_matrix(&ctx.path(MATRIX), &ex.matrix).map_err(save_err)?;
    let backend = match cfg.probe.backend {
        Backend::Simulated => "simulated",
        Backend::Raw => "raw",
    };
    write_json(
        &ctx.path("probe_report.json"),
        &json!({
            "backend": backend,
            "seed": ctx.seed,
            "intervals": intervals,
            "targets": targets.len(),
            "stats": ex.stats,
            "cells": ex.matrix.len(),
        }),
    )?;
    ctx.say(&format!(
        "probed {} targets: {} tasks, {} sent, {} policy skips, {} late\n",
        targets.len(),
        ex.stats.planned,
        ex.stats.sent,
        ex.stats.policy_skips,
        ex.stats.late
    ));
    let rows = BTreeMap::from([
        ("planned".to_string(), ex.stats.planned),
        ("sent".to_string(), ex.stats.sent),
        ("policy_skips".to_string(), ex.stats.policy_skips),
        ("late".to_string(), ex.stats.late),
    ]);
    ctx.finish("probe", rows, started)
}

fn by_source(obs: &[Observation]) -> BTreeMap<SourceTag, Vec<Observation>> {
    let mut m: BTreeMap<SourceTag, Vec<Observation>> = BTreeMap::new();
    for o in obs {
        m.entry(o.source.clone()).or_default().push(o.clone());
    }
    m
}

pub fn analyze(ctx: &Ctx) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = &ctx.cfg;
    let an = &cfg.analytics;
    let filtered = need(ctx, FILTERED, "filter", artifact::load_targets)?;
    let observations = need(ctx, OBSERVATIONS, "ingest", artifact::load_observations)?;
    let routing = load_routing(cfg)?;
    let matrix = if ctx.path(MATRIX).is_file() {
        Some(need(ctx, MATRIX, "probe", artifact::load_matrix)?)
    } else {
        warn!("no probe matrix in {}; skipping stable_core and in_protocol reports", ctx.out.display());
        None
    };
    let classifier = IidClassifier::new(an.low_threshold, hitlist6::addr::DEFAULT_PRIVACY_BAND)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let oui = match &an.oui {
        Some(p) => OuiDatabase::from_reader(open(p)?).map_err(|e| io_err(p, e))?,
        None => OuiDatabase::new(),
    };
    let server_ports: BTreeSet<PortProtocol> = an.server_ports.iter().filter_map(|s| s.parse().ok()).collect();

    let dir = ctx.path(REPORTS);
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| io_err(&plots, e))?;
    let mut written = 0u64;

    let sets: BTreeMap<SourceTag, TargetSet> = filtered
        .source_tags()
        .into_iter()
        .map(|t| {
            let s = filtered.restrict_to_source(&t);
            (t, s)
        })
        .collect();

    match coverage(&sets, &routing) {
        Ok(cov) => {
            ctx.say(&cov.render());
            write_json(&dir.join("coverage.json"), &cov)?;
            written += 1;
        }
        Err(AnalyticsError::NoSources) => warn!("no targets survived filtering; skipping coverage"),
        Err(e) => return Err(CliError::Config(e.to_string())),
    }

    let kept: Vec<Observation> = observations.into_iter().filter(|o| filtered.contains(&o.address)).collect();
    let grouped = by_source(&kept);

    let mut series = vec![json!({ "source": "all", "points": runup(&kept, &routing, an.runup_bucket_secs) })];
    let mut tsv = String::new();
    tsv.push_str(&format!("source\t{}", runup_tsv(&[])));
    let mut add_tsv = |name: &str, pts: &[hitlist6::analytics::RunupPoint]| {
        for line in runup_tsv(pts).lines().skip(1) {
            tsv.push_str(&format!("{name}\t{line}\n"));
        }
    };
    add_tsv("all", &runup(&kept, &routing, an.runup_bucket_secs));
    for (tag, obs) in &grouped {
        let pts = runup(obs, &routing, an.runup_bucket_secs);
        add_tsv(&tag.to_string(), &pts);
        series.push(json!({ "source": tag.to_string(), "points": pts }));
    }
    write_json(&dir.join("runup.json"), &json!({ "bucket_secs": an.runup_bucket_secs, "series": series }))?;
    write_text(&plots.join("runup.tsv"), &tsv)?;
    written += 1;

    let breakdowns: Vec<Value> = grouped
        .iter()
        .filter(|(t, _)| t.kind == SourceKind::PassiveFlow)
        .map(|(t, obs)| json!({ "source": t.to_string(), "breakdown": port_breakdown(obs, an.top_ports) }))
        .collect();
    write_json(&dir.join("port_breakdown.json"), &json!({ "top": an.top_ports, "sources": breakdowns }))?;
    written += 1;

    write_json(&dir.join("iid_profile.json"), &iid_profile(&sets, &oui, &classifier))?;
    written += 1;

    let mut htsv = String::from("source\tweight\tcount\n");
    let hist: Vec<Value> = sets
        .iter()
        .map(|(t, s)| {
            let h = hamming_histogram(s.addresses().map(|a| a.iid()));
            for (w, c) in h.bins.iter().enumerate() {
                htsv.push_str(&format!("{t}\t{w}\t{c}\n"));
            }
            json!({ "source": t.to_string(), "histogram": h })
        })
        .collect();
    write_json(&dir.join("hamming.json"), &json!({ "sources": hist }))?;
    write_text(&plots.join("hamming.tsv"), &htsv)?;
    written += 1;

    let agility: Vec<Value> = sets
        .iter()
        .map(|(t, s)| {
            json!({
                "source": t.to_string(),
                "all": prefix_agility(s.addresses(), false),
                "eui64_only": prefix_agility(s.addresses(), true),
            })
        })
        .collect();
    write_json(&dir.join("agility.json"), &json!({ "sources": agility }))?;
    written += 1;

    let servers: Vec<Value> = sets
        .iter()
        .map(|(t, s)| json!({ "source": t.to_string(), "coverage": server_coverage(s, &server_ports, &routing) }))
        .collect();
    write_json(
        &dir.join("server_coverage.json"),
        &json!({
            "server_ports": server_ports.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
            "all": server_coverage(&filtered, &server_ports, &routing),
            "sources": servers,
        }),
    )?;
    written += 1;

    if let Some(m) = &matrix {
        match stable_core(m, an.stable_window_secs) {
            Ok(core) => {
                let addrs: Vec<String> = core.iter().map(|a| a.to_string()).collect();
                write_json(
                    &dir.join("stable_core.json"),
                    &json!({ "window_secs": an.stable_window_secs, "count": addrs.len(), "addresses": addrs }),
                )?;
                written += 1;
            }
            Err(e) => warn!("skipping stable_core: {e}"),
        }
        let table = response_table(m);
        ctx.say(&table.render());
        write_text(&plots.join("decay.tsv"), &table.to_tsv())?;
        write_json(
            &dir.join("in_protocol.json"),
            &json!({ "response_rates": table, "in_protocol": icmp_vs_inprotocol(m) }),
        )?;
        written += 1;
    }

    ctx.say(&format!("wrote {written} reports to {}\n", dir.display()));
    ctx.finish(
        "analyze",
        BTreeMap::from([("reports".to_string(), written), ("targets".to_string(), filtered.len() as u64)]),
        started,
    )
}

pub fn recommend_cmd(ctx: &Ctx, scan_type: &str) -> Result<(), CliError> {
    let purpose: ScanPurpose = scan_type.parse().map_err(|e: AnalyticsError| CliError::Usage(e.to_string()))?;
    let dir = ctx.path(REPORTS);
    let cov_path = dir.join("coverage.json");
    if !cov_path.is_file() {
        return Err(CliError::Config(format!(
            "missing report {} (run `hitlist6 analyze` first)",
            cov_path.display()
        )));
    }
    let cov: CoverageReport = serde_json::from_slice(&std::fs::read(&cov_path).map_err(|e| io_err(&cov_path, e))?)
        .map_err(|e| io_err(&cov_path, e))?;
    let decay: Option<ResponseTable> = std::fs::read(dir.join("in_protocol.json"))
        .ok()
        .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
        .and_then(|v| serde_json::from_value(v["response_rates"].clone()).ok());
    let available: BTreeSet<SourceTag> = ctx.cfg.sources.iter().map(|s| s.tag()).collect();
    let rec = recommend(purpose, &available, &cov, decay.as_ref());
    ctx.say(&rec.render());
    let rdir = ctx.path("recommend");
    std::fs::create_dir_all(&rdir).map_err(|e| io_err(&rdir, e))?;
    write_json(&rdir.join(format!("{purpose}.json")), &rec)
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hitlist6::addr::{eui64_decode, eui64_encode, UL_BIT};
use hitlist6::analytics::{coverage, hamming_histogram, stable_core};
use hitlist6::filter::{apply_cascade, apply_cascade_threads, FilterConfig, PrefixSet, PrefixTrie, RoutingTable};
use hitlist6::ingest::{merge, Observation, SourceKind, SourceTag, TargetSet, Transport};
use hitlist6::probe::{
    build_plan, execute, exponential_population, icmp_vs_inprotocol, response_table, Responder, ResponderModel,
    ResponseMatrix, ScanPolicy, ScanType, SimClock, SimulatedProber, DAY, IXP_PROFILE, MWN_PROFILE,
};
use hitlist6::{Address128, Iid64, Mac48, Prefix};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

const T0: i64 = 1_460_000_000;

fn tag(name: &str) -> SourceTag {
    SourceTag::new(SourceKind::PassiveFlow, name)
}

fn eui64_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut failures = 0;
    for _ in 0..100_000 {
        let mac = Mac48(rng.random());
        if eui64_decode(eui64_encode(mac)) != Some(mac) {
            failures += 1;
        }
    }
    let t = start.elapsed();
    check(failures == 0, || format!("{failures} round-trip failures"))?;
    within(t, Duration::from_secs(1))?;
    Ok(format!("10^5 MACs, 0 failures, {t:.2?}"))
}

fn privacy_hamming() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let h = hamming_histogram((0..1_000_000).map(|_| Iid64(rng.random::<u64>() & !UL_BIT)));
    let t = start.elapsed();
    let (mean, var) = (h.mean.unwrap(), h.variance.unwrap());
    check((mean - 31.5).abs() <= 0.05, || format!("mean {mean:.4}"))?;
    check((var - 15.75).abs() <= 0.2, || format!("variance {var:.4}"))?;
    within(t, Duration::from_secs(5))?;
    Ok(format!("mean {mean:.4}, variance {var:.4}, {t:.2?}"))
}

fn random_prefix(rng: &mut ChaCha8Rng, min_len: u8, max_len: u8) -> Prefix {
    let len = rng.random_range(min_len..=max_len);
    let mask = if len == 0 { 0 } else { u128::MAX << (128 - len as u32) };
    // concentrate prefixes so that nesting happens often
    let base = (0x2a00u128 << 112) | (rng.random::<u128>() >> 20);
    Prefix::new(Address128(base & mask), len).unwrap()
}

fn lpm_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    let prefixes: Vec<Prefix> = (0..1000)
        .map(|_| random_prefix(&mut rng, 8, 64))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut trie = PrefixTrie::new();
    for (i, p) in prefixes.iter().enumerate() {
        *trie.entry_or_insert_with(*p, || i) = i;
    }
    let mut mismatches = 0;
    let mut hits = 0;
    for q in 0..10_000 {
        let a = if q % 2 == 0 {
            let p = prefixes[rng.random_range(0..prefixes.len())];
            let host = if p.len() == 0 { u128::MAX } else { u128::MAX >> p.len() as u32 };
            Address128(p.base().0 | (rng.random::<u128>() & host))
        } else {
            Address128(rng.random::<u128>())
        };
        let oracle = prefixes.iter().filter(|p| p.contains(a)).max_by_key(|p| p.len()).copied();
        let got = trie.longest_match(a).map(|(p, _)| p);
        hits += oracle.is_some() as u32;
        if got != oracle {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    check(mismatches == 0, || format!("{mismatches} of 10^4 queries differ"))?;
    within(t, Duration::from_secs(10))?;
    Ok(format!("{} prefixes x 10^4 queries ({hits} matched), 100% agree, {t:.2?}", prefixes.len()))
}

fn random_set(rng: &mut ChaCha8Rng, max: usize) -> Vec<Prefix> {
    (0..rng.random_range(0..=max)).map(|_| random_prefix(rng, 12, 40)).collect()
}

fn world_address(rng: &mut ChaCha8Rng, anchors: &[Prefix]) -> Address128 {
    let p = anchors[rng.random_range(0..anchors.len())];
    Address128(p.base().0 | (rng.random::<u128>() & (u128::MAX >> p.len() as u32)))
}

fn cascade_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let in_any = |a: Address128, ps: &[Prefix]| ps.iter().any(|p| p.contains(a));
    for instance in 0..100 {
        let fullbogons = random_set(&mut rng, 3);
        let iana = random_set(&mut rng, 3);
        let own = random_set(&mut rng, 2);
        let routed: Vec<Prefix> = (0..rng.random_range(1..=6)).map(|_| random_prefix(&mut rng, 12, 32)).collect();
        let announced = if rng.random_bool(0.5) { vec![] } else { random_set(&mut rng, 4) };
        let blacklist = random_set(&mut rng, 2);
        let mut anchors: Vec<Prefix> = [&fullbogons, &iana, &own, &routed, &announced, &blacklist]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        anchors.push(random_prefix(&mut rng, 8, 8));
        let obs: Vec<Observation> = (0..rng.random_range(0..300))
            .map(|i| {
                let a = world_address(&mut rng, &anchors);
                Observation::new(a, T0 + i, Transport::Icmp6, None, tag("x"))
            })
            .flat_map(|o| {
                let repeat = if o.timestamp % 4 == 0 { 2 } else { 1 };
                std::iter::repeat_n(o, repeat)
            })
            .collect();
        let targets = merge(std::slice::from_ref(&obs));
        let mut routing = RoutingTable::new();
        for (i, p) in routed.iter().enumerate() {
            routing.insert(*p, [64_500 + i as u32]);
        }
        let cfg = FilterConfig {
            self_prefixes: PrefixSet::new(),
            fullbogons: fullbogons.iter().copied().collect(),
            iana_special: iana.iter().copied().collect(),
            own_networks: own.iter().copied().collect(),
            routing,
            announced: announced.iter().copied().collect(),
            blacklist: blacklist.iter().copied().collect(),
        };
        let (kept, report) = apply_cascade(&targets, &cfg);

        // brute-force set expressions, one stage at a time
        let mut s: BTreeSet<Address128> = obs.iter().map(|o| o.address).collect();
        let mut expected = vec![obs.len() as u64 - s.len() as u64];
        let stages: [Box<dyn Fn(Address128) -> bool>; 6] = [
            Box::new(|a| in_any(a, &fullbogons)),
            Box::new(|a| in_any(a, &iana)),
            Box::new(|a| in_any(a, &own)),
            Box::new(|a| !in_any(a, &routed)),
            Box::new(|a| !announced.is_empty() && !in_any(a, &announced)),
            Box::new(|a| in_any(a, &blacklist)),
        ];
        for drop in &stages {
            let removed: BTreeSet<Address128> = s.iter().copied().filter(|a| drop(*a)).collect();
            expected.push(removed.len() as u64);
            s = &s - &removed;
        }
        let got: Vec<u64> = report.stages.iter().map(|c| c.removed).collect();
        check(report.initial == obs.len() as u64, || format!("instance {instance}: initial {}", report.initial))?;
        check(got == expected, || format!("instance {instance}: stage counts {got:?} != {expected:?}"))?;
        let kept_addrs: BTreeSet<Address128> = kept.addresses().collect();
        check(kept_addrs == s, || format!("instance {instance}: surviving sets differ"))?;
        let (again, rep2) = apply_cascade(&kept, &cfg);
        check(again.addresses().eq(kept.addresses()), || format!("instance {instance}: not idempotent"))?;
        check(rep2.stages.iter().skip(1).all(|c| c.removed == 0), || {
            format!("instance {instance}: second pass removed addresses")
        })?;
    }
    Ok("100 instances, all stage counts and outputs equal the oracle; idempotent".into())
}

fn weight_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for instance in 0..100 {
        let prefixes: Vec<Prefix> = (0..rng.random_range(1..=12))
            .map(|_| random_prefix(&mut rng, 12, 40))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut routing = RoutingTable::new();
        let mut origins: BTreeMap<Prefix, BTreeSet<u32>> = BTreeMap::new();
        for p in &prefixes {
            let asns: BTreeSet<u32> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..10)).collect();
            routing.insert(*p, asns.iter().copied());
            origins.insert(*p, asns);
        }
        let mut anchors = prefixes.clone();
        anchors.push(random_prefix(&mut rng, 8, 8));
        let mut sets = BTreeMap::new();
        for s in 0..rng.random_range(2..=5) {
            let t = tag(&format!("s{s}"));
            let obs: Vec<Observation> = (0..rng.random_range(0..40))
                .map(|i| Observation::new(world_address(&mut rng, &anchors), T0 + i, Transport::Icmp6, None, t.clone()))
                .collect();
            sets.insert(t, merge(&[obs]));
        }
        let report = coverage(&sets, &routing).map_err(|e| e.to_string())?;

        let mut as_union = BTreeSet::new();
        let mut pfx_union = BTreeSet::new();
        for a in sets.values().flat_map(TargetSet::addresses) {
            if let Some(p) = prefixes.iter().filter(|p| p.contains(a)).max_by_key(|p| p.len()) {
                pfx_union.insert(*p);
                as_union.extend(origins[p].iter().copied());
            }
        }
        let sum_as: BigRational = report.sources.iter().map(|s| s.normalized_as.clone()).sum();
        let sum_pfx: BigRational = report.sources.iter().map(|s| s.normalized_prefix.clone()).sum();
        let want_as = BigRational::from_integer((as_union.len() as u64).into());
        let want_pfx = BigRational::from_integer((pfx_union.len() as u64).into());
        check(sum_as == want_as, || format!("instance {instance}: AS weights {sum_as} != {want_as}"))?;
        check(sum_pfx == want_pfx, || format!("instance {instance}: prefix weights {sum_pfx} != {want_pfx}"))?;
    }
    Ok("100 instances, exact rational sums equal AS and prefix unions".into())
}

fn simulate(targets: &TargetSet, model: ResponderModel, intervals: &[u64], seed: u64) -> ResponseMatrix {
    let plan = build_plan(targets, intervals, &ScanPolicy::default()).expect("valid plan");
    let mut prober = SimulatedProber::new(model, seed);
    let mut clock = SimClock::starting_at(0);
    execute(&plan, &mut prober, &mut clock, &PrefixSet::new()).expect("simulation runs").matrix
}

fn host(i: u64) -> Address128 {
    Address128((0x2a00_0001u128 << 96) | ((i as u128) << 64) | 0x1234_5678_9abc)
}

fn decay_recovery() -> Outcome {
    let n = 10_000u64;
    let hosts: Vec<(Address128, i64)> = (0..n).map(|i| (host(i), T0 + i as i64)).collect();
    let obs: Vec<Observation> = hosts
        .iter()
        .map(|&(a, t)| Observation::new(a, t, Transport::Icmp6, None, tag("ixp")))
        .collect();
    let targets = merge(&[obs]);
    let model = exponential_population(&hosts, DAY as f64, &BTreeSet::from([ScanType::Icmp6]), 6);
    let matrix = simulate(&targets, model, &IXP_PROFILE, 6);
    let table = response_table(&matrix);
    let row = table.row(ScanType::Icmp6).ok_or("no icmp6 row")?;

    // recount straight from the matrix
    let mut per_offset: BTreeMap<u64, BTreeSet<Address128>> = BTreeMap::new();
    let mut ever = BTreeSet::new();
    for (k, c) in matrix.cells() {
        if k.scan == ScanType::Icmp6 && c.reply.is_responsive() {
            per_offset.entry(k.offset).or_default().insert(k.target);
            ever.insert(k.target);
        }
    }
    check(row.targets == n, || format!("targets {}", row.targets))?;
    check(row.ever_responsive == ever.len() as u64, || "ever-responsive recount differs".into())?;
    let mut details = Vec::new();
    for cell in &row.cells {
        let recount = per_offset.get(&cell.offset).map_or(0, BTreeSet::len) as u64;
        check(cell.responsive == recount, || format!("offset {}: table {} recount {recount}", cell.offset, cell.responsive))?;
        let measured = cell.responsive as f64 / n as f64;
        let expected = (-(cell.offset as f64) / DAY as f64).exp();
        check((measured - expected).abs() <= 0.02, || {
            format!("offset {}: measured {measured:.4}, expected {expected:.4}", cell.offset)
        })?;
        details.push(format!("{}s {measured:.3}/{expected:.3}", cell.offset));
    }
    Ok(details.join(", "))
}

fn udp_icmp_mechanism() -> Outcome {
    let n = 2000u64;
    let dropping = 1290u64;
    let mut model = ResponderModel::new();
    let mut obs = Vec::new();
    for i in 0..n {
        let a = host(i);
        obs.push(Observation::new(a, T0, Transport::Udp, Some(49001), tag("mwn")));
        model.insert(Responder {
            address: a,
            birth: T0,
            lifetime_seconds: None,
            responds_to: BTreeSet::from([ScanType::Icmp6, ScanType::Udp(49001)]),
            drops_icmp: i < dropping,
        });
    }
    let matrix = simulate(&merge(&[obs]), model, &IXP_PROFILE, 7);
    let rows = icmp_vs_inprotocol(&matrix);
    let row = rows.iter().find(|r| r.scan == ScanType::Udp(49001)).ok_or("no udp49001 row")?;
    check(row.in_protocol_responders == n, || format!("responders {}", row.in_protocol_responders))?;
    check(row.icmp_unresponsive == dropping, || format!("icmp-unresponsive {}", row.icmp_unresponsive))?;
    check(row.pct == "64.50", || format!("pct {}", row.pct))?;
    Ok(format!("{} of {} udp49001 responders ignore ICMPv6 ({}%)", row.icmp_unresponsive, n, row.pct))
}

fn core_oracle(matrix: &ResponseMatrix, window: u64) -> BTreeSet<Address128> {
    let mut seen: BTreeMap<Address128, BTreeMap<u64, bool>> = BTreeMap::new();
    for (k, c) in matrix.cells() {
        if k.offset <= window {
            *seen.entry(k.target).or_default().entry(k.offset).or_default() |= c.reply.is_responsive();
        }
    }
    matrix
        .targets()
        .into_iter()
        .filter(|t| seen.get(t).is_none_or(|offs| offs.values().all(|&ok| ok)))
        .collect()
}

fn stable_core_correctness() -> Outcome {
    let mut sizes = Vec::new();
    for seed in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = Vec::new();
        let mut model = ResponderModel::new();
        for i in 0..400u64 {
            let a = host(i);
            let t = T0 + rng.random_range(0..DAY as i64);
            let web = i % 3 == 0;
            obs.push(if web {
                Observation::new(a, t, Transport::Tcp, Some(80), tag("mwn"))
            } else {
                Observation::new(a, t, Transport::Icmp6, None, tag("mwn"))
            });
            let life = if i % 4 == 0 { None } else { Some(rng.random_range(0..10 * DAY)) };
            let mut scans = BTreeSet::from([ScanType::Icmp6]);
            if web {
                scans.insert(ScanType::Tcp(80));
            }
            model.insert(Responder {
                address: a,
                birth: t,
                lifetime_seconds: life,
                responds_to: scans,
                drops_icmp: i % 7 == 0,
            });
        }
        // some hosts never existed
        for i in 400..450u64 {
            obs.push(Observation::new(host(i), T0, Transport::Icmp6, None, tag("mwn")));
        }
        let matrix = simulate(&merge(&[obs]), model, &MWN_PROFILE, seed);
        let mut previous: Option<BTreeSet<Address128>> = None;
        for w in MWN_PROFILE {
            let got: BTreeSet<Address128> = stable_core(&matrix, w).map_err(|e| e.to_string())?.into_iter().collect();
            check(got == core_oracle(&matrix, w), || format!("seed {seed}, window {w}: differs from oracle"))?;
            if let Some(prev) = &previous {
                check(got.is_subset(prev), || format!("seed {seed}: window {w} not monotone"))?;
            }
            previous = Some(got);
        }
        sizes.push(previous.map_or(0, |s| s.len()));
    }
    Ok(format!("5 seeds x 7 windows match the oracle and shrink monotonically; 7d cores {sizes:?}"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hitlist6")
}

fn run_cli(config: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin())
        .arg("--config")
        .arg(config)
        .args(["--seed", "42", "--quiet"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("`{}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn fixture_chain(dir: &Path) -> Result<PathBuf, String> {
    let st = Command::new(bin())
        .args(["fixture-gen", "--seed", "42", "--dir"])
        .arg(dir)
        .status()
        .map_err(|e| e.to_string())?;
    check(st.success(), || "fixture-gen failed".into())?;
    let cfg = dir.join("config.toml");
    for step in ["ingest", "filter", "probe", "analyze"] {
        run_cli(&cfg, &[step])?;
    }
    for p in ["internet_structure", "security_posture", "routers", "clients", "active_prefixes"] {
        run_cli(&cfg, &["recommend", p])?;
    }
    Ok(dir.join("out"))
}

fn bundle(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut m = BTreeMap::new();
    walk(root, root, &mut m);
    m
}

/// Text outputs are pinned; binary artifacts are covered by the rerun check.
fn is_golden(p: &Path) -> bool {
    p.extension().is_some_and(|e| e != "bin")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn determinism(out: &Path) -> Outcome {
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out2 = fixture_chain(second.path())?;
    let (a, b) = (bundle(out), bundle(&out2));
    check(a.len() >= 20, || format!("only {} files in bundle", a.len()))?;
    check(a.keys().eq(b.keys()), || "runs produced different file sets".into())?;
    for (k, v) in &a {
        check(&b[k] == v, || format!("{} differs between runs", k.display()))?;
    }
    if std::env::var_os("HITLIST6_BLESS").is_some() {
        for (k, v) in a.iter().filter(|(k, _)| is_golden(k)) {
            let p = golden_dir().join(k);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, v).unwrap();
        }
    }
    let golden = bundle(&golden_dir());
    check(!golden.is_empty(), || "no golden files".into())?;
    for (k, v) in &golden {
        let got = a.get(k).ok_or_else(|| format!("golden {} not produced", k.display()))?;
        check(got == v, || format!("{} differs from golden", k.display()))?;
    }
    Ok(format!("{} files byte-identical across runs, {} golden files match", a.len(), golden.len()))
}

fn throughput() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut list = String::with_capacity(40 << 20);
    let mut pfx2as = String::new();
    for i in 0..64u32 {
        pfx2as.push_str(&format!("{}\t32\t{}\n", Address128((0x2a00_0000u128 | i as u128) << 96), 64_500 + i));
    }
    for _ in 0..1_000_000 {
        let hi = 0x2a00_0000u128 | rng.random_range(0..80u128);
        let a = Address128((hi << 96) | (rng.random::<u128>() >> 32));
        list.push_str(&a.to_string());
        list.push('\n');
    }
    std::fs::write(d.join("list.txt"), list).unwrap();
    std::fs::write(d.join("pfx2as.tsv"), pfx2as).unwrap();
    std::fs::write(d.join("bogons.txt"), "2a00:48::/29\n").unwrap();
    std::fs::write(d.join("special.txt"), "2a00:40::/30\n").unwrap();
    std::fs::write(d.join("blacklist.txt"), "2a00:1::/48\n2a00:2::/40\n").unwrap();
    std::fs::write(
        d.join("config.toml"),
        "output_dir = \"out\"\n\n[[source]]\nkind = \"zone_file\"\nname = \"big\"\npath = \"list.txt\"\nformat = \"list\"\n\n\
         [filter]\nfullbogons = \"bogons.txt\"\niana_special = \"special.txt\"\npfx2as = \"pfx2as.tsv\"\nblacklist = \"blacklist.txt\"\n",
    )
    .unwrap();
    let cfg = d.join("config.toml");
    let start = Instant::now();
    run_cli(&cfg, &["ingest"])?;
    run_cli(&cfg, &["--threads", "1", "filter"])?;
    let t = start.elapsed();
    let one = (std::fs::read(d.join("out/filtered.bin")).unwrap(), std::fs::read(d.join("out/filter_report.json")).unwrap());
    run_cli(&cfg, &["--threads", "4", "filter"])?;
    let four = (std::fs::read(d.join("out/filtered.bin")).unwrap(), std::fs::read(d.join("out/filter_report.json")).unwrap());
    check(one == four, || "4-thread filter output differs".into())?;

    // same check in-process on the library
    let targets = hitlist6::artifact::load_targets(&d.join("out/targets.bin")).map_err(|e| e.to_string())?;
    let mut routing = RoutingTable::new();
    for i in 0..64u32 {
        routing.insert(Prefix::new(Address128((0x2a00_0000u128 | i as u128) << 96), 32).unwrap(), [i]);
    }
    let fc = FilterConfig { routing, ..FilterConfig::default() };
    let (k1, r1) = apply_cascade_threads(&targets, &fc, 1);
    let (k4, r4) = apply_cascade_threads(&targets, &fc, 4);
    check(r1 == r4 && k1.iter().eq(k4.iter()), || "library 4-thread cascade differs".into())?;
    within(t, Duration::from_secs(10))?;
    Ok(format!("10^6 addresses ingest+filter in {t:.2?}; 4 threads identical"))
}

fn recommendation_table(out: &Path) -> Outcome {
    use SourceKind::*;
    let active = [AlexaList, ReverseDns, DnsAny, ZoneFile];
    let expected: [(&str, Vec<SourceKind>); 5] = [
        ("routers", [CaidaDnsNames, Traceroute].into_iter().chain(active).collect()),
        ("clients", vec![PassiveFlow, PassiveFlow]),
        ("internet_structure", vec![PassiveFlow, PassiveFlow, CaidaDnsNames]),
        ("security_posture", active.into_iter().chain([PassiveFlow, PassiveFlow]).collect()),
        ("active_prefixes", vec![PassiveFlow, PassiveFlow]),
    ];
    for (purpose, kinds) in &expected {
        let p = out.join("recommend").join(format!("{purpose}.json"));
        let v: Value = serde_json::from_slice(&std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?)
            .map_err(|e| e.to_string())?;
        let got: Vec<SourceKind> = v["plan"]
            .as_array()
            .ok_or("plan missing")?
            .iter()
            .map(|s| serde_json::from_value::<SourceKind>(s["source"]["kind"].clone()).unwrap())
            .collect();
        check(&got == kinds, || format!("{purpose}: {got:?}"))?;
        if *purpose == "clients" {
            check(v["notes"].to_string().contains("first sighting"), || "clients: no prompt-probing note".into())?;
        }
    }
    Ok("all five scan types order sources as expected".into())
}

fn main() {
    let chain_dir = tempfile::tempdir().expect("tempdir");
    let chain = fixture_chain(chain_dir.path());

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("EUI-64 codec round trip", Box::new(eui64_roundtrip)),
        ("privacy IID Hamming model", Box::new(privacy_hamming)),
        ("LPM oracle equivalence", Box::new(lpm_equivalence)),
        ("cascade set algebra", Box::new(cascade_equivalence)),
        ("normalized weight conservation", Box::new(weight_conservation)),
        ("response decay recovery", Box::new(decay_recovery)),
        ("udp49001 ICMP-unresponsive share", Box::new(udp_icmp_mechanism)),
        ("stable core correctness", Box::new(stable_core_correctness)),
        (
            "end-to-end determinism",
            Box::new(|| chain.as_ref().map_err(Clone::clone).and_then(|o| determinism(o))),
        ),
        ("throughput and thread equivalence", Box::new(throughput)),
        (
            "recommendation table",
            Box::new(|| chain.as_ref().map_err(Clone::clone).and_then(|o| recommendation_table(o))),
        ),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match res {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

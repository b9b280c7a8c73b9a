//! Synthetic corpus for tests and demos: a small routed world, one input
//! file per source kind, filter lists, a responder model and a config.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use hitlist6::addr::{eui64_encode, UL_BIT};
use hitlist6::probe::{Responder, ResponderModel, ScanType, DAY};
use hitlist6::{Address128, Mac48};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

pub const T0: i64 = 1_460_000_000;
const SPAN_DAYS: i64 = 14;
const AS_COUNT: u32 = 40;
const FIRST_ASN: u32 = 64_500;
/// Prefixes of the last two ASes are routed but not announced.
const WITHDRAWN: u32 = 2;
const SELF_HI: u32 = 0x2001_4ca0;
const OWN_HI: u32 = 0x2001_4ca1;
const OUIS: [([u8; 3], &str); 4] = [
    ([0x00, 0x1b, 0x63], "Orchard Devices"),
    ([0x3c, 0x07, 0x54], "Orchard Devices"),
    ([0x00, 0x09, 0x0f], "Firewall Works"),
    ([0xb8, 0x27, 0xeb], "Pi Boards"),
];

fn as_hi(i: u32) -> u32 {
    0x2a00_0000 | (i + 1)
}

fn addr(hi: u32, subnet: u32, iid: u64) -> Address128 {
    Address128(((hi as u128) << 96) | ((subnet as u128) << 64) | iid as u128)
}

fn privacy_iid(rng: &mut ChaCha8Rng) -> u64 {
    // keep the weight clear of the low and EUI-64 classes
    loop {
        let v = rng.random::<u64>() & !UL_BIT;
        if (20..=44).contains(&v.count_ones()) && v >= 1 << 16 && (v >> 24) & 0xffff != 0xfffe {
            return v;
        }
    }
}

struct Host {
    address: Address128,
    first_seen: i64,
}

struct World {
    rng: ChaCha8Rng,
    model: ResponderModel,
}

impl World {
    fn remote_as(&mut self) -> u32 {
        self.rng.random_range(0..AS_COUNT)
    }

    fn respond(&mut self, address: Address128, birth: i64, life: Option<u64>, scans: &[ScanType], drops_icmp: bool) {
        self.model.insert(Responder {
            address,
            birth,
            lifetime_seconds: life,
            responds_to: scans.iter().copied().collect(),
            drops_icmp,
        });
    }
}

fn ts(rng: &mut ChaCha8Rng) -> i64 {
    T0 + rng.random_range(0..SPAN_DAYS * DAY as i64)
}

pub fn generate(dir: &Path, seed: u64, scale: u32) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let scale = scale.max(1) as usize;
    let mut w = World {
        rng: ChaCha8Rng::seed_from_u64(seed),
        model: ResponderModel::new(),
    };
    let ingest_time = T0 + SPAN_DAYS * DAY as i64;
    let exp = Exp::new(1.0 / DAY as f64).expect("positive rate");
    let web = [ScanType::Icmp6, ScanType::Tcp(80), ScanType::Tcp(443)];

    // routing
    let mut pfx2as = String::new();
    let mut announced = String::new();
    for i in 0..AS_COUNT {
        let asn = if i == 7 {
            format!("{}_{}", FIRST_ASN + i, FIRST_ASN + AS_COUNT)
        } else {
            (FIRST_ASN + i).to_string()
        };
        writeln!(pfx2as, "{}\t32\t{asn}", addr(as_hi(i), 0, 0)).unwrap();
        if i < AS_COUNT - WITHDRAWN {
            writeln!(announced, "{}/32", addr(as_hi(i), 0, 0)).unwrap();
        }
    }
    for i in 0..5 {
        let p = addr(as_hi(i), 0xbeef_0000, 0);
        writeln!(pfx2as, "{p}\t48\t{}", FIRST_ASN + 100 + i).unwrap();
        writeln!(announced, "{p}/48").unwrap();
    }
    let blacklisted = addr(as_hi(4), 0xdead_0000, 0);

    // servers
    let mut servers = Vec::new();
    for n in 0..300 * scale {
        let i = w.rng.random_range(0..AS_COUNT - WITHDRAWN);
        let iid = if n % 3 == 0 { privacy_iid(&mut w.rng) } else { w.rng.random_range(1..0x100) };
        let a = addr(as_hi(i), w.rng.random_range(0..0x1000), iid);
        let scans = if n % 4 == 0 { &web[..2] } else { &web[..] };
        let drops = n % 10 == 0;
        w.respond(a, T0 - 30 * DAY as i64, None, scans, drops);
        servers.push(Host { address: a, first_seen: 0 });
    }

    // clients: some local to the vantage point, the rest remote
    let mut clients = Vec::new();
    let mut p2p = Vec::new();
    for n in 0..600 * scale {
        let local = n % 5 == 0;
        let hi = if local { SELF_HI } else { as_hi(w.remote_as()) };
        let iid = if n % 7 == 0 {
            let (oui, _) = OUIS[n % OUIS.len()];
            let tail: [u8; 3] = w.rng.random();
            eui64_encode(Mac48([oui[0], oui[1], oui[2], tail[0], tail[1], tail[2]])).0
        } else {
            privacy_iid(&mut w.rng)
        };
        let subnet = w.rng.random_range(0..0x1_0000);
        let a = addr(hi, subnet, iid);
        // a few devices move between /64s keeping their IID
        if n % 50 == 1 {
            clients.push(Host { address: addr(hi, subnet + 1, iid), first_seen: ts(&mut w.rng) });
        }
        if n % 3 == 0 {
            p2p.push(Host { address: a, first_seen: ts(&mut w.rng) });
        } else {
            clients.push(Host { address: a, first_seen: ts(&mut w.rng) });
        }
    }

    // flows: client talks to a server or peer; both endpoints carry the port
    let mut mwn = String::from("ts,src,dst,proto,port\n");
    let mut ixp = String::from("ts,src,dst,proto,port\n");
    let mut flows: Vec<(i64, String)> = Vec::new();
    for c in clients.iter_mut() {
        for k in 0..w.rng.random_range(1..4) {
            let s = &servers[w.rng.random_range(0..servers.len())];
            let t = ts(&mut w.rng);
            c.first_seen = if k == 0 { t } else { c.first_seen.min(t) };
            let (proto, port) = if w.rng.random_bool(0.7) { ("tcp", 443) } else { ("tcp", 80) };
            flows.push((t, format!("{},{},{},{proto},{port}", t, c.address, s.address)));
        }
        if w.rng.random_bool(0.1) {
            let t = ts(&mut w.rng);
            c.first_seen = c.first_seen.min(t);
            flows.push((t, format!("{t},{},{},icmp6,", c.address, servers[0].address)));
        }
    }
    for c in p2p.iter_mut() {
        let peer = &servers[w.rng.random_range(0..servers.len())];
        let t = ts(&mut w.rng);
        c.first_seen = t;
        flows.push((t, format!("{t},{},{},udp,49001", c.address, peer.address)));
    }
    flows.sort();
    for (n, (_, row)) in flows.iter().enumerate() {
        let local = row.split(',').nth(1).is_some_and(|s| s.starts_with("2001:4ca0:"));
        if local || n % 2 == 0 {
            mwn.push_str(row);
            mwn.push('\n');
        } else {
            ixp.push_str(row);
            ixp.push('\n');
        }
    }
    mwn.push_str("garbage,row\n");
    writeln!(mwn, "{T0},{},{},tcp,443", addr(OWN_HI, 5, 5), servers[1].address).unwrap();

    // clients die after an exponential lifetime; 64.5% of P2P hosts drop ICMP
    for c in &clients {
        let life = exp.sample(&mut w.rng) as u64;
        if !c.address.to_string().starts_with("2001:4ca0:") {
            w.respond(c.address, c.first_seen, Some(life), &[ScanType::Icmp6], false);
        }
    }
    let dropping = (p2p.len() * 645).div_ceil(1000);
    for (n, c) in p2p.iter().enumerate() {
        let life = exp.sample(&mut w.rng) as u64;
        w.respond(c.address, c.first_seen, Some(life), &[ScanType::Icmp6, ScanType::Udp(49001)], n < dropping);
    }

    // routers
    let mut routers = Vec::new();
    for n in 0..150 * scale {
        let i = w.rng.random_range(0..AS_COUNT - WITHDRAWN);
        let a = addr(as_hi(i), 0xff00_0000 | n as u32, 1);
        w.respond(a, T0 - 30 * DAY as i64, None, &[ScanType::Icmp6], false);
        routers.push(a);
    }

    let noise = [
        "3ffe::1".to_string(),
        "2001:db8::1".to_string(),
        "2c0f::1".to_string(),
        addr(as_hi(AS_COUNT - 1), 3, 3).to_string(),
        addr(OWN_HI, 1, 1).to_string(),
        Address128(blacklisted.0 | 0x99).to_string(),
    ];

    // lists from servers
    let mut alexa = String::from("# top sites\n");
    let mut zone = String::new();
    let mut dns_any = String::new();
    for (n, s) in servers.iter().enumerate() {
        match n % 3 {
            0 => writeln!(alexa, "{}", s.address),
            1 => writeln!(zone, "{}", s.address),
            _ => writeln!(dns_any, "{}", s.address),
        }
        .unwrap();
        if n % 5 == 0 {
            writeln!(zone, "{}", s.address).unwrap();
        }
    }
    for x in &noise {
        writeln!(alexa, "{x}").unwrap();
        writeln!(zone, "{x}").unwrap();
    }
    writeln!(zone, "not-an-address").unwrap();

    // reverse DNS names with a stub answering for most of them
    let mut names = String::new();
    let mut stub = String::new();
    for (n, h) in servers.iter().chain(clients.iter()).enumerate().filter(|(n, _)| n % 4 == 0) {
        let name = format!("host{n}.rdns.example.net");
        writeln!(names, "{name}").unwrap();
        if n % 20 != 0 {
            writeln!(stub, "{name} {}", h.address).unwrap();
        }
    }
    names.push_str("bad..name\n");

    // router names and traceroute hops
    let mut caida = String::new();
    for (n, r) in routers.iter().enumerate() {
        if n % 4 != 3 {
            writeln!(caida, "{r}").unwrap();
        }
    }
    writeln!(caida, "{}", noise[0]).unwrap();
    let mut hops = String::new();
    for path in 0..100 * scale {
        for h in 0..5 {
            if (path + h) % 7 == 0 {
                hops.push_str("*\n");
            } else {
                writeln!(hops, "{}", routers[(path * 3 + h * 11) % routers.len()]).unwrap();
            }
        }
        writeln!(hops, "{}", servers[path % servers.len()].address).unwrap();
    }

    let mut oui = String::new();
    let mut seen = BTreeSet::new();
    for (o, v) in OUIS {
        if seen.insert(o) {
            writeln!(oui, "{:02X}-{:02X}-{:02X}   (hex)\t\t{v}", o[0], o[1], o[2]).unwrap();
        }
    }

    let files: BTreeMap<&str, String> = BTreeMap::from([
        ("flows_mwn.csv", mwn),
        ("flows_ixp.csv", ixp),
        ("alexa.txt", alexa),
        ("zone.txt", zone),
        ("dns_any.txt", dns_any),
        ("rdns_names.txt", names),
        ("rdns_stub.txt", stub),
        ("caida.txt", caida),
        ("traceroute.txt", hops),
        ("pfx2as.tsv", pfx2as),
        ("announced.txt", announced),
        ("fullbogons.txt", "3ffe::/16\n5f00::/8\n".into()),
        ("iana_special.txt", "2001:db8::/32\nfc00::/7\nfe80::/10\n2001::/23\n".into()),
        ("self.txt", format!("{}/32\n", addr(SELF_HI, 0, 0))),
        ("own.txt", format!("{}/32\n", addr(OWN_HI, 0, 0))),
        ("blacklist.txt", format!("{blacklisted}/48\n")),
        ("oui.txt", oui),
        ("model.json", w.model.to_json() + "\n"),
        ("config.toml", config_text(seed, ingest_time)),
    ]);
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn config_text(seed: u64, ingest_time: i64) -> String {
    format!(
        r#"output_dir = "out"
seed = {seed}
ingest_time = {ingest_time}

[[source]]
kind = "passive_flow"
name = "mwn"
path = "flows_mwn.csv"
format = "flow"

[[source]]
kind = "passive_flow"
name = "ixp"
path = "flows_ixp.csv"
format = "flow"

[[source]]
kind = "alexa_list"
name = "alexa"
path = "alexa.txt"
format = "list"

[[source]]
kind = "zone_file"
name = "zones"
path = "zone.txt"
format = "list"

[[source]]
kind = "dns_any"
name = "any"
path = "dns_any.txt"
format = "list"

[[source]]
kind = "reverse_dns"
name = "rdns"
path = "rdns_names.txt"
format = "hostnames"

[[source]]
kind = "caida_dns_names"
name = "caida"
path = "caida.txt"
format = "list"

[[source]]
kind = "traceroute"
name = "scamper"
path = "traceroute.txt"
format = "traceroute"

[resolver]
stub = "rdns_stub.txt"

[filter]
self_prefixes = "self.txt"
fullbogons = "fullbogons.txt"
iana_special = "iana_special.txt"
own_networks = "own.txt"
pfx2as = "pfx2as.tsv"
announced = "announced.txt"
blacklist = "blacklist.txt"

[probe]
backend = "simulated"
profile = "mwn"
model = "model.json"

[analytics]
oui = "oui.txt"
"#
    )
}

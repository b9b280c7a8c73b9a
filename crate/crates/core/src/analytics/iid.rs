use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::addr::{hamming_weight, split, Address128, Iid64, IidClass, IidClassifier, Mac48};
use crate::ingest::{SourceTag, TargetSet};
use crate::report::pct2_round;

pub const REFERENCE_MEAN: f64 = 31.5;
pub const REFERENCE_VARIANCE: f64 = 15.75;

/// OUI to vendor name, read from the IEEE registry text export.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OuiDatabase {
    vendors: HashMap<[u8; 3], String>,
}

fn parse_oui(s: &str) -> Option<[u8; 3]> {
    let b = s.as_bytes();
    if b.len() != 8 || b[2] != b'-' || b[5] != b'-' {
        return None;
    }
    let byte = |i: usize| u8::from_str_radix(&s[i..i + 2], 16).ok();
    Some([byte(0)?, byte(3)?, byte(6)?])
}

impl OuiDatabase {
    pub fn new() -> Self {
        OuiDatabase::default()
    }

    pub fn insert(&mut self, oui: [u8; 3], vendor: impl Into<String>) {
        self.vendors.insert(oui, vendor.into());
    }

    pub fn len(&self) -> usize {
        self.vendors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vendors.is_empty()
    }

    /// Reads `XX-XX-XX   (hex)\tVendor` lines; everything else is skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, AnalyticsError> {
        let mut db = OuiDatabase::new();
        for line in reader.lines() {
            let line = line?;
            let t = line.trim_start();
            let Some((key, rest)) = t.split_once(char::is_whitespace) else {
                continue;
            };
            let Some(vendor) = rest.trim_start().strip_prefix("(hex)") else {
                continue;
            };
            let Some(oui) = parse_oui(key) else {
                continue;
            };
            let vendor = vendor.trim();
            match db.vendors.get(&oui) {
                Some(v) if v != vendor => return Err(AnalyticsError::DuplicateOui(key.to_uppercase())),
                Some(_) => {}
                None => db.insert(oui, vendor),
            }
        }
        Ok(db)
    }

    pub fn lookup(&self, mac: &Mac48) -> Option<&str> {
        self.vendors.get(&mac.oui()).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorShare {
    pub vendor: String,
    pub count: u64,
    pub pct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceIids {
    pub source: SourceTag,
    pub targets: u64,
    pub eui64: u64,
    pub low: u64,
    pub privacy_random: u64,
    pub other: u64,
    pub eui64_pct: String,
    /// Over EUI-64 addresses only; most common first.
    pub vendors: Vec<VendorShare>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IidProfile {
    pub low_threshold: u32,
    pub sources: Vec<SourceIids>,
}

pub const UNKNOWN_VENDOR: &str = "unknown";

pub fn iid_profile(sets: &BTreeMap<SourceTag, TargetSet>, oui: &OuiDatabase, classifier: &IidClassifier) -> IidProfile {
    let sources = sets
        .iter()
        .map(|(tag, set)| {
            let (mut eui64, mut low, mut privacy, mut other) = (0u64, 0u64, 0u64, 0u64);
            let mut by_vendor: BTreeMap<&str, u64> = BTreeMap::new();
            for a in set.addresses() {
                match classifier.classify(a.iid()) {
                    IidClass::Eui64(mac) => {
                        eui64 += 1;
                        *by_vendor.entry(oui.lookup(&mac).unwrap_or(UNKNOWN_VENDOR)).or_default() += 1;
                    }
                    IidClass::Low => low += 1,
                    IidClass::PrivacyRandom => privacy += 1,
                    IidClass::Other => other += 1,
                }
            }
            let mut ranked: Vec<(&str, u64)> = by_vendor.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            SourceIids {
                source: tag.clone(),
                targets: set.len() as u64,
                eui64,
                low,
                privacy_random: privacy,
                other,
                eui64_pct: pct2_round(eui64, set.len() as u64),
                vendors: ranked
                    .into_iter()
                    .map(|(v, c)| VendorShare {
                        vendor: v.to_string(),
                        count: c,
                        pct: pct2_round(c, eui64),
                    })
                    .collect(),
            }
        })
        .collect();
    IidProfile {
        low_threshold: classifier.low_threshold(),
        sources,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammingHistogram {
    pub count: u64,
    /// 65 bins (weights 0..=64), or empty when there is no input.
    pub bins: Vec<u64>,
    pub mean: Option<f64>,
    /// Population variance.
    pub variance: Option<f64>,
    pub reference_mean: f64,
    pub reference_variance: f64,
}

impl HammingHistogram {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("weight\tcount\n");
        for (w, c) in self.bins.iter().enumerate() {
            out.push_str(&format!("{w}\t{c}\n"));
        }
        out
    }
}

pub fn hamming_histogram(iids: impl IntoIterator<Item = Iid64>) -> HammingHistogram {
    let mut bins = vec![0u64; 65];
    let (mut n, mut sum, mut sq) = (0u128, 0u128, 0u128);
    for iid in iids {
        let w = hamming_weight(iid) as u128;
        bins[w as usize] += 1;
        n += 1;
        sum += w;
        sq += w * w;
    }
    let (mean, variance) = if n == 0 {
        bins.clear();
        (None, None)
    } else {
        let var_num = sq * n - sum * sum;
        (Some(sum as f64 / n as f64), Some(var_num as f64 / (n * n) as f64))
    };
    HammingHistogram {
        count: n as u64,
        bins,
        mean,
        variance,
        reference_mean: REFERENCE_MEAN,
        reference_variance: REFERENCE_VARIANCE,
    }
}

/// Distinct /64 networks (upper 64 bits) each IID appeared under.
pub fn iid_prefixes(addrs: impl IntoIterator<Item = Address128>, eui64_only: bool) -> BTreeMap<Iid64, BTreeSet<u64>> {
    let mut map: BTreeMap<Iid64, BTreeSet<u64>> = BTreeMap::new();
    for a in addrs {
        let (_, iid) = split(a);
        if eui64_only && crate::addr::eui64_decode(iid).is_none() {
            continue;
        }
        map.entry(iid).or_default().insert((a.0 >> 64) as u64);
    }
    map
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgilityReport {
    pub eui64_only: bool,
    pub iids: u64,
    pub agile: u64,
    pub agile_pct: String,
    /// Number of IIDs by how many /64s they appeared in.
    pub prefixes_per_iid: BTreeMap<u64, u64>,
}

pub fn prefix_agility(addrs: impl IntoIterator<Item = Address128>, eui64_only: bool) -> AgilityReport {
    let map = iid_prefixes(addrs, eui64_only);
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for s in map.values() {
        *hist.entry(s.len() as u64).or_default() += 1;
    }
    let agile = map.values().filter(|s| s.len() >= 2).count() as u64;
    AgilityReport {
        eui64_only,
        iids: map.len() as u64,
        agile,
        agile_pct: pct2_round(agile, map.len() as u64),
        prefixes_per_iid: hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::{eui64_encode, UL_BIT};
    use crate::ingest::{merge, Observation, SourceKind, Transport};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const OUI_TXT: &str = "OUI/MA-L\t\t\tOrganization\n\
        00-16-3E   (hex)\t\tExampleCorp\n\
        00163E     (base 16)\t\tExampleCorp\n\
        \t\t\t\tSomewhere 1\n\
        AC-DE-48   (hex)\t\tOtherCorp\n";

    fn set_of(addrs: &[Address128]) -> BTreeMap<SourceTag, TargetSet> {
        let t = SourceTag::new(SourceKind::PassiveFlow, "ixp");
        let list = addrs.iter().map(|a| Observation::new(*a, 0, Transport::Unknown, None, t.clone())).collect();
        BTreeMap::from([(t, merge(&[list]))])
    }

    #[test]
    fn oui_parse() {
        let db = OuiDatabase::from_reader(OUI_TXT.as_bytes()).unwrap();
        assert_eq!(db.len(), 2);
        assert_eq!(db.lookup(&"00:16:3e:12:34:56".parse().unwrap()), Some("ExampleCorp"));
        let dup = format!("{OUI_TXT}00-16-3E   (hex)\t\tElse\n");
        assert!(matches!(OuiDatabase::from_reader(dup.as_bytes()), Err(AnalyticsError::DuplicateOui(_))));
    }

    #[test]
    fn single_vendor() {
        let db = OuiDatabase::from_reader(OUI_TXT.as_bytes()).unwrap();
        let iid = eui64_encode("00:16:3e:12:34:56".parse().unwrap());
        let a = Address128((0x2001_0db8u128 << 96) | iid.0 as u128);
        let p = iid_profile(&set_of(&[a]), &db, &IidClassifier::default());
        let s = &p.sources[0];
        assert_eq!(s.eui64, 1);
        assert_eq!(s.vendors, vec![VendorShare { vendor: "ExampleCorp".into(), count: 1, pct: "100.00".into() }]);

        let p = iid_profile(&set_of(&[Address128(1)]), &db, &IidClassifier::default());
        assert!(p.sources[0].vendors.is_empty());
        assert_eq!(p.sources[0].eui64_pct, "0.00");
    }

    #[test]
    fn constructed_mix_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cls = IidClassifier::default();
        let band = cls.privacy_band().clone();
        let marker = |v: u64| (v >> 24) & 0xffff == 0xfffe;
        let mut addrs = Vec::new();
        let plan = [250u64, 250, 250, 250];
        let mut unknown_vendor = 0;
        for i in 0..plan[0] {
            let oui = if i % 5 == 0 { [0xac, 0xde, 0x48] } else { [0x12, 0x34, 0x56] };
            unknown_vendor += (i % 5 != 0) as u64;
            let mac = Mac48([oui[0], oui[1], oui[2], rng.random(), rng.random(), rng.random()]);
            addrs.push(eui64_encode(mac).0);
        }
        for _ in 0..plan[1] {
            addrs.push(rng.random_range(0..1u64 << 16));
        }
        let mut n = 0;
        while n < plan[2] {
            let v: u64 = rng.random::<u64>() & !UL_BIT;
            if !marker(v) && band.contains(&v.count_ones()) && v >= 1 << 16 {
                addrs.push(v);
                n += 1;
            }
        }
        n = 0;
        while n < plan[3] {
            let v: u64 = rng.random::<u64>() | UL_BIT;
            if !marker(v) {
                addrs.push(v);
                n += 1;
            }
        }
        let addrs: Vec<Address128> = addrs
            .iter()
            .enumerate()
            .map(|(i, iid)| Address128(((0x2001_0db8_0000_0000u128 | i as u128) << 64) | *iid as u128))
            .collect();
        let db = OuiDatabase::from_reader(OUI_TXT.as_bytes()).unwrap();
        let p = iid_profile(&set_of(&addrs), &db, &cls);
        let s = &p.sources[0];
        assert_eq!([s.eui64, s.low, s.privacy_random, s.other], plan);
        assert_eq!(s.targets, 1000);
        assert_eq!(s.vendors[0].vendor, UNKNOWN_VENDOR);
        assert_eq!(s.vendors[0].count, unknown_vendor);
        assert_eq!(s.vendors[1], VendorShare { vendor: "OtherCorp".into(), count: 50, pct: "20.00".into() });
    }

    #[test]
    fn hamming_examples() {
        let h = hamming_histogram([Iid64(0), Iid64(u64::MAX)]);
        assert_eq!((h.bins[0], h.bins[64], h.bins.iter().sum::<u64>()), (1, 1, 2));
        assert_eq!(h.mean, Some(32.0));
        assert_eq!(h.variance, Some(1024.0));
        let e = hamming_histogram(std::iter::empty());
        assert!(e.bins.is_empty() && e.mean.is_none() && e.variance.is_none());
        assert_eq!(e.reference_mean, 31.5);
        assert!(h.to_tsv().starts_with("weight\tcount\n0\t1\n"));
    }

    #[test]
    fn agility() {
        let iid = eui64_encode("00:16:3e:00:00:01".parse().unwrap()).0 as u128;
        let a = Address128((1u128 << 64) | iid);
        let b = Address128((2u128 << 64) | iid);
        let r = prefix_agility([a, b], false);
        assert_eq!((r.iids, r.agile), (1, 1));

        let same: Vec<Address128> = (1..50u128).map(|k| Address128((7u128 << 64) | k)).collect();
        assert_eq!(prefix_agility(same, false).agile_pct, "0.00");

        // 1000 EUI-64 IIDs, 140 of them under a second /64, plus non-EUI noise
        let mut addrs = Vec::new();
        for k in 0..1000u64 {
            let mac = Mac48([0, 0x16, 0x3e, 0, (k >> 8) as u8, k as u8]);
            let iid = eui64_encode(mac).0 as u128;
            addrs.push(Address128((10u128 << 64) | iid));
            if k < 140 {
                addrs.push(Address128((11u128 << 64) | iid));
            }
        }
        for k in 0..300u128 {
            addrs.push(Address128((12u128 << 64) | (k + 1)));
            addrs.push(Address128((13u128 << 64) | (k + 1)));
        }
        let r = prefix_agility(addrs.clone(), true);
        assert_eq!((r.iids, r.agile, r.agile_pct.as_str()), (1000, 140, "14.00"));
        let all = prefix_agility(addrs, false);
        assert_eq!((all.iids, all.agile), (1300, 440));
    }
}

//! Deterministic simulated network: a per-target responder model and a
//! prober that answers from it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{ProbeError, Prober, ReplyKind, ScanType};
use crate::addr::Address128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Responder {
    pub address: Address128,
    /// Epoch seconds at which the host comes up.
    pub birth: i64,
    /// `None` means the host never goes away.
    pub lifetime_seconds: Option<u64>,
    pub responds_to: BTreeSet<ScanType>,
    pub drops_icmp: bool,
}

impl Responder {
    pub fn alive_at(&self, t: i64) -> bool {
        t >= self.birth
            && self
                .lifetime_seconds
                .is_none_or(|l| t <= self.birth.saturating_add(l.min(i64::MAX as u64) as i64))
    }

    /// Whether scan `s` at time `t` gets a positive answer.
    pub fn answers(&self, s: ScanType, t: i64) -> bool {
        self.alive_at(t) && self.responds_to.contains(&s) && !(s == ScanType::Icmp6 && self.drops_icmp)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResponderModel {
    responders: BTreeMap<Address128, Responder>,
}

impl ResponderModel {
    pub fn new() -> Self {
        ResponderModel::default()
    }

    pub fn insert(&mut self, r: Responder) {
        self.responders.insert(r.address, r);
    }

    pub fn get(&self, a: &Address128) -> Option<&Responder> {
        self.responders.get(a)
    }

    pub fn len(&self) -> usize {
        self.responders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responders.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Responder> {
        self.responders.values()
    }

    /// Parses the JSON array model file.
    pub fn from_json<R: Read>(reader: R) -> Result<Self, ProbeError> {
        let list: Vec<Responder> =
            serde_json::from_reader(reader).map_err(|e| ProbeError::InvalidModel(e.to_string()))?;
        let mut model = ResponderModel::new();
        for r in list {
            if model.responders.contains_key(&r.address) {
                return Err(ProbeError::InvalidModel(format!("duplicate address {}", r.address)));
            }
            model.insert(r);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let list: Vec<&Responder> = self.responders.values().collect();
        serde_json::to_string_pretty(&list).expect("model serializes")
    }
}

impl FromIterator<Responder> for ResponderModel {
    fn from_iter<I: IntoIterator<Item = Responder>>(iter: I) -> Self {
        let mut m = ResponderModel::new();
        for r in iter {
            m.insert(r);
        }
        m
    }
}

/// Population whose lifetimes are exponential with the given mean,
/// born at their first-seen time.
pub fn exponential_population(
    hosts: &[(Address128, i64)],
    mean_lifetime_secs: f64,
    responds_to: &BTreeSet<ScanType>,
    seed: u64,
) -> ResponderModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0 / mean_lifetime_secs).expect("positive mean");
    hosts
        .iter()
        .map(|&(address, birth)| {
            let life: f64 = exp.sample(&mut rng);
            Responder {
                address,
                birth,
                lifetime_seconds: Some(life.floor() as u64),
                responds_to: responds_to.clone(),
                drops_icmp: false,
            }
        })
        .collect()
}

/// splitmix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Answers probes from a [`ResponderModel`].
///
/// Alive hosts answer configured scans positively; an unconfigured TCP
/// port yields RST and an unconfigured UDP port an ICMP error (unless the
/// host drops ICMP). Optional loss is drawn from a hash of the seed and
/// the probe, so results do not depend on dispatch order.
#[derive(Debug, Clone)]
pub struct SimulatedProber {
    model: ResponderModel,
    seed: u64,
    loss_rate: f64,
}

impl SimulatedProber {
    pub fn new(model: ResponderModel, seed: u64) -> Self {
        SimulatedProber {
            model,
            seed,
            loss_rate: 0.0,
        }
    }

    pub fn with_loss(mut self, loss_rate: f64) -> Self {
        self.loss_rate = loss_rate.clamp(0.0, 1.0);
        self
    }

    pub fn model(&self) -> &ResponderModel {
        &self.model
    }

    fn lost(&self, target: Address128, scan: ScanType, at_ms: i64) -> bool {
        if self.loss_rate == 0.0 {
            return false;
        }
        let h = mix(self.seed ^ mix(target.0 as u64 ^ mix((target.0 >> 64) as u64 ^ mix(scan.code() ^ mix(at_ms as u64)))));
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        rng.random::<f64>() < self.loss_rate
    }
}

impl Prober for SimulatedProber {
    fn probe(&mut self, target: Address128, scan: ScanType, _payload: &[u8], at_ms: i64) -> Result<ReplyKind, ProbeError> {
        let Some(r) = self.model.get(&target) else {
            return Ok(ReplyKind::NoReply);
        };
        let t = at_ms.div_euclid(1000);
        if !r.alive_at(t) || self.lost(target, scan, at_ms) {
            return Ok(ReplyKind::NoReply);
        }
        let positive = r.answers(scan, t);
        Ok(match scan {
            ScanType::Icmp6 if positive => ReplyKind::EchoReply,
            ScanType::Icmp6 => ReplyKind::NoReply,
            ScanType::Tcp(_) if positive => ReplyKind::SynAck,
            ScanType::Tcp(_) => ReplyKind::Rst,
            ScanType::Udp(_) if positive => ReplyKind::UdpPayload,
            ScanType::Udp(_) if r.drops_icmp => ReplyKind::NoReply,
            ScanType::Udp(_) => ReplyKind::IcmpError,
        })
    }
}

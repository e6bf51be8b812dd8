//! Network address translation between the internal LAN and the outside.
//!
//! The interesting policy is the per-destination allocator: the first
//! external port toward a destination is drawn uniformly, every subsequent
//! one toward the same destination is the previous plus one. Sharing that
//! counter across internal hosts is what lets one host's mapping predict the
//! port the next host will be assigned.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::{seeded_rng, uniform_bits, Addr, Endpoint, Packet, Proto};

/// The translation tuple: internal source, external destination, protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NatTupleKey {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub proto: Proto,
}

/// A live translation entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NatMapping {
    pub key: NatTupleKey,
    pub external_port: u16,
    pub last_used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NatPolicy {
    /// Random first port per destination, then sequential.
    PerDestination,
    /// Every allocation uniform over the free ports.
    FullyRandom,
}

/// Whether the sequential counter is shared across internal hosts or kept
/// per internal host. Shared is the behavior that makes cross-host port
/// prediction possible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterScope {
    Shared,
    PerInternalHost,
}

/// How strictly inbound packets must match a mapping before traversing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InboundMatch {
    /// Source address must equal the mapping's destination address.
    AddressRestricted,
    /// Source address and port must equal the mapping's destination.
    EndpointRestricted,
    /// Destination port alone selects the mapping.
    FullCone,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NatConfig {
    pub external_addr: Addr,
    pub policy: NatPolicy,
    #[serde(default = "default_scope")]
    pub counter_scope: CounterScope,
    #[serde(default = "default_inbound")]
    pub inbound_match: InboundMatch,
    /// Mappings idle for this many ticks stop matching; `None` never expires.
    #[serde(default)]
    pub idle_timeout_ticks: Option<u64>,
}

fn default_scope() -> CounterScope {
    CounterScope::Shared
}

fn default_inbound() -> InboundMatch {
    InboundMatch::AddressRestricted
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("all 2^{port_bits} external ports toward {dst} are live")]
pub struct PortSpaceExhausted {
    pub dst: Endpoint,
    pub port_bits: u32,
}

/// Sequential counters are keyed by destination endpoint and protocol, plus
/// the internal host when the scope is per-host.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct CounterKey {
    dst: Endpoint,
    proto: Proto,
    internal: Option<Addr>,
}

pub struct Nat {
    cfg: NatConfig,
    port_bits: u32,
    rng: ChaCha8Rng,
    /// Keyed by (external port, tuple) so scans are deterministic.
    mappings: BTreeMap<(u16, NatTupleKey), NatMapping>,
    counters: BTreeMap<CounterKey, u16>,
}

impl Nat {
    pub fn new(cfg: NatConfig, port_bits: u32, seed: u64) -> Self {
        Nat {
            cfg,
            port_bits,
            rng: seeded_rng(seed),
            mappings: BTreeMap::new(),
            counters: BTreeMap::new(),
        }
    }

    pub fn external_addr(&self) -> Addr {
        self.cfg.external_addr
    }

    pub fn config(&self) -> &NatConfig {
        &self.cfg
    }

    fn port_space(&self) -> u32 {
        1u32 << self.port_bits
    }

    fn is_live(&self, mapping: &NatMapping, now: u64) -> bool {
        match self.cfg.idle_timeout_ticks {
            None => true,
            Some(t) => mapping.last_used + t > now,
        }
    }

    fn drop_expired(&mut self, now: u64) {
        if self.cfg.idle_timeout_ticks.is_none() {
            return;
        }
        let timeout = self.cfg.idle_timeout_ticks.unwrap();
        self.mappings
            .retain(|_, m| m.last_used + timeout > now);
    }

    /// Live mappings, in deterministic (port, tuple) order.
    pub fn mappings(&self) -> impl Iterator<Item = &NatMapping> {
        self.mappings.values()
    }

    /// External ports currently live toward a destination.
    fn live_ports_toward(&self, dst: Endpoint, proto: Proto, now: u64) -> Vec<u16> {
        self.mappings
            .values()
            .filter(|m| m.key.dst == dst && m.key.proto == proto && self.is_live(m, now))
            .map(|m| m.external_port)
            .collect()
    }

    /// Count of external ports free toward a destination; ground truth for
    /// prediction-probability tests.
    pub fn free_ports_toward(&self, dst: Endpoint, proto: Proto, now: u64) -> u32 {
        self.port_space() - self.live_ports_toward(dst, proto, now).len() as u32
    }

    pub fn mapping_for(&self, key: &NatTupleKey, now: u64) -> Option<&NatMapping> {
        self.mappings
            .values()
            .find(|m| m.key == *key && self.is_live(m, now))
    }

    fn counter_key(&self, key: &NatTupleKey) -> CounterKey {
        CounterKey {
            dst: key.dst,
            proto: key.proto,
            internal: match self.cfg.counter_scope {
                CounterScope::Shared => None,
                CounterScope::PerInternalHost => Some(key.src.addr),
            },
        }
    }

    /// Allocate an external port for a tuple with no live mapping.
    pub fn allocate_external_port(
        &mut self,
        key: &NatTupleKey,
        now: u64,
    ) -> Result<u16, PortSpaceExhausted> {
        self.drop_expired(now);
        let live = self.live_ports_toward(key.dst, key.proto, now);
        let space = self.port_space();
        if live.len() as u32 == space {
            return Err(PortSpaceExhausted {
                dst: key.dst,
                port_bits: self.port_bits,
            });
        }
        let mask = (space - 1) as u16;
        let port = match self.cfg.policy {
            NatPolicy::PerDestination => {
                let ck = self.counter_key(key);
                let mut candidate = match self.counters.get(&ck) {
                    // Subsequent allocation: previous + 1, skipping live.
                    Some(prev) => prev.wrapping_add(1) & mask,
                    // First allocation toward this destination: uniform.
                    None => uniform_bits(&mut self.rng, self.port_bits) as u16,
                };
                while live.contains(&candidate) {
                    candidate = candidate.wrapping_add(1) & mask;
                }
                self.counters.insert(ck, candidate);
                candidate
            }
            NatPolicy::FullyRandom => {
                let free = space as usize - live.len();
                let nth = self.rng.gen_range(0..free);
                (0..space)
                    .map(|p| p as u16)
                    .filter(|p| !live.contains(p))
                    .nth(nth)
                    .expect("free port count matches iterator")
            }
        };
        Ok(port)
    }

    /// Rewrite an outgoing packet's source to the NAT's external endpoint,
    /// reusing the tuple's mapping or allocating a fresh one. Returns the
    /// translated packet and the newly allocated port, if any.
    pub fn translate_outbound(
        &mut self,
        mut packet: Packet,
        now: u64,
    ) -> Result<(Packet, Option<u16>), PortSpaceExhausted> {
        let key = NatTupleKey {
            src: packet.src,
            dst: packet.dst,
            proto: packet.proto,
        };
        let existing = self
            .mappings
            .values()
            .find(|m| m.key == key && self.is_live(m, now))
            .map(|m| m.external_port);
        let (port, allocated) = match existing {
            Some(p) => (p, None),
            None => {
                let p = self.allocate_external_port(&key, now)?;
                self.mappings.insert(
                    (p, key),
                    NatMapping {
                        key,
                        external_port: p,
                        last_used: now,
                    },
                );
                (p, Some(p))
            }
        };
        if let Some(m) = self.mappings.get_mut(&(port, key)) {
            m.last_used = now;
        }
        packet.src = Endpoint::new(self.cfg.external_addr, port);
        Ok((packet, allocated))
    }

    /// Match an inbound packet against the live mappings. `Ok` carries the
    /// packet rewritten to the internal endpoint; `Err` returns it untouched
    /// for the caller to drop. Inbound traffic never creates mappings.
    pub fn translate_inbound(&mut self, mut packet: Packet, now: u64) -> Result<Packet, Packet> {
        let port = packet.dst.port;
        let hit = self
            .mappings
            .range((port, min_key())..=(port, max_key()))
            .map(|(_, m)| *m)
            .find(|m| {
                if !self.is_live(m, now) || m.key.proto != packet.proto {
                    return false;
                }
                match self.cfg.inbound_match {
                    InboundMatch::AddressRestricted => m.key.dst.addr == packet.src.addr,
                    InboundMatch::EndpointRestricted => m.key.dst == packet.src,
                    InboundMatch::FullCone => true,
                }
            });
        match hit {
            Some(m) => {
                packet.dst = m.key.src;
                if let Some(live) = self.mappings.get_mut(&(m.external_port, m.key)) {
                    live.last_used = now;
                }
                Ok(packet)
            }
            None => Err(packet),
        }
    }
}

fn min_key() -> NatTupleKey {
    let zero = Endpoint::new(Addr(0), 0);
    NatTupleKey {
        src: zero,
        dst: zero,
        proto: Proto::Dns,
    }
}

fn max_key() -> NatTupleKey {
    let max = Endpoint::new(Addr(u32::MAX), u16::MAX);
    NatTupleKey {
        src: max,
        dst: max,
        proto: Proto::Raw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NS: Endpoint = Endpoint::new(Addr::new(8, 8, 8, 8), 53);
    const ZOMBIE: Endpoint = Endpoint::new(Addr::new(10, 0, 0, 4), 10);
    const RESOLVER: Endpoint = Endpoint::new(Addr::new(10, 0, 0, 3), 20);

    fn cfg(policy: NatPolicy) -> NatConfig {
        NatConfig {
            external_addr: Addr::new(192, 0, 2, 1),
            policy,
            counter_scope: CounterScope::Shared,
            inbound_match: InboundMatch::AddressRestricted,
            idle_timeout_ticks: None,
        }
    }

    fn nat(policy: NatPolicy) -> Nat {
        Nat::new(cfg(policy), 8, 7)
    }

    fn raw(src: Endpoint, dst: Endpoint) -> Packet {
        Packet::new(src, dst, Proto::Raw, b"p".to_vec())
    }

    #[test]
    fn first_allocation_is_random_then_sequential_for_new_tuples() {
        let mut n = nat(NatPolicy::PerDestination);
        let (p1, alloc1) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let first = alloc1.unwrap();
        assert_eq!(p1.src.addr, Addr::new(192, 0, 2, 1));
        assert_eq!(p1.src.port, first);
        // A second, distinct tuple toward the same destination gets
        // previous + 1 even though it comes from another internal host.
        let (_, alloc2) = n.translate_outbound(raw(RESOLVER, NS), 2).unwrap();
        assert_eq!(alloc2.unwrap(), first.wrapping_add(1) & 0xff);
    }

    #[test]
    fn same_tuple_reuses_its_mapping() {
        let mut n = nat(NatPolicy::PerDestination);
        let (p1, _) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let (p2, alloc) = n.translate_outbound(raw(ZOMBIE, NS), 2).unwrap();
        assert_eq!(p1.src, p2.src);
        assert!(alloc.is_none());
    }

    #[test]
    fn inbound_probe_sweep_hits_exactly_the_live_port() {
        let mut n = nat(NatPolicy::PerDestination);
        let (out, alloc) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let live = alloc.unwrap();
        let ext = out.src.addr;
        let mut delivered = Vec::new();
        for port in 0..256u16 {
            let probe = raw(NS, Endpoint::new(ext, port));
            if let Ok(p) = n.translate_inbound(probe, 2) {
                delivered.push((port, p.dst));
            }
        }
        assert_eq!(delivered.len(), 1);
        assert_eq!(delivered[0], (live, ZOMBIE));
    }

    #[test]
    fn inbound_from_wrong_source_address_is_dropped() {
        let mut n = nat(NatPolicy::PerDestination);
        let (_, alloc) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let live = alloc.unwrap();
        let stranger = Endpoint::new(Addr::new(9, 9, 9, 9), 53);
        let probe = raw(stranger, Endpoint::new(Addr::new(192, 0, 2, 1), live));
        assert!(n.translate_inbound(probe, 2).is_err());
        // Spoofing the mapped destination's address is enough.
        let spoofed = raw(
            Endpoint::new(NS.addr, 99),
            Endpoint::new(Addr::new(192, 0, 2, 1), live),
        );
        assert!(n.translate_inbound(spoofed, 2).is_ok());
    }

    #[test]
    fn endpoint_restricted_requires_port_match_too() {
        let mut c = cfg(NatPolicy::PerDestination);
        c.inbound_match = InboundMatch::EndpointRestricted;
        let mut n = Nat::new(c, 8, 7);
        let (_, alloc) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let live = alloc.unwrap();
        let ext = Endpoint::new(Addr::new(192, 0, 2, 1), live);
        assert!(n
            .translate_inbound(raw(Endpoint::new(NS.addr, 99), ext), 2)
            .is_err());
        assert!(n.translate_inbound(raw(NS, ext), 2).is_ok());
    }

    #[test]
    fn full_cone_matches_on_port_alone() {
        let mut c = cfg(NatPolicy::PerDestination);
        c.inbound_match = InboundMatch::FullCone;
        let mut n = Nat::new(c, 8, 7);
        let (_, alloc) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let live = alloc.unwrap();
        let stranger = Endpoint::new(Addr::new(9, 9, 9, 9), 1);
        let probe = raw(stranger, Endpoint::new(Addr::new(192, 0, 2, 1), live));
        assert!(n.translate_inbound(probe, 2).is_ok());
    }

    #[test]
    fn inbound_never_creates_mappings() {
        let mut n = nat(NatPolicy::PerDestination);
        for port in 0..256u16 {
            let probe = raw(NS, Endpoint::new(Addr::new(192, 0, 2, 1), port));
            assert!(n.translate_inbound(probe, 1).is_err());
        }
        assert_eq!(n.mappings().count(), 0);
    }

    #[test]
    fn sequential_wraparound_skips_live_ports() {
        let mut n = nat(NatPolicy::PerDestination);
        let key_at = |port: u16| NatTupleKey {
            src: Endpoint::new(ZOMBIE.addr, port),
            dst: NS,
            proto: Proto::Raw,
        };
        // Force the counter to the top of the space.
        n.counters.insert(
            CounterKey {
                dst: NS,
                proto: Proto::Raw,
                internal: None,
            },
            254,
        );
        let p_top = n.allocate_external_port(&key_at(1), 1).unwrap();
        assert_eq!(p_top, 255);
        n.mappings.insert(
            (255, key_at(1)),
            NatMapping {
                key: key_at(1),
                external_port: 255,
                last_used: 1,
            },
        );
        // Pin port 0 live so the wraparound lands on 1.
        n.mappings.insert(
            (0, key_at(2)),
            NatMapping {
                key: key_at(2),
                external_port: 0,
                last_used: 1,
            },
        );
        let p_wrapped = n.allocate_external_port(&key_at(3), 1).unwrap();
        assert_eq!(p_wrapped, 1);
    }

    #[test]
    fn per_destination_counters_are_independent_per_destination() {
        let mut n = nat(NatPolicy::PerDestination);
        let other = Endpoint::new(Addr::new(7, 7, 7, 7), 80);
        let (_, a1) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let (_, b1) = n.translate_outbound(raw(ZOMBIE, other), 1).unwrap();
        let (_, a2) = n.translate_outbound(raw(RESOLVER, NS), 1).unwrap();
        // The second NS allocation continues the NS counter regardless of
        // the interleaved allocation toward the other destination.
        assert_eq!(a2.unwrap(), a1.unwrap().wrapping_add(1) & 0xff);
        assert!(b1.is_some());
    }

    #[test]
    fn per_internal_host_scope_separates_counters() {
        let mut c = cfg(NatPolicy::PerDestination);
        c.counter_scope = CounterScope::PerInternalHost;
        let mut n = Nat::new(c, 8, 7);
        let (_, a1) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let (_, a2) = n.translate_outbound(raw(RESOLVER, NS), 1).unwrap();
        // Counters are per host, so the resolver's first port is an
        // independent uniform draw, not zombie's + 1. With this seed they
        // must also avoid colliding by the uniqueness rule.
        assert_ne!(a2.unwrap(), a1.unwrap());
    }

    #[test]
    fn fully_random_allocations_are_distinct_and_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        // Distinctness for one instance.
        let mut n = nat(NatPolicy::FullyRandom);
        let (_, a) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let (_, b) = n.translate_outbound(raw(RESOLVER, NS), 1).unwrap();
        assert_ne!(a.unwrap(), b.unwrap());

        // Uniformity of the first allocation over 10^4 seeded trials.
        const TRIALS: u64 = 10_000;
        let mut counts = [0u64; 256];
        for seed in 0..TRIALS {
            let mut n = Nat::new(cfg(NatPolicy::FullyRandom), 8, seed);
            let (_, alloc) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
            counts[alloc.unwrap() as usize] += 1;
        }
        let expected = TRIALS as f64 / 256.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let dist = ChiSquared::new(255.0).unwrap();
        let p_value = 1.0 - dist.cdf(stat);
        assert!(p_value > 0.001, "chi-squared p-value {p_value} too small");
    }

    #[test]
    fn port_space_exhaustion_is_reported() {
        let mut n = Nat::new(cfg(NatPolicy::PerDestination), 2, 7);
        for i in 0..4u16 {
            let src = Endpoint::new(ZOMBIE.addr, i);
            n.translate_outbound(raw(src, NS), 1).unwrap();
        }
        let src = Endpoint::new(ZOMBIE.addr, 4);
        let err = n.translate_outbound(raw(src, NS), 1);
        assert!(err.is_err());
    }

    #[test]
    fn idle_timeout_expires_mappings_and_frees_ports() {
        let mut c = cfg(NatPolicy::PerDestination);
        c.idle_timeout_ticks = Some(5);
        let mut n = Nat::new(c, 8, 7);
        let (_, alloc) = n.translate_outbound(raw(ZOMBIE, NS), 1).unwrap();
        let live = alloc.unwrap();
        let ext = Endpoint::new(Addr::new(192, 0, 2, 1), live);
        // Within the window the probe traverses.
        assert!(n.translate_inbound(raw(NS, ext), 5).is_ok());
        // Each use refreshes, so expiry is measured from the last hit.
        assert!(n.translate_inbound(raw(NS, ext), 9).is_ok());
        assert!(n.translate_inbound(raw(NS, ext), 14).is_err());
        assert_eq!(n.free_ports_toward(NS, Proto::Raw, 14), 256);
    }

    #[test]
    fn uniqueness_no_two_live_mappings_share_a_port_toward_one_destination() {
        let mut n = nat(NatPolicy::PerDestination);
        for i in 0..100u16 {
            let src = Endpoint::new(ZOMBIE.addr, i);
            n.translate_outbound(raw(src, NS), 1).unwrap();
        }
        let mut ports: Vec<u16> = n
            .mappings()
            .filter(|m| m.key.dst == NS)
            .map(|m| m.external_port)
            .collect();
        let before = ports.len();
        ports.sort_unstable();
        ports.dedup();
        assert_eq!(before, ports.len());
        assert_eq!(before, 100);
    }
}

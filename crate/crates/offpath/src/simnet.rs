//! Deterministic event-driven packet network.
//!
//! All nodes hang off a single star topology: every packet travels one hop
//! (optionally through a NAT device) and arrives a fixed number of ticks
//! after it was sent. Packets enqueued in the same tick are delivered in
//! enqueue order, which is the tie-break that decides races between spoofed
//! and authentic responses. Every send, delivery and drop is recorded in a
//! trace log so that runs are auditable and byte-for-byte reproducible.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::nat::Nat;

/// A node address, rendered dotted-quad like an IPv4 address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Addr(pub u32);

impl Addr {
    pub const fn new(a: u8, b: u8, c: u8, d: u8) -> Self {
        Addr(u32::from_be_bytes([a, b, c, d]))
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0.to_be_bytes();
        write!(f, "{a}.{b}.{c}.{d}")
    }
}

impl fmt::Debug for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Debug, Error)]
#[error("invalid address {0:?}: expected dotted quad")]
pub struct AddrParseError(String);

impl FromStr for Addr {
    type Err = AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bytes = [0u8; 4];
        let mut parts = s.split('.');
        for slot in &mut bytes {
            let part = parts.next().ok_or_else(|| AddrParseError(s.into()))?;
            *slot = part.parse().map_err(|_| AddrParseError(s.into()))?;
        }
        if parts.next().is_some() {
            return Err(AddrParseError(s.into()));
        }
        Ok(Addr(u32::from_be_bytes(bytes)))
    }
}

impl Serialize for Addr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Addr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A transport endpoint: address plus port within the configured width.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub addr: Addr,
    pub port: u16,
}

impl Endpoint {
    pub const fn new(addr: Addr, port: u16) -> Self {
        Endpoint { addr, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.addr, self.port)
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Protocol tag; decides which parser consumes the payload at the receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Dns,
    Tcp,
    Raw,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Proto::Dns => "dns",
            Proto::Tcp => "tcp",
            Proto::Raw => "raw",
        };
        f.write_str(s)
    }
}

/// A simulated datagram/segment. The source endpoint is whatever the sender
/// wrote into the header; `origin` records which node actually emitted the
/// packet and exists purely for tracing and ground-truth accounting.
/// Protocol handlers must never read it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub proto: Proto,
    pub payload: Vec<u8>,
    pub send_tick: u64,
    pub origin: Addr,
}

impl Packet {
    pub fn new(src: Endpoint, dst: Endpoint, proto: Proto, payload: Vec<u8>) -> Self {
        Packet {
            src,
            dst,
            proto,
            payload,
            send_tick: 0,
            origin: src.addr,
        }
    }
}

/// Scaled-down protocol field widths. The real protocols use 16-bit ports,
/// a 16-bit DNS transaction id and a 32-bit TCP sequence number; shrinking
/// the widths makes every brute-force search cheap enough to run exhaustively
/// while preserving the probability structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimParams {
    pub port_bits: u32,
    pub txid_bits: u32,
    pub seq_bits: u32,
    pub wnd_size: u32,
    pub latency_ticks: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("port_bits {0} outside [2, 16]")]
    PortBits(u32),
    #[error("txid_bits {0} outside [2, 16]")]
    TxidBits(u32),
    #[error("seq_bits {0} outside [8, 32]")]
    SeqBits(u32),
    #[error("wnd_size {0} outside [1, 2^seq_bits)")]
    WndSize(u32),
}

impl SimParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(2..=16).contains(&self.port_bits) {
            return Err(ParamsError::PortBits(self.port_bits));
        }
        if !(2..=16).contains(&self.txid_bits) {
            return Err(ParamsError::TxidBits(self.txid_bits));
        }
        if !(8..=32).contains(&self.seq_bits) {
            return Err(ParamsError::SeqBits(self.seq_bits));
        }
        if self.wnd_size < 1 || (self.wnd_size as u64) >= self.seq_space() {
            return Err(ParamsError::WndSize(self.wnd_size));
        }
        Ok(())
    }

    pub fn port_space(&self) -> u32 {
        1u32 << self.port_bits
    }

    pub fn txid_space(&self) -> u32 {
        1u32 << self.txid_bits
    }

    pub fn seq_space(&self) -> u64 {
        1u64 << self.seq_bits
    }

    pub fn port_in_range(&self, port: u16) -> bool {
        (port as u32) < self.port_space()
    }
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            port_bits: 8,
            txid_bits: 8,
            seq_bits: 16,
            wnd_size: 256,
            latency_ticks: 1,
        }
    }
}

/// The deterministic random stream backing every draw in a simulation.
/// Identical seeds yield identical streams on every platform.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw over `[0, 2^bits)`.
pub fn uniform_bits(rng: &mut ChaCha8Rng, bits: u32) -> u32 {
    debug_assert!(bits >= 1 && bits <= 32);
    rng.gen_range(0..(1u64 << bits)) as u32
}

/// Source-port selection behavior, shared by the resolver and TCP clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortPolicy {
    /// Always the same port (the pre-randomisation resolver default).
    Fixed(u16),
    /// Uniform over the currently free ports.
    Random,
    /// Start at the given port, then previous + 1, skipping live ports.
    Sequential(u16),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no free port in [0, 2^{port_bits})")]
pub struct NoFreePort {
    pub port_bits: u32,
}

/// Tracks live ports and hands out new ones under a [`PortPolicy`].
#[derive(Clone, Debug)]
pub struct PortAllocator {
    policy: PortPolicy,
    port_bits: u32,
    in_use: BTreeSet<u16>,
    next_seq: u16,
}

impl PortAllocator {
    pub fn new(policy: PortPolicy, port_bits: u32) -> Self {
        let next_seq = match policy {
            PortPolicy::Sequential(start) => start,
            _ => 0,
        };
        PortAllocator {
            policy,
            port_bits,
            in_use: BTreeSet::new(),
            next_seq,
        }
    }

    pub fn policy(&self) -> PortPolicy {
        self.policy
    }

    fn space(&self) -> u32 {
        1u32 << self.port_bits
    }

    pub fn allocate(&mut self, rng: &mut ChaCha8Rng) -> Result<u16, NoFreePort> {
        let space = self.space();
        match self.policy {
            // Fixed ports are shared: concurrent users are allowed, the
            // caller decides whether reuse is a conflict.
            PortPolicy::Fixed(p) => {
                self.in_use.insert(p);
                Ok(p)
            }
            PortPolicy::Random => {
                let free = space as usize - self.in_use.len();
                if free == 0 {
                    return Err(NoFreePort {
                        port_bits: self.port_bits,
                    });
                }
                let nth = rng.gen_range(0..free);
                let port = (0..space as u32)
                    .map(|p| p as u16)
                    .filter(|p| !self.in_use.contains(p))
                    .nth(nth)
                    .expect("free port count matches iterator");
                self.in_use.insert(port);
                Ok(port)
            }
            PortPolicy::Sequential(_) => {
                if self.in_use.len() == space as usize {
                    return Err(NoFreePort {
                        port_bits: self.port_bits,
                    });
                }
                let mask = (space - 1) as u16;
                let mut candidate = self.next_seq & mask;
                while self.in_use.contains(&candidate) {
                    candidate = candidate.wrapping_add(1) & mask;
                }
                self.in_use.insert(candidate);
                self.next_seq = candidate.wrapping_add(1) & mask;
                Ok(candidate)
            }
        }
    }

    pub fn release(&mut self, port: u16) {
        self.in_use.remove(&port);
    }

    pub fn in_use(&self, port: u16) -> bool {
        self.in_use.contains(&port)
    }
}

/// Per-node capability flags.
#[derive(Clone, Copy, Debug, Default)]
pub struct NodeCaps {
    /// May write foreign source addresses into outgoing packets.
    pub spoof: bool,
    /// Sits on the LAN side of the NAT, when one is configured.
    pub internal: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SendError {
    #[error("node {sender} may not spoof source {claimed}")]
    SpoofDenied { sender: Addr, claimed: Endpoint },
    #[error("sender {0} is not a registered node")]
    UnknownSender(Addr),
    #[error("NAT port space exhausted toward {dst}")]
    NatPortExhausted { dst: Endpoint },
    #[error("port {port} exceeds 2^{port_bits}")]
    PortOutOfRange { port: u16, port_bits: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Send,
    Deliver,
    Drop,
    Note,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Send => "send",
            EventKind::Deliver => "deliver",
            EventKind::Drop => "drop",
            EventKind::Note => "note",
        };
        f.write_str(s)
    }
}

/// One line of the event trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub proto: Proto,
    pub summary: String,
}

impl TraceEvent {
    /// Tab-separated line: tick, kind, src, dst, proto, summary.
    pub fn render(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.tick, self.kind, self.src, self.dst, self.proto, self.summary
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PacketCounters {
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Clone, Debug)]
struct QueuedPacket {
    deliver_tick: u64,
    packet: Packet,
    lost: bool,
}

/// A packet delivered to a node this tick.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub to: Addr,
    pub packet: Packet,
}

/// The event-driven network core. Single-threaded; one instance per
/// simulation run.
pub struct Network {
    params: SimParams,
    tick: u64,
    queue: VecDeque<QueuedPacket>,
    nodes: BTreeMap<Addr, NodeCaps>,
    nat: Option<Nat>,
    loss_probability: f64,
    loss_rng: ChaCha8Rng,
    counters: PacketCounters,
    sent_by: BTreeMap<Addr, u64>,
    log: Vec<TraceEvent>,
    logging: bool,
}

impl Network {
    pub fn new(params: SimParams, loss_probability: f64, loss_seed: u64) -> Self {
        Network {
            params,
            tick: 0,
            queue: VecDeque::new(),
            nodes: BTreeMap::new(),
            nat: None,
            loss_probability,
            loss_rng: seeded_rng(loss_seed),
            counters: PacketCounters::default(),
            sent_by: BTreeMap::new(),
            log: Vec::new(),
            logging: true,
        }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn register_node(&mut self, addr: Addr, caps: NodeCaps) {
        self.nodes.insert(addr, caps);
    }

    pub fn install_nat(&mut self, nat: Nat) {
        self.nat = Some(nat);
    }

    pub fn nat(&self) -> Option<&Nat> {
        self.nat.as_ref()
    }

    pub fn nat_mut(&mut self) -> Option<&mut Nat> {
        self.nat.as_mut()
    }

    pub fn set_logging(&mut self, enabled: bool) {
        self.logging = enabled;
    }

    pub fn counters(&self) -> PacketCounters {
        self.counters
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn sent_by(&self, addr: Addr) -> u64 {
        self.sent_by.get(&addr).copied().unwrap_or(0)
    }

    pub fn log(&self) -> &[TraceEvent] {
        &self.log
    }

    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for ev in &self.log {
            out.push_str(&ev.render());
            out.push('\n');
        }
        out
    }

    /// Record a protocol-level event against the trace.
    pub fn note(&mut self, src: Endpoint, dst: Endpoint, proto: Proto, summary: String) {
        if self.logging {
            self.log.push(TraceEvent {
                tick: self.tick,
                kind: EventKind::Note,
                src,
                dst,
                proto,
                summary,
            });
        }
    }

    fn log_packet(&mut self, kind: EventKind, packet: &Packet, summary: String) {
        if self.logging {
            self.log.push(TraceEvent {
                tick: self.tick,
                kind,
                src: packet.src,
                dst: packet.dst,
                proto: packet.proto,
                summary,
            });
        }
    }

    /// Enqueue a packet for delivery `latency_ticks` from now. The source
    /// endpoint must belong to the sender unless it holds the spoofing
    /// capability; outbound NAT translation happens here, so the packet in
    /// flight already carries its external source.
    pub fn schedule_send(&mut self, sender: Addr, mut packet: Packet) -> Result<(), SendError> {
        let caps = *self
            .nodes
            .get(&sender)
            .ok_or(SendError::UnknownSender(sender))?;
        if packet.src.addr != sender && !caps.spoof {
            return Err(SendError::SpoofDenied {
                sender,
                claimed: packet.src,
            });
        }
        if !self.params.port_in_range(packet.src.port) {
            return Err(SendError::PortOutOfRange {
                port: packet.src.port,
                port_bits: self.params.port_bits,
            });
        }
        if !self.params.port_in_range(packet.dst.port) {
            return Err(SendError::PortOutOfRange {
                port: packet.dst.port,
                port_bits: self.params.port_bits,
            });
        }
        packet.origin = sender;
        packet.send_tick = self.tick;

        let dst_internal = self
            .nodes
            .get(&packet.dst.addr)
            .map(|c| c.internal)
            .unwrap_or(false);
        if let Some(nat) = self.nat.as_mut() {
            if caps.internal && !dst_internal {
                let tick = self.tick;
                let dst = packet.dst;
                match nat.translate_outbound(packet, tick) {
                    Ok((translated, alloc)) => {
                        packet = translated;
                        if let Some(port) = alloc {
                            let (src, dst) = (packet.src, packet.dst);
                            let proto = packet.proto;
                            self.note(src, dst, proto, format!("nat-alloc port={port}"));
                        }
                    }
                    Err(_) => {
                        return Err(SendError::NatPortExhausted { dst });
                    }
                }
            }
        }

        let lost = self.loss_probability > 0.0
            && self.loss_rng.gen_bool(self.loss_probability.min(1.0));

        let origin = packet.origin;
        let spoof_tag = if origin != packet.src.addr {
            " spoofed"
        } else {
            ""
        };
        self.log_packet(
            EventKind::Send,
            &packet,
            format!("from={} len={}{}", origin, packet.payload.len(), spoof_tag),
        );
        self.counters.enqueued += 1;
        *self.sent_by.entry(sender).or_insert(0) += 1;

        self.queue.push_back(QueuedPacket {
            deliver_tick: self.tick + self.params.latency_ticks,
            packet,
            lost,
        });
        Ok(())
    }

    /// Advance the clock one tick and return the packets that arrive, in
    /// enqueue order. Inbound NAT translation and routing drops happen here.
    pub fn step(&mut self) -> Vec<Delivery> {
        self.tick += 1;
        let mut out = Vec::new();
        while let Some(front) = self.queue.front() {
            if front.deliver_tick > self.tick {
                break;
            }
            let queued = self.queue.pop_front().expect("checked front");
            let mut packet = queued.packet;
            if queued.lost {
                self.counters.dropped += 1;
                self.log_packet(EventKind::Drop, &packet, "reason=loss".into());
                continue;
            }

            // Inbound through the NAT: only packets matching a live mapping
            // make it to the LAN.
            let nat_external = self.nat.as_ref().map(|n| n.external_addr());
            if nat_external == Some(packet.dst.addr) {
                let tick = self.tick;
                match self
                    .nat
                    .as_mut()
                    .expect("nat checked present")
                    .translate_inbound(packet, tick)
                {
                    Ok(rewritten) => packet = rewritten,
                    Err(original) => {
                        self.counters.dropped += 1;
                        self.log_packet(EventKind::Drop, &original, "reason=no-mapping".into());
                        continue;
                    }
                }
            } else if self.nat.is_some() {
                let origin_internal = self
                    .nodes
                    .get(&packet.origin)
                    .map(|c| c.internal)
                    .unwrap_or(false);
                let dst_internal = self
                    .nodes
                    .get(&packet.dst.addr)
                    .map(|c| c.internal)
                    .unwrap_or(false);
                if dst_internal && !origin_internal {
                    self.counters.dropped += 1;
                    self.log_packet(EventKind::Drop, &packet, "reason=unroutable".into());
                    continue;
                }
            }

            if !self.nodes.contains_key(&packet.dst.addr) {
                self.counters.dropped += 1;
                self.log_packet(EventKind::Drop, &packet, "reason=no-node".into());
                continue;
            }

            self.counters.delivered += 1;
            let to = packet.dst.addr;
            self.log_packet(
                EventKind::Deliver,
                &packet,
                format!("to={} len={}", to, packet.payload.len()),
            );
            out.push(Delivery { to, packet });
        }
        out
    }
}

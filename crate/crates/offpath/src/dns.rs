//! Recursive resolver, authoritative name server, and stub client.
//!
//! The resolver authenticates responses purely by echoed challenge fields:
//! transaction id, its own source port, the name server endpoint, and the
//! query name. A response matching all four consumes the pending request;
//! everything else is silently dropped and counted. Cached records are
//! served until their TTL tick and overwritten by whatever the next
//! accepted response says, which is exactly the policy referral poisoning
//! needs.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::simnet::{
    seeded_rng, uniform_bits, Addr, Endpoint, Network, Packet, PortAllocator, PortPolicy, Proto,
    SimParams,
};

// ---------------------------------------------------------------------------
// Wire format. Byte payloads cross the network; this module owns the parse.
// ---------------------------------------------------------------------------

const MSG_QUERY: u8 = 0;
const MSG_RESPONSE: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rcode {
    NoError,
    NxDomain,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnsRecord {
    pub name: String,
    pub addr: Addr,
    pub ttl_ticks: u64,
}

/// A DNS question on the wire. Source and destination endpoints ride the
/// packet envelope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnsQuery {
    pub txid: u16,
    pub qname: String,
}

/// A DNS reply. `answer` maps the queried name, `referral` maps a name
/// server; a `NoError` response carries at least one of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnsResponse {
    pub txid: u16,
    pub rcode: Rcode,
    pub qname: String,
    pub answer: Option<DnsRecord>,
    pub referral: Option<DnsRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DnsMessage {
    Query(DnsQuery),
    Response(DnsResponse),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated DNS message")]
    Truncated,
    #[error("unknown DNS message tag {0}")]
    BadTag(u8),
    #[error("DNS name is not valid utf-8")]
    BadName,
    #[error("NoError response carries neither answer nor referral")]
    EmptyResponse,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn get_str(buf: &[u8], at: &mut usize) -> Result<String, WireError> {
    let len = get_u16(buf, at)? as usize;
    let end = at.checked_add(len).ok_or(WireError::Truncated)?;
    if end > buf.len() {
        return Err(WireError::Truncated);
    }
    let s = std::str::from_utf8(&buf[*at..end]).map_err(|_| WireError::BadName)?;
    *at = end;
    Ok(s.to_string())
}

fn get_u8(buf: &[u8], at: &mut usize) -> Result<u8, WireError> {
    let b = *buf.get(*at).ok_or(WireError::Truncated)?;
    *at += 1;
    Ok(b)
}

fn get_u16(buf: &[u8], at: &mut usize) -> Result<u16, WireError> {
    if *at + 2 > buf.len() {
        return Err(WireError::Truncated);
    }
    let v = u16::from_le_bytes([buf[*at], buf[*at + 1]]);
    *at += 2;
    Ok(v)
}

fn get_u64(buf: &[u8], at: &mut usize) -> Result<u64, WireError> {
    if *at + 8 > buf.len() {
        return Err(WireError::Truncated);
    }
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&buf[*at..*at + 8]);
    *at += 8;
    Ok(u64::from_le_bytes(bytes))
}

fn put_record(buf: &mut Vec<u8>, rec: &Option<DnsRecord>) {
    match rec {
        None => buf.push(0),
        Some(r) => {
            buf.push(1);
            put_str(buf, &r.name);
            buf.extend_from_slice(&r.addr.0.to_le_bytes());
            buf.extend_from_slice(&r.ttl_ticks.to_le_bytes());
        }
    }
}

fn get_record(buf: &[u8], at: &mut usize) -> Result<Option<DnsRecord>, WireError> {
    match get_u8(buf, at)? {
        0 => Ok(None),
        _ => {
            let name = get_str(buf, at)?;
            if *at + 4 > buf.len() {
                return Err(WireError::Truncated);
            }
            let mut addr = [0u8; 4];
            addr.copy_from_slice(&buf[*at..*at + 4]);
            *at += 4;
            let ttl_ticks = get_u64(buf, at)?;
            Ok(Some(DnsRecord {
                name,
                addr: Addr(u32::from_le_bytes(addr)),
                ttl_ticks,
            }))
        }
    }
}

pub fn encode_query(q: &DnsQuery) -> Vec<u8> {
    let mut buf = vec![MSG_QUERY];
    buf.extend_from_slice(&q.txid.to_le_bytes());
    put_str(&mut buf, &q.qname);
    buf
}

pub fn encode_response(r: &DnsResponse) -> Vec<u8> {
    let mut buf = vec![MSG_RESPONSE];
    buf.extend_from_slice(&r.txid.to_le_bytes());
    buf.push(match r.rcode {
        Rcode::NoError => 0,
        Rcode::NxDomain => 3,
    });
    put_str(&mut buf, &r.qname);
    put_record(&mut buf, &r.answer);
    put_record(&mut buf, &r.referral);
    buf
}

pub fn decode(buf: &[u8]) -> Result<DnsMessage, WireError> {
    let mut at = 0;
    match get_u8(buf, &mut at)? {
        MSG_QUERY => {
            let txid = get_u16(buf, &mut at)?;
            let qname = get_str(buf, &mut at)?;
            Ok(DnsMessage::Query(DnsQuery { txid, qname }))
        }
        MSG_RESPONSE => {
            let txid = get_u16(buf, &mut at)?;
            let rcode = match get_u8(buf, &mut at)? {
                0 => Rcode::NoError,
                _ => Rcode::NxDomain,
            };
            let qname = get_str(buf, &mut at)?;
            let answer = get_record(buf, &mut at)?;
            let referral = get_record(buf, &mut at)?;
            if rcode == Rcode::NoError && answer.is_none() && referral.is_none() {
                return Err(WireError::EmptyResponse);
            }
            Ok(DnsMessage::Response(DnsResponse {
                txid,
                rcode,
                qname,
                answer,
                referral,
            }))
        }
        tag => Err(WireError::BadTag(tag)),
    }
}

// ---------------------------------------------------------------------------
// Resolver
// ---------------------------------------------------------------------------

/// A cached address record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheEntry {
    pub name: String,
    pub address: Addr,
    pub ttl_ticks: u64,
    pub inserted_at: u64,
}

impl CacheEntry {
    /// Served strictly before `inserted_at + ttl_ticks`.
    pub fn fresh_at(&self, tick: u64) -> bool {
        tick < self.inserted_at + self.ttl_ticks
    }
}

/// A client waiting on a resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Waiter {
    pub endpoint: Endpoint,
    pub txid: u16,
}

/// An in-flight upstream query. At most one per (qname, nameserver) pair;
/// later client requests for the same name queue behind it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingRequest {
    pub qname: String,
    pub txid: u16,
    pub resolver_port: u16,
    pub nameserver: Endpoint,
    pub waiters: Vec<Waiter>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    NoPending,
    TxidMismatch,
    PortMismatch,
    SourceMismatch,
    QnameMismatch,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::NoPending => "NoPending",
            RejectReason::TxidMismatch => "TxidMismatch",
            RejectReason::PortMismatch => "PortMismatch",
            RejectReason::SourceMismatch => "SourceMismatch",
            RejectReason::QnameMismatch => "QnameMismatch",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RejectCounters {
    pub no_pending: u64,
    pub txid_mismatch: u64,
    pub port_mismatch: u64,
    pub source_mismatch: u64,
    pub qname_mismatch: u64,
    pub malformed: u64,
    pub bailiwick: u64,
}

/// Where a client-triggered resolution ended up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResolveOutcome {
    /// Fresh cache entry; answered with zero network traffic.
    CacheHit(Addr),
    /// Upstream query emitted, pending registered.
    Emitted,
    /// An identical (qname, nameserver) query is in flight; queued behind it.
    QueuedBehindPending,
    /// No zone is configured for the name; client got NxDomain.
    NoZone,
}

/// Delegation knowledge: which name server serves a zone, and its fallback
/// (glue) address used until the cache learns better.
#[derive(Clone, Debug)]
pub struct ZoneRef {
    pub domain: String,
    pub ns_name: String,
    pub ns_addr: Addr,
    pub ns_port: u16,
}

#[derive(Clone, Debug)]
pub struct ResolverConfig {
    pub addr: Addr,
    pub service_port: u16,
    pub upstream_policy: PortPolicy,
    pub zones: Vec<ZoneRef>,
}

pub struct Resolver {
    cfg: ResolverConfig,
    params: SimParams,
    rng: ChaCha8Rng,
    ports: PortAllocator,
    cache: BTreeMap<String, CacheEntry>,
    pending: Vec<PendingRequest>,
    rejects: RejectCounters,
    accepts: u64,
}

impl Resolver {
    pub fn new(cfg: ResolverConfig, params: SimParams, seed: u64) -> Self {
        let ports = PortAllocator::new(cfg.upstream_policy, params.port_bits);
        Resolver {
            cfg,
            params,
            rng: seeded_rng(seed),
            ports,
            cache: BTreeMap::new(),
            pending: Vec::new(),
            rejects: RejectCounters::default(),
            accepts: 0,
        }
    }

    pub fn addr(&self) -> Addr {
        self.cfg.addr
    }

    pub fn service_endpoint(&self) -> Endpoint {
        Endpoint::new(self.cfg.addr, self.cfg.service_port)
    }

    pub fn rejects(&self) -> RejectCounters {
        self.rejects
    }

    pub fn accepts(&self) -> u64 {
        self.accepts
    }

    pub fn pending(&self) -> &[PendingRequest] {
        &self.pending
    }

    /// Ground truth for tests and outcome measurement.
    pub fn cache_lookup(&self, name: &str, tick: u64) -> Option<Addr> {
        self.cache
            .get(name)
            .filter(|e| e.fresh_at(tick))
            .map(|e| e.address)
    }

    pub fn cache_entry(&self, name: &str) -> Option<&CacheEntry> {
        self.cache.get(name)
    }

    fn zone_for(&self, qname: &str) -> Option<&ZoneRef> {
        self.cfg
            .zones
            .iter()
            .filter(|z| qname == z.domain || qname.ends_with(&format!(".{}", z.domain)))
            .max_by_key(|z| z.domain.len())
    }

    pub fn on_packet(&mut self, net: &mut Network, pkt: &Packet) {
        match decode(&pkt.payload) {
            Ok(DnsMessage::Query(q)) => {
                if pkt.dst.port != self.cfg.service_port {
                    net.note(pkt.src, pkt.dst, Proto::Dns, "dns-drop wrong-port".into());
                    return;
                }
                self.resolve(
                    net,
                    &q.qname,
                    Waiter {
                        endpoint: pkt.src,
                        txid: q.txid,
                    },
                );
            }
            Ok(DnsMessage::Response(r)) => self.handle_response(net, &r, pkt.src, pkt.dst),
            Err(_) => {
                self.rejects.malformed += 1;
                net.note(pkt.src, pkt.dst, Proto::Dns, "dns-drop malformed".into());
            }
        }
    }

    /// Resolve a name for a client: answer from cache, or register a pending
    /// request with a policy-allocated source port and a uniform transaction
    /// id and query the zone's name server.
    pub fn resolve(&mut self, net: &mut Network, qname: &str, waiter: Waiter) -> ResolveOutcome {
        if let Some(addr) = self.cache_lookup(qname, net.tick()) {
            let src = self.service_endpoint();
            net.note(src, waiter.endpoint, Proto::Dns, format!("cache-hit name={qname}"));
            self.answer_waiter(net, waiter, qname, Some(addr));
            return ResolveOutcome::CacheHit(addr);
        }
        self.resolve_upstream(net, qname, vec![waiter])
    }

    fn resolve_upstream(
        &mut self,
        net: &mut Network,
        qname: &str,
        waiters: Vec<Waiter>,
    ) -> ResolveOutcome {
        let Some(zone) = self.zone_for(qname).cloned() else {
            let src = self.service_endpoint();
            net.note(src, src, Proto::Dns, format!("no-zone name={qname}"));
            for w in waiters {
                self.answer_waiter(net, w, qname, None);
            }
            return ResolveOutcome::NoZone;
        };
        let ns_ep = match self.cache_lookup(&zone.ns_name, net.tick()) {
            Some(addr) => Endpoint::new(addr, zone.ns_port),
            None => Endpoint::new(zone.ns_addr, zone.ns_port),
        };

        if let Some(p) = self
            .pending
            .iter_mut()
            .find(|p| p.qname == qname && p.nameserver == ns_ep)
        {
            p.waiters.extend(waiters);
            let src = self.service_endpoint();
            net.note(src, ns_ep, Proto::Dns, format!("duplicate-pending name={qname}"));
            return ResolveOutcome::QueuedBehindPending;
        }

        let Ok(port) = self.ports.allocate(&mut self.rng) else {
            let src = self.service_endpoint();
            net.note(src, ns_ep, Proto::Dns, "no-free-port".into());
            for w in waiters {
                self.answer_waiter(net, w, qname, None);
            }
            return ResolveOutcome::NoZone;
        };
        let txid = uniform_bits(&mut self.rng, self.params.txid_bits) as u16;
        let src = Endpoint::new(self.cfg.addr, port);
        let query = DnsQuery {
            txid,
            qname: qname.to_string(),
        };
        self.pending.push(PendingRequest {
            qname: qname.to_string(),
            txid,
            resolver_port: port,
            nameserver: ns_ep,
            waiters,
        });
        let packet = Packet::new(src, ns_ep, Proto::Dns, encode_query(&query));
        // The resolver is honest; sends cannot fail except by exhaustion,
        // which the allocator already ruled out.
        let _ = net.schedule_send(self.cfg.addr, packet);
        ResolveOutcome::Emitted
    }

    /// Check a response against the pending table. Acceptance requires all
    /// four challenge fields to match one pending request, which is then
    /// consumed. Rejections are classified in demux order: port, qname,
    /// source, txid.
    pub fn validate_response(
        &mut self,
        resp: &DnsResponse,
        resp_src: Endpoint,
        resp_dst: Endpoint,
    ) -> Result<PendingRequest, RejectReason> {
        if self.pending.is_empty() {
            return Err(RejectReason::NoPending);
        }
        let by_port: Vec<usize> = (0..self.pending.len())
            .filter(|&i| self.pending[i].resolver_port == resp_dst.port)
            .collect();
        if by_port.is_empty() {
            return Err(RejectReason::PortMismatch);
        }
        let by_qname: Vec<usize> = by_port
            .into_iter()
            .filter(|&i| self.pending[i].qname == resp.qname)
            .collect();
        if by_qname.is_empty() {
            return Err(RejectReason::QnameMismatch);
        }
        let by_src: Vec<usize> = by_qname
            .into_iter()
            .filter(|&i| self.pending[i].nameserver == resp_src)
            .collect();
        if by_src.is_empty() {
            return Err(RejectReason::SourceMismatch);
        }
        let hit = by_src
            .into_iter()
            .find(|&i| self.pending[i].txid == resp.txid)
            .ok_or(RejectReason::TxidMismatch)?;
        let pending = self.pending.remove(hit);
        self.ports.release(pending.resolver_port);
        Ok(pending)
    }

    fn handle_response(
        &mut self,
        net: &mut Network,
        resp: &DnsResponse,
        src: Endpoint,
        dst: Endpoint,
    ) {
        match self.validate_response(resp, src, dst) {
            Err(reason) => {
                match reason {
                    RejectReason::NoPending => self.rejects.no_pending += 1,
                    RejectReason::TxidMismatch => self.rejects.txid_mismatch += 1,
                    RejectReason::PortMismatch => self.rejects.port_mismatch += 1,
                    RejectReason::SourceMismatch => self.rejects.source_mismatch += 1,
                    RejectReason::QnameMismatch => self.rejects.qname_mismatch += 1,
                }
                net.note(
                    src,
                    dst,
                    Proto::Dns,
                    format!("dns-reject reason={}", reason.as_str()),
                );
            }
            Ok(pending) => {
                self.accepts += 1;
                net.note(
                    src,
                    dst,
                    Proto::Dns,
                    format!(
                        "dns-accept txid={} port={} qname={}",
                        resp.txid, pending.resolver_port, resp.qname
                    ),
                );
                self.cache_insert(net, resp, pending);
            }
        }
    }

    /// Store an accepted response: the answer record under the queried name,
    /// the referral under the name-server name if it is in bailiwick. Either
    /// insert overwrites whatever was cached before. Waiters are answered,
    /// or the query is re-issued toward a newly referred name server.
    pub fn cache_insert(&mut self, net: &mut Network, resp: &DnsResponse, pending: PendingRequest) {
        if resp.rcode == Rcode::NxDomain {
            for w in pending.waiters {
                self.answer_waiter(net, w, &resp.qname, None);
            }
            return;
        }

        let mut answered = None;
        if let Some(ans) = &resp.answer {
            if ans.name == resp.qname {
                self.insert_record(net, ans);
                answered = Some(ans.addr);
            }
        }
        let mut referred = None;
        if let Some(referral) = &resp.referral {
            if in_bailiwick(&referral.name, &resp.qname) {
                self.insert_record(net, referral);
                referred = Some(referral.addr);
            } else {
                self.rejects.bailiwick += 1;
                net.note(
                    pending.nameserver,
                    self.service_endpoint(),
                    Proto::Dns,
                    format!("bailiwick-reject ns={} qname={}", referral.name, resp.qname),
                );
            }
        }

        match (answered, referred) {
            (Some(addr), _) => {
                for w in pending.waiters {
                    self.answer_waiter(net, w, &resp.qname, Some(addr));
                }
            }
            (None, Some(_)) => {
                // Referral only: chase the delegation for the same name.
                self.resolve_upstream(net, &resp.qname.clone(), pending.waiters);
            }
            (None, None) => {
                for w in pending.waiters {
                    self.answer_waiter(net, w, &resp.qname, None);
                }
            }
        }
    }

    fn insert_record(&mut self, net: &mut Network, rec: &DnsRecord) {
        net.note(
            self.service_endpoint(),
            Endpoint::new(rec.addr, 0),
            Proto::Dns,
            format!("cache-insert name={} addr={} ttl={}", rec.name, rec.addr, rec.ttl_ticks),
        );
        self.cache.insert(
            rec.name.clone(),
            CacheEntry {
                name: rec.name.clone(),
                address: rec.addr,
                ttl_ticks: rec.ttl_ticks,
                inserted_at: net.tick(),
            },
        );
    }

    fn answer_waiter(&mut self, net: &mut Network, w: Waiter, qname: &str, addr: Option<Addr>) {
        let resp = DnsResponse {
            txid: w.txid,
            rcode: if addr.is_some() {
                Rcode::NoError
            } else {
                Rcode::NxDomain
            },
            qname: qname.to_string(),
            answer: addr.map(|a| DnsRecord {
                name: qname.to_string(),
                addr: a,
                ttl_ticks: 0,
            }),
            referral: None,
        };
        let packet = Packet::new(
            self.service_endpoint(),
            w.endpoint,
            Proto::Dns,
            encode_response(&resp),
        );
        let _ = net.schedule_send(self.cfg.addr, packet);
    }
}

/// Referral acceptance rule: the referred name server must sit under the
/// queried name's parent zone. `ns.foo.com` is acceptable for a query about
/// `1$.foo.com`; `ns.evil.com` is not.
pub fn in_bailiwick(ns_name: &str, qname: &str) -> bool {
    let base = bailiwick_base(qname);
    ns_name == base || ns_name.ends_with(&format!(".{base}"))
}

fn bailiwick_base(qname: &str) -> &str {
    let labels: Vec<&str> = qname.split('.').collect();
    if labels.len() > 2 {
        qname.split_once('.').map(|(_, rest)| rest).unwrap_or(qname)
    } else {
        qname
    }
}

// ---------------------------------------------------------------------------
// Authoritative name server
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ZoneConfig {
    pub domain: String,
    pub records: BTreeMap<String, Addr>,
    /// Answer any in-zone name with this address; used by attacker-run
    /// name servers that hijack a whole domain.
    pub wildcard: Option<Addr>,
    pub record_ttl: u64,
}

pub struct NameServer {
    pub endpoint: Endpoint,
    zone: ZoneConfig,
    pub queries_seen: u64,
}

impl NameServer {
    pub fn new(endpoint: Endpoint, zone: ZoneConfig) -> Self {
        NameServer {
            endpoint,
            zone,
            queries_seen: 0,
        }
    }

    /// Build the response to a query: echo txid and qname, swap endpoints,
    /// answer from the zone table or NxDomain for unknown names.
    pub fn respond(&mut self, query: &DnsQuery) -> DnsResponse {
        self.queries_seen += 1;
        let in_zone = query.qname == self.zone.domain
            || query.qname.ends_with(&format!(".{}", self.zone.domain));
        let addr = if in_zone {
            self.zone
                .records
                .get(&query.qname)
                .copied()
                .or(self.zone.wildcard)
        } else {
            None
        };
        match addr {
            Some(a) => DnsResponse {
                txid: query.txid,
                rcode: Rcode::NoError,
                qname: query.qname.clone(),
                answer: Some(DnsRecord {
                    name: query.qname.clone(),
                    addr: a,
                    ttl_ticks: self.zone.record_ttl,
                }),
                referral: None,
            },
            None => DnsResponse {
                txid: query.txid,
                rcode: Rcode::NxDomain,
                qname: query.qname.clone(),
                answer: None,
                referral: None,
            },
        }
    }

    pub fn on_packet(&mut self, net: &mut Network, pkt: &Packet) {
        if pkt.dst != self.endpoint {
            net.note(pkt.src, pkt.dst, Proto::Dns, "ns-drop wrong-endpoint".into());
            return;
        }
        match decode(&pkt.payload) {
            Ok(DnsMessage::Query(q)) => {
                let resp = self.respond(&q);
                let packet = Packet::new(pkt.dst, pkt.src, Proto::Dns, encode_response(&resp));
                let _ = net.schedule_send(self.endpoint.addr, packet);
            }
            _ => {
                net.note(pkt.src, pkt.dst, Proto::Dns, "ns-drop not-a-query".into());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Stub client
// ---------------------------------------------------------------------------

/// One completed resolution as seen by the client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub tick: u64,
    pub qname: String,
    pub result: Option<Addr>,
}

/// The benign client: fires queries at the resolver and records what comes
/// back. This is the node the puppet script runs on.
pub struct StubClient {
    pub endpoint: Endpoint,
    resolver: Endpoint,
    rng: ChaCha8Rng,
    txid_bits: u32,
    outstanding: Vec<(u16, String)>,
    pub resolutions: Vec<Resolution>,
}

impl StubClient {
    pub fn new(endpoint: Endpoint, resolver: Endpoint, txid_bits: u32, seed: u64) -> Self {
        StubClient {
            endpoint,
            resolver,
            rng: seeded_rng(seed),
            txid_bits,
            outstanding: Vec::new(),
            resolutions: Vec::new(),
        }
    }

    pub fn resolve(&mut self, net: &mut Network, qname: &str) {
        let txid = uniform_bits(&mut self.rng, self.txid_bits) as u16;
        self.outstanding.push((txid, qname.to_string()));
        let q = DnsQuery {
            txid,
            qname: qname.to_string(),
        };
        let packet = Packet::new(self.endpoint, self.resolver, Proto::Dns, encode_query(&q));
        let _ = net.schedule_send(self.endpoint.addr, packet);
    }

    pub fn on_packet(&mut self, net: &mut Network, pkt: &Packet) {
        if let Ok(DnsMessage::Response(r)) = decode(&pkt.payload) {
            if let Some(pos) = self
                .outstanding
                .iter()
                .position(|(txid, qname)| *txid == r.txid && *qname == r.qname)
            {
                self.outstanding.remove(pos);
                self.resolutions.push(Resolution {
                    tick: net.tick(),
                    qname: r.qname.clone(),
                    result: match r.rcode {
                        Rcode::NoError => r.answer.as_ref().map(|a| a.addr),
                        Rcode::NxDomain => None,
                    },
                });
            }
        }
    }
}

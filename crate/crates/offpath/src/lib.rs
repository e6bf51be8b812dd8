//! Deterministic, seedable simulation of off-path network attacks.
//!
//! Off-path attackers cannot observe traffic between their victims, only
//! send packets with forged source addresses. The protocols under attack
//! defend themselves with challenge-response fields: DNS transaction ids and
//! source ports, TCP sequence numbers and client ports. This crate models
//! those protocols at configurable field widths, so the attacks that defeat
//! the challenges at Internet scale can be run to completion on a desktop
//! and checked against their analytic success probabilities.
//!
//! The crate is organized around a discrete-event network ([`simnet`])
//! carrying byte payloads between protocol state machines ([`dns`], [`nat`],
//! [`tcp`], [`http`]), attacker strategies composing them ([`attacks`]), and
//! a scenario/experiment layer ([`harness`]) with a thin CLI on top.
//!
//! Every run is driven by a single 64-bit seed; identical seeds produce
//! byte-identical event traces. See the `examples/` directory for one
//! runnable walkthrough per attack.

pub mod dns;
pub mod nat;
pub mod simnet;

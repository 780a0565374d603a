//! Simulated transport with explicit cost accounting.
//!
//! Nothing here moves real bytes: parties in this crate live in one process
//! and the router's job is to *meter* what a deployment would pay. Every
//! message is charged an 8-byte length-prefix frame in the byte totals, and
//! simulated time advances per round as `latency + payload_bits / bandwidth`
//! on the busiest link (links run in parallel, messages on one link
//! serialize in order).
//!
//! A *round* is a maximal batch of messages with no intervening dependency:
//! a single send from a party that already received something in the open
//! round starts a new round, while batched sends (collective openings) are
//! treated as simultaneous.

use std::collections::BTreeMap;
use std::fmt;

/// Length-prefix framing charged per message in the byte totals.
pub const FRAME_OVERHEAD_BYTES: u64 = 8;

/// Link parameters. Defaults model a 100 Mbps connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// One-way latency in seconds.
    pub latency_s: f64,
    /// Bandwidth in bits per second.
    pub bandwidth_bps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latency_s: 0.0,
            bandwidth_bps: 100e6,
        }
    }
}

impl NetConfig {
    /// Parties in one region: 20 ms one-way.
    pub fn domestic() -> Self {
        NetConfig {
            latency_s: 0.020,
            bandwidth_bps: 100e6,
        }
    }

    /// Parties across a border: 120 ms one-way.
    pub fn cross_border() -> Self {
        NetConfig {
            latency_s: 0.120,
            bandwidth_bps: 100e6,
        }
    }
}

/// Which part of the protocol a message belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    /// Buyer/owner pairwise work: share encoding, in-circuit crypto.
    TwoParty,
    /// The n-party valuation computation.
    MultiParty,
    /// Everything else (setup, settlement plumbing).
    Other,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::TwoParty => write!(f, "2pc"),
            Phase::MultiParty => write!(f, "mpc"),
            Phase::Other => write!(f, "other"),
        }
    }
}

/// Delivery estimate returned to the caller of a send.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receipt {
    pub deliver_at_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Totals {
    pub bytes: u64,
    pub messages: u64,
    pub rounds: u64,
    pub seconds: f64,
}

impl Totals {
    fn absorb(&mut self, o: &Totals) {
        self.bytes += o.bytes;
        self.messages += o.messages;
        self.rounds += o.rounds;
        self.seconds += o.seconds;
    }
}

/// Aggregated communication costs for a run or a slice of one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostStats {
    pub party_count: usize,
    /// Framed bytes sent, indexed `[from][to]`.
    pub bytes_by_pair: Vec<Vec<u64>>,
    pub total: Totals,
    pub by_phase: BTreeMap<Phase, Totals>,
    /// Keyed by (phase, op tag).
    pub by_op: BTreeMap<(Phase, &'static str), Totals>,
}

impl CostStats {
    pub fn bytes_into(&self, party: usize) -> u64 {
        self.bytes_by_pair.iter().map(|row| row[party]).sum()
    }

    pub fn bytes_from(&self, party: usize) -> u64 {
        self.bytes_by_pair[party].iter().sum()
    }

    pub fn phase_total(&self, p: Phase) -> Totals {
        self.by_phase.get(&p).copied().unwrap_or_default()
    }

    /// Fold in costs that happened concurrently with `self` (disjoint party
    /// sets running side by side): bytes add, simulated time takes the max.
    pub fn merge_parallel(&mut self, other: &CostStats) {
        let secs = self.total.seconds.max(other.total.seconds);
        self.merge_counters(other);
        self.total.seconds = secs;
    }

    /// Fold in costs that happened after `self` finished.
    pub fn merge_serial(&mut self, other: &CostStats) {
        let secs = self.total.seconds + other.total.seconds;
        self.merge_counters(other);
        self.total.seconds = secs;
    }

    fn merge_counters(&mut self, other: &CostStats) {
        let n = self.party_count.max(other.party_count);
        let mut pairs = vec![vec![0u64; n]; n];
        for (i, row) in self.bytes_by_pair.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                pairs[i][j] += b;
            }
        }
        for (i, row) in other.bytes_by_pair.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                pairs[i][j] += b;
            }
        }
        self.party_count = n;
        self.bytes_by_pair = pairs;
        self.total.bytes += other.total.bytes;
        self.total.messages += other.total.messages;
        self.total.rounds += other.total.rounds;
        for (k, v) in &other.by_phase {
            self.by_phase.entry(*k).or_default().absorb(v);
        }
        for (k, v) in &other.by_op {
            self.by_op.entry(*k).or_default().absorb(v);
        }
    }

    /// Line-delimited report: one row per (phase, op), then phase and grand
    /// totals.
    pub fn text_report(&self) -> String {
        let mut out = String::new();
        out.push_str("phase\top\tbytes\tmessages\trounds\tseconds\n");
        for ((phase, op), t) in &self.by_op {
            out.push_str(&format!(
                "{phase}\t{op}\t{}\t{}\t{}\t{:.6}\n",
                t.bytes, t.messages, t.rounds, t.seconds
            ));
        }
        for (phase, t) in &self.by_phase {
            out.push_str(&format!(
                "{phase}\t[total]\t{}\t{}\t{}\t{:.6}\n",
                t.bytes, t.messages, t.rounds, t.seconds
            ));
        }
        out.push_str(&format!(
            "all\t[total]\t{}\t{}\t{}\t{:.6}\n",
            self.total.bytes, self.total.messages, self.total.rounds, self.total.seconds
        ));
        out
    }
}

struct OpenRound {
    /// Payload bytes per (from, to) link in the open round.
    link_payload: BTreeMap<(usize, usize), u64>,
    /// Parties that received a message in the open round.
    received: Vec<bool>,
    /// Op tags seen in the open round.
    ops: Vec<&'static str>,
    phase: Phase,
    start_s: f64,
}

/// Message router for one group of parties.
pub struct Router {
    cfg: NetConfig,
    n: usize,
    phase: Phase,
    clock_s: f64,
    rounds: u64,
    messages: u64,
    bytes_by_pair: Vec<Vec<u64>>,
    by_phase: BTreeMap<Phase, Totals>,
    by_op: BTreeMap<(Phase, &'static str), Totals>,
    open: Option<OpenRound>,
}

impl Router {
    pub fn new(party_count: usize, cfg: NetConfig) -> Self {
        Router {
            cfg,
            n: party_count,
            phase: Phase::Other,
            clock_s: 0.0,
            rounds: 0,
            messages: 0,
            bytes_by_pair: vec![vec![0; party_count]; party_count],
            by_phase: BTreeMap::new(),
            by_op: BTreeMap::new(),
            open: None,
        }
    }

    pub fn party_count(&self) -> usize {
        self.n
    }

    pub fn set_phase(&mut self, phase: Phase) {
        if phase != self.phase {
            self.end_round();
            self.phase = phase;
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Route a single message. Starts a new round when the sender already
    /// received something in the open one (it depends on that data).
    pub fn route_message(
        &mut self,
        from: usize,
        to: usize,
        payload_bytes: usize,
        op: &'static str,
    ) -> Receipt {
        self.route_batch(&[(from, to, payload_bytes)], op)
    }

    /// Route a set of logically simultaneous messages (e.g. a collective
    /// opening). The batch starts a new round only if one of its *senders*
    /// depends on the open round; receives within the batch do not chain.
    pub fn route_batch(&mut self, msgs: &[(usize, usize, usize)], op: &'static str) -> Receipt {
        if msgs.is_empty() {
            return Receipt {
                deliver_at_s: self.clock_s,
            };
        }
        let depends = match &self.open {
            Some(r) => msgs.iter().any(|&(from, _, _)| r.received[from]),
            None => false,
        };
        if depends {
            self.end_round();
        }
        if self.open.is_none() {
            self.open = Some(OpenRound {
                link_payload: BTreeMap::new(),
                received: vec![false; self.n],
                ops: Vec::new(),
                phase: self.phase,
                start_s: self.clock_s,
            });
        }
        let round = self.open.as_mut().expect("round just opened");
        if !round.ops.contains(&op) {
            round.ops.push(op);
        }
        let mut deliver_at: f64 = round.start_s;
        for &(from, to, payload) in msgs {
            assert!(from < self.n && to < self.n && from != to, "bad link");
            let framed = payload as u64 + FRAME_OVERHEAD_BYTES;
            self.bytes_by_pair[from][to] += framed;
            self.messages += 1;
            let phase_t = self.by_phase.entry(self.phase).or_default();
            phase_t.bytes += framed;
            phase_t.messages += 1;
            let op_t = self.by_op.entry((self.phase, op)).or_default();
            op_t.bytes += framed;
            op_t.messages += 1;
            round.received[to] = true;
            let link = round.link_payload.entry((from, to)).or_insert(0);
            *link += payload as u64;
            // In-order per-link delivery: this message lands after everything
            // already queued on its link.
            let t = round.start_s + self.cfg.latency_s + (*link as f64) * 8.0 / self.cfg.bandwidth_bps;
            deliver_at = deliver_at.max(t);
        }
        Receipt {
            deliver_at_s: deliver_at,
        }
    }

    /// Close the open round, advancing the clock by the busiest link's
    /// `latency + payload_bits / bandwidth`.
    pub fn end_round(&mut self) {
        let Some(round) = self.open.take() else {
            return;
        };
        let busiest = round
            .link_payload
            .values()
            .map(|&b| self.cfg.latency_s + b as f64 * 8.0 / self.cfg.bandwidth_bps)
            .fold(0.0f64, f64::max);
        self.clock_s += busiest;
        self.rounds += 1;
        let phase_t = self.by_phase.entry(round.phase).or_default();
        phase_t.rounds += 1;
        phase_t.seconds += busiest;
        for op in round.ops {
            let t = self.by_op.entry((round.phase, op)).or_default();
            t.rounds += 1;
            t.seconds += busiest;
        }
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    /// Snapshot the accumulated costs (closes any open round first).
    pub fn collect_stats(&mut self) -> CostStats {
        self.end_round();
        let total = Totals {
            bytes: self.bytes_by_pair.iter().flatten().sum(),
            messages: self.messages,
            rounds: self.rounds,
            seconds: self.clock_s,
        };
        CostStats {
            party_count: self.n,
            bytes_by_pair: self.bytes_by_pair.clone(),
            total,
            by_phase: self.by_phase.clone(),
            by_op: self.by_op.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_time_at_bandwidth() {
        // 100 Mb = 12.5 MB payload at 100 Mbps, zero latency: 1.0 s.
        let mut r = Router::new(2, NetConfig::default());
        let receipt = r.route_message(0, 1, 12_500_000, "bulk");
        assert!((receipt.deliver_at_s - 1.0).abs() < 1e-9);
        r.end_round();
        assert!((r.clock_s() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_payload_costs_latency_only() {
        let mut r = Router::new(2, NetConfig::domestic());
        let receipt = r.route_message(0, 1, 0, "ping");
        assert!((receipt.deliver_at_s - 0.020).abs() < 1e-12);
        // ...but the frame still shows up in the byte totals.
        let stats = r.collect_stats();
        assert_eq!(stats.total.bytes, FRAME_OVERHEAD_BYTES);
    }

    #[test]
    fn dependent_messages_split_rounds() {
        let mut r = Router::new(3, NetConfig::default());
        r.route_message(0, 1, 16, "hop");
        r.route_message(1, 2, 16, "hop"); // 1 received, so this depends
        let stats = r.collect_stats();
        assert_eq!(stats.total.rounds, 2);

        let mut r = Router::new(4, NetConfig::default());
        r.route_message(0, 1, 16, "a");
        r.route_message(2, 3, 16, "b"); // independent senders share the round
        let stats = r.collect_stats();
        assert_eq!(stats.total.rounds, 1);
    }

    #[test]
    fn batch_is_one_round() {
        let mut r = Router::new(3, NetConfig::default());
        let msgs: Vec<(usize, usize, usize)> = (0..3)
            .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j, 8)))
            .collect();
        r.route_batch(&msgs, "open");
        let stats = r.collect_stats();
        assert_eq!(stats.total.rounds, 1);
        assert_eq!(stats.total.messages, 6);
        assert_eq!(stats.bytes_by_pair[0][1], 16);
    }

    #[test]
    fn in_order_links_serialize_within_round() {
        let mut r = Router::new(2, NetConfig::default());
        let first = r.route_message(0, 1, 12_500_000, "x");
        let second = r.route_batch(&[(0, 1, 12_500_000)], "x");
        assert!((first.deliver_at_s - 1.0).abs() < 1e-9);
        assert!((second.deliver_at_s - 2.0).abs() < 1e-9);
        r.end_round();
        assert!((r.clock_s() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn phase_totals_sum_to_run_total() {
        let mut r = Router::new(3, NetConfig::domestic());
        r.set_phase(Phase::TwoParty);
        r.route_message(0, 1, 100, "share");
        r.set_phase(Phase::MultiParty);
        r.route_message(1, 2, 50, "open");
        r.route_message(2, 0, 50, "open");
        let stats = r.collect_stats();
        let sum_bytes: u64 = stats.by_phase.values().map(|t| t.bytes).sum();
        let sum_rounds: u64 = stats.by_phase.values().map(|t| t.rounds).sum();
        let sum_secs: f64 = stats.by_phase.values().map(|t| t.seconds).sum();
        assert_eq!(sum_bytes, stats.total.bytes);
        assert_eq!(sum_rounds, stats.total.rounds);
        assert!((sum_secs - stats.total.seconds).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_serial_merges() {
        let mut a = Router::new(2, NetConfig::default());
        a.route_message(0, 1, 12_500_000, "x");
        let mut b = Router::new(2, NetConfig::default());
        b.route_message(0, 1, 25_000_000, "x");
        let mut sa = a.collect_stats();
        let sb = b.collect_stats();
        let mut sp = sa.clone();
        sp.merge_parallel(&sb);
        assert!((sp.total.seconds - 2.0).abs() < 1e-9);
        sa.merge_serial(&sb);
        assert!((sa.total.seconds - 3.0).abs() < 1e-9);
        assert_eq!(sa.total.bytes, sp.total.bytes);
    }

    #[test]
    fn report_has_one_line_per_op() {
        let mut r = Router::new(2, NetConfig::default());
        r.route_message(0, 1, 10, "alpha");
        r.end_round();
        r.route_message(1, 0, 10, "beta");
        let report = r.collect_stats().text_report();
        let lines: Vec<&str> = report.lines().collect();
        assert!(lines[0].starts_with("phase\top"));
        assert!(report.contains("alpha"));
        assert!(report.contains("beta"));
        assert!(report.contains("all\t[total]"));
    }
}

//! Packet-level bottleneck experiments: TCP and UDP senders sharing one link
//! to the victim, with either drop-tail FIFO or ACL plus DRR in front of it.

use std::collections::HashSet;

use mirage_core::hop::{derive_suffix, HopConfig, Prefix, Suffix};
use mirage_core::router::{AclTable, Packet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::client::solve_time;
use crate::config::SimRun;
use crate::event::{EventKind, EventQueue};
use crate::flow::{FlowKind, FlowState};
use crate::link::{Admit, LinkModel};
use crate::report::RunReport;

const ACL_CAPACITY: usize = 1 << 20;

#[derive(Debug)]
enum Ev {
    Start(usize),
    Arrive(Packet),
    TxDone(Packet),
    Ack { flow: usize, sent: f64, bytes: u32 },
    Loss(usize),
    UdpSend(usize),
    Solved(Side),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Honest,
    Attacker,
}

struct Net {
    q: EventQueue<Ev>,
    link: LinkModel,
    flows: Vec<FlowState>,
    /// Suffixes a UDP flow rotates over; empty for TCP.
    spray: Vec<Vec<Suffix>>,
    cursor: Vec<usize>,
    /// Flows whose packets a colluding router drops before the bottleneck.
    snooped: Vec<bool>,
    prefix: u128,
    packet_bytes: u32,
    /// Delivered bytes per flow per whole second.
    bins: Vec<Vec<u64>>,
    seconds: usize,
}

impl Net {
    fn new(link: LinkModel, prefix: u128, packet_bytes: u32, duration: f64) -> Self {
        Net {
            q: EventQueue::new(),
            link,
            flows: Vec::new(),
            spray: Vec::new(),
            cursor: Vec::new(),
            snooped: Vec::new(),
            prefix,
            packet_bytes,
            bins: Vec::new(),
            seconds: duration.ceil() as usize,
        }
    }

    fn add_flow(&mut self, f: FlowState, spray: Vec<Suffix>, snooped: bool) -> usize {
        self.flows.push(f);
        self.spray.push(spray);
        self.cursor.push(0);
        self.snooped.push(snooped);
        self.bins.push(vec![0; self.seconds]);
        self.flows.len() - 1
    }

    fn packet(&self, flow: usize, dst: Suffix) -> Packet {
        Packet::new(
            flow as u64,
            self.prefix,
            dst,
            self.packet_bytes,
            flow as u64,
            self.q.now(),
        )
        .expect("packet size validated in config")
    }

    fn try_send(&mut self, f: usize) {
        while self.flows[f].can_send() {
            self.flows[f].in_flight += 1;
            let pkt = self.packet(f, self.flows[f].dst_suffix);
            self.q.schedule_in(0.0, EventKind::PacketArrival, Ev::Arrive(pkt));
        }
    }

    fn udp_send(&mut self, f: usize) {
        let flow = &self.flows[f];
        if !flow.active || flow.rate_bps <= 0.0 {
            return;
        }
        let dst = match self.spray[f].len() {
            0 => flow.dst_suffix,
            n => {
                let s = self.spray[f][self.cursor[f] % n];
                self.cursor[f] = (self.cursor[f] + 1) % n;
                s
            }
        };
        let pkt = self.packet(f, dst);
        self.q.schedule_in(0.0, EventKind::PacketArrival, Ev::Arrive(pkt));
        let gap = f64::from(self.packet_bytes) * 8.0 / self.flows[f].rate_bps;
        self.q.schedule_in(gap, EventKind::TimerFire, Ev::UdpSend(f));
    }

    fn lost(&mut self, f: usize) {
        if self.flows[f].kind == FlowKind::TcpAimd {
            let rtt = self.flows[f].rtt_seconds;
            self.q.schedule_in(rtt, EventKind::TimerFire, Ev::Loss(f));
        }
    }

    fn start_tx(&mut self) {
        if self.link.busy {
            return;
        }
        if let Some(pkt) = self.link.next_packet() {
            self.link.busy = true;
            let t = self.link.tx_time(pkt.size_bytes);
            self.q.schedule_in(t, EventKind::TimerFire, Ev::TxDone(pkt));
        }
    }

    /// Handles transport events; returns the scenario events it does not own.
    fn handle(&mut self, ev: Ev) -> Option<Ev> {
        let now = self.q.now();
        match ev {
            Ev::Start(f) => match self.flows[f].kind {
                FlowKind::TcpAimd => self.try_send(f),
                FlowKind::UdpCbr => self.udp_send(f),
            },
            Ev::UdpSend(f) => self.udp_send(f),
            Ev::Arrive(pkt) => {
                let f = pkt.flow_id as usize;
                if self.snooped[f] {
                    self.lost(f);
                    return Some(Ev::Arrive(pkt));
                }
                match self.link.admit(pkt) {
                    Admit::Queued => self.start_tx(),
                    Admit::Filtered | Admit::Overflow => self.lost(f),
                }
            }
            Ev::TxDone(pkt) => {
                self.link.busy = false;
                let f = pkt.flow_id as usize;
                let at = now + self.link.propagation_delay_s;
                if let Some(b) = self.bins[f].get_mut(at as usize) {
                    *b += u64::from(pkt.size_bytes);
                }
                if self.flows[f].kind == FlowKind::TcpAimd {
                    let rtt = self.flows[f].rtt_seconds;
                    self.q.schedule_in(
                        rtt,
                        EventKind::TimerFire,
                        Ev::Ack {
                            flow: f,
                            sent: pkt.timestamp,
                            bytes: pkt.size_bytes,
                        },
                    );
                }
                self.start_tx();
            }
            Ev::Ack { flow, sent, bytes } => {
                self.flows[flow].on_ack(bytes, now - sent);
                self.try_send(flow);
            }
            Ev::Loss(f) => {
                self.flows[f].on_loss(now);
                self.try_send(f);
            }
            other => return Some(other),
        }
        None
    }

    fn bytes_between(&self, flows: impl Iterator<Item = usize>, from: f64, to: f64) -> u64 {
        let (a, b) = (from.max(0.0) as usize, (to.ceil() as usize).min(self.seconds));
        flows.map(|f| self.bins[f][a.min(b)..b].iter().sum::<u64>()).sum()
    }
}

fn hop_for(run: &SimRun, rng: &mut ChaCha8Rng) -> HopConfig {
    let key: [u8; 16] = rng.random();
    HopConfig::new(key, Prefix::new(0x2001_0db8_0000_0000, 64).expect("static prefix"), 1)
        .expect("static hop config")
        .with_timing(run.interval_s.max(1.0) as u64, 0)
        .expect("interval validated")
}

fn jittered_rtt(base: f64, rng: &mut ChaCha8Rng) -> f64 {
    base * (1.0 + 0.5 * rng.random::<f64>())
}

fn build_link(run: &SimRun, prefix: Prefix, allowed: &[Suffix]) -> LinkModel {
    let s = &run.simnet;
    if s.mirage {
        let acl = AclTable::new(prefix, ACL_CAPACITY)
            .acl_update(allowed.iter().copied(), [])
            .expect("ACL capacity is generous");
        LinkModel::drr(s.link_capacity_bps, s.propagation_delay_s, run.router, acl)
    } else {
        LinkModel::fifo(s.link_capacity_bps, s.propagation_delay_s, s.fifo_limit_packets)
    }
}

pub(crate) fn bandwidth_exhaustion(run: &SimRun, rng: &mut ChaCha8Rng, report: &mut RunReport) {
    let s = &run.simnet;
    let hop = hop_for(run, rng);
    let n = s.bandwidth.benign_flows as usize;
    let suffixes: Vec<Suffix> = (0..=n as u64).map(|i| derive_suffix(&hop, i, 0).value).collect();
    let link = build_link(run, hop.prefix, &suffixes);
    let mut net = Net::new(link, hop.prefix.bits, s.packet_bytes, run.duration_s);

    for &dst in &suffixes[..n] {
        let f = net.add_flow(FlowState::tcp(dst, jittered_rtt(s.base_rtt_s, rng)), Vec::new(), false);
        let start = rng.random::<f64>();
        net.q.schedule(start, EventKind::TimerFire, Ev::Start(f));
    }
    let attack_rate = s.bandwidth.attack_multiplier * s.link_capacity_bps;
    let attack = net.add_flow(FlowState::udp(suffixes[n], attack_rate), Vec::new(), false);
    net.q
        .schedule(rng.random::<f64>(), EventKind::TimerFire, Ev::Start(attack));

    while let Some(ev) = net.q.pop_until(run.duration_s) {
        net.handle(ev.payload);
    }

    for sec in 0..net.seconds {
        for f in 0..net.flows.len() {
            let id = if f == attack {
                "attack-0".to_string()
            } else {
                format!("benign-{f}")
            };
            report.push(sec as f64, id, "throughput_bps", (net.bins[f][sec] * 8) as f64);
        }
    }
    let (from, to) = (s.warmup_s.min(run.duration_s), run.duration_s);
    let span = (to - from).max(f64::MIN_POSITIVE);
    let benign = report.sum("benign", "throughput_bps", from, to) / span;
    let attack_bps = report.sum("attack", "throughput_bps", from, to) / span;
    report.summary.insert("benign_bps".into(), benign);
    report.summary.insert("attack_bps".into(), attack_bps);
    report
        .summary
        .insert("benign_fraction_of_capacity".into(), benign / s.link_capacity_bps);
}

/// Which honest flows cross a colluding router: flow `k` does iff
/// `floor((k+1)f) > floor(kf)`, so any prefix of the flows has a compromised
/// fraction within one flow of `f`.
pub fn is_compromised(k: usize, f: f64) -> bool {
    ((k as f64 + 1.0) * f + 1e-9).floor() > (k as f64 * f + 1e-9).floor()
}

pub(crate) fn compromised_routers(run: &SimRun, rng: &mut ChaCha8Rng, report: &mut RunReport) {
    let s = &run.simnet;
    let c = &s.compromised;
    let hop = hop_for(run, rng);
    let mut net = Net::new(
        build_link(run, hop.prefix, &[]),
        hop.prefix.bits,
        s.packet_bytes,
        run.duration_s,
    );
    let honest_model = crate::client::ClientModel {
        cpu_hz: c.client.cpu_hz * c.honest_compute,
        ..c.client
    };
    let attacker_model = crate::client::ClientModel {
        cpu_hz: c.client.cpu_hz * c.attacker_compute,
        ..c.client
    };

    let flood = net.add_flow(
        FlowState::udp(Suffix(0), c.attack_load * s.link_capacity_bps),
        Vec::new(),
        false,
    );
    let mut flooding = false;
    let mut honest_flows: Vec<usize> = Vec::new();
    let mut attacker_held = 0usize;
    let mut allowed: Vec<Suffix> = Vec::new();
    let mut disclosed: HashSet<Suffix> = HashSet::new();
    let mut next_slot = 0u64;

    for side in [Side::Honest, Side::Attacker] {
        let m = if side == Side::Honest {
            &honest_model
        } else {
            &attacker_model
        };
        let t = solve_time(m, c.difficulty, s.mirage, rng);
        net.q.schedule(t, EventKind::PuzzleSolved, Ev::Solved(side));
    }

    let mut held_series: Vec<(usize, usize)> = vec![(0, 0); net.seconds];
    let mut next_sample = 0usize;

    while let Some(ev) = net.q.pop_until(run.duration_s) {
        let now = net.q.now();
        while next_sample < net.seconds && (next_sample as f64) <= now {
            held_series[next_sample] = (honest_flows.len(), attacker_held);
            next_sample += 1;
        }
        let Some(ev) = net.handle(ev.payload) else { continue };
        match ev {
            Ev::Solved(side) => {
                let dst = derive_suffix(&hop, next_slot, 0).value;
                next_slot += 1;
                allowed.push(dst);
                if let Some(acl) = &net.link.acl {
                    net.link.acl = Some(acl.acl_update(allowed.iter().copied(), []).expect("ACL capacity"));
                }
                let m = match side {
                    Side::Honest => {
                        let k = honest_flows.len();
                        let snooped = is_compromised(k, c.compromised_fraction);
                        let fl = FlowState::tcp(dst, jittered_rtt(s.base_rtt_s, rng));
                        let f = net.add_flow(fl, Vec::new(), snooped);
                        honest_flows.push(f);
                        net.q.schedule_in(0.0, EventKind::TimerFire, Ev::Start(f));
                        &honest_model
                    }
                    Side::Attacker => {
                        attacker_held += 1;
                        net.spray[flood].push(dst);
                        &attacker_model
                    }
                };
                if !flooding && !net.spray[flood].is_empty() {
                    flooding = true;
                    net.q.schedule_in(0.0, EventKind::TimerFire, Ev::Start(flood));
                }
                let t = solve_time(m, c.difficulty, s.mirage, rng);
                net.q.schedule_in(t, EventKind::PuzzleSolved, Ev::Solved(side));
            }
            Ev::Arrive(pkt) => {
                // A colluding router saw this suffix; hand it to the attacker.
                if !disclosed.insert(pkt.dst_suffix) {
                    continue;
                }
                net.spray[flood].push(pkt.dst_suffix);
                if !flooding {
                    flooding = true;
                    net.q.schedule_in(0.0, EventKind::TimerFire, Ev::Start(flood));
                }
            }
            _ => {}
        }
    }
    while next_sample < net.seconds {
        held_series[next_sample] = (honest_flows.len(), attacker_held);
        next_sample += 1;
    }

    for (sec, &(honest_held, attacker_held)) in held_series.iter().enumerate().take(net.seconds) {
        let t = sec as f64;
        let honest = net.bytes_between(honest_flows.iter().copied(), t, t + 1.0);
        let attacker = net.bins[flood][sec];
        report.push(t, "honest", "throughput_bps", (honest * 8) as f64);
        report.push(t, "attacker", "throughput_bps", (attacker * 8) as f64);
        report.push(t, "honest", "held_suffixes", honest_held as f64);
        report.push(t, "attacker", "held_suffixes", attacker_held as f64);
    }
    let (from, to) = (s.warmup_s.min(run.duration_s), run.duration_s);
    let h = report.sum("honest", "throughput_bps", from, to);
    let a = report.sum("attacker", "throughput_bps", from, to);
    let share = if h + a > 0.0 { h / (h + a) } else { 0.0 };
    report.summary.insert("honest_share".into(), share);
    report.summary.insert(
        "predicted_share".into(),
        c.honest_compute * (1.0 - c.compromised_fraction) / (c.honest_compute + c.attacker_compute),
    );
    report.summary.insert("honest_held".into(), honest_flows.len() as f64);
    report.summary.insert("attacker_held".into(), attacker_held as f64);
    report.summary.insert("disclosed".into(), disclosed.len() as f64);
}

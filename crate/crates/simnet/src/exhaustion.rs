//! Hopping-address exhaustion: machines run request loops on a shared CPU and
//! compete for addresses, either through the difficulty auction or, with the
//! defense off, by plain request/reply.

use mirage_core::puzzle::{AllocatorState, PendingSolution};
use rand_chacha::ChaCha8Rng;

use crate::client::request_cycles;
use crate::config::SimRun;
use crate::event::{EventKind, EventQueue};
use crate::report::RunReport;

/// Cycles below which a job counts as finished (float residue).
const DONE_EPS: f64 = 1.0;

#[derive(Debug)]
enum Ev {
    Check { machine: usize, gen: u64 },
    Submit(usize, u8),
    Tick,
    Reply { proc: usize, granted: bool, difficulty: u8 },
    Rollover,
}

struct Proc {
    machine: usize,
    difficulty: u8,
    remaining: f64,
}

/// Processor sharing: every running job gets `cpu_hz / jobs`.
struct Machine {
    cpu_hz: f64,
    running: Vec<usize>,
    last: f64,
    gen: u64,
    held: u64,
    total: u64,
}

struct World {
    q: EventQueue<Ev>,
    procs: Vec<Proc>,
    machines: Vec<Machine>,
}

impl World {
    fn advance(&mut self, m: usize) {
        let now = self.q.now();
        let mach = &mut self.machines[m];
        if !mach.running.is_empty() {
            let per = (now - mach.last) * mach.cpu_hz / mach.running.len() as f64;
            for &p in &mach.running {
                self.procs[p].remaining -= per;
            }
        }
        mach.last = now;
    }

    fn reschedule(&mut self, m: usize) {
        let mach = &mut self.machines[m];
        mach.gen += 1;
        let Some(min) = mach
            .running
            .iter()
            .map(|&p| self.procs[p].remaining)
            .min_by(f64::total_cmp)
        else {
            return;
        };
        let dt = min.max(0.0) * mach.running.len() as f64 / mach.cpu_hz;
        let ev = Ev::Check {
            machine: m,
            gen: mach.gen,
        };
        self.q.schedule_in(dt, EventKind::PuzzleSolved, ev);
    }

    fn start_job(&mut self, p: usize, cycles: f64) {
        let m = self.procs[p].machine;
        self.advance(m);
        self.procs[p].remaining = cycles;
        self.machines[m].running.push(p);
        self.reschedule(m);
    }

    /// Jobs that have finished on machine `m`, in process order.
    fn finish(&mut self, m: usize) -> Vec<usize> {
        self.advance(m);
        let procs = &self.procs;
        let (done, running): (Vec<usize>, Vec<usize>) = self.machines[m]
            .running
            .iter()
            .partition(|&&p| procs[p].remaining <= DONE_EPS);
        self.machines[m].running = running;
        self.reschedule(m);
        done
    }
}

fn machine_id(m: usize) -> String {
    if m == 0 {
        "honest-0".into()
    } else {
        format!("attacker-{}", m - 1)
    }
}

pub(crate) fn address_exhaustion(run: &SimRun, rng: &mut ChaCha8Rng, report: &mut RunReport) {
    let s = &run.simnet;
    let a = &s.address;
    let mirage = s.mirage;
    let base_d = run.puzzle.base_difficulty;
    let model = a.client;

    let machines = 1 + a.attacker_machines as usize;
    let mut world = World {
        q: EventQueue::new(),
        procs: Vec::new(),
        machines: (0..machines)
            .map(|_| Machine {
                cpu_hz: model.cpu_hz,
                running: Vec::new(),
                last: 0.0,
                gen: 0,
                held: 0,
                total: 0,
            })
            .collect(),
    };
    let per = a.attacker_processes / a.attacker_machines;
    let extra = (a.attacker_processes % a.attacker_machines) as usize;
    for m in 0..machines {
        let n = match m {
            0 => 1,
            _ if m - 1 < extra => per + 1,
            _ => per,
        };
        for _ in 0..n {
            world.procs.push(Proc {
                machine: m,
                difficulty: base_d,
                remaining: 0.0,
            });
        }
    }
    let start = |world: &mut World, p: usize, rng: &mut ChaCha8Rng| {
        let d = world.procs[p].difficulty;
        let cycles = request_cycles(&model, d, mirage, rng);
        world.start_job(p, cycles);
    };
    for p in 0..world.procs.len() {
        start(&mut world, p, rng);
    }

    let mut alloc = AllocatorState::new(run.puzzle.bucket_capacity, run.puzzle.release_rate, 0.0);
    let mut arrivals: Vec<PendingSolution> = Vec::new();
    if mirage {
        world.q.schedule(run.puzzle.tick_s, EventKind::TimerFire, Ev::Tick);
    }
    world
        .q
        .schedule(run.interval_s, EventKind::IntervalRollover, Ev::Rollover);

    let record = |report: &mut RunReport, world: &World, t: f64| {
        for (m, mach) in world.machines.iter().enumerate() {
            report.push(t, machine_id(m), "held_suffixes", mach.held as f64);
        }
    };

    while let Some(ev) = world.q.pop_until(run.duration_s) {
        let now = world.q.now();
        match ev.payload {
            Ev::Check { machine, gen } => {
                if gen != world.machines[machine].gen {
                    continue;
                }
                for p in world.finish(machine) {
                    if mirage {
                        let d = world.procs[p].difficulty;
                        world
                            .q
                            .schedule_in(a.rtt_s / 2.0, EventKind::PacketArrival, Ev::Submit(p, d));
                    } else {
                        let ev = Ev::Reply {
                            proc: p,
                            granted: true,
                            difficulty: base_d,
                        };
                        world.q.schedule_in(a.rtt_s, EventKind::PacketArrival, ev);
                    }
                }
            }
            Ev::Submit(p, d) => arrivals.push(PendingSolution {
                requester: p as u64,
                difficulty: d,
                arrival: now,
                valid: true,
            }),
            Ev::Tick => {
                let out = alloc.step(now, std::mem::take(&mut arrivals));
                for g in out.grants {
                    let ev = Ev::Reply {
                        proc: g.requester as usize,
                        granted: true,
                        difficulty: base_d,
                    };
                    world.q.schedule_in(a.rtt_s / 2.0, EventKind::PacketArrival, ev);
                }
                for e in out.escalations {
                    let ev = Ev::Reply {
                        proc: e.requester as usize,
                        granted: false,
                        difficulty: e.new_difficulty,
                    };
                    world.q.schedule_in(a.rtt_s / 2.0, EventKind::PacketArrival, ev);
                }
                world.q.schedule_in(run.puzzle.tick_s, EventKind::TimerFire, Ev::Tick);
            }
            Ev::Reply {
                proc,
                granted,
                difficulty,
            } => {
                if granted {
                    let m = world.procs[proc].machine;
                    world.machines[m].held += 1;
                    world.machines[m].total += 1;
                }
                world.procs[proc].difficulty = difficulty;
                start(&mut world, proc, rng);
            }
            Ev::Rollover => {
                record(report, &world, now);
                for mach in &mut world.machines {
                    mach.held = 0;
                }
                world
                    .q
                    .schedule_in(run.interval_s, EventKind::IntervalRollover, Ev::Rollover);
            }
        }
    }
    // Holdings of the final, possibly partial, interval.
    let last_roll = (run.duration_s / run.interval_s).floor() * run.interval_s;
    if run.duration_s > last_roll || run.duration_s == 0.0 {
        record(report, &world, run.duration_s);
    }

    let honest = report.sum("honest", "held_suffixes", 0.0, f64::INFINITY);
    let attacker = report.sum("attacker", "held_suffixes", 0.0, f64::INFINITY);
    let per_machine = attacker / f64::from(a.attacker_machines);
    report.summary.insert("honest_grants".into(), honest);
    report.summary.insert("attacker_grants_per_machine".into(), per_machine);
    let ratio = if honest > 0.0 {
        per_machine / honest
    } else {
        f64::INFINITY
    };
    report.summary.insert("ratio".into(), ratio);
    if mirage {
        report.summary.insert("granted".into(), alloc.granted() as f64);
    }
    debug_assert_eq!(
        world.machines.iter().map(|m| m.total).sum::<u64>() as f64,
        honest + attacker
    );
}

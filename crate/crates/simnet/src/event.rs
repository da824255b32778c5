use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    PacketArrival,
    PuzzleSolved,
    TimerFire,
    IntervalRollover,
    ProbeResult,
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (time, seq).
impl<P> Ord for SimEvent<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Pending-event set ordered by `(time, seq)`.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<SimEvent<P>>,
    next_seq: u64,
    now: f64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
        }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `payload` at absolute time `time`, clamped to the present.
    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent {
            time: time.max(self.now),
            seq,
            kind,
            payload,
        });
        seq
    }

    pub fn schedule_in(&mut self, delay: f64, kind: EventKind, payload: P) -> u64 {
        self.schedule(self.now + delay, kind, payload)
    }

    /// Pops the next event at or before `horizon` and advances the clock.
    pub fn pop_until(&mut self, horizon: f64) -> Option<SimEvent<P>> {
        if self.heap.peek()?.time > horizon {
            return None;
        }
        let ev = self.heap.pop()?;
        self.now = ev.time;
        Some(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_then_seq_order() {
        let mut q = EventQueue::new();
        q.schedule(2.0, EventKind::TimerFire, "c");
        q.schedule(1.0, EventKind::TimerFire, "a");
        q.schedule(1.0, EventKind::PacketArrival, "b");
        q.schedule(5.0, EventKind::TimerFire, "late");
        let order: Vec<_> = std::iter::from_fn(|| q.pop_until(3.0).map(|e| e.payload)).collect();
        assert_eq!(order, ["a", "b", "c"]);
        assert_eq!(q.now(), 2.0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn past_times_clamp_to_now() {
        let mut q = EventQueue::new();
        q.schedule(1.0, EventKind::TimerFire, 0);
        q.pop_until(10.0);
        q.schedule(0.5, EventKind::TimerFire, 1);
        assert_eq!(q.pop_until(10.0).unwrap().time, 1.0);
    }
}

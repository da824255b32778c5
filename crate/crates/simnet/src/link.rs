use std::collections::VecDeque;

use mirage_core::router::{AclTable, DrrConfig, DrrScheduler, FilterDecision, Packet};

#[derive(Debug)]
pub enum Scheduler {
    Fifo { queue: VecDeque<Packet>, limit: usize },
    Drr(DrrScheduler),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admit {
    Queued,
    Filtered,
    Overflow,
}

/// The bottleneck toward the victim.
#[derive(Debug)]
pub struct LinkModel {
    pub capacity_bps: f64,
    pub propagation_delay_s: f64,
    pub scheduler: Scheduler,
    pub acl: Option<AclTable>,
    pub busy: bool,
}

impl LinkModel {
    pub fn fifo(capacity_bps: f64, propagation_delay_s: f64, limit: usize) -> Self {
        assert!(capacity_bps > 0.0, "link capacity must be positive");
        LinkModel {
            capacity_bps,
            propagation_delay_s,
            scheduler: Scheduler::Fifo {
                queue: VecDeque::new(),
                limit,
            },
            acl: None,
            busy: false,
        }
    }

    pub fn drr(capacity_bps: f64, propagation_delay_s: f64, cfg: DrrConfig, acl: AclTable) -> Self {
        assert!(capacity_bps > 0.0, "link capacity must be positive");
        LinkModel {
            capacity_bps,
            propagation_delay_s,
            scheduler: Scheduler::Drr(DrrScheduler::new(cfg)),
            acl: Some(acl),
            busy: false,
        }
    }

    pub fn tx_time(&self, bytes: u32) -> f64 {
        f64::from(bytes) * 8.0 / self.capacity_bps
    }

    pub fn admit(&mut self, pkt: Packet) -> Admit {
        if let Some(acl) = &self.acl {
            if acl.filter_packet(&pkt) == FilterDecision::Drop {
                return Admit::Filtered;
            }
        }
        match &mut self.scheduler {
            Scheduler::Fifo { queue, limit } => {
                if queue.len() >= *limit {
                    return Admit::Overflow;
                }
                queue.push_back(pkt);
                Admit::Queued
            }
            Scheduler::Drr(s) => {
                if s.enqueue(pkt) {
                    Admit::Queued
                } else {
                    Admit::Overflow
                }
            }
        }
    }

    pub fn next_packet(&mut self) -> Option<Packet> {
        match &mut self.scheduler {
            Scheduler::Fifo { queue, .. } => queue.pop_front(),
            Scheduler::Drr(s) => s.dequeue(),
        }
    }

    pub fn queued(&self) -> usize {
        match &self.scheduler {
            Scheduler::Fifo { queue, .. } => queue.len(),
            Scheduler::Drr(s) => s.len(),
        }
    }
}

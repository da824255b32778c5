use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

pub const CSV_HEADER: &str = "time_s,entity_id,metric,value";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub time_s: f64,
    pub entity_id: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub records: Vec<Record>,
    pub summary: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(scenario: &str, seed: u64) -> Self {
        RunReport {
            scenario: scenario.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn push(&mut self, time_s: f64, entity_id: impl Into<String>, metric: &str, value: f64) {
        self.records.push(Record {
            time_s,
            entity_id: entity_id.into(),
            metric: metric.to_string(),
            value,
        });
    }

    /// Sum of `metric` over records with `from <= time_s < to` whose entity
    /// id starts with `entity_prefix`.
    pub fn sum(&self, entity_prefix: &str, metric: &str, from: f64, to: f64) -> f64 {
        self.records
            .iter()
            .filter(|r| r.metric == metric && r.entity_id.starts_with(entity_prefix))
            .filter(|r| r.time_s >= from && r.time_s < to)
            .map(|r| r.value)
            .sum()
    }

    /// Rust's shortest round-trip float formatting is locale independent.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.time_s, r.entity_id, r.metric, r.value);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let mut r = RunReport::new("x", 1);
        assert_eq!(r.to_csv(), "time_s,entity_id,metric,value\n");
        r.push(1.0, "benign-0", "throughput_bps", 1234567.5);
        r.push(2.0, "attack-0", "throughput_bps", 1e-7);
        assert_eq!(
            r.to_csv(),
            "time_s,entity_id,metric,value\n1,benign-0,throughput_bps,1234567.5\n2,attack-0,throughput_bps,0.0000001\n"
        );
        assert_eq!(r.sum("benign", "throughput_bps", 0.0, 5.0), 1234567.5);
        assert_eq!(r.sum("", "throughput_bps", 2.0, 3.0), 1e-7);
    }
}

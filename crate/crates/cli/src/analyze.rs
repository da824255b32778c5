use std::path::PathBuf;

use clap::Subcommand;
use mirage_core::analysis::{
    attack_cost, brute_force_success, default_share_grid, fair_share, scan_fraction, AnalysisError, CostModel,
};
use mirage_core::topology::{compute_pushback, parse_topology};

use crate::CliError;

#[derive(Subcommand)]
pub enum Analyze {
    /// Fraction of the suffix space a botnet scans in one interval.
    Scan {
        #[arg(long)]
        bots: u64,
        #[arg(long)]
        probe_rate_bps: f64,
        #[arg(long, default_value_t = 512.0)]
        probe_size_bits: f64,
        #[arg(long, default_value_t = 300.0)]
        interval_s: f64,
        #[arg(long, default_value_t = 64)]
        suffix_bits: u32,
    },
    /// Success chance of a random guess against the active set.
    Bruteforce {
        #[arg(long)]
        size: u64,
        #[arg(long, default_value_t = 64)]
        suffix_bits: u32,
    },
    /// Bandwidth shares under per-computation fairness.
    #[command(allow_negative_numbers = true)]
    Fairshare {
        #[arg(long)]
        ch: f64,
        #[arg(long)]
        ca: f64,
        #[arg(short, long, default_value_t = 0.0)]
        f: f64,
    },
    /// Hourly attack cost with and without hopping, as CSV.
    Cost {
        /// Single desired share; omit for the default grid.
        #[arg(long)]
        x: Option<f64>,
        #[arg(long, default_value_t = CostModel::default().price_compute_per_unit_hour)]
        price_compute: f64,
        #[arg(long, default_value_t = CostModel::default().price_transfer_per_gb)]
        price_transfer: f64,
        #[arg(long, default_value_t = CostModel::default().victim_capacity_bps)]
        victim_bps: f64,
        #[arg(long, default_value_t = CostModel::default().honest_compute_units)]
        honest_compute: f64,
        #[arg(long, default_value_t = CostModel::default().legit_offered_load_bps)]
        legit_load_bps: f64,
    },
    /// Nearest links that can absorb an attack of the given size.
    Pushback {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        attack_gbps: f64,
    },
}

fn domain(e: AnalysisError) -> CliError {
    CliError::Config(e.to_string())
}

pub fn run(cmd: Analyze) -> Result<(), CliError> {
    match cmd {
        Analyze::Scan {
            bots,
            probe_rate_bps,
            probe_size_bits,
            interval_s,
            suffix_bits,
        } => {
            check_bits(suffix_bits)?;
            let f = scan_fraction(bots, probe_rate_bps, probe_size_bits, interval_s, suffix_bits).map_err(domain)?;
            println!("scan_fraction {f:.3e}");
            if f > 0.0 {
                println!("log2 {:.2}", f.log2());
            }
        }
        Analyze::Bruteforce { size, suffix_bits } => {
            check_bits(suffix_bits)?;
            println!("{:.3e}", brute_force_success(size, suffix_bits));
        }
        Analyze::Fairshare { ch, ca, f } => {
            let s = fair_share(ch, ca, f).map_err(domain)?;
            println!("honest_share {}", s.honest);
            println!("attacker_share {}", s.attacker);
        }
        Analyze::Cost {
            x,
            price_compute,
            price_transfer,
            victim_bps,
            honest_compute,
            legit_load_bps,
        } => {
            let model = CostModel {
                price_compute_per_unit_hour: price_compute,
                price_transfer_per_gb: price_transfer,
                victim_capacity_bps: victim_bps,
                honest_compute_units: honest_compute,
                legit_offered_load_bps: legit_load_bps,
            };
            let grid = x.map_or_else(default_share_grid, |x| vec![x]);
            println!("x,without_mirage,with_mirage,ratio");
            for x in grid {
                let c = attack_cost(&model, x).map_err(domain)?;
                println!(
                    "{x},{},{},{}",
                    c.without_mirage,
                    c.with_mirage,
                    c.with_mirage / c.without_mirage
                );
            }
        }
        Analyze::Pushback { topology, attack_gbps } => {
            if !(attack_gbps.is_finite() && attack_gbps >= 0.0) {
                return Err(CliError::Config("attack-gbps must be finite and non-negative".into()));
            }
            let text =
                std::fs::read_to_string(&topology).map_err(|e| CliError::Io(format!("{}: {e}", topology.display())))?;
            let map = parse_topology(&text).map_err(|e| CliError::Config(format!("{}: {e}", topology.display())))?;
            let r = compute_pushback(&map, attack_gbps * 1e9);
            let links: Vec<&str> = r.links.iter().map(String::as_str).collect();
            println!(
                "pushback_links {}",
                if links.is_empty() { "-".into() } else { links.join(",") }
            );
            println!("mean_router_hops {}", r.weighted_mean_router_hops);
            println!("mean_as_hops {}", r.weighted_mean_as_hops);
            println!("filtered_fraction {}", r.filtered_fraction());
            for (link, w) in &r.weights {
                println!("weight {link} {w}");
            }
        }
    }
    Ok(())
}

fn check_bits(bits: u32) -> Result<(), CliError> {
    if (1..=120).contains(&bits) {
        Ok(())
    } else {
        Err(CliError::Config(format!("suffix-bits {bits} outside [1, 120]")))
    }
}

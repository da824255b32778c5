use std::collections::BTreeSet;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Subcommand, ValueEnum};
use mirage_services::dns::DnsService;
use mirage_services::{
    coverage_gaps, run_live_session, spawn_server, victim_batch, Auction, ClientDriver, Clock, DnsConfig, DnsState,
    DriverConfig, PuzzleServerState, SelfService, ServiceError, ServicesParams, SystemClock,
};
use mirage_simnet::PuzzleParams;
use serde::{Deserialize, Serialize};

use crate::config::HopBlock;
use crate::CliError;

/// Hop, puzzle and services blocks, as in a scenario config.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub hop: HopBlock,
    pub puzzle: PuzzleParams,
    pub services: ServicesParams,
}

fn load(path: &Option<PathBuf>) -> Result<ServeConfig, CliError> {
    let Some(path) = path else {
        return Ok(ServeConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let cfg: ServeConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.services.validate()?;
    Ok(cfg)
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    SelfService,
    Auction,
}

#[derive(Args)]
pub struct Listen {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// 0 picks a free port; the bound address is printed.
    #[arg(long, default_value_t = 0)]
    port: u16,
}

#[derive(Subcommand)]
pub enum Serve {
    /// Failover resolver probing the victim.
    Dns {
        #[command(flatten)]
        listen: Listen,
        /// Victim address probed with TCP connects and returned while healthy.
        #[arg(long)]
        victim: String,
        /// Address returned while the victim is unreachable.
        #[arg(long)]
        puzzle_server: String,
        #[arg(long, default_value_t = DnsConfig::default().ttl_seconds)]
        ttl: u64,
        #[arg(long, default_value_t = DnsConfig::default().probe_period_ms)]
        probe_ms: u64,
        #[arg(long, default_value_t = DnsConfig::default().fail_threshold)]
        fail_threshold: u32,
        #[arg(long, default_value_t = DnsConfig::default().recover_threshold)]
        recover_threshold: u32,
    },
    /// Puzzle distribution server.
    Puzzle {
        #[command(flatten)]
        listen: Listen,
        #[arg(long, value_enum, default_value = "self-service")]
        mode: Mode,
        /// JSON with optional hop, puzzle and services blocks.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
pub struct ClientArgs {
    /// Resolver address.
    #[arg(long)]
    dns: String,
    #[arg(long)]
    duration_s: f64,
    #[arg(long, default_value_t = 0)]
    requester: u64,
    /// Same format as `serve puzzle --config`; only hop timing and backoff are used.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn bind(l: &Listen) -> Result<TcpListener, CliError> {
    let addr = format!("{}:{}", l.host, l.port);
    TcpListener::bind(&addr).map_err(|e| CliError::Io(format!("cannot bind {addr}: {e}")))
}

fn term_flag() -> Result<Arc<AtomicBool>, CliError> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, flag.clone()).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(flag)
}

fn announce(addr: SocketAddr) {
    use std::io::Write;
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
}

fn probe(victim: &str, timeout: Duration) -> bool {
    victim
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .is_some_and(|a| TcpStream::connect_timeout(&a, timeout).is_ok())
}

pub fn run(cmd: Serve) -> Result<(), CliError> {
    let term = term_flag()?;
    let clock = Arc::new(SystemClock);
    match cmd {
        Serve::Dns {
            listen,
            victim,
            puzzle_server,
            ttl,
            probe_ms,
            fail_threshold,
            recover_threshold,
        } => {
            if probe_ms == 0 || fail_threshold == 0 || recover_threshold == 0 {
                return Err(CliError::Config("probe period and thresholds must be positive".into()));
            }
            let cfg = DnsConfig {
                ttl_seconds: ttl,
                fail_threshold,
                recover_threshold,
                probe_period_ms: probe_ms,
            };
            let listener = bind(&listen)?;
            let timeout = Duration::from_millis(probe_ms.min(1000));
            let target = victim.clone();
            let service = DnsService::new(DnsState::new(victim, puzzle_server, cfg), move || {
                Some(probe(&target, timeout))
            });
            let handle = spawn_server(listener, service, clock).map_err(|e| CliError::Io(e.to_string()))?;
            announce(handle.addr());
            while !term.load(Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(50));
            }
            let st = handle.stop();
            log::info!("dns stopped in {:?} mode, record {}", st.state.mode, st.state.record());
        }
        Serve::Puzzle {
            listen,
            mode,
            config,
            seed,
        } => {
            let cfg = load(&config)?;
            let hop = cfg.hop.to_config()?;
            let state = match mode {
                Mode::SelfService => PuzzleServerState::SelfService(SelfService::new(hop.interval_seconds)),
                Mode::Auction => {
                    PuzzleServerState::Auction(Box::new(Auction::new(hop.clone(), cfg.puzzle, clock.now(), seed)))
                }
            };
            let listener = bind(&listen)?;
            let handle = spawn_server(listener, state, clock.clone()).map_err(|e| CliError::Io(e.to_string()))?;
            announce(handle.addr());
            // In self-service mode this loop plays the victim: it alone holds
            // the key and uploads each interval's batch ahead of time.
            let mut uploaded = BTreeSet::new();
            while !term.load(Ordering::Relaxed) {
                if let Mode::SelfService = mode {
                    let t = hop.interval_at(clock.now() as u64);
                    for t in [t, t + 1] {
                        if uploaded.insert(t) {
                            let batch =
                                victim_batch(&hop, t, cfg.services.difficulty, cfg.services.batch_size, seed ^ t)
                                    .map_err(|e| CliError::Config(e.to_string()))?;
                            handle.control(move |s: &mut PuzzleServerState| s.upload(batch));
                        }
                    }
                }
                std::thread::sleep(Duration::from_millis(50));
            }
            let st = handle.stop();
            match st {
                PuzzleServerState::SelfService(s) => {
                    let t = hop.interval_at(clock.now() as u64);
                    log::info!("puzzle server stopped; {} puzzles left this interval", s.remaining(t));
                }
                PuzzleServerState::Auction(a) => log::info!("puzzle server stopped after {} grants", a.grants_sent()),
            }
        }
    }
    Ok(())
}

pub fn client(args: ClientArgs) -> Result<(), CliError> {
    if !(args.duration_s.is_finite() && args.duration_s > 0.0) {
        return Err(CliError::Config("duration-s must be positive".into()));
    }
    let cfg = load(&args.config)?;
    let hop = cfg.hop.to_config()?;
    let clock = SystemClock;
    let start = clock.now();
    let mut driver = ClientDriver::new(DriverConfig {
        requester: args.requester,
        interval_seconds: hop.interval_seconds,
        grace_seconds: hop.grace_seconds,
        backoff_base_s: cfg.services.backoff_base_s,
        backoff_cap_s: cfg.services.backoff_cap_s,
        ..DriverConfig::default()
    });
    let end = start + args.duration_s;
    run_live_session(&mut driver, &args.dns, &clock, end).map_err(|e| match e {
        ServiceError::Io(m) => CliError::Io(m),
        other => CliError::Config(other.to_string()),
    })?;
    let held = driver.history();
    let intervals: BTreeSet<u64> = held.iter().map(|h| h.interval).collect();
    println!("acquired {}", held.len());
    println!("intervals {}", intervals.len());
    if let Some(first) = held.first() {
        let gap = coverage_gaps(held, hop.interval_seconds, hop.grace_seconds, first.acquired_at, end)
            .iter()
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max);
        println!("max_gap_s {gap:.3}");
    }
    Ok(())
}

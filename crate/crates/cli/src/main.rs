use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use leasewire::harness::{demo_split, metrics_line, total_line, ClientMode, RunMetrics, Scenario, Simulation};
use leasewire::sim::{trace_hash, SimDuration};

#[derive(Parser)]
#[command(name = "leasewire", version, about = "Run lease-resolved RPC scenarios in simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print one metrics line per trial plus a TOTAL line.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Seed of the first trial; trial i uses seed+i. Defaults to the file's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        trials: u64,
        /// Write the trace here (FILE.<trial> when running several trials).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Exit 1 if any acknowledged put was lost.
        #[arg(long)]
        assert_no_loss: bool,
        /// Override the file's client mode.
        #[arg(long, value_enum)]
        client: Option<Mode>,
    },
    /// Canned stories.
    Demo {
        #[arg(value_enum)]
        which: Demo,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Naive,
    Library,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    /// A put races a tablet split and is retried into the right child.
    Split,
}

const TTL_ENV: &str = "LEASEWIRE_DEFAULT_TTL";

fn default_ttl() -> Result<Option<SimDuration>, String> {
    match std::env::var(TTL_ENV) {
        Ok(v) => {
            let secs: f64 = v.trim().parse().map_err(|_| format!("{TTL_ENV}: not a number: {v}"))?;
            let ttl = SimDuration::from_secs_f64(secs).map_err(|e| format!("{TTL_ENV}: {e}"))?;
            if ttl.is_zero() {
                return Err(format!("{TTL_ENV} must be positive"));
            }
            Ok(Some(ttl))
        }
        Err(_) => Ok(None),
    }
}

fn load(path: &Path) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed = match default_ttl()? {
        Some(ttl) => Scenario::parse_with_default_ttl(&text, ttl),
        None => Scenario::parse(&text),
    };
    parsed.map_err(|e| format!("{}: {e}", path.display()))
}

fn trace_path(base: &Path, trial: u64, trials: u64) -> PathBuf {
    if trials == 1 {
        base.to_path_buf()
    } else {
        let mut name = base.as_os_str().to_owned();
        name.push(format!(".{trial}"));
        PathBuf::from(name)
    }
}

fn run(
    scenario: &Path,
    seed: Option<u64>,
    trials: u64,
    trace: Option<&Path>,
    assert_no_loss: bool,
    client: Option<Mode>,
) -> Result<ExitCode, String> {
    let mut base = load(scenario)?;
    if let Some(mode) = client {
        base = base.with_client_mode(match mode {
            Mode::Naive => ClientMode::Naive,
            Mode::Library => ClientMode::Library,
        });
    }
    let first = seed.unwrap_or(base.seed);
    let mut total = RunMetrics::default();
    for trial in 0..trials {
        let seed = first.wrapping_add(trial);
        let s = base.clone().with_seed(seed);
        let (metrics, trace_log) = Simulation::run(&s).into_parts();
        println!("{}", metrics_line(trial, seed, s.client_mode, &metrics, &trace_log));
        if let Some(path) = trace {
            let path = trace_path(path, trial, trials);
            std::fs::write(&path, trace_log.render()).map_err(|e| format!("{}: {e}", path.display()))?;
            eprintln!("trace {} hash={:#018x}", path.display(), trace_hash(&trace_log));
        }
        total.add(&metrics);
    }
    println!("{}", total_line(trials, &total));
    Ok(if assert_no_loss && total.ops_lost > 0 {
        eprintln!("lost {} acknowledged put(s)", total.ops_lost);
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn demo(which: Demo) -> ExitCode {
    match which {
        Demo::Split => {
            let sim = demo_split();
            print!("{}", sim.trace().render());
            println!("# not-owner retries: {}", sim.not_owner_retries);
            for (key, value) in sim.last_acked_puts() {
                let held = sim.world.read_owned(&key);
                let (tablet, held) = held.unwrap_or_else(|| ("-".into(), None));
                println!(
                    "# key {} acked {} -> tablet {} holds {}",
                    String::from_utf8_lossy(&key),
                    String::from_utf8_lossy(&value),
                    tablet,
                    held.map_or("nothing".into(), |v| String::from_utf8_lossy(&v).into_owned())
                );
            }
            println!("# {}", sim.metrics);
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            trials,
            trace,
            assert_no_loss,
            client,
        } => run(&scenario, seed, trials, trace.as_deref(), assert_no_loss, client),
        Command::Demo { which } => Ok(demo(which)),
    };
    result.unwrap_or_else(|e| {
        eprintln!("leasewire: {e}");
        ExitCode::from(2)
    })
}

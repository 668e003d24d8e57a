use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use uchain::{ScenarioConfig, Variant, World};
use uchain_cli::{calibrate_file, output_dir, plan, run_batch, summarize, summary_table, write_artifacts, OUT_ENV};
use uchain_telemetry::{Interactive, DEFAULT_PORT, WS_PATH};

#[derive(Parser)]
#[command(name = "uchain", version, about = "Relay-chain simulator for UAVs in tunnels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (bundled name or TOML path).
    Run {
        config: String,
        /// Base seed; replicate i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Only this variant (T0, T5 or K).
        #[arg(long)]
        variant: Option<Variant>,
        /// Output root (default: $UCHAIN_OUT, else ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run one world in real time and serve telemetry.
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Wall-clock length of a decision tick with --serve.
        #[arg(long, default_value_t = 200)]
        tick_ms: u64,
    },
    /// Fit the Kalman control gain from a log.
    CalibrateA {
        log: PathBuf,
        /// Link to fit in an event log, as `head-base` ids (default: the first).
        #[arg(long)]
        link: Option<String>,
    },
    /// List bundled environments and scenarios.
    ListEnvs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uchain: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            seed,
            replicates,
            variant,
            out,
            serve,
            port,
            tick_ms,
        } => {
            let cfg = ScenarioConfig::resolve(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let replicates = replicates.unwrap_or(cfg.replicates);
            if replicates == 0 {
                bail!("--replicates must be >= 1");
            }
            let dir = output_dir(out.as_deref(), std::env::var(OUT_ENV).ok().as_deref(), &cfg.name);
            if serve {
                return serve_run(&cfg, variant, seed, port, tick_ms, &dir);
            }
            let jobs = plan(&cfg, variant, seed, replicates);
            let records = run_batch(&cfg, &jobs)?;
            let rows = summarize(&records);
            write_artifacts(&dir, &records, &rows).with_context(|| format!("writing {}", dir.display()))?;
            print!("{}", summary_table(&rows));
            for r in &records {
                for f in &r.output.metrics.faults {
                    println!(
                        "fault: {} {} seed {} tick {} agent {}: {}",
                        r.job.environment, r.job.variant, r.job.seed, f.tick, f.agent, f.kind
                    );
                }
            }
            println!("artifacts in {}", dir.display());
            Ok(())
        }
        Command::CalibrateA { log, link } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let fit = calibrate_file(&text, link.as_deref()).with_context(|| log.display().to_string())?;
            println!("A = {:.6}", fit.a);
            println!("residual_rms = {:.6}", fit.residual_rms);
            println!("samples = {}", fit.samples);
            Ok(())
        }
        Command::ListEnvs => {
            println!("environments:");
            for name in uchain::maps::bundled_names() {
                println!("  {name}");
            }
            println!("scenarios:");
            for name in ScenarioConfig::bundled_names() {
                println!("  {name}");
            }
            Ok(())
        }
    }
}

fn serve_run(
    cfg: &ScenarioConfig,
    variant: Option<Variant>,
    seed: u64,
    port: u16,
    tick_ms: u64,
    dir: &std::path::Path,
) -> Result<()> {
    let variant = variant.or(cfg.variants.first().copied()).unwrap_or(Variant::K);
    let env = cfg.environment_names()[0].clone();
    let world = World::new(&cfg.on_environment(&env), variant, seed)?;
    let mut sim = Interactive::bind(world, ("0.0.0.0", port)).with_context(|| format!("binding port {port}"))?;
    println!(
        "telemetry on ws://{}{WS_PATH}; running {:.0} s of sim time",
        sim.server().local_addr(),
        cfg.horizon_s
    );
    sim.run(Duration::from_millis(tick_ms), cfg.horizon_s);
    let world = sim.into_world();
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("interactive-{variant}-seed-{seed}.csv"));
    std::fs::write(&path, world.event_log())?;
    println!("event log in {}", path.display());
    Ok(())
}

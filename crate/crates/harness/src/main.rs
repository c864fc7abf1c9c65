use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use skyharvest::channel::fit_logistic;
use skyharvest::citygen::{sample_los_probability, CityParams};
use skyharvest::offline::OfflineSolution;
use skyharvest::online::Policy;
use skyharvest_harness::config::{channel_params, ExperimentConfig, Scheme};
use skyharvest_harness::experiment::{fly, layout_for, offline_design, realize_city, run_monte_carlo};
use skyharvest_harness::plots::plot_data;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "skyharvest", version, about = "Offline/online UAV data-collection design and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "SKYHARVEST_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-trace random cities and fit the logistic LoS model.
    FitChannel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        cities: usize,
    },
    /// Design one offline path and write it as JSON.
    Offline {
        #[command(flatten)]
        common: Common,
        /// Experiment config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// PLB, LB or PLLA.
        #[arg(long, default_value = "PLB")]
        scheme: Scheme,
        /// Flight duration, s; first configured duration when omitted.
        #[arg(long)]
        duration: Option<f64>,
        /// Number of sensors; first configured count when omitted.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Fly a stored offline path in one city and write the per-segment trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value = "JA")]
        policy: Policy,
        /// Seed of the city realization.
        #[arg(long, default_value_t = 0)]
        city_seed: u64,
    },
    /// Monte-Carlo evaluation of every configured scheme.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-figure CSV series from an `evaluate` output directory.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Directory written by `evaluate`.
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitChannel { common, cities } => {
            std::fs::create_dir_all(&common.out)?;
            let table = sample_los_probability(&CityParams::sweep_default(), cities, common.seed.unwrap_or(7))?;
            let fit = fit_logistic(&table)?;
            table.write_csv(std::fs::File::create(common.out.join("los_samples.csv"))?)?;
            std::fs::write(common.out.join("channel_fit.json"), serde_json::to_string_pretty(&fit)?)?;
            let m = fit.model;
            println!("B1 {} B2 {} B3 {} B4 {} R2 {:.5}", m.b1, m.b2, m.b3, m.b4, fit.r_squared);
        }
        Command::Offline { common, config, scheme, duration, k } => {
            ensure!(matches!(scheme, Scheme::Plb | Scheme::Lb | Scheme::Plla), "offline designs exist for PLB, LB and PLLA only");
            let cfg = load_config(config.as_deref(), common.seed)?;
            let k = k.unwrap_or(cfg.sensor_counts[0]);
            let duration = duration.unwrap_or(cfg.durations[0]);
            let (model, _) = cfg.resolve_los_model()?;
            let sensors = layout_for(&cfg, k)?;
            let sol = offline_design(scheme, &cfg, k, duration, &sensors, &channel_params(model, k))?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join(format!("{scheme}_k{k}_t{duration}.json"));
            std::fs::write(&path, sol.to_json()?)?;
            println!("eta {} after {} iterations -> {}", sol.eta, sol.iterations, path.display());
        }
        Command::Simulate { common, config, solution, policy, city_seed } => {
            let cfg = load_config(config.as_deref(), common.seed)?;
            let text = std::fs::read_to_string(&solution).with_context(|| format!("reading {}", solution.display()))?;
            let sol = OfflineSolution::from_json(&text)?;
            let (model, _) = cfg.resolve_los_model()?;
            let params = channel_params(model, sol.sensors.len());
            let city = realize_city(&cfg, city_seed, &sol.sensors)?;
            let episode = fly(&sol, &city, &params, policy, &cfg, city_seed)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join(format!("trace_{policy}_city{city_seed}.csv"));
            episode.write_csv(std::fs::File::create(&path)?)?;
            println!("{policy} min-rate {} -> {}", episode.min_rate, path.display());
        }
        Command::Evaluate { common, config } => {
            let cfg = load_config(Some(&config), common.seed)?;
            let exp = run_monte_carlo(&cfg)?;
            exp.write(&common.out)?;
            for a in exp.summary().aggregates {
                println!("{:<6} K={} T0={:<5} mean {:.4} ± {:.4} (n={})", a.scheme, a.k, a.duration, a.mean, a.stderr, a.n);
            }
        }
        Command::PlotData { common, run } => {
            for p in plot_data(&run, &common.out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregate::{damped_fixed_point, steady_state_flows, DEFAULT_DAMPING};
use crate::chain::KarmaChain;
use crate::csvio::{chain_csv, landscape_csv, to_json, trace_csv, write_file};
use crate::design::design_prices;
use crate::error::{Error, Result};
use crate::landscape::decision_landscape;
use crate::optimum::{solve_system_optimum, OptimumResult, DEFAULT_TOL};
use crate::response::PriceVector;
use crate::scenario::{load_scenario, parse_scenario, Scenario, PAPER_SEC6};
use crate::sim::run_simulation;

#[derive(Debug, Parser)]
#[command(name = "karma", version, about = "Karma-priced routing on parallel-arc networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario TOML file; the bundled five-arc scenario if omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Master seed; overrides the scenario's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; results go to stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct PriceArg {
    /// Comma-separated integer prices, e.g. 79,63,39,13,-45.
    #[arg(long, allow_hyphen_values = true)]
    pub prices: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// System-optimal flows.
    Optimum {
        #[command(flatten)]
        common: Common,
    },
    /// Price design by genetic search.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Day-by-day agent simulation; writes a CSV trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prices: PriceArg,
        /// Number of days; overrides the scenario.
        #[arg(long)]
        days: Option<usize>,
        /// Number of agents; overrides the scenario.
        #[arg(long)]
        agents: Option<usize>,
    },
    /// Steady-state aggregate flows at the optimal flows.
    Aggregate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prices: PriceArg,
        /// Initial Karma; defaults to the scenario's or the largest price.
        #[arg(long)]
        k0: Option<i64>,
        /// Iterate to a self-consistent flow instead of evaluating at the optimum.
        #[arg(long)]
        fixed_point: bool,
    },
    /// Karma Markov chain of one reference level at the optimal flows.
    Chain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prices: PriceArg,
        #[arg(long)]
        k0: Option<i64>,
        #[arg(long, default_value_t = 0)]
        kref: i64,
    },
    /// Arc choice over a (Karma, sensitivity) grid at the optimal flows.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prices: PriceArg,
        #[arg(long, default_value_t = 0)]
        kref: i64,
        /// Points per axis.
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
    /// Optimum, design and simulation with the designed prices, plus a manifest.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
}

struct Loaded {
    scenario: Scenario,
    /// Text the scenario was parsed from, for hashing.
    text: String,
    origin: String,
    seed: u64,
}

fn load(common: &Common) -> Result<Loaded> {
    let (scenario, text, origin) = match &common.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            (load_scenario(path)?, text, path.display().to_string())
        }
        None => (
            parse_scenario(PAPER_SEC6, "paper_sec6")?,
            PAPER_SEC6.to_string(),
            "paper_sec6 (bundled)".to_string(),
        ),
    };
    let seed = common.seed.unwrap_or(scenario.seed);
    Ok(Loaded {
        scenario,
        text,
        origin,
        seed,
    })
}

fn prices(arg: &PriceArg, s: &Scenario) -> Result<PriceVector> {
    let p = match &arg.prices {
        Some(text) => PriceVector::parse(text)?,
        None => s
            .default_prices()
            .ok_or_else(|| Error::invalid("no --prices given and the scenario sets none"))?,
    };
    if p.len() != s.network.n() {
        return Err(Error::invalid(format!(
            "prices: {} entries for {} arcs",
            p.len(),
            s.network.n()
        )));
    }
    Ok(p)
}

fn optimum(s: &Scenario) -> Result<OptimumResult> {
    solve_system_optimum(&s.network, s.population.p_go(), DEFAULT_TOL)
}

/// Writes `contents` to `<out>/<name>` or prints it.
fn emit(out: Option<&Path>, name: &str, contents: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_file(&dir.join(name), contents)
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: String,
    scenario: String,
    scenario_sha256: String,
    seed: u64,
    designed_prices: PriceVector,
    outputs: Vec<ManifestEntry>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimum { common } => {
            let l = load(&common)?;
            emit(common.out.as_deref(), "optimum.json", &to_json(&optimum(&l.scenario)?)?)
        }
        Command::Design { common } => {
            let l = load(&common)?;
            let s = &l.scenario;
            let opt = optimum(s)?;
            let res = design_prices(&s.network, &opt.x_star, &opt.x_star_quant, &s.population, &s.design_config(l.seed))?;
            emit(common.out.as_deref(), "design.json", &to_json(&res)?)
        }
        Command::Simulate {
            common,
            prices: parg,
            days,
            agents,
        } => {
            let l = load(&common)?;
            let s = &l.scenario;
            let p = prices(&parg, s)?;
            let mut cfg = s.sim.clone();
            cfg.days = days.unwrap_or(cfg.days);
            cfg.agents = agents.unwrap_or(cfg.agents);
            let opt = optimum(s)?;
            let trace = run_simulation(&s.network, &s.population, &opt.x_star, &p, &cfg, l.seed)?;
            emit(common.out.as_deref(), "trace.csv", &trace_csv(&trace)?)
        }
        Command::Aggregate {
            common,
            prices: parg,
            k0,
            fixed_point,
        } => {
            let l = load(&common)?;
            let s = &l.scenario;
            let p = prices(&parg, s)?;
            let k0 = k0.or(s.k0);
            let opt = optimum(s)?;
            let json = if fixed_point {
                to_json(&damped_fixed_point(&p, &s.network, &s.population, k0, &opt.x_star, DEFAULT_DAMPING, 1e-9, 10_000)?)?
            } else {
                to_json(&steady_state_flows(&p, &opt.x_star, &s.network, &s.population, k0)?)?
            };
            emit(common.out.as_deref(), "aggregate.json", &json)
        }
        Command::Chain {
            common,
            prices: parg,
            k0,
            kref,
        } => {
            let l = load(&common)?;
            let s = &l.scenario;
            let p = prices(&parg, s)?;
            let k0 = k0.or(s.k0).unwrap_or(PriceVector::max(&p));
            let opt = optimum(s)?;
            let chain = KarmaChain::from_flows(k0, kref, &p, &opt.x_star, &s.network, &s.population)?;
            emit(common.out.as_deref(), "chain.csv", &chain_csv(&chain)?)
        }
        Command::Landscape {
            common,
            prices: parg,
            kref,
            grid,
        } => {
            let l = load(&common)?;
            let s = &l.scenario;
            let p = prices(&parg, s)?;
            let opt = optimum(s)?;
            let d = s.network.discomfort(&opt.x_star)?;
            let sens = s.population.sensitivity.bounds();
            let points = decision_landscape(&d, &p, kref, s.population.horizon, &sens, grid, grid)?;
            emit(common.out.as_deref(), "landscape.csv", &landscape_csv(&points)?)
        }
        Command::RunAll { common } => {
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::invalid("run-all needs --out"))?;
            let l = load(&common)?;
            let s = &l.scenario;
            let opt = optimum(s)?;
            let design = design_prices(&s.network, &opt.x_star, &opt.x_star_quant, &s.population, &s.design_config(l.seed))?;
            let trace = run_simulation(&s.network, &s.population, &opt.x_star, &design.p_star, &s.sim, l.seed)?;
            let files = [
                ("optimum.json", to_json(&opt)?),
                ("design.json", to_json(&design)?),
                ("trace.csv", trace_csv(&trace)?),
            ];
            let mut outputs = Vec::new();
            for (name, text) in &files {
                emit(Some(&out), name, text)?;
                outputs.push(ManifestEntry {
                    file: name.to_string(),
                    sha256: sha256_hex(text.as_bytes()),
                });
            }
            let manifest = Manifest {
                tool: format!("karma {}", env!("CARGO_PKG_VERSION")),
                scenario: l.origin,
                scenario_sha256: sha256_hex(l.text.as_bytes()),
                seed: l.seed,
                designed_prices: design.p_star,
                outputs,
            };
            emit(Some(&out), "manifest.json", &to_json(&manifest)?)
        }
    }
}

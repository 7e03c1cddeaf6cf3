use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nsgen_core::checkpoint;
use nsgen_core::data::{generate, load_dataset, DataSpec, StageId};
use nsgen_core::eval::{
    benchmark_latency, evaluate_stage, export_profiles, table1_case, EvalCase, ProfileLine, TruthCache,
};
use nsgen_core::grid::{rasterize_obstacles, BoundarySpec, GridSpec, LidParams, Shape};
use nsgen_core::io::write_field;
use nsgen_core::loss::LossWeights;
use nsgen_core::nn::{ModelConfig, UNet};
use nsgen_core::solver::{solve_steady, SolverParams};
use nsgen_core::train::{train_stage, StageSpec};
use nsgen_service::{Registry, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "nsgen", version, about = "Weakly supervised flow surrogates: data, training, evaluation, serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Cavity,
    Internal,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case with the finite-difference oracle.
    Solve {
        #[arg(long, value_enum)]
        problem: ProblemArg,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long)]
        u0: f64,
        #[arg(long, default_value_t = 0.0)]
        v0: f64,
        #[arg(long, default_value_t = 0.0)]
        lid_start: f64,
        #[arg(long, default_value_t = 1.0)]
        lid_extent: f64,
        /// JSON file with a list of obstacle shapes.
        #[arg(long)]
        obstacles: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a warm-up or boundary-only dataset for a stage.
    GenData {
        #[arg(long)]
        stage: StageId,
        #[arg(long, default_value_t = 2048)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one curriculum stage.
    Train {
        #[arg(long)]
        stage: StageId,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint of the preceding stage.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = nsgen_core::train::DEFAULT_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = nsgen_core::train::DEFAULT_LR)]
        lr: f64,
        #[arg(long, default_value_t = nsgen_core::train::DEFAULT_BATCH)]
        batch_size: usize,
        #[arg(long)]
        base_width: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON loss weights; balanced automatically when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Compare a checkpoint against the oracle.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON list of cases; the stage's reference case when omitted.
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for profile CSVs and contour rasters of each case.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Time single forward passes.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input size of a randomly initialized model when no checkpoint is given.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "NSGEN_REGISTRY")]
        registry: PathBuf,
        #[arg(long, env = "NSGEN_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Solve {
            problem,
            n,
            u0,
            v0,
            lid_start,
            lid_extent,
            obstacles,
            tol,
            out,
        } => {
            let bc = match problem {
                ProblemArg::Cavity => BoundarySpec::cavity_lid(LidParams {
                    u0,
                    start_fraction: lid_start,
                    extent_fraction: lid_extent,
                }),
                ProblemArg::Internal => BoundarySpec::internal(u0, v0),
            };
            let shapes: Vec<Shape> = match &obstacles {
                Some(p) => read_json(p)?,
                None => Vec::new(),
            };
            let grid = GridSpec::square(n)?;
            let mask = if shapes.is_empty() { None } else { Some(rasterize_obstacles(&shapes, &grid)?) };
            let mut params = SolverParams::for_problem(&bc, &grid);
            params.steady_tol = tol;
            let sol = solve_steady(&bc, mask.as_ref(), &grid, &params)?;
            write_field(&out, &sol.field, Some(&bc), &shapes)?;
            println!(
                "{} after {} steps (residual {:.3e}); wrote {}",
                if sol.converged { "converged" } else { "not converged" },
                sol.steps,
                sol.residual,
                out.display()
            );
        }
        Command::GenData { stage, n, seed, out } => {
            let (m, _) = generate(&DataSpec::for_stage(stage), n, seed, Some(&out))?;
            println!(
                "stage {stage}: {} samples ({} train, {} test) in {}",
                m.count,
                m.train_count,
                m.test_count,
                out.display()
            );
        }
        Command::Train {
            stage,
            data,
            from,
            out,
            epochs,
            lr,
            batch_size,
            base_width,
            seed,
            weights,
        } => {
            let (manifest, inputs) = load_dataset(&data)?;
            let mut spec = StageSpec::for_stage(stage);
            spec.source = from;
            spec.out_dir = Some(out.clone());
            spec.epochs = epochs;
            spec.lr = lr;
            spec.batch_size = batch_size;
            spec.model_seed = seed;
            if let Some(w) = base_width {
                spec.base_width = w;
            }
            if let Some(p) = weights {
                spec.weights = Some(read_json::<LossWeights>(&p)?);
            }
            let outcome = train_stage(&spec, &manifest, &inputs)?;
            let r = &outcome.report;
            println!(
                "stage {stage}: loss {:.4e} -> {:.4e} over {} epochs in {:.0}s; checkpoints in {}",
                r.series[0].total,
                r.series[r.series.len() - 1].total,
                r.epochs,
                r.wall_clock_s,
                out.display()
            );
        }
        Command::Eval {
            checkpoint: dir,
            cases,
            out,
            profiles,
        } => {
            let (model, meta) = checkpoint::load(&dir)?;
            let cases: Vec<EvalCase> = match &cases {
                Some(p) => read_json(p)?,
                None => {
                    let Some(stage) = meta.stage else { bail!("checkpoint has no stage; pass --cases") };
                    match table1_case(stage) {
                        Some(c) => vec![c],
                        None => bail!("stage {stage} has no reference case; pass --cases"),
                    }
                }
            };
            let report = evaluate_stage(&model, &meta, &cases, &mut TruthCache::new())?;
            for c in &report.cases {
                match c.rmse {
                    Some(r) => println!("{}: rmse u {:.4} v {:.4} p {:.4}", c.name, r.u, r.v, r.p),
                    None => println!("{}: oracle did not converge", c.name),
                }
            }
            if let Some(dir) = profiles {
                let spec = nsgen_core::eval::input_spec(&model, &meta)?;
                let lines = [ProfileLine::Centerline, ProfileLine::Row { j: 40.min(spec.grid_size - 1) }, ProfileLine::Outlet];
                for (k, case) in cases.iter().enumerate() {
                    let input = nsgen_core::data::build_input(&spec, &case.bc, &case.shapes)?;
                    let field = model.predict(&input)?;
                    export_profiles(&field, &lines, &dir.join(format!("case_{k:03}")))?;
                }
                info!("profiles written to {}", dir.display());
            }
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
        }
        Command::Bench { checkpoint: dir, size, runs } => {
            let model = match dir {
                Some(d) => checkpoint::load(&d)?.0,
                None => UNet::<f32>::new(ModelConfig::new(size, 4))?,
            };
            let s = benchmark_latency(&model, runs)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Serve { registry, port, host } => {
            let reg = Registry::load(&registry)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("listen address")?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(nsgen_service::serve(addr, reg))?;
        }
    }
    Ok(())
}

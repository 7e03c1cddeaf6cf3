//! Accuracy against the finite-difference oracle, inference latency, and
//! profile and contour exports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::CheckpointMeta;
use crate::data::{build_input, DataSpec, StageId};
use crate::error::{Error, Result};
use crate::grid::{rasterize_obstacles, rmse, BoundarySpec, ChannelRmse, FlowField, GridSpec, LidParams, Shape};
use crate::io::write_field;
use crate::nn::UNet;
use crate::solver::{solve_steady, SolverParams};

/// Oracle tolerance for truth fields.
pub const TRUTH_TOL: f64 = 1e-6;
pub const LATENCY_WARMUP: usize = 5;
pub const MIN_LATENCY_RUNS: usize = 30;
/// Seed of the circle layout in the fixed B3 comparison case.
pub const B3_CASE_SEED: u64 = 2024;

/// Reference RMSEs `(u, v, p)` of the four reported models.
pub const TABLE1: [(StageId, [f64; 3]); 4] = [
    (StageId::A0, [0.0381, 0.0362, 0.1418]),
    (StageId::A, [0.0196, 0.0438, 0.2437]),
    (StageId::B2, [0.0186, 0.0313, 0.0619]),
    (StageId::B3, [0.0836, 0.0766, 0.2908]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub name: String,
    pub bc: BoundarySpec,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    /// `None` when the oracle did not converge.
    pub rmse: Option<ChannelRmse>,
    pub oracle_converged: bool,
    pub oracle_steps: usize,
    /// Time to build the model input, including any warm-up solve.
    pub input_s: f64,
    pub inference_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageId>,
    pub cases: Vec<CaseResult>,
    /// Mean over cases with a converged oracle.
    pub mean: Option<ChannelRmse>,
    pub cases_used: usize,
}

/// Converged oracle fields keyed by boundary conditions, obstacles and grid.
#[derive(Debug, Default)]
pub struct TruthCache {
    fields: HashMap<String, (FlowField, bool, usize)>,
}

impl TruthCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    fn key(bc: &BoundarySpec, shapes: &[Shape], grid: &GridSpec) -> Result<String> {
        let bytes = serde_json::to_vec(&(bc, shapes, grid))?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Oracle field, convergence flag and step count for a case.
    pub fn truth(&mut self, bc: &BoundarySpec, shapes: &[Shape], grid: &GridSpec) -> Result<(FlowField, bool, usize)> {
        let key = Self::key(bc, shapes, grid)?;
        if let Some(hit) = self.fields.get(&key) {
            return Ok(hit.clone());
        }
        let mask = if shapes.is_empty() { None } else { Some(rasterize_obstacles(shapes, grid)?) };
        let mut params = SolverParams::for_problem(bc, grid);
        params.steady_tol = TRUTH_TOL;
        let sol = solve_steady(bc, mask.as_ref(), grid, &params)?;
        let entry = (sol.field, sol.converged, sol.steps);
        self.fields.insert(key, entry.clone());
        Ok(entry)
    }
}

/// Input preparation of a checkpointed model.
pub fn input_spec(model: &UNet<f32>, meta: &CheckpointMeta) -> Result<DataSpec> {
    let c = model.config();
    let (Some(recipe), Some(ranges)) = (meta.recipe, meta.ranges.clone()) else {
        return Err(Error::Format("checkpoint lacks its input recipe or parameter ranges".into()));
    };
    Ok(DataSpec {
        stage: meta.stage,
        problem: ranges.problem,
        recipe,
        grid_size: c.input_size,
        in_channels: c.in_channels,
        ranges,
    })
}

/// Model against oracle on every case. Cases outside the trained ranges are
/// rejected; cases whose oracle does not converge are reported but left out
/// of the mean.
pub fn evaluate_stage(
    model: &UNet<f32>,
    meta: &CheckpointMeta,
    cases: &[EvalCase],
    cache: &mut TruthCache,
) -> Result<RmseReport> {
    let spec = input_spec(model, meta)?;
    let grid = spec.grid()?;
    for case in cases {
        spec.ranges
            .check(&case.bc, &case.shapes, &grid)
            .map_err(|v| Error::InvalidConfig(format!("case {}: {v}", case.name)))?;
    }
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        let t = Instant::now();
        let input = build_input(&spec, &case.bc, &case.shapes)?;
        let input_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let pred = model.predict(&input)?;
        let inference_ms = t.elapsed().as_secs_f64() * 1e3;
        let (truth, converged, steps) = cache.truth(&case.bc, &case.shapes, &grid)?;
        let rmse = if converged { Some(rmse(&pred, &truth, input.mask.as_ref())?) } else { None };
        results.push(CaseResult {
            name: case.name.clone(),
            rmse,
            oracle_converged: converged,
            oracle_steps: steps,
            input_s,
            inference_ms,
        });
    }
    let used: Vec<ChannelRmse> = results.iter().filter_map(|r| r.rmse).collect();
    Ok(RmseReport {
        stage: meta.stage,
        mean: mean_rmse(&used),
        cases_used: used.len(),
        cases: results,
    })
}

pub fn mean_rmse(values: &[ChannelRmse]) -> Option<ChannelRmse> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    Some(ChannelRmse {
        u: values.iter().map(|r| r.u).sum::<f64>() / n,
        v: values.iter().map(|r| r.v).sum::<f64>() / n,
        p: values.iter().map(|r| r.p).sum::<f64>() / n,
    })
}

/// The fixed comparison case of a reported model.
pub fn table1_case(stage: StageId) -> Option<EvalCase> {
    let case = |name: &str, bc: BoundarySpec, shapes: Vec<Shape>| {
        Some(EvalCase {
            name: name.into(),
            bc,
            shapes,
        })
    };
    match stage {
        StageId::A0 => case("A0 lid 0.5", BoundarySpec::cavity(0.5), vec![]),
        StageId::A => case(
            "A half lid 0.5",
            BoundarySpec::cavity_lid(LidParams {
                u0: 0.5,
                start_fraction: 0.25,
                extent_fraction: 0.5,
            }),
            vec![],
        ),
        StageId::B2 => {
            let grid = GridSpec::square(64).ok()?;
            case(
                "B2 inlet (0.05, 0.5), one square",
                BoundarySpec::internal(0.05, 0.5),
                vec![Shape::centered_square(&grid, 8)],
            )
        }
        StageId::B3 => case("B3 inlet (0.2, 0.5), three circles", BoundarySpec::internal(0.2, 0.5), b3_circles()),
        _ => None,
    }
}

/// Three non-overlapping circles inside the B3 ranges, drawn from
/// [`B3_CASE_SEED`].
pub fn b3_circles() -> Vec<Shape> {
    let obs = StageId::B3.ranges().obstacles.expect("B3 has obstacles");
    let last = 63.0;
    let mut rng = ChaCha8Rng::seed_from_u64(B3_CASE_SEED);
    let mut out: Vec<Shape> = Vec::with_capacity(3);
    while out.len() < 3 {
        let r = rng.random_range(obs.circle_radius.min..obs.circle_radius.max);
        let (lo, hi) = (obs.margin + r, last - obs.margin - r);
        let (cx, cy) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        let clear = out.iter().all(|s| match *s {
            Shape::Circle { cx: x, cy: y, radius } => (x - cx).hypot(y - cy) > radius + r + 1.0,
            Shape::Rectangle { .. } => true,
        });
        if clear {
            out.push(Shape::Circle { cx, cy, radius: r });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub input_size: usize,
    pub runs: usize,
    pub warmup: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub threads: usize,
    pub arch: String,
}

/// Wall-clock of single-sample forward passes at the model's native size,
/// after [`LATENCY_WARMUP`] untimed calls.
pub fn benchmark_latency(model: &UNet<f32>, runs: usize) -> Result<LatencyStats> {
    if runs < MIN_LATENCY_RUNS {
        return Err(Error::InvalidConfig(format!(
            "latency needs at least {MIN_LATENCY_RUNS} runs, got {runs}"
        )));
    }
    let c = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f32> = (0..c.in_channels * c.input_size * c.input_size)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    for _ in 0..LATENCY_WARMUP {
        std::hint::black_box(model.forward(&x, 1)?);
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(model.forward(&x, 1)?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        input_size: c.input_size,
        runs,
        warmup: LATENCY_WARMUP,
        median_ms: quantile(&ms, 0.5),
        p95_ms: quantile(&ms, 0.95),
        mean_ms: ms.iter().sum::<f64>() / runs as f64,
        min_ms: ms[0],
        max_ms: ms[runs - 1],
        threads: 1,
        arch: std::env::consts::ARCH.into(),
    })
}

/// Linear-interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// A line of nodes along which a profile is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "line", rename_all = "snake_case")]
pub enum ProfileLine {
    /// Vertical line through the domain center, against `y`. On an even
    /// grid the two middle columns are averaged.
    Centerline,
    /// Row `j`, against `x`.
    Row { j: usize },
    /// Rightmost column, against `y`.
    Outlet,
}

impl ProfileLine {
    pub fn name(&self) -> String {
        match self {
            ProfileLine::Centerline => "centerline".into(),
            ProfileLine::Row { j } => format!("row_{j}"),
            ProfileLine::Outlet => "outlet".into(),
        }
    }
}

/// `(coordinate, u, v)` along `line`.
pub fn profile(field: &FlowField, line: ProfileLine) -> Result<Vec<(f64, f64, f64)>> {
    let g = field.grid;
    let (ny, nx) = g.shape();
    Ok(match line {
        ProfileLine::Centerline => {
            let (a, b) = ((nx - 1) / 2, nx / 2);
            (0..ny)
                .map(|j| {
                    let u = 0.5 * (field.u[[j, a]] + field.u[[j, b]]);
                    let v = 0.5 * (field.v[[j, a]] + field.v[[j, b]]);
                    (g.y(j), u, v)
                })
                .collect()
        }
        ProfileLine::Row { j } => {
            if j >= ny {
                return Err(Error::InvalidConfig(format!("row {j} outside a grid of {ny} rows")));
            }
            (0..nx).map(|i| (g.x(i), field.u[[j, i]], field.v[[j, i]])).collect()
        }
        ProfileLine::Outlet => (0..ny).map(|j| (g.y(j), field.u[[j, nx - 1]], field.v[[j, nx - 1]])).collect(),
    })
}

pub fn profile_csv(field: &FlowField, line: ProfileLine) -> Result<String> {
    let mut s = String::from("coordinate,u,v\n");
    for (c, u, v) in profile(field, line)? {
        writeln!(s, "{c},{u},{v}").expect("write to string");
    }
    Ok(s)
}

/// One CSV per line plus an NSF1 contour raster of the whole field.
pub fn export_profiles(field: &FlowField, lines: &[ProfileLine], dir: &Path) -> Result<Vec<PathBuf>> {
    let csvs = lines
        .iter()
        .map(|&l| Ok((l.name(), profile_csv(field, l)?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(lines.len() + 1);
    for (name, text) in csvs {
        let path = dir.join(format!("{name}.csv"));
        fs::write(&path, text)?;
        written.push(path);
    }
    let path = dir.join("contours.nsf1");
    write_field(&path, field, None, &[])?;
    written.push(path);
    Ok(written)
}

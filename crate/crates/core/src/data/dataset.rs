use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Interval, ParamRanges, Recipe, ShapeKind, StageId, COARSE_SIZE, PRERUN_STEPS};
use crate::error::{Error, Result};
use crate::grid::{
    embed_boundary_conditions, interpolate_field, rasterize_obstacles, BoundarySpec, GridSpec, InputTensor,
    LidParams, Problem, Shape,
};
use crate::io::{read_nsf1, write_nsf1, Dtype, Nsf1, Sidecar};
use crate::solver::{coarse_solution, prerun};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Attempts at drawing a valid obstacle layout, or a sample whose warm-up
/// solve does not diverge.
const MAX_RETRIES: usize = 100;

/// What a dataset contains: problem, input recipe, size and ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageId>,
    pub problem: Problem,
    pub recipe: Recipe,
    pub grid_size: usize,
    pub in_channels: usize,
    pub ranges: ParamRanges,
}

impl DataSpec {
    pub fn for_stage(stage: StageId) -> Self {
        DataSpec {
            stage: Some(stage),
            problem: stage.problem(),
            recipe: stage.recipe(),
            grid_size: stage.grid_size(),
            in_channels: stage.in_channels(),
            ranges: stage.ranges(),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::square(self.grid_size)
    }

    fn validate(&self) -> Result<()> {
        let expect = if self.ranges.obstacles.is_some() { 4 } else { 3 };
        if self.in_channels != expect {
            return Err(Error::InvalidConfig(format!(
                "{} input channels do not match the obstacle ranges (expected {expect})",
                self.in_channels
            )));
        }
        if self.problem != self.ranges.problem {
            return Err(Error::InvalidConfig("data problem differs from its ranges".into()));
        }
        self.grid().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub file: String,
    pub split: Split,
    pub bc: BoundarySpec,
    #[serde(default)]
    pub shapes: Vec<Shape>,
    /// Draws discarded because the warm-up solve diverged.
    #[serde(default)]
    pub resampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(flatten)]
    pub spec: DataSpec,
    pub seed: u64,
    pub count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.samples.iter().filter(|s| s.split == split).map(|s| s.id).collect()
    }
}

/// `(round(0.8 n), n - round(0.8 n))`.
pub fn split_counts(n: usize) -> (usize, usize) {
    let train = (0.8 * n as f64).round() as usize;
    (train, n - train)
}

fn uniform(rng: &mut ChaCha8Rng, r: Interval) -> f64 {
    if r.max > r.min {
        rng.random_range(r.min..r.max)
    } else {
        r.min
    }
}

fn sample_shape(rng: &mut ChaCha8Rng, spec: &DataSpec, grid: &GridSpec) -> Shape {
    let obs = spec.ranges.obstacles.as_ref().expect("obstacle ranges");
    let last = (grid.nx - 1) as f64;
    let kind = obs.kinds[rng.random_range(0..obs.kinds.len())];
    match kind {
        ShapeKind::Rectangle => {
            let side = |rng: &mut ChaCha8Rng| {
                rng.random_range(obs.rect_side.min.round() as usize..=obs.rect_side.max.round() as usize)
            };
            let w = side(rng);
            let h = if obs.square { w } else { side(rng) };
            let corner = |rng: &mut ChaCha8Rng, extent: usize| {
                let lo = obs.margin.ceil() as i64;
                let hi = (last - obs.margin) as i64 - (extent as i64 - 1);
                rng.random_range(lo..=hi.max(lo)) as f64
            };
            Shape::Rectangle {
                x: corner(rng, w),
                y: corner(rng, h),
                width: (w - 1) as f64,
                height: (h - 1) as f64,
            }
        }
        ShapeKind::Circle => {
            let radius = uniform(rng, obs.circle_radius);
            let lo = obs.margin + radius;
            let hi = last - obs.margin - radius;
            let c = |rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..hi) } else { lo };
            Shape::Circle {
                cx: c(rng),
                cy: c(rng),
                radius,
            }
        }
    }
}

/// Draws a boundary specification and obstacle layout inside `spec.ranges`.
pub fn sample_parameters(spec: &DataSpec, rng: &mut ChaCha8Rng) -> Result<(BoundarySpec, Vec<Shape>)> {
    let r = &spec.ranges;
    let grid = spec.grid()?;
    let bc = match spec.problem {
        Problem::Cavity => {
            let u0 = uniform(rng, r.u0);
            match (r.lid_start, r.lid_extent) {
                (Some(s), Some(e)) => {
                    let start = uniform(rng, s);
                    let extent = uniform(rng, Interval::new(e.min, e.max.min(1.0 - start)));
                    BoundarySpec::cavity_lid(LidParams {
                        u0,
                        start_fraction: start,
                        extent_fraction: extent,
                    })
                }
                _ => BoundarySpec::cavity(u0),
            }
        }
        Problem::Internal => {
            let u0 = uniform(rng, r.u0);
            let v0 = uniform(rng, r.v0.unwrap_or(r.u0));
            BoundarySpec::internal(u0, v0)
        }
        Problem::Custom => return Err(Error::InvalidConfig("custom problems have no sampler".into())),
    };
    let Some(obs) = &r.obstacles else {
        return Ok((bc, Vec::new()));
    };
    for _ in 0..MAX_RETRIES {
        let count = rng.random_range(obs.min_count..=obs.max_count);
        let shapes: Vec<Shape> = (0..count).map(|_| sample_shape(rng, spec, &grid)).collect();
        if r.check(&bc, &shapes, &grid).is_ok() && rasterize_obstacles(&shapes, &grid).is_ok() {
            return Ok((bc, shapes));
        }
    }
    Err(Error::Obstacle(format!(
        "no admissible obstacle layout on a {0}x{0} grid after {MAX_RETRIES} attempts",
        grid.nx
    )))
}

/// Model input for `bc` and `shapes` prepared by the recipe of `spec`.
pub fn build_input(spec: &DataSpec, bc: &BoundarySpec, shapes: &[Shape]) -> Result<InputTensor> {
    let grid = spec.grid()?;
    let mask = if spec.in_channels == 4 {
        Some(rasterize_obstacles(shapes, &grid)?)
    } else if shapes.is_empty() {
        None
    } else {
        return Err(Error::InvalidConfig("obstacles need a mask channel".into()));
    };
    // Warm-up solves never see the obstacles; the mask zeroes them afterwards.
    let interior = match spec.recipe {
        Recipe::Prerun20 => Some(prerun(bc, None, &grid, PRERUN_STEPS)?),
        Recipe::Coarse8 => Some(interpolate_field(&coarse_solution(bc, COARSE_SIZE)?, &grid)?),
        Recipe::BcOnly => None,
    };
    let input = embed_boundary_conditions(bc, &grid, interior.as_ref())?;
    match mask {
        Some(m) => input.with_mask(m),
        None => Ok(input),
    }
}

fn sample_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

fn file_name(id: usize) -> String {
    format!("sample_{id:05}.nsf1")
}

fn channel_names(c: usize) -> Vec<String> {
    ["u", "v", "p", "mask"][..c].iter().map(|s| s.to_string()).collect()
}

/// `n` samples of `spec` from `seed`, written to `out` when given. Sample `k`
/// draws from its own random stream, so any sample can be regenerated alone.
pub fn generate(
    spec: &DataSpec,
    n: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(DatasetManifest, Vec<InputTensor>)> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset needs at least one sample".into()));
    }
    spec.validate()?;
    let (train_count, test_count) = split_counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Test; n];
    for &id in &order[..train_count] {
        split[id] = Split::Train;
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let grid = spec.grid()?;
    let mut samples = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    for (id, &sp) in split.iter().enumerate() {
        let mut rng = sample_rng(seed, id);
        let mut resampled = 0;
        let (bc, shapes, input) = loop {
            let (bc, shapes) = sample_parameters(spec, &mut rng)?;
            match build_input(spec, &bc, &shapes) {
                Ok(input) => break (bc, shapes, input),
                Err(Error::Diverged { step }) if resampled < MAX_RETRIES => {
                    warn!("sample {id}: warm-up solve diverged at step {step}, resampling");
                    resampled += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let file = file_name(id);
        if let Some(dir) = out {
            let sidecar = Sidecar {
                grid,
                channels: channel_names(input.in_channels()),
                bc: Some(bc.clone()),
                shapes: shapes.clone(),
            };
            let data = Nsf1 {
                dtype: Dtype::F64,
                channels: input.channels.clone(),
            };
            write_nsf1(&dir.join(&file), &data, &sidecar)?;
        }
        samples.push(SampleRecord {
            id,
            file,
            split: sp,
            bc,
            shapes,
            resampled,
        });
        inputs.push(input);
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        spec: spec.clone(),
        seed,
        count: n,
        train_count,
        test_count,
        samples,
    };
    if let Some(dir) = out {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        info!("wrote {n} samples to {}", dir.display());
    }
    Ok((manifest, inputs))
}

/// Cavity samples, each the state after twenty solver steps from rest.
pub fn gen_prerun_dataset(n: usize, seed: u64, out: Option<&Path>) -> Result<(DatasetManifest, Vec<InputTensor>)> {
    generate(&DataSpec::for_stage(StageId::A0), n, seed, out)
}

/// Obstacle-free internal-flow samples from interpolated 8x8 solutions.
pub fn gen_coarse_dataset(
    n: usize,
    target_size: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(DatasetManifest, Vec<InputTensor>)> {
    if target_size != 32 && target_size != 64 {
        return Err(Error::InvalidConfig(format!(
            "coarse warm-up targets 32 or 64 nodes, got {target_size}"
        )));
    }
    let spec = DataSpec {
        grid_size: target_size,
        ..DataSpec::for_stage(StageId::B0)
    };
    generate(&spec, n, seed, out)
}

/// Samples carrying only boundary values (and the mask) for stage A or B3.
pub fn gen_bc_only_dataset(
    stage: StageId,
    n: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(DatasetManifest, Vec<InputTensor>)> {
    if stage.recipe() != Recipe::BcOnly {
        return Err(Error::InvalidConfig(format!("stage {stage} does not use boundary-only inputs")));
    }
    generate(&DataSpec::for_stage(stage), n, seed, out)
}

/// Reads a dataset written by [`generate`].
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<InputTensor>)> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} (supported: {MANIFEST_VERSION})",
            manifest.format_version
        )));
    }
    let grid = manifest.spec.grid()?;
    let mut inputs = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let (data, _) = read_nsf1(&dir.join(&rec.file))?;
        if data.channels.len() != manifest.spec.in_channels || data.channels[0].dim() != grid.shape() {
            return Err(Error::shape(
                format!("{} channels of {}x{}", manifest.spec.in_channels, grid.ny, grid.nx),
                format!("{} channels in {}", data.channels.len(), rec.file),
            ));
        }
        let mask = if manifest.spec.in_channels == 4 {
            let m = rasterize_obstacles(&rec.shapes, &grid)?;
            if m.as_f64() != data.channels[3] {
                return Err(Error::Format(format!("{}: mask channel differs from its shapes", rec.file)));
            }
            Some(m)
        } else {
            None
        };
        inputs.push(InputTensor {
            channels: data.channels,
            grid,
            bc: rec.bc.clone(),
            mask,
        });
    }
    Ok((manifest, inputs))
}

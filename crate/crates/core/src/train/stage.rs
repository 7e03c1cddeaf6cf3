use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{initial_weights, loss_and_grad, LossTerms, Sample};
use crate::checkpoint::{self, loss_digest, CheckpointMeta};
use crate::data::{DatasetManifest, Recipe, Split, StageId, Surgery};
use crate::error::{Error, Result};
use crate::grid::InputTensor;
use crate::loss::{LossOptions, LossWeights};
use crate::nn::{expand_channels, expand_depth, Adam, AdamConfig, BlockOrigin, DepthMapping, ModelConfig, UNet};

pub const DEFAULT_EPOCHS: usize = 2000;
pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_LR: f64 = 2e-5;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 100;
pub const TELEMETRY_FILE: &str = "telemetry.jsonl";

/// One stage of the curriculum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: StageId,
    pub recipe: Recipe,
    pub grid_size: usize,
    pub in_channels: usize,
    /// Checkpoint directory to start from; `None` starts from a fresh model
    /// (or, in a curriculum, from the previous stage's model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    pub surgery: Surgery,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fixed loss weights; `None` balances them once before the first epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
    #[serde(default)]
    pub loss_options: LossOptions,
    /// Width of the first encoder block of a fresh model.
    pub base_width: usize,
    /// Initialization seed of a fresh model.
    pub model_seed: u64,
    /// Mini-batch shuffling seed.
    pub shuffle_seed: u64,
    pub checkpoint_every: usize,
    /// Directory receiving checkpoints and telemetry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl StageSpec {
    pub fn for_stage(stage: StageId) -> Self {
        StageSpec {
            stage,
            recipe: stage.recipe(),
            grid_size: stage.grid_size(),
            in_channels: stage.in_channels(),
            source: None,
            surgery: stage.surgery(),
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            lr: DEFAULT_LR,
            weights: None,
            loss_options: LossOptions::default(),
            base_width: ModelConfig::new(stage.grid_size(), stage.in_channels()).base_width,
            model_seed: 0,
            shuffle_seed: 1,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("a stage needs at least one epoch".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be positive".into());
        }
        let s = self.stage;
        if self.recipe != s.recipe() || self.grid_size != s.grid_size() || self.in_channels != s.in_channels() {
            return bad(format!(
                "stage {s} trains on {} inputs of {} channels at {}x{}",
                s.recipe(),
                s.in_channels(),
                s.grid_size(),
                s.grid_size()
            ));
        }
        if self.surgery != s.surgery() {
            return bad(format!("stage {s} applies {:?}, not {:?}", s.surgery(), self.surgery));
        }
        if let Some(w) = &self.weights {
            w.validate()?;
        }
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
        .validate()
    }
}

/// Checks that `stages` follow the curriculum order without gaps.
pub fn validate_order(stages: &[StageSpec]) -> Result<()> {
    for pair in stages.windows(2) {
        let (prev, next) = (pair[0].stage, pair[1].stage);
        if next.predecessor() != Some(prev) {
            return Err(Error::InvalidConfig(format!(
                "stage {next} cannot follow {prev} (it builds on {})",
                next.predecessor().map_or("nothing".to_string(), |p| p.to_string())
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub model: u64,
    pub shuffle: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: StageId,
    pub epochs: usize,
    /// Training-split loss components, one entry per epoch.
    pub series: Vec<LossTerms>,
    pub weights: LossWeights,
    pub best_epoch: usize,
    pub best_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_mapping: Option<DepthMapping>,
    pub wall_clock_s: f64,
    pub seeds: Seeds,
}

impl TrainReport {
    pub fn totals(&self) -> Vec<f64> {
        self.series.iter().map(|t| t.total).collect()
    }
}

/// Result of a stage: its report and the trained model.
pub struct StageOutcome {
    pub report: TrainReport,
    pub model: UNet<f32>,
}

/// Starting model of a stage: the source (after its surgery) or a fresh one.
pub fn prepare_model(spec: &StageSpec, source: Option<UNet<f32>>) -> Result<(UNet<f32>, Option<DepthMapping>)> {
    let Some(src) = source else {
        let cfg = ModelConfig::new(spec.grid_size, spec.in_channels)
            .with_base_width(spec.base_width)
            .with_seed(spec.model_seed);
        return Ok((UNet::new(cfg)?, None));
    };
    let (model, mapping) = match spec.surgery {
        Surgery::None => (src, None),
        Surgery::ExpandChannels => {
            let dst = expand_channels(&src, spec.in_channels)?;
            verify_channel_expansion(&src, &dst)?;
            (dst, None)
        }
        Surgery::ExpandDepth => {
            let (dst, map) = expand_depth(&src, spec.grid_size, None)?;
            verify_depth_expansion(&src, &dst, &map)?;
            (dst, Some(map))
        }
    };
    let c = model.config();
    if c.input_size != spec.grid_size || c.in_channels != spec.in_channels {
        return Err(Error::Transfer(format!(
            "stage {} needs a {}-channel {}x{} model, source gives {}-channel {}x{}",
            spec.stage, spec.in_channels, spec.grid_size, spec.grid_size, c.in_channels, c.input_size, c.input_size
        )));
    }
    Ok((model, mapping))
}

/// A zero extra channel must leave the output bit-identical.
pub fn verify_channel_expansion(src: &UNet<f32>, dst: &UNet<f32>) -> Result<()> {
    let (a, c) = (src.config().input_size, src.config().in_channels);
    let n = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let x: Vec<f32> = (0..c * n * a * a).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut padded = x.clone();
    padded.resize((dst.config().in_channels) * n * a * a, 0.0);
    if src.forward(&x, n)? != dst.forward(&padded, n)? {
        return Err(Error::Transfer("channel expansion changed the model output".into()));
    }
    Ok(())
}

/// Every block the mapping marks as copied must equal its source bit for bit.
pub fn verify_depth_expansion(src: &UNet<f32>, dst: &UNet<f32>, map: &DepthMapping) -> Result<()> {
    let sides = [
        (&map.encoder, dst.encoder(), src.encoder(), "enc"),
        (&map.decoder, dst.decoder(), src.decoder(), "dec"),
    ];
    for (origins, dst_blocks, src_blocks, prefix) in sides {
        for (d, origin) in dst_blocks.iter().zip(origins) {
            let BlockOrigin::Copied { from } = origin else { continue };
            let s = from
                .strip_prefix(prefix)
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| src_blocks.get(i))
                .ok_or_else(|| Error::Transfer(format!("unknown source block {from}")))?;
            for (si, di) in s.param_indices().into_iter().zip(d.param_indices()) {
                if src.params()[si].data != dst.params()[di].data {
                    return Err(Error::Transfer(format!("block {from} was not copied exactly")));
                }
            }
        }
    }
    Ok(())
}

fn check_dataset(spec: &StageSpec, dataset: &DatasetManifest, inputs: &[InputTensor]) -> Result<()> {
    let d = &dataset.spec;
    if d.recipe != spec.recipe || d.grid_size != spec.grid_size || d.in_channels != spec.in_channels {
        return Err(Error::InvalidConfig(format!(
            "dataset holds {} inputs of {} channels at {}x{}, stage {} needs {} inputs of {} channels at {}x{}",
            d.recipe, d.in_channels, d.grid_size, d.grid_size, spec.stage, spec.recipe, spec.in_channels, spec.grid_size, spec.grid_size
        )));
    }
    if d.problem != spec.stage.problem() {
        return Err(Error::InvalidConfig(format!("dataset problem does not match stage {}", spec.stage)));
    }
    if inputs.len() != dataset.samples.len() {
        return Err(Error::shape(format!("{} inputs", dataset.samples.len()), inputs.len()));
    }
    Ok(())
}

/// Mini-batches of a shuffled order; a trailing batch of one joins the
/// previous batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - size - 1;
        *out.last_mut().expect("two batches") = &order[start..];
    }
    out
}

#[derive(Serialize)]
struct EpochRecord<'a> {
    stage: StageId,
    epoch: usize,
    #[serde(flatten)]
    terms: &'a LossTerms,
    elapsed_s: f64,
}

fn meta(spec: &StageSpec, epoch: usize, weights: LossWeights, series: &[f64], mapping: &Option<DepthMapping>) -> CheckpointMeta {
    CheckpointMeta {
        stage: Some(spec.stage),
        epoch,
        recipe: Some(spec.recipe),
        ranges: Some(spec.stage.ranges()),
        weights: Some(weights),
        loss_options: Some(spec.loss_options),
        total_loss: series.last().copied(),
        loss_history_digest: Some(loss_digest(series)),
        depth_mapping: mapping.clone(),
        source: spec.source.as_ref().map(|p| p.display().to_string()),
        seed: Some(spec.model_seed),
    }
}

/// Trains one stage on the training split of `dataset`, starting from
/// `spec.source` when set.
pub fn train_stage(spec: &StageSpec, dataset: &DatasetManifest, inputs: &[InputTensor]) -> Result<StageOutcome> {
    spec.validate()?;
    let source = match &spec.source {
        Some(dir) => {
            if !dir.join(checkpoint::MANIFEST_FILE).exists() {
                return Err(Error::InvalidConfig(format!("source checkpoint {} not found", dir.display())));
            }
            Some(checkpoint::load(dir)?.0)
        }
        None => None,
    };
    let (model, mapping) = prepare_model(spec, source)?;
    train_model(spec, model, mapping, dataset, inputs)
}

/// Trains `model` for one stage. Only boundary values and physics residuals
/// drive the updates; no solution field is read.
pub fn train_model(
    spec: &StageSpec,
    mut model: UNet<f32>,
    mapping: Option<DepthMapping>,
    dataset: &DatasetManifest,
    inputs: &[InputTensor],
) -> Result<StageOutcome> {
    spec.validate()?;
    check_dataset(spec, dataset, inputs)?;
    let started = Instant::now();
    let train_ids = dataset.ids(Split::Train);
    if train_ids.is_empty() {
        return Err(Error::InvalidConfig("dataset has no training samples".into()));
    }
    let samples = train_ids
        .iter()
        .map(|&id| Sample::new(inputs[id].clone(), spec.loss_options))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&Sample> = samples.iter().collect();
    let weights = match spec.weights {
        Some(w) => w,
        None => initial_weights(&model, &all, spec.batch_size, spec.loss_options)?,
    };
    info!("stage {}: {} training samples, weights {weights:?}", spec.stage, samples.len());

    let mut telemetry = match &spec.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join(TELEMETRY_FILE))?))
        }
        None => None,
    };
    let mut opt = Adam::new(
        AdamConfig {
            lr: spec.lr,
            ..Default::default()
        },
        model.params(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.shuffle_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut series: Vec<LossTerms> = Vec::with_capacity(spec.epochs);
    let mut totals: Vec<f64> = Vec::with_capacity(spec.epochs);
    let mut best = (0, f64::INFINITY);
    let mut last_good = model.clone();

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = LossTerms::default();
        let mut seen = 0;
        for idx in batches(&order, spec.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let step = match loss_and_grad(&model, &batch, &weights) {
                Ok((terms, grads, cache)) => {
                    let finite = terms.is_finite() && grads.iter().all(|g| g.iter().all(|v| v.is_finite()));
                    finite.then_some((terms, grads, cache))
                }
                Err(Error::NonFiniteLoss { .. }) => None,
                Err(e) => return Err(e),
            };
            let Some((terms, grads, cache)) = step else {
                if let Some(dir) = &spec.out_dir {
                    let m = meta(spec, epoch - 1, weights, &totals, &mapping);
                    checkpoint::save(&dir.join("last_good"), &last_good, &m)?;
                }
                return Err(Error::Training(format!(
                    "non-finite loss in stage {} at epoch {epoch}; last good state is epoch {}",
                    spec.stage,
                    epoch - 1
                )));
            };
            opt.step(model.params_mut(), &grads)?;
            model.update_running_stats(&cache);
            epoch_terms.merge(seen, &terms, batch.len());
            seen += batch.len();
        }
        totals.push(epoch_terms.total);
        series.push(epoch_terms);
        last_good.clone_from(&model);
        let elapsed_s = started.elapsed().as_secs_f64();
        if let Some(w) = telemetry.as_mut() {
            let rec = EpochRecord {
                stage: spec.stage,
                epoch,
                terms: &epoch_terms,
                elapsed_s,
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if epoch == 1 || epoch % 10 == 0 || epoch == spec.epochs {
            info!("stage {} epoch {epoch}: loss {:.6e} ({elapsed_s:.1}s)", spec.stage, epoch_terms.total);
        }
        if let Some(dir) = &spec.out_dir {
            let m = meta(spec, epoch, weights, &totals, &mapping);
            if epoch_terms.total < best.1 {
                checkpoint::save(&dir.join("best"), &model, &m)?;
            }
            if epoch % spec.checkpoint_every == 0 {
                checkpoint::save(&dir.join(format!("epoch_{epoch:05}")), &model, &m)?;
            }
        }
        if epoch_terms.total < best.1 {
            best = (epoch, epoch_terms.total);
        }
    }

    let final_checkpoint = match &spec.out_dir {
        Some(dir) => {
            let path = dir.join("final");
            checkpoint::save(&path, &model, &meta(spec, spec.epochs, weights, &totals, &mapping))?;
            Some(path)
        }
        None => None,
    };
    if best.0 != spec.epochs {
        warn!("stage {}: lowest loss at epoch {} of {}", spec.stage, best.0, spec.epochs);
    }
    let report = TrainReport {
        stage: spec.stage,
        epochs: spec.epochs,
        series,
        weights,
        best_epoch: best.0,
        best_total: best.1,
        final_checkpoint,
        depth_mapping: mapping,
        wall_clock_s: started.elapsed().as_secs_f64(),
        seeds: Seeds {
            model: spec.model_seed,
            shuffle: spec.shuffle_seed,
            data: Some(dataset.seed),
        },
    };
    if let Some(dir) = &spec.out_dir {
        fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(StageOutcome { report, model })
}

/// A stage together with its dataset.
pub struct CurriculumStage<'a> {
    pub spec: StageSpec,
    pub dataset: &'a DatasetManifest,
    pub inputs: &'a [InputTensor],
}

/// Runs `stages` in order, each starting from the previous stage's model
/// after its surgery. The first stage starts from its own `source` or fresh.
pub fn run_curriculum(stages: &[CurriculumStage<'_>]) -> Result<Vec<StageOutcome>> {
    let specs: Vec<StageSpec> = stages.iter().map(|s| s.spec.clone()).collect();
    validate_order(&specs)?;
    for s in &specs {
        s.validate()?;
    }
    let mut outcomes: Vec<StageOutcome> = Vec::with_capacity(stages.len());
    for (k, st) in stages.iter().enumerate() {
        let outcome = if k == 0 {
            train_stage(&st.spec, st.dataset, st.inputs)?
        } else {
            let prev = outcomes[k - 1].model.clone();
            let (model, mapping) = prepare_model(&st.spec, Some(prev))?;
            train_model(&st.spec, model, mapping, st.dataset, st.inputs)?
        };
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_single_sample_joins_previous_batch() {
        let order: Vec<usize> = (0..33).collect();
        let b = batches(&order, 16);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![16, 17]);
        let order: Vec<usize> = (0..1).collect();
        assert_eq!(batches(&order, 16).len(), 1);
        let order: Vec<usize> = (0..34).collect();
        assert_eq!(batches(&order, 16).iter().map(|x| x.len()).collect::<Vec<_>>(), vec![16, 16, 2]);
    }

    #[test]
    fn order_follows_predecessors() {
        let s = |id| StageSpec::for_stage(id);
        assert!(validate_order(&[s(StageId::A0), s(StageId::A), s(StageId::B0)]).is_ok());
        assert!(validate_order(&[s(StageId::B0), s(StageId::B2), s(StageId::B1)]).is_err());
        assert!(validate_order(&[s(StageId::A0), s(StageId::B0)]).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = StageSpec::for_stage(StageId::A0);
        s.epochs = 0;
        assert!(s.validate().is_err());
        let mut s = StageSpec::for_stage(StageId::A0);
        s.lr = 0.0;
        assert!(s.validate().is_err());
        let mut s = StageSpec::for_stage(StageId::B1);
        s.in_channels = 3;
        assert!(s.validate().is_err());
    }
}

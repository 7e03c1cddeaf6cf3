//! Central finite-difference check of the analytic parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{batch_loss_train, initial_weights, loss_and_grad, Sample};
use crate::error::Result;
use crate::grid::{embed_boundary_conditions, BoundarySpec, GridSpec, InputTensor};
use crate::loss::{continuity_residual, momentum_residuals, LossOptions, LossWeights, ResidualMode};
use crate::nn::{pack_inputs, ModelConfig, UNet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub input_size: usize,
    pub base_width: usize,
    pub in_channels: usize,
    pub model_seed: u64,
    pub input_seed: u64,
    pub eps: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub options: LossOptions,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            input_size: 8,
            base_width: 4,
            in_channels: 3,
            model_seed: 0,
            input_seed: 0,
            eps: 1e-4,
            floor: 1e-6,
            options: LossOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The perturbation moved some activation or residual across zero.
    pub crosses_kink: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub loss: f64,
    pub max_rel_error: f64,
    pub worst: Option<EntryCheck>,
    /// Entries whose difference quotient straddles a kink of the loss.
    pub kink_entries: Vec<EntryCheck>,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Two samples, one per problem, whose interiors carry uniform noise so no
/// first-layer pre-activation sits exactly at zero.
fn inputs(cfg: &GradCheckConfig) -> Result<Vec<InputTensor>> {
    let grid = GridSpec::square(cfg.input_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.input_seed);
    let specs = [
        BoundarySpec::cavity(rng.random_range(0.1..0.5)),
        BoundarySpec::internal(rng.random_range(0.1..0.5), rng.random_range(0.1..0.5)),
    ];
    let mut out = Vec::new();
    for bc in specs {
        let mut t = embed_boundary_conditions(&bc, &grid, None)?;
        for ch in t.channels.iter_mut() {
            for j in 1..grid.ny - 1 {
                for i in 1..grid.nx - 1 {
                    ch[[j, i]] = rng.random_range(-0.5..0.5);
                }
            }
        }
        if cfg.in_channels == 4 {
            t.channels.push(ndarray::Array2::zeros(grid.shape()));
        }
        out.push(t);
    }
    Ok(out)
}

/// Every sign the loss is non-smooth in: LeakyReLU inputs and, for the
/// absolute-value residual, the per-node residuals.
fn kink_pattern(model: &UNet<f64>, batch: &[&Sample]) -> Result<Vec<bool>> {
    let inputs: Vec<&InputTensor> = batch.iter().map(|s| &s.input).collect();
    let (x, n) = pack_inputs::<f64>(&inputs, model.config())?;
    let cache = model.forward_train(&x, n)?;
    let mut signs = model.activation_signs(&cache);
    let fields = model.to_fields(&cache.output, n)?;
    for (s, f) in batch.iter().zip(&fields) {
        let o = s.loss.options();
        if o.mode != ResidualMode::AbsSum {
            continue;
        }
        let field = s.loss.overwrite(f);
        let (rx, ry) = momentum_residuals(&field, s.loss.nu())?;
        let rc = continuity_residual(&field, o.continuity.coefficient())?;
        for r in [rx, ry, rc] {
            signs.extend(r.iter().map(|&v| v > 0.0));
        }
    }
    Ok(signs)
}

/// Compares the analytic gradient of the mean composite loss with central
/// differences for every trainable parameter entry, using balanced weights
/// so the loss is of order one.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let config = ModelConfig {
        in_channels: cfg.in_channels,
        ..ModelConfig::new(cfg.input_size, cfg.in_channels)
            .with_base_width(cfg.base_width)
            .with_seed(cfg.model_seed)
    };
    let mut model = UNet::<f64>::new(config)?;
    let samples = inputs(cfg)?
        .into_iter()
        .map(|t| Sample::new(t, cfg.options))
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<&Sample> = samples.iter().collect();
    let w: LossWeights = initial_weights(&model, &batch, batch.len(), cfg.options)?;
    let (terms, grads, _) = loss_and_grad(&model, &batch, &w)?;

    let mut report = GradCheckReport {
        checked: 0,
        loss: terms.total,
        max_rel_error: 0.0,
        worst: None,
        kink_entries: Vec::new(),
    };
    for pi in 0..model.params().len() {
        if !model.params()[pi].trainable {
            continue;
        }
        for k in 0..model.params()[pi].data.len() {
            let x0 = model.params()[pi].data[k];
            model.params_mut()[pi].data[k] = x0 + cfg.eps;
            let plus = batch_loss_train(&model, &batch, &w)?.total;
            let sig_plus = kink_pattern(&model, &batch)?;
            model.params_mut()[pi].data[k] = x0 - cfg.eps;
            let minus = batch_loss_train(&model, &batch, &w)?.total;
            let sig_minus = kink_pattern(&model, &batch)?;
            model.params_mut()[pi].data[k] = x0;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let analytic = grads[pi][k];
            let entry = EntryCheck {
                param: model.params()[pi].name.clone(),
                index: k,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric, cfg.floor),
                crosses_kink: sig_plus != sig_minus,
            };
            report.checked += 1;
            if entry.crosses_kink {
                report.kink_entries.push(entry.clone());
            }
            if entry.rel_error > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = entry.rel_error;
                report.worst = Some(entry);
            }
        }
    }
    Ok(report)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::InputTensor;
use crate::loss::{balance_weights, LossOptions, LossWeights, PhysicsLoss, ResidualReport};
use crate::nn::{pack_inputs, ForwardCache, Real, UNet};

/// A training input with its physics loss prepared.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: InputTensor,
    pub loss: PhysicsLoss,
}

impl Sample {
    pub fn new(input: InputTensor, options: LossOptions) -> Result<Self> {
        let loss = PhysicsLoss::new(&input.bc, input.mask.as_ref(), &input.grid, options)?;
        Ok(Sample { input, loss })
    }
}

/// Loss components averaged over a batch of samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub loss_x: f64,
    pub loss_y: f64,
    pub loss_c: f64,
    pub loss_residual: f64,
    pub loss_neumann: f64,
    pub loss_boundary: f64,
}

impl LossTerms {
    fn add(&mut self, r: &ResidualReport, scale: f64) {
        self.total += scale * r.total;
        self.loss_x += scale * r.loss_x;
        self.loss_y += scale * r.loss_y;
        self.loss_c += scale * r.loss_c;
        self.loss_residual += scale * r.loss_residual;
        self.loss_neumann += scale * r.loss_neumann;
        self.loss_boundary += scale * r.loss_boundary;
    }

    /// Weighted running mean of `self` (weight `n0`) and `other` (weight `n1`).
    pub fn merge(&mut self, n0: usize, other: &LossTerms, n1: usize) {
        let t = (n0 + n1) as f64;
        let (a, b) = (n0 as f64 / t, n1 as f64 / t);
        let mix = |x: f64, y: f64| a * x + b * y;
        *self = LossTerms {
            total: mix(self.total, other.total),
            loss_x: mix(self.loss_x, other.loss_x),
            loss_y: mix(self.loss_y, other.loss_y),
            loss_c: mix(self.loss_c, other.loss_c),
            loss_residual: mix(self.loss_residual, other.loss_residual),
            loss_neumann: mix(self.loss_neumann, other.loss_neumann),
            loss_boundary: mix(self.loss_boundary, other.loss_boundary),
        };
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.loss_x,
            self.loss_y,
            self.loss_c,
            self.loss_residual,
            self.loss_neumann,
            self.loss_boundary,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn check_batch(batch: &[&Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    Ok(())
}

/// Mean composite loss of a batch under a training-mode forward, its
/// gradient with respect to every parameter, and the forward cache.
pub fn loss_and_grad<T: Real>(
    model: &UNet<T>,
    batch: &[&Sample],
    w: &LossWeights,
) -> Result<(LossTerms, Vec<Vec<T>>, ForwardCache<T>)> {
    check_batch(batch)?;
    let inputs: Vec<&InputTensor> = batch.iter().map(|s| &s.input).collect();
    let (x, n) = pack_inputs::<T>(&inputs, model.config())?;
    let cache = model.forward_train(&x, n)?;
    let fields = model.to_fields(&cache.output, n)?;
    let scale = 1.0 / n as f64;
    let mut terms = LossTerms::default();
    let mut grads = Vec::with_capacity(n);
    for (s, f) in batch.iter().zip(&fields) {
        let (r, mut g) = s.loss.evaluate_with_grad(f, w)?;
        terms.add(&r, scale);
        g.u *= scale;
        g.v *= scale;
        g.p *= scale;
        grads.push(g);
    }
    let d_out = model.from_fields(&grads);
    let param_grads = model.backward(&cache, &d_out)?;
    Ok((terms, param_grads, cache))
}

/// Mean composite loss of a batch under a training-mode forward.
pub fn batch_loss_train<T: Real>(model: &UNet<T>, batch: &[&Sample], w: &LossWeights) -> Result<LossTerms> {
    check_batch(batch)?;
    let inputs: Vec<&InputTensor> = batch.iter().map(|s| &s.input).collect();
    let (x, n) = pack_inputs::<T>(&inputs, model.config())?;
    let cache = model.forward_train(&x, n)?;
    terms_of(model, batch, &cache.output, w)
}

/// Mean composite loss of a batch under an inference-mode forward.
pub fn batch_loss<T: Real>(model: &UNet<T>, batch: &[&Sample], w: &LossWeights) -> Result<LossTerms> {
    check_batch(batch)?;
    let inputs: Vec<&InputTensor> = batch.iter().map(|s| &s.input).collect();
    let (x, n) = pack_inputs::<T>(&inputs, model.config())?;
    let out = model.forward(&x, n)?;
    terms_of(model, batch, &out, w)
}

fn terms_of<T: Real>(model: &UNet<T>, batch: &[&Sample], out: &[T], w: &LossWeights) -> Result<LossTerms> {
    let fields = model.to_fields(out, batch.len())?;
    let scale = 1.0 / batch.len() as f64;
    let mut terms = LossTerms::default();
    for (s, f) in batch.iter().zip(&fields) {
        terms.add(&s.loss.evaluate(f, w)?, scale);
    }
    Ok(terms)
}

/// Balanced weights for the model's current training-mode outputs on
/// `samples`, evaluated in batches of `batch_size`.
pub fn initial_weights<T: Real>(
    model: &UNet<T>,
    samples: &[&Sample],
    batch_size: usize,
    options: LossOptions,
) -> Result<LossWeights> {
    check_batch(samples)?;
    let mut fields = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let inputs: Vec<&InputTensor> = chunk.iter().map(|s| &s.input).collect();
        let (x, n) = pack_inputs::<T>(&inputs, model.config())?;
        let cache = model.forward_train(&x, n)?;
        fields.extend(model.to_fields(&cache.output, n)?);
    }
    let losses: Vec<&PhysicsLoss> = samples.iter().map(|s| &s.loss).collect();
    let raws: Vec<_> = fields.iter().collect();
    balance_weights(&losses, &raws, options)
}

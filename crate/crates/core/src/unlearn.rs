//! Client-contribution removal.
//!
//! The subspace method (`sfu`) runs gradient ascent on the target client,
//! collects scaled layer-input representation matrices from the remaining
//! clients, extracts each layer's dominant input subspace with an SVD and
//! an energy criterion, and applies only the component of the ascent update
//! that is orthogonal to those subspaces — weight rows move without
//! changing outputs on the directions the remaining clients actually use.
//!
//! Baselines: norm-clipped plain gradient ascent (`ga`), subtraction of the
//! target's recorded update history (`ul`), and retraining from scratch
//! without the target (`retrain`). Recovery is ordinary federated training
//! of the remaining clients seeded from an unlearned model.

use crate::data::{Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::fl::{run_training, FlConfig, RoundReport, TrainOutput, UpdateHistory};
use crate::linalg::{concat_columns, rank_for_energy, svd, DenseMatrix, SubspaceBasis};
use crate::nn::{
    self, backward, clip_global_norm, forward_capture, sgd_step, GradientSet, ModelParams,
    StepDirection,
};
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Singular values treated as zero below this fraction of the largest.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sfu,
    Ga,
    Ul,
    Retrain,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Sfu => "sfu",
            Method::Ga => "ga",
            Method::Ul => "ul",
            Method::Retrain => "retrain",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sfu" => Ok(Method::Sfu),
            "ga" => Ok(Method::Ga),
            "ul" => Ok(Method::Ul),
            "retrain" => Ok(Method::Retrain),
            other => Err(Error::invalid(format!(
                "unknown method {other:?}, expected sfu|ga|ul|retrain"
            ))),
        }
    }
}

/// Knobs for the removal methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: Method,
    pub ascent_lr: f64,
    pub ascent_epochs: usize,
    pub ascent_batch: usize,
    /// Energy threshold applied to every layer unless overridden;
    /// 1.0 keeps the full numerical rank.
    pub epsilon: f64,
    /// Optional per-layer energy thresholds.
    pub epsilon_overrides: Option<Vec<f64>>,
    /// Per-batch gradient clip for the subspace method's ascent. The
    /// projection protects the remaining clients' input directions, so
    /// this bound can be far looser than the plain-ascent one.
    pub ascent_clip: f64,
    /// Per-batch gradient clip for the plain-ascent baseline, which has
    /// no subspace protection.
    pub clip_norm: f64,
    /// Loss-increase budget; reported alongside the realized delta,
    /// never enforced.
    pub delta_budget: Option<f64>,
    /// Representation samples drawn per remaining client.
    pub p_samples: usize,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            method: Method::Sfu,
            ascent_lr: 0.01,
            ascent_epochs: 1,
            ascent_batch: 64,
            epsilon: 1.0,
            epsilon_overrides: None,
            ascent_clip: 30.0,
            clip_norm: 0.2,
            delta_budget: None,
            p_samples: 10,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ascent_lr > 0.0) {
            return Err(Error::invalid("ascent lr must be positive"));
        }
        if self.ascent_batch == 0 {
            return Err(Error::invalid("ascent batch must be positive"));
        }
        let check = |e: f64| {
            if e > 0.0 && e <= 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("epsilon must lie in (0, 1], got {e}")))
            }
        };
        check(self.epsilon)?;
        if let Some(list) = &self.epsilon_overrides {
            for &e in list {
                check(e)?;
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        if !(self.ascent_clip > 0.0) {
            return Err(Error::invalid("ascent clip must be positive"));
        }
        if self.p_samples == 0 {
            return Err(Error::invalid("need at least one representation sample"));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, layer: usize) -> f64 {
        self.epsilon_overrides
            .as_ref()
            .and_then(|list| list.get(layer).copied())
            .unwrap_or(self.epsilon)
    }
}

/// Per-layer scaled activation columns from one remaining client.
#[derive(Debug, Clone)]
pub struct RepresentationBundle {
    /// One `input_dim × p` matrix per layer; column j is that layer's
    /// input for sample j, multiplied by the client's private factor.
    pub layers: Vec<DenseMatrix>,
}

/// Spectrum bookkeeping for one layer of the merged representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub sigma: Vec<f64>,
    pub k: usize,
    pub epsilon: f64,
}

/// Mini-batch gradient ascent on the target client, returning
/// `g = global − ascended` so that `w − g` reproduces the ascended model.
///
/// Each batch gradient is clipped to `cfg.ascent_clip` before the step.
/// Unbounded cross-entropy ascent on a ReLU network diverges within one
/// epoch (activations feed gradients, which feed activations back), so
/// the cumulative movement has to stay bounded for the returned update
/// to carry usable direction information.
pub fn target_ascent(
    global: &ModelParams,
    data: &Dataset,
    cfg: &UnlearnConfig,
    ascent_seed: u64,
) -> Result<GradientSet> {
    if data.is_empty() {
        return Err(Error::invalid("target dataset is empty"));
    }
    cfg.validate()?;
    let mut model = global.clone();
    let mut rng = seed::rng(ascent_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.ascent_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.ascent_batch) {
            let batch = data.subset(chunk)?;
            let grads = backward(&model, &batch.images, &batch.labels)?;
            let clipped = clip_global_norm(&grads, cfg.ascent_clip)?;
            model = sgd_step(&model, &clipped, cfg.ascent_lr, StepDirection::Ascend)?;
        }
    }
    nn::model_delta(global, &model)
}

/// Build a bundle from already-selected samples with given per-layer
/// scaling factors. Exposed for tests that pin the factors.
pub fn representation_from_samples(
    global: &ModelParams,
    samples: &DenseMatrix,
    lambdas: &[f64],
) -> Result<RepresentationBundle> {
    if lambdas.len() != global.layers.len() {
        return Err(Error::invalid(format!(
            "{} scaling factors for {} layers",
            lambdas.len(),
            global.layers.len()
        )));
    }
    let capture = forward_capture(global, samples)?;
    let layers = capture
        .layer_inputs
        .iter()
        .zip(lambdas)
        .map(|(x, &lambda)| {
            // x is p×in; columns of the representation are the samples.
            DenseMatrix::from_fn(x.cols(), x.rows(), |r, c| lambda * x.get(c, r))
        })
        .collect();
    Ok(RepresentationBundle { layers })
}

/// Sample `p` local points (all of them when the client holds fewer),
/// capture every layer's inputs, and scale each layer's columns by a
/// private factor drawn from Uniform[0.5, 1]. The factors never leave the
/// client in the protocol; they are returned here only so a caller may log
/// them under an explicit debug flag.
pub fn client_representation(
    global: &ModelParams,
    data: &Dataset,
    p: usize,
    repr_seed: u64,
) -> Result<(RepresentationBundle, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::invalid("client dataset is empty"));
    }
    if p == 0 {
        return Err(Error::invalid("need at least one representation sample"));
    }
    let mut rng = seed::rng(repr_seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(p.min(data.len()));
    let lambdas: Vec<f64> = (0..global.layers.len())
        .map(|_| rng.random_range(0.5..=1.0))
        .collect();
    let samples = data.subset(&indices)?;
    let bundle = representation_from_samples(global, &samples.images, &lambdas)?;
    Ok((bundle, lambdas))
}

/// Merge the remaining clients' bundles per layer, run an SVD, and keep the
/// smallest k left singular vectors reaching the layer's energy threshold.
///
/// `epsilon = 1.0` keeps the numerical rank (singular values above
/// `1e-10 · σ_max`) rather than chasing round-off tails.
pub fn server_subspace(
    bundles: &[RepresentationBundle],
    epsilon_for: impl Fn(usize) -> f64,
) -> Result<(SubspaceBasis, Vec<LayerSpectrum>)> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("no representation bundles"))?;
    let n_layers = first.layers.len();
    if bundles.iter().any(|b| b.layers.len() != n_layers) {
        return Err(Error::invalid("bundles disagree on layer count"));
    }

    let mut basis_layers = Vec::with_capacity(n_layers);
    let mut spectra = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let rows = first.layers[l].rows();
        if bundles.iter().any(|b| b.layers[l].rows() != rows) {
            return Err(Error::invalid(format!(
                "bundles disagree on layer {l} input dimension"
            )));
        }
        let parts: Vec<&DenseMatrix> = bundles.iter().map(|b| &b.layers[l]).collect();
        let merged = concat_columns(&parts)?;
        if merged.max_abs() == 0.0 {
            return Err(Error::degenerate(format!(
                "layer {l} representation matrix is all zero"
            )));
        }
        let decomp = svd(&merged)?;
        let epsilon = epsilon_for(l);
        let k = if epsilon >= 1.0 {
            numerical_rank(&decomp.sigma)
        } else {
            rank_for_energy(&decomp.sigma, epsilon)?
        };
        basis_layers.push(take_columns(&decomp.u, k));
        spectra.push(LayerSpectrum {
            sigma: decomp.sigma,
            k,
            epsilon,
        });
    }
    let basis = SubspaceBasis {
        layers: basis_layers,
    };
    basis.validate()?;
    Ok((basis, spectra))
}

fn numerical_rank(sigma: &[f64]) -> usize {
    let max = sigma.first().copied().unwrap_or(0.0);
    sigma.iter().filter(|s| **s > RANK_TOL * max).count().max(1)
}

fn take_columns(m: &DenseMatrix, k: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), k, |r, c| m.get(r, c))
}

/// Apply the orthogonal-complement part of the ascent update:
/// per layer `W ← W − (G − G·U·Uᵀ)`. Bias components are not applied —
/// a bias shift changes the output for every input, so it has no
/// input-subspace component to preserve.
pub fn sfu_update(
    global: &ModelParams,
    g: &GradientSet,
    basis: &SubspaceBasis,
) -> Result<ModelParams> {
    if !global.congruent(g) {
        return Err(Error::invalid("update shape does not match model"));
    }
    if basis.layers.len() != global.layers.len() {
        return Err(Error::invalid(format!(
            "{} basis layers for {} model layers",
            basis.layers.len(),
            global.layers.len()
        )));
    }
    let mut out = global.clone();
    for (l, (layer, grad)) in out.layers.iter_mut().zip(&g.layers).enumerate() {
        let u = &basis.layers[l];
        if u.rows() != layer.weight.cols() {
            return Err(Error::invalid(format!(
                "layer {l}: basis has {} rows, layer input dim is {}",
                u.rows(),
                layer.weight.cols()
            )));
        }
        let applied = if u.cols() == 0 {
            grad.weight.clone()
        } else {
            // Row-wise projection of G onto span(U): G̃ = (G·U)·Uᵀ.
            let coeffs = grad.weight.matmul(u)?;
            let projected = coeffs.matmul_transb(u)?;
            grad.weight.sub(&projected)?
        };
        layer.weight.axpy(-1.0, &applied)?;
    }
    Ok(out)
}

/// Everything the subspace pipeline produces besides the model.
#[derive(Debug, Clone)]
pub struct SfuOutcome {
    pub model: ModelParams,
    pub spectra: Vec<LayerSpectrum>,
    /// Per remaining client (in input order), the private per-layer factors.
    pub lambdas: Vec<Vec<f64>>,
}

/// The full subspace pipeline: target ascent, per-client representations,
/// server-side subspace extraction, orthogonal-complement update.
/// `remaining_ids[i]` is the client id that owns `remaining[i]`, used only
/// for seed derivation.
pub fn sfu_unlearn(
    global: &ModelParams,
    target_data: &Dataset,
    remaining: &[&Dataset],
    remaining_ids: &[usize],
    cfg: &UnlearnConfig,
    master_seed: u64,
) -> Result<SfuOutcome> {
    if remaining.is_empty() {
        return Err(Error::invalid("no remaining clients"));
    }
    if remaining.len() != remaining_ids.len() {
        return Err(Error::invalid("client id list does not match datasets"));
    }
    cfg.validate()?;

    let g = target_ascent(global, target_data, cfg, seed::ascent_seed(master_seed))?;

    let mut bundles = Vec::with_capacity(remaining.len());
    let mut lambdas = Vec::with_capacity(remaining.len());
    for (data, &id) in remaining.iter().zip(remaining_ids) {
        let (bundle, lambda) = client_representation(
            global,
            data,
            cfg.p_samples,
            seed::representation_seed(master_seed, id),
        )?;
        bundles.push(bundle);
        lambdas.push(lambda);
    }

    let (basis, spectra) = server_subspace(&bundles, |l| cfg.epsilon_for(l))?;
    let model = sfu_update(global, &g, &basis)?;
    Ok(SfuOutcome {
        model,
        spectra,
        lambdas,
    })
}

/// Norm-clipped mini-batch gradient ascent on the target client's data,
/// applied directly to the model.
pub fn ga_unlearn(
    global: &ModelParams,
    data: &Dataset,
    cfg: &UnlearnConfig,
    ascent_seed: u64,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::invalid("target dataset is empty"));
    }
    cfg.validate()?;
    let mut model = global.clone();
    let mut rng = seed::rng(ascent_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.ascent_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.ascent_batch) {
            let batch = data.subset(chunk)?;
            let grads = backward(&model, &batch.images, &batch.labels)?;
            let clipped = clip_global_norm(&grads, cfg.clip_norm)?;
            model = sgd_step(&model, &clipped, cfg.ascent_lr, StepDirection::Ascend)?;
        }
    }
    Ok(model)
}

/// Subtract the target client's weighted recorded updates:
/// `w − Σ weight·delta` over the target's history records. A history that
/// contains rounds but no target participation leaves the model unchanged.
pub fn ul_subtract(
    global: &ModelParams,
    history: &UpdateHistory,
    target_id: usize,
) -> Result<ModelParams> {
    if history.is_empty() {
        return Err(Error::MissingPrerequisite(
            "update history is empty; rerun training with history enabled".into(),
        ));
    }
    let mut model = global.clone();
    for record in history.records_for(target_id) {
        model = nn::apply_delta(&model, &record.delta, -record.weight)?;
    }
    Ok(model)
}

/// Post-unlearning recovery: ordinary federated rounds over the remaining
/// clients, starting from the unlearned model.
pub fn recover(
    model: &ModelParams,
    remaining: &[Dataset],
    test: &Dataset,
    trigger: Option<&TriggerSpec>,
    cfg: &FlConfig,
    rounds: usize,
) -> Result<(ModelParams, Vec<RoundReport>)> {
    let cfg = FlConfig {
        rounds,
        n_clients: remaining.len(),
        ..cfg.clone()
    };
    let TrainOutput { model, reports, .. } = run_training(model, remaining, test, trigger, &cfg)?;
    Ok((model, reports))
}

//! SGD, SAM and SANER gradient transforms plus the heavy-ball update.
//!
//! A SANER step on one mini-batch:
//!
//! 1. `g_sgd = ∇L(w)`
//! 2. `g_sam = ∇L(w + ρ g_sgd / ‖g_sgd‖)`
//! 3. `r = g_sam / g_sgd` component-wise
//! 4. `m_B[i] = 0 <= r[i] < 1`
//! 5. `g_final[i] = α g_sam[i]` where `m_B[i]`, else `g_sam[i]`
//!
//! [`wrap_variant`] applies steps 3-5 to any two-step gradient routine, so
//! other perturbation schemes can be reweighted the same way.

use std::fmt;
use std::str::FromStr;

use crate::diagnostics::{self, HybridKind};
use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Sgd,
    Sam,
    #[default]
    Saner,
    /// SAM with SGD values restored on group A.
    SgdGrA,
    /// SAM with SGD values restored on group B.
    SgdGrB,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Sgd, Mode::Sam, Mode::Saner, Mode::SgdGrA, Mode::SgdGrB];

    /// Whether the mode takes a second, perturbed gradient.
    pub fn is_two_step(self) -> bool {
        self != Mode::Sgd
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sgd => "sgd",
            Mode::Sam => "sam",
            Mode::Saner => "saner",
            Mode::SgdGrA => "sgd_gr_a",
            Mode::SgdGrB => "sgd_gr_b",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (expected sgd, sam, saner, sgd_gr_a or sgd_gr_b)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    /// Base learning rate; the harness schedule scales it per epoch.
    pub eta: f64,
    pub rho: f64,
    pub alpha_target: f64,
    /// Epochs over which alpha falls linearly from 1 to `alpha_target`.
    pub k: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub mode: Mode,
    /// Add `λ w` to both gradients before taking the ratio instead of after
    /// reweighting.
    pub ratio_includes_decay: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            rho: 0.1,
            alpha_target: 0.5,
            k: 0,
            momentum: 0.9,
            weight_decay: 5e-4,
            mode: Mode::Saner,
            ratio_includes_decay: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.eta, self.rho, self.alpha_target, self.momentum, self.weight_decay]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("optimizer settings must be finite".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.rho < 0.0 {
            return Err(Error::Config(format!("rho must be non-negative, got {}", self.rho)));
        }
        if self.alpha_target < 0.0 {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha_target)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }

    /// Radius actually used: plain SGD never perturbs.
    pub fn effective_rho(&self) -> f64 {
        if self.mode.is_two_step() {
            self.rho
        } else {
            0.0
        }
    }

    /// Alpha in force during `epoch` (1 for every mode but SANER).
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        match self.mode {
            Mode::Saner => alpha_schedule(epoch, self.k, self.alpha_target),
            _ => 1.0,
        }
    }

    fn decay_in_update(&self) -> f64 {
        if self.ratio_includes_decay {
            0.0
        } else {
            self.weight_decay
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum_buffer: Vec<f64>,
    pub epoch: usize,
    pub iteration: u64,
}

impl OptimizerState {
    pub fn new(d: usize) -> Self {
        Self {
            momentum_buffer: vec![0.0; d],
            epoch: 0,
            iteration: 0,
        }
    }
}

/// Everything computed for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub g_sgd: ParamVector,
    pub g_sam: ParamVector,
    /// `None` where `g_sgd[i] == 0`.
    pub ratio: Vec<Option<f64>>,
    pub mask_b: Vec<bool>,
    pub g_final: ParamVector,
}

/// `ρ g / ‖g‖₂`, or zero when the gradient vanishes.
pub fn sam_perturbation(g_sgd: &[f64], rho: f64) -> ParamVector {
    let norm = g_sgd.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return ParamVector::zeros(g_sgd.len());
    }
    let scale = rho / norm;
    g_sgd.iter().map(|v| v * scale).collect::<Vec<_>>().into()
}

/// `(g_sgd, g_sam)` on the same mini-batch.
pub fn sam_gradient(params: &ParamVector, batch: &Batch, spec: &ModelSpec, rho: f64) -> Result<(ParamVector, ParamVector)> {
    let g_sgd = model::backward(params, batch, spec)?;
    let perturbed = params.added(&sam_perturbation(&g_sgd, rho));
    let g_sam = model::backward(&perturbed, batch, spec)?;
    Ok((g_sgd, g_sam))
}

pub fn component_ratio(g_sam: &[f64], g_sgd: &[f64]) -> Result<Vec<Option<f64>>> {
    if g_sam.len() != g_sgd.len() {
        return Err(Error::LengthMismatch {
            left: g_sgd.len(),
            right: g_sam.len(),
        });
    }
    Ok(g_sam
        .iter()
        .zip(g_sgd)
        .map(|(&s, &g)| (g != 0.0).then(|| s / g))
        .collect())
}

pub fn mask_b(ratio: &[Option<f64>]) -> Vec<bool> {
    ratio
        .iter()
        .map(|r| matches!(r, Some(v) if (0.0..1.0).contains(v)))
        .collect()
}

pub fn saner_combine(g_sam: &[f64], mask: &[bool], alpha: f64) -> ParamVector {
    g_sam
        .iter()
        .zip(mask)
        .map(|(&g, &m)| if m { alpha * g } else { g })
        .collect::<Vec<_>>()
        .into()
}

/// Linear decay from 1 at epoch 0 to `alpha_target` at epoch `k`, flat
/// afterwards; `k == 0` means the target applies from the start.
pub fn alpha_schedule(epoch: usize, k: usize, alpha_target: f64) -> f64 {
    if epoch >= k {
        return alpha_target;
    }
    let progress = epoch as f64 / k as f64;
    1.0 - (1.0 - alpha_target) * progress
}

/// Heavy-ball step: `buf = μ buf + (g + λ w)`, `w -= η buf`.
///
/// On a non-finite result neither `params` nor `state` is modified.
pub fn apply_update(
    params: &mut ParamVector,
    g_final: &[f64],
    state: &mut OptimizerState,
    config: &OptimConfig,
    eta: f64,
) -> Result<()> {
    if g_final.len() != params.len() || state.momentum_buffer.len() != params.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: g_final.len().min(state.momentum_buffer.len()),
        });
    }
    let decay = config.decay_in_update();
    let mu = config.momentum;
    let buffer: Vec<f64> = state
        .momentum_buffer
        .iter()
        .zip(g_final)
        .zip(params.iter())
        .map(|((&b, &g), &w)| mu * b + (g + decay * w))
        .collect();
    let updated: Vec<f64> = params.iter().zip(&buffer).map(|(&w, &b)| w - eta * b).collect();
    if let Some(index) = updated.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteUpdate { index });
    }
    *params = updated.into();
    state.momentum_buffer = buffer;
    state.iteration += 1;
    Ok(())
}

/// Turns a routine producing `(g_sgd, g_star)` on one batch into its
/// SANER-reweighted counterpart. The returned closure takes alpha per call.
pub fn wrap_variant<F>(two_step: F) -> impl Fn(&ParamVector, &Batch, f64) -> Result<GradientBundle>
where
    F: Fn(&ParamVector, &Batch) -> Result<(ParamVector, ParamVector)>,
{
    move |params, batch, alpha| {
        let (g_sgd, g_star) = two_step(params, batch)?;
        reweight(g_sgd, g_star, alpha)
    }
}

fn reweight(g_sgd: ParamVector, g_star: ParamVector, alpha: f64) -> Result<GradientBundle> {
    let ratio = component_ratio(&g_star, &g_sgd)?;
    let mask = mask_b(&ratio);
    let g_final = saner_combine(&g_star, &mask, alpha);
    Ok(GradientBundle {
        g_sgd,
        g_sam: g_star,
        ratio,
        mask_b: mask,
        g_final,
    })
}

/// Mini-batch loss at the unperturbed point and the gradient to feed
/// [`apply_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    pub g_final: ParamVector,
}

/// Gradient for the configured mode.
pub fn step_gradient(
    params: &ParamVector,
    batch: &Batch,
    spec: &ModelSpec,
    config: &OptimConfig,
    alpha: f64,
) -> Result<StepOutput> {
    let decay = |g: ParamVector| {
        if config.ratio_includes_decay && config.weight_decay != 0.0 {
            g.added(&params.scaled(config.weight_decay))
        } else {
            g
        }
    };
    let (loss, g_sgd) = model::loss_and_gradient(params, batch, spec)?;
    if config.mode == Mode::Sgd {
        return Ok(StepOutput {
            loss,
            g_final: decay(g_sgd),
        });
    }
    let perturbed = params.added(&sam_perturbation(&g_sgd, config.rho));
    let g_sam = model::backward(&perturbed, batch, spec)?;
    let (g_sgd, g_sam) = (decay(g_sgd), decay(g_sam));
    let g_final = match config.mode {
        Mode::Sgd => unreachable!(),
        Mode::Sam => g_sam,
        Mode::Saner => reweight(g_sgd, g_sam, alpha)?.g_final,
        Mode::SgdGrA | Mode::SgdGrB => {
            let kind = if config.mode == Mode::SgdGrA {
                HybridKind::SgdGrA
            } else {
                HybridKind::SgdGrB
            };
            let partition = diagnostics::partition_groups(&component_ratio(&g_sam, &g_sgd)?);
            diagnostics::hybrid_gradient(&g_sgd, &g_sam, &partition, kind)
        }
    };
    Ok(StepOutput { loss, g_final })
}

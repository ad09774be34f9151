//! Noise schedule, forward noising, noise-prediction loss, and the ancestral
//! sampling loop.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};
use crate::trajectory::TrajectoryMap;
use crate::unet::{TokenSequence, UNet, UnetError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid beta bounds: need 0 < start <= end < 1, got [{0}, {1}]")]
    BadBetaBounds(f64, f64),
    #[error("timestep {t} out of range [0, {max})")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("steps must be in [1, {max}], got {steps}")]
    BadStepCount { steps: usize, max: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] UnetError),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// Beta/alpha/alpha-bar arrays over `T` timesteps. Stored at f64 so the
/// running product stays tight regardless of the training precision.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Linear beta ramp from `beta_start` to `beta_end` over `steps` timesteps;
/// alpha-bar is the running product of `1 - beta`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0
        || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)
        || !beta_start.is_finite()
        || !beta_end.is_finite()
    {
        return Err(DiffusionError::BadBetaBounds(beta_start, beta_end));
    }
    let mut beta = Vec::with_capacity(steps);
    for i in 0..steps {
        let frac = if steps == 1 {
            0.0
        } else {
            i as f64 / (steps - 1) as f64
        };
        beta.push(beta_start + (beta_end - beta_start) * frac);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
    })
}

/// Forward noising: `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn q_sample<S: Scalar>(
    z0: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
    ns: &NoiseSchedule,
) -> Result<Tensor<S>> {
    if t >= ns.steps {
        return Err(DiffusionError::TimestepOutOfRange { t, max: ns.steps });
    }
    let a = S::from_f64(ns.alpha_bar[t].sqrt());
    let b = S::from_f64((1.0 - ns.alpha_bar[t]).sqrt());
    Ok(z0.mul_scalar(a).add(&eps.mul_scalar(b))?)
}

/// Mean squared error between predicted and true noise, averaged over all
/// elements. Differentiable with respect to both arguments.
pub fn noise_loss<S: Scalar>(eps_pred: &Tensor<S>, eps: &Tensor<S>) -> Result<Tensor<S>> {
    let diff = eps_pred.sub(eps)?;
    Ok(diff.mul(&diff)?.mean_all())
}

/// How the reverse process adds noise between strided steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Ancestral sampling with seeded per-step noise.
    #[default]
    Ancestral,
    /// Zero added noise; useful for regression tests.
    Deterministic,
}

/// Conditions for one sampled video. Every field is independently omissible.
pub struct SampleConditions<'a, S: Scalar> {
    pub tokens: &'a TokenSequence,
    pub rt: Option<&'a Tensor<S>>,
    pub trajectory_map: Option<&'a TrajectoryMap<S>>,
}

/// Ancestral sampling over an evenly strided subset of the schedule.
/// Deterministic given the seed; the latent shape comes from the model
/// config.
pub fn sample<S: Scalar>(
    model: &UNet<S>,
    ns: &NoiseSchedule,
    cond: &SampleConditions<'_, S>,
    steps: usize,
    kind: SamplerKind,
    seed: u64,
) -> Result<Tensor<S>> {
    if steps == 0 || steps > ns.steps {
        return Err(DiffusionError::BadStepCount {
            steps,
            max: ns.steps,
        });
    }
    let cfg = model.config();
    let shape = [cfg.frames, cfg.in_channels, cfg.height, cfg.width];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Tensor::<S>::randn(&shape, &mut rng);

    // Evenly strided timesteps, highest first, always ending at 0.
    let mut ts: Vec<usize> = if steps == 1 {
        vec![ns.steps - 1]
    } else {
        (0..steps)
            .map(|i| (ns.steps - 1) * (steps - 1 - i) / (steps - 1))
            .collect()
    };
    ts.dedup();

    for (i, &t) in ts.iter().enumerate() {
        let eps_pred = model.forward(&z, t, cond.tokens, cond.rt, cond.trajectory_map)?;
        let abar_t = ns.alpha_bar[t];
        let abar_prev = if i + 1 < ts.len() {
            ns.alpha_bar[ts[i + 1]]
        } else {
            1.0
        };
        // Predicted clean latent, clamped to the data range.
        let coef_x0 = S::from_f64(1.0 / abar_t.sqrt());
        let coef_eps = S::from_f64((1.0 - abar_t).sqrt() / abar_t.sqrt());
        let x0_raw = z
            .mul_scalar(coef_x0)
            .sub(&eps_pred.mul_scalar(coef_eps))?;
        let x0: Vec<S> = x0_raw
            .data()
            .iter()
            .map(|v| v.as_f64().clamp(-1.0, 1.0))
            .map(S::from_f64)
            .collect();
        let x0 = Tensor::from_vec(&shape, x0)?;

        // Generalized ancestral update toward abar_prev.
        let sigma = match kind {
            SamplerKind::Ancestral => {
                ((1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - abar_t / abar_prev)).sqrt()
            }
            SamplerKind::Deterministic => 0.0,
        };
        let dir_coef = (1.0 - abar_prev - sigma * sigma).max(0.0).sqrt();
        let mut next = x0
            .mul_scalar(S::from_f64(abar_prev.sqrt()))
            .add(&eps_pred.mul_scalar(S::from_f64(dir_coef)))?;
        if sigma > 0.0 && i + 1 < ts.len() {
            let noise = Tensor::<S>::randn(&shape, &mut rng);
            next = next.add(&noise.mul_scalar(S::from_f64(sigma)))?;
        }
        z = next.detach();
    }
    Ok(z)
}

/// Map a rendered video in `[0,1]` to the latent training range `[-1,1]`.
pub fn video_to_latent<S: Scalar>(video: &Tensor<S>) -> Tensor<S> {
    video.mul_scalar(S::from_f64(2.0)).add_scalar(S::from_f64(-1.0))
}

/// Inverse of [`video_to_latent`], clamped back into `[0,1]`.
pub fn latent_to_video<S: Scalar>(latent: &Tensor<S>) -> Tensor<S> {
    let data: Vec<S> = latent
        .data()
        .iter()
        .map(|v| S::from_f64(((v.as_f64() + 1.0) / 2.0).clamp(0.0, 1.0)))
        .collect();
    Tensor::from_vec(latent.shape(), data).unwrap()
}

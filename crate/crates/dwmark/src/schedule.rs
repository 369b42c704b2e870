//! Diffusion-time algebra: noise schedule construction, forward noising,
//! noise/image inversion and the deterministic reverse-process update.
//!
//! The schedule is built by resampling the cumulative signal coefficients of
//! the reference 1000-step linear schedule at `T` evenly spaced points ending
//! at step 1000. Resampling (rather than stretching the betas over `T` steps)
//! keeps the terminal state noise-dominated: the compressed schedule ends at
//! the same alpha_bar as the full one (~4e-5), so sampling can start from
//! N(0, I). Stretching instead would leave alpha_bar[T] around 0.37 at T=100.
//!
//! All schedule arithmetic is f64; image tensors may be f32.

use candle_core::Tensor;

use crate::error::{ensure_same_shape, Error, Result};

pub const REFERENCE_STEPS: usize = 1000;
pub const REFERENCE_BETA_START: f64 = 1e-4;
pub const REFERENCE_BETA_END: f64 = 0.02;

/// Per-timestep noise coefficients over a compressed horizon of `T` steps.
///
/// Indexing is 1-based to match the usual diffusion convention; t=0 denotes
/// the clean-data endpoint with `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of timesteps T.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.len() {
            return Err(Error::TimestepOutOfRange { t, max: self.len() });
        }
        Ok(())
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// alpha_bar_t for t in 0..=T, with the alpha_bar_0 = 1 convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// Scale applied to the clean image when building the facial condition
    /// during training: sqrt(1 - alpha_bar_t).
    pub fn condition_scale_train(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.sqrt_one_minus_alpha_bar(t))
    }

    /// Scale applied to the cover image when building the facial condition
    /// during sampling: sqrt(1 - alpha_bar_{t-1}). Zero at t = 1.
    pub fn condition_scale_sample(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.sqrt_one_minus_alpha_bar(t - 1))
    }
}

/// Cumulative signal coefficients of the reference 1000-step linear schedule.
pub fn reference_alpha_bar() -> Vec<f64> {
    let mut out = Vec::with_capacity(REFERENCE_STEPS);
    let mut prod = 1.0f64;
    for i in 0..REFERENCE_STEPS {
        let beta = REFERENCE_BETA_START
            + (REFERENCE_BETA_END - REFERENCE_BETA_START) * i as f64
                / (REFERENCE_STEPS - 1) as f64;
        prod *= 1.0 - beta;
        out.push(prod);
    }
    out
}

/// Build a compressed schedule of `t_steps` timesteps.
///
/// alpha_bar values are the reference schedule's, taken at `t_steps` evenly
/// spaced indices ending at step 1000; betas are recovered from consecutive
/// alpha_bar ratios.
pub fn make_schedule(t_steps: usize) -> Result<NoiseSchedule> {
    if t_steps < 1 || t_steps > REFERENCE_STEPS {
        return Err(Error::InvalidArgument(format!(
            "schedule length {t_steps} outside 1..={REFERENCE_STEPS}"
        )));
    }
    let reference = reference_alpha_bar();
    let stride = REFERENCE_STEPS as f64 / t_steps as f64;
    let mut alpha_bar = Vec::with_capacity(t_steps);
    let mut beta = Vec::with_capacity(t_steps);
    let mut prev_ref = 1.0f64;
    let mut running = 1.0f64;
    for k in 1..=t_steps {
        let idx = (k as f64 * stride).round() as usize; // 1-based reference step
        let ab = reference[idx - 1];
        let b = 1.0 - ab / prev_ref;
        prev_ref = ab;
        // store the product reconstruction so the alpha_bar/beta identity
        // holds to machine precision at every horizon
        running *= 1.0 - b;
        beta.push(b);
        alpha_bar.push(running);
    }
    Ok(NoiseSchedule { beta, alpha_bar })
}

/// Diffuse `x0` to timestep `t`: sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
pub fn forward_noise(x0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_t(t)?;
    ensure_same_shape("forward_noise", x0, eps)?;
    let a = s.sqrt_alpha_bar(t);
    let b = s.sqrt_one_minus_alpha_bar(t);
    Ok((x0.affine(a, 0.0)? + eps.affine(b, 0.0)?)?)
}

/// Invert the forward process: the unique eps_hat with
/// x_t = sqrt(alpha_bar_t) x0_hat + sqrt(1 - alpha_bar_t) eps_hat.
pub fn noise_from_x0(x_t: &Tensor, x0_hat: &Tensor, t: usize, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_t(t)?;
    ensure_same_shape("noise_from_x0", x_t, x0_hat)?;
    let ab = s.alpha_bar(t);
    let inv = 1.0 / (1.0 - ab).sqrt();
    let coef = (ab / (1.0 - ab)).sqrt();
    Ok((x_t.affine(inv, 0.0)? - x0_hat.affine(coef, 0.0)?)?)
}

/// One deterministic reverse-process update from t to t-1:
/// sqrt(alpha_bar_{t-1}) (x_t - sqrt(1-alpha_bar_t) eps_hat)/sqrt(alpha_bar_t)
///   + sqrt(1-alpha_bar_{t-1}) eps_hat.
///
/// At t = 1 the alpha_bar_0 = 1 convention makes the result the model's
/// clean-image prediction exactly.
pub fn ddim_step(x_t: &Tensor, eps_hat: &Tensor, t: usize, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_t(t)?;
    ensure_same_shape("ddim_step", x_t, eps_hat)?;
    let ab_t = s.alpha_bar(t);
    let ab_prev = s.alpha_bar(t - 1);
    // sqrt(ab_prev/ab_t) x_t + [sqrt(1-ab_prev) - sqrt(ab_prev (1-ab_t)/ab_t)] eps_hat
    let x_coef = (ab_prev / ab_t).sqrt();
    let e_coef = (1.0 - ab_prev).sqrt() - (ab_prev * (1.0 - ab_t) / ab_t).sqrt();
    Ok((x_t.affine(x_coef, 0.0)? + eps_hat.affine(e_coef, 0.0)?)?)
}

//! Forward noising, the epsilon-prediction objective, the DDIM reverse
//! step and classifier-free guidance.
//!
//! All operations are pure given their inputs. Scalar coefficients are
//! evaluated at `f64` from the schedule and converted once to the working
//! element type, so the `f32` sampling path is deterministic.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conditioning::PromptEmbedding;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Element types the numerical core is generic over (`f32` for sampling
/// and training, `f64` for gradient verification).
pub trait Scalar: ndarray::NdFloat {}
impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn sc<T: Scalar>(x: f64) -> T {
    T::from(x).expect("f64 converts to every Scalar type")
}

/// A latent tensor tagged with its diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T = f32> {
    pub data: Array3<T>,
    pub timestep: usize,
}

impl<T: Scalar> LatentState<T> {
    pub fn new(data: Array3<T>, timestep: usize) -> Self {
        LatentState { data, timestep }
    }
}

/// An evaluable noise predictor `eps(z_t, t, e)`.
///
/// Implementations must be deterministic given their parameters and safe
/// for concurrent read-only evaluation.
pub trait Denoiser<T: Scalar>: Sync {
    /// Predicted noise; output shape must equal the input shape.
    fn forward(&self, z_t: &Array3<T>, t: usize, embedding: &PromptEmbedding<T>) -> Array3<T>;
}

impl<T: Scalar, D: Denoiser<T> + ?Sized> Denoiser<T> for &D {
    fn forward(&self, z_t: &Array3<T>, t: usize, embedding: &PromptEmbedding<T>) -> Array3<T> {
        (**self).forward(z_t, t, embedding)
    }
}

/// The analytically optimal denoiser for a point-mass data distribution
/// concentrated on a single image `x*`:
/// `eps(z_t, t) = (z_t - sqrt(alpha_bar_t) * x*) / sqrt(1 - alpha_bar_t)`.
///
/// A deterministic DDIM trajectory driven by it recovers `x*` from any
/// starting noise, which makes it a closed-form oracle for sampler loops.
/// Conditioning is ignored.
pub struct PointMassDenoiser<T> {
    target: Array3<T>,
    schedule: NoiseSchedule,
}

impl<T: Scalar> PointMassDenoiser<T> {
    pub fn new(target: Array3<T>, schedule: NoiseSchedule) -> Self {
        PointMassDenoiser { target, schedule }
    }
}

impl<T: Scalar> Denoiser<T> for PointMassDenoiser<T> {
    fn forward(&self, z_t: &Array3<T>, t: usize, _embedding: &PromptEmbedding<T>) -> Array3<T> {
        let ab = self.schedule.alpha_bar(t);
        let signal: T = sc(ab.sqrt());
        let noise_scale: T = sc((1.0 - ab).sqrt().max(f64::MIN_POSITIVE));
        (z_t - &(&self.target * signal)) / noise_scale
    }
}

fn check_same_shape<T: Scalar>(a: &Array3<T>, b: &Array3<T>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Forward process: `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
///
/// `t = 0` is the identity by the `alpha_bar(0) = 1` convention.
pub fn q_sample<T: Scalar>(
    x0: &Array3<T>,
    t: usize,
    eps: &Array3<T>,
    schedule: &NoiseSchedule,
) -> Result<Array3<T>> {
    check_same_shape(x0, eps, "q_sample eps vs x0")?;
    if t > schedule.num_timesteps() {
        return Err(Error::invalid(format!(
            "timestep {t} out of range 0..={}",
            schedule.num_timesteps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let signal: T = sc(ab.sqrt());
    let noise: T = sc((1.0 - ab).sqrt());
    Ok(&(x0 * signal) + &(eps * noise))
}

/// Inverts the forward process around a noise estimate:
/// `x0_hat = (z_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)`.
///
/// `t = 0` is rejected: a clean image has nothing to invert.
pub fn predict_x0<T: Scalar>(
    z_t: &Array3<T>,
    t: usize,
    eps_hat: &Array3<T>,
    schedule: &NoiseSchedule,
) -> Result<Array3<T>> {
    check_same_shape(z_t, eps_hat, "predict_x0 eps_hat vs z_t")?;
    if t == 0 || t > schedule.num_timesteps() {
        return Err(Error::invalid(format!(
            "timestep {t} out of range 1..={}",
            schedule.num_timesteps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let noise: T = sc((1.0 - ab).sqrt());
    let inv_signal: T = sc(1.0 / ab.sqrt());
    Ok(&(z_t - &(eps_hat * noise)) * inv_signal)
}

/// One DDIM update from timestep `t` to `t_prev < t`.
///
/// With `x0_hat = predict_x0(z_t, t, eps_hat)` and
/// `sigma_t = eta * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev)`:
///
/// `z_prev = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev - sigma_t^2) * eps_hat + sigma_t * noise`
///
/// `noise` is required only when `eta > 0`. At `eta = 0` the update is
/// fully deterministic; stepping to `t_prev = 0` returns `x0_hat` exactly.
pub fn ddim_step<T: Scalar>(
    z_t: &Array3<T>,
    t: usize,
    t_prev: usize,
    eps_hat: &Array3<T>,
    eta: f64,
    schedule: &NoiseSchedule,
    noise: Option<&Array3<T>>,
) -> Result<Array3<T>> {
    if t_prev >= t {
        return Err(Error::invalid(format!("t_prev {t_prev} must be below t {t}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta must be in [0, 1], got {eta}")));
    }
    if let Some(n) = noise {
        check_same_shape(z_t, n, "ddim_step noise vs z_t")?;
    }
    let x0_hat = predict_x0(z_t, t, eps_hat, schedule)?;

    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let sigma_t = eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt();
    let radicand = 1.0 - ab_prev - sigma_t * sigma_t;
    if radicand < -1e-12 {
        return Err(Error::invalid(format!(
            "negative radicand {radicand} in ddim_step; inconsistent schedule"
        )));
    }
    let dir: T = sc(radicand.max(0.0).sqrt());
    let signal_prev: T = sc(ab_prev.sqrt());

    let mut out = &(&x0_hat * signal_prev) + &(eps_hat * dir);
    if eta > 0.0 && sigma_t > 0.0 {
        let n = noise.ok_or_else(|| Error::invalid("eta > 0 requires a noise tensor"))?;
        out = &out + &(n * sc::<T>(sigma_t));
    }
    Ok(out)
}

/// Classifier-free guidance: `eps_uncond + scale * (eps_cond - eps_uncond)`.
///
/// `scale = 0` and `scale = 1` return the unconditional and conditional
/// predictions bit-exactly.
pub fn cfg_eps<T: Scalar>(
    eps_uncond: &Array3<T>,
    eps_cond: &Array3<T>,
    scale: f64,
) -> Result<Array3<T>> {
    check_same_shape(eps_uncond, eps_cond, "cfg_eps")?;
    if scale == 0.0 {
        return Ok(eps_uncond.clone());
    }
    if scale == 1.0 {
        return Ok(eps_cond.clone());
    }
    let s: T = sc(scale);
    Ok(eps_uncond + &(&(eps_cond - eps_uncond) * s))
}

/// The epsilon-prediction objective: per batch item draws `t` uniform on
/// `1..=T` and `eps ~ N(0, 1)`, noises the item, and returns the mean over
/// the batch of the per-element mean squared error between `eps` and the
/// denoiser's prediction.
pub fn training_loss<T, D, R>(
    denoiser: &D,
    x0_batch: &[Array3<T>],
    embeddings: &[PromptEmbedding<T>],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<T>
where
    T: Scalar,
    D: Denoiser<T> + ?Sized,
    R: Rng,
    StandardNormal: Distribution<T>,
{
    if x0_batch.is_empty() {
        return Err(Error::invalid("training batch must be nonempty"));
    }
    if x0_batch.len() != embeddings.len() {
        return Err(Error::shape(format!(
            "batch of {} images vs {} embeddings",
            x0_batch.len(),
            embeddings.len()
        )));
    }
    let t_max = schedule.num_timesteps();
    let mut total = T::zero();
    for (x0, e) in x0_batch.iter().zip(embeddings) {
        let t = rng.random_range(1..=t_max);
        let eps = Array3::from_shape_fn(x0.dim(), |_| StandardNormal.sample(rng));
        let z_t = q_sample(x0, t, &eps, schedule)?;
        let eps_hat = denoiser.forward(&z_t, t, e);
        let diff = &eps - &eps_hat;
        let n = sc::<T>(diff.len() as f64);
        total = total + diff.mapv(|d| d * d).sum() / n;
    }
    Ok(total / sc(x0_batch.len() as f64))
}

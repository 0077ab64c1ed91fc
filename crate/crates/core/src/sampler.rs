//! Two-stage generation: text-to-image from pure noise and image-to-image
//! from a partially noised input, through the perceptual codec boundary.
//!
//! A generation is a deterministic function of (seed, plan, config, model
//! parameters): all randomness flows from one seeded generator, consumed in
//! a fixed order (initial latents first, then any stochastic step noise).

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conditioning::{
    conditioning_for_step, encode_prompt, EmbeddingTable, Prompt, PromptEmbedding, StagePlan,
};
use crate::diffusion::{cfg_eps, ddim_step, q_sample, Denoiser, LatentState};
use crate::error::{Error, Result};
use crate::schedule::{ddim_timesteps, NoiseSchedule};

/// Encoder/decoder pair between image space (`[0, 1]`) and model space.
pub trait PerceptualCodec: Sync {
    fn encode(&self, image: &Array3<f32>) -> Array3<f32>;
    fn decode(&self, latent: &Array3<f32>) -> Array3<f32>;
}

/// The default codec: the affine range map `[0, 1] <-> [-1, 1]` with no
/// learned compression. Decoding clamps to `[0, 1]`.
pub struct IdentityCodec;

impl PerceptualCodec for IdentityCodec {
    fn encode(&self, image: &Array3<f32>) -> Array3<f32> {
        image.mapv(|v| (v - 0.5) * 2.0)
    }

    fn decode(&self, latent: &Array3<f32>) -> Array3<f32> {
        latent.mapv(|v| (v * 0.5 + 0.5).clamp(0.0, 1.0))
    }
}

/// Sampler parameters shared by every generation entry point.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub eta: f64,
    pub guidance_scale: f64,
    pub seed: u64,
    pub batch: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { num_steps: 50, eta: 0.0, guidance_scale: 3.0, seed: 42, batch: 4 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::invalid("num_steps must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta must be in [0, 1], got {}", self.eta)));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(Error::invalid(format!(
                "guidance_scale must be >= 0, got {}",
                self.guidance_scale
            )));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        Ok(())
    }
}

fn check_plan(plan: &StagePlan, config: &SamplerConfig) -> Result<()> {
    config.validate()?;
    if plan.num_steps != config.num_steps {
        return Err(Error::invalid(format!(
            "plan covers {} steps but sampler is configured for {}",
            plan.num_steps, config.num_steps
        )));
    }
    Ok(())
}

fn randn<R: Rng>(shape: (usize, usize, usize), rng: &mut R) -> Array3<f32> {
    let n = shape.0 * shape.1 * shape.2;
    let values: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Array3::from_shape_vec(shape, values).expect("length matches shape")
}

/// One guided noise prediction. At scale 1 only the conditional branch is
/// evaluated, at scale 0 only the unconditional one, matching `cfg_eps`'s
/// exact limits.
fn guided_eps<D: Denoiser<f32> + ?Sized>(
    denoiser: &D,
    z: &Array3<f32>,
    t: usize,
    e_cond: &PromptEmbedding<f32>,
    e_null: &PromptEmbedding<f32>,
    scale: f64,
) -> Result<Array3<f32>> {
    if scale == 1.0 {
        return Ok(denoiser.forward(z, t, e_cond));
    }
    if scale == 0.0 {
        return Ok(denoiser.forward(z, t, e_null));
    }
    let eps_uncond = denoiser.forward(z, t, e_null);
    let eps_cond = denoiser.forward(z, t, e_cond);
    cfg_eps(&eps_uncond, &eps_cond, scale)
}

/// Runs step indices `[from, to)` of the trajectory, looking up the
/// conditional embedding per step from the plan.
fn run_steps<D: Denoiser<f32> + ?Sized, R: Rng>(
    denoiser: &D,
    plan: &StagePlan,
    table: &EmbeddingTable<f32>,
    mut z: Array3<f32>,
    timesteps: &[usize],
    from: usize,
    to: usize,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array3<f32>> {
    let e_null = encode_prompt(table, &Prompt::null())?;
    for i in from..to {
        let t = timesteps[i];
        let t_prev = timesteps.get(i + 1).copied().unwrap_or(0);
        let e = conditioning_for_step(plan, i, table)?;
        let eps = guided_eps(denoiser, &z, t, &e, &e_null, config.guidance_scale)?;
        let noise = if config.eta > 0.0 { Some(randn(z.dim(), rng)) } else { None };
        z = ddim_step(&z, t, t_prev, &eps, config.eta, schedule, noise.as_ref())?;
    }
    Ok(z)
}

/// Global layout stage: denoises from pure noise down to the stage
/// boundary under the global prompt. The returned latent is tagged with
/// the timestep reached at the boundary.
pub fn run_global_stage<D: Denoiser<f32> + ?Sized, R: Rng>(
    denoiser: &D,
    plan: &StagePlan,
    table: &EmbeddingTable<f32>,
    z_start: &LatentState,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentState> {
    check_plan(plan, config)?;
    let t_max = schedule.num_timesteps();
    if z_start.timestep != t_max {
        return Err(Error::invalid(format!(
            "global stage starts from pure noise at t = {t_max}, got t = {}",
            z_start.timestep
        )));
    }
    let ts = ddim_timesteps(t_max, config.num_steps)?;
    let b = plan.boundary();
    let z = run_steps(denoiser, plan, table, z_start.data.clone(), &ts, 0, b, config, schedule, rng)?;
    let reached = ts.get(b).copied().unwrap_or(0);
    Ok(LatentState::new(z, reached))
}

/// Focus stage: runs the remaining steps under the interpolated embedding.
/// `z_mid` must carry the timestep tag produced by [`run_global_stage`]
/// with the same plan and config.
pub fn run_focus_stage<D: Denoiser<f32> + ?Sized, R: Rng>(
    denoiser: &D,
    plan: &StagePlan,
    table: &EmbeddingTable<f32>,
    z_mid: &LatentState,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentState> {
    check_plan(plan, config)?;
    let ts = ddim_timesteps(schedule.num_timesteps(), config.num_steps)?;
    let b = plan.boundary();
    let expected = ts.get(b).copied().unwrap_or(0);
    if z_mid.timestep != expected {
        return Err(Error::invalid(format!(
            "focus stage expects a latent at t = {expected} for this plan, got t = {}",
            z_mid.timestep
        )));
    }
    let z = run_steps(
        denoiser,
        plan,
        table,
        z_mid.data.clone(),
        &ts,
        b,
        config.num_steps,
        config,
        schedule,
        rng,
    )?;
    Ok(LatentState::new(z, 0))
}

/// Full two-stage text-to-image generation: draws `config.batch` initial
/// latents from the seeded source, runs both stages for each, and decodes
/// through the codec. Output pixels are in `[0, 1]`.
pub fn generate_text_to_image<D: Denoiser<f32> + ?Sized, C: PerceptualCodec + ?Sized>(
    denoiser: &D,
    plan: &StagePlan,
    table: &EmbeddingTable<f32>,
    canvas: (usize, usize, usize),
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    codec: &C,
) -> Result<Vec<Array3<f32>>> {
    check_plan(plan, config)?;
    let t_max = schedule.num_timesteps();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.batch);
    for _ in 0..config.batch {
        let z_t = LatentState::new(randn(canvas, &mut rng), t_max);
        let mid = run_global_stage(denoiser, plan, table, &z_t, config, schedule, &mut rng)?;
        let fin = run_focus_stage(denoiser, plan, table, &mid, config, schedule, &mut rng)?;
        out.push(codec.decode(&fin.data));
    }
    Ok(out)
}

/// Single-stage reference sampler: one prompt for every step, no stage
/// logic. This is the baseline that two-stage generation collapses to at
/// `sigma = 1`.
pub fn generate_baseline<D: Denoiser<f32> + ?Sized, C: PerceptualCodec + ?Sized>(
    denoiser: &D,
    prompt: &Prompt,
    table: &EmbeddingTable<f32>,
    canvas: (usize, usize, usize),
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    codec: &C,
) -> Result<Vec<Array3<f32>>> {
    config.validate()?;
    let t_max = schedule.num_timesteps();
    let ts = ddim_timesteps(t_max, config.num_steps)?;
    let e_null = encode_prompt(table, &Prompt::null())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.batch);
    for _ in 0..config.batch {
        let mut z = randn(canvas, &mut rng);
        for i in 0..ts.len() {
            let t = ts[i];
            let t_prev = ts.get(i + 1).copied().unwrap_or(0);
            let e = encode_prompt(table, prompt)?;
            let eps = guided_eps(denoiser, &z, t, &e, &e_null, config.guidance_scale)?;
            let noise = if config.eta > 0.0 { Some(randn(z.dim(), &mut rng)) } else { None };
            z = ddim_step(&z, t, t_prev, &eps, config.eta, schedule, noise.as_ref())?;
        }
        out.push(codec.decode(&z));
    }
    Ok(out)
}

/// Image-to-image generation: encodes the input, noises it to the
/// timestep of sampler step `num_steps - floor(strength * num_steps)`, and
/// runs the remaining steps of the stage schedule (the stage boundary is
/// computed on the full step count and clipped).
///
/// `strength = 1` replays the whole trajectory from a noised encoding;
/// strengths below `1 / num_steps` leave no steps and return
/// `decode(encode(input))`.
pub fn generate_image_to_image<D: Denoiser<f32> + ?Sized, C: PerceptualCodec + ?Sized>(
    denoiser: &D,
    input_image: &Array3<f32>,
    strength: f64,
    plan: &StagePlan,
    table: &EmbeddingTable<f32>,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    codec: &C,
) -> Result<Array3<f32>> {
    check_plan(plan, config)?;
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::invalid(format!("strength must be in (0, 1], got {strength}")));
    }
    if let Some(v) = input_image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("input pixel {v} outside [0, 1]")));
    }
    let n = config.num_steps;
    let steps_to_run = (strength * n as f64).floor() as usize;
    let start = n - steps_to_run;
    let z0 = codec.encode(input_image);
    if start == n {
        return Ok(codec.decode(&z0));
    }
    let ts = ddim_timesteps(schedule.num_timesteps(), n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eps = randn(z0.dim(), &mut rng);
    let z = q_sample(&z0, ts[start], &eps, schedule)?;
    let z = run_steps(denoiser, plan, table, z, &ts, start, n, config, schedule, &mut rng)?;
    Ok(codec.decode(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::Vocabulary;
    use crate::diffusion::PointMassDenoiser;
    use std::sync::Mutex;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 0.00085, 0.012).unwrap()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(["a", "b", "c"]).unwrap()
    }

    fn table(seed: u64) -> EmbeddingTable<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable::init(vocab().len(), 8, 0.5, &mut rng)
    }

    fn plan(sigma: f64, alpha: f64, n: usize) -> StagePlan {
        let v = vocab();
        StagePlan::new(
            sigma,
            alpha,
            Prompt::parse(&v, &["a", "b"]).unwrap(),
            Prompt::parse(&v, &["a"]).unwrap(),
            n,
        )
        .unwrap()
    }

    /// A small deterministic denoiser whose output depends on (z, t, e) in
    /// a smooth, embedding-sensitive way. Stands in for a trained model in
    /// code-path tests.
    struct MixDenoiser;
    impl Denoiser<f32> for MixDenoiser {
        fn forward(&self, z: &Array3<f32>, t: usize, e: &PromptEmbedding<f32>) -> Array3<f32> {
            let bias: f32 = e.values().iter().enumerate().map(|(i, v)| v * 0.01 * (i as f32 + 1.0)).sum();
            let k = 0.9 + 1e-5 * t as f32;
            z.mapv(|v| v * k + bias * 0.05)
        }
    }

    /// Records the embeddings each forward call receives.
    struct RecordingDenoiser {
        inner: MixDenoiser,
        seen: Mutex<Vec<(usize, Vec<f32>)>>,
    }
    impl RecordingDenoiser {
        fn new() -> Self {
            RecordingDenoiser { inner: MixDenoiser, seen: Mutex::new(Vec::new()) }
        }
    }
    impl Denoiser<f32> for RecordingDenoiser {
        fn forward(&self, z: &Array3<f32>, t: usize, e: &PromptEmbedding<f32>) -> Array3<f32> {
            self.seen.lock().unwrap().push((t, e.values().to_vec()));
            self.inner.forward(z, t, e)
        }
    }

    fn cfg(n: usize) -> SamplerConfig {
        SamplerConfig { num_steps: n, ..SamplerConfig::default() }
    }

    const CANVAS: (usize, usize, usize) = (8, 8, 3);

    #[test]
    fn codec_round_trip_exact_on_dyadic_grid() {
        let codec = IdentityCodec;
        let img = Array3::from_shape_fn((4, 4, 3), |(y, x, c)| {
            ((y * 16 + x * 4 + c) % 256) as f32 / 256.0
        });
        let back = codec.decode(&codec.encode(&img));
        assert_eq!(back, img);
    }

    #[test]
    fn codec_round_trip_close_everywhere_and_decode_clamps() {
        let codec = IdentityCodec;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Array3::from_shape_fn((4, 4, 3), |_| rng.random::<f32>());
        let back = codec.decode(&codec.encode(&img));
        for (a, b) in back.iter().zip(img.iter()) {
            assert!((a - b).abs() <= 1e-7);
        }
        let wild = Array3::from_elem((3, 3, 1), 4.0f32);
        assert!(codec.decode(&wild).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_boundary_leaves_latent_unchanged() {
        let s = sched();
        let t = table(1);
        // sigma * N rounds to 0.
        let p = plan(0.004, 1.0, 50);
        assert_eq!(p.boundary(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = LatentState::new(randn(CANVAS, &mut rng), 1000);
        let out = run_global_stage(&MixDenoiser, &p, &t, &z, &cfg(50), &s, &mut rng).unwrap();
        assert_eq!(out.data, z.data);
        assert_eq!(out.timestep, 1000);
    }

    #[test]
    fn sigma_one_global_stage_reaches_t0() {
        let s = sched();
        let t = table(2);
        let p = plan(1.0, 1.0, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = LatentState::new(randn(CANVAS, &mut rng), 1000);
        let out = run_global_stage(&MixDenoiser, &p, &t, &z, &cfg(50), &s, &mut rng).unwrap();
        assert_eq!(out.timestep, 0);
    }

    #[test]
    fn boundary_timestep_tag_follows_stride_arithmetic() {
        let s = sched();
        let t = table(3);
        let p = plan(0.8, 1.0, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = LatentState::new(randn(CANVAS, &mut rng), 1000);
        let out = run_global_stage(&MixDenoiser, &p, &t, &z, &cfg(50), &s, &mut rng).unwrap();
        // 40 steps of stride 20 from 1000 reach t = 200.
        assert_eq!(out.timestep, 200);
    }

    #[test]
    fn focus_stage_with_full_boundary_is_identity() {
        let s = sched();
        let t = table(4);
        let p = plan(1.0, 1.0, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = LatentState::new(randn(CANVAS, &mut rng), 1000);
        let mid = run_global_stage(&MixDenoiser, &p, &t, &z, &cfg(50), &s, &mut rng).unwrap();
        let fin = run_focus_stage(&MixDenoiser, &p, &t, &mid, &cfg(50), &s, &mut rng).unwrap();
        assert_eq!(fin.data, mid.data);
    }

    #[test]
    fn focus_stage_rejects_mismatched_latent_tag() {
        let s = sched();
        let t = table(5);
        let p = plan(0.8, 1.0, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = LatentState::new(randn(CANVAS, &mut rng), 977);
        assert!(run_focus_stage(&MixDenoiser, &p, &t, &z, &cfg(50), &s, &mut rng).is_err());
    }

    #[test]
    fn alpha_zero_focus_steps_receive_pure_local_embedding() {
        let s = sched();
        let t = table(6);
        let p = plan(0.5, 0.0, 20);
        let config = SamplerConfig { num_steps: 20, guidance_scale: 1.0, ..SamplerConfig::default() };
        let den = RecordingDenoiser::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = LatentState::new(randn(CANVAS, &mut rng), 1000);
        let mid = run_global_stage(&den, &p, &t, &z, &config, &s, &mut rng).unwrap();
        den.seen.lock().unwrap().clear();
        run_focus_stage(&den, &p, &t, &mid, &config, &s, &mut rng).unwrap();

        let e_local = encode_prompt(&t, &p.local_prompt).unwrap().values().to_vec();
        let seen = den.seen.lock().unwrap();
        assert_eq!(seen.len(), 10); // guidance scale 1: one eval per step
        for (_, e) in seen.iter() {
            assert_eq!(e, &e_local);
        }
    }

    #[test]
    fn text_to_image_is_bit_reproducible() {
        let s = sched();
        let t = table(7);
        let p = plan(0.8, 1.0, 10);
        let config = SamplerConfig { num_steps: 10, batch: 2, ..SamplerConfig::default() };
        let a = generate_text_to_image(&MixDenoiser, &p, &t, CANVAS, &config, &s, &IdentityCodec).unwrap();
        let b = generate_text_to_image(&MixDenoiser, &p, &t, CANVAS, &config, &s, &IdentityCodec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_one_collapses_to_baseline_bit_exactly() {
        let s = sched();
        let t = table(8);
        let p = plan(1.0, 1.0, 25);
        let config = SamplerConfig { num_steps: 25, batch: 2, ..SamplerConfig::default() };
        let staged = generate_text_to_image(&MixDenoiser, &p, &t, CANVAS, &config, &s, &IdentityCodec).unwrap();
        let baseline =
            generate_baseline(&MixDenoiser, &p.global_prompt, &t, CANVAS, &config, &s, &IdentityCodec)
                .unwrap();
        assert_eq!(staged, baseline);
    }

    #[test]
    fn huge_alpha_matches_single_stage_within_tolerance() {
        let s = sched();
        let t = table(9);
        let p = plan(0.6, 1e6, 25);
        let config = SamplerConfig { num_steps: 25, batch: 1, ..SamplerConfig::default() };
        let staged = generate_text_to_image(&MixDenoiser, &p, &t, CANVAS, &config, &s, &IdentityCodec).unwrap();
        let baseline =
            generate_baseline(&MixDenoiser, &p.global_prompt, &t, CANVAS, &config, &s, &IdentityCodec)
                .unwrap();
        let max_diff = staged[0]
            .iter()
            .zip(baseline[0].iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff <= 1e-2, "max pixel diff {max_diff}");
    }

    #[test]
    fn staged_run_equals_instrumented_single_loop() {
        let s = sched();
        let t = table(10);
        let p = plan(0.7, 0.8, 20);
        let config = SamplerConfig { num_steps: 20, batch: 1, seed: 4242, ..SamplerConfig::default() };
        let staged = generate_text_to_image(&MixDenoiser, &p, &t, CANVAS, &config, &s, &IdentityCodec).unwrap();

        // Reference: one flat loop switching embeddings at the boundary.
        let ts = ddim_timesteps(1000, 20).unwrap();
        let e_null = encode_prompt(&t, &Prompt::null()).unwrap();
        let e_global = encode_prompt(&t, &p.global_prompt).unwrap();
        let e_local = encode_prompt(&t, &p.local_prompt).unwrap();
        let ebar = crate::conditioning::interpolate_embeddings(&e_local, &e_global, p.alpha).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut z = randn(CANVAS, &mut rng);
        for i in 0..20 {
            let e = if i < p.boundary() { &e_global } else { &ebar };
            let eps = guided_eps(&MixDenoiser, &z, ts[i], e, &e_null, config.guidance_scale).unwrap();
            z = ddim_step(&z, ts[i], ts.get(i + 1).copied().unwrap_or(0), &eps, 0.0, &s, None).unwrap();
        }
        let reference = IdentityCodec.decode(&z);
        assert_eq!(staged[0], reference);
    }

    #[test]
    fn point_mass_denoiser_reproduces_target_in_both_modes() {
        let s = sched();
        let t = table(11);
        // Target inside [-1, 1] model space.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let target = randn(CANVAS, &mut rng).mapv(|v| (v * 0.3).clamp(-0.9, 0.9));
        let den = PointMassDenoiser::new(target.clone(), s.clone());
        let p = plan(0.8, 1.0, 50);
        let config = SamplerConfig { num_steps: 50, batch: 2, guidance_scale: 3.0, ..Default::default() };

        let image_space = IdentityCodec.decode(&target);
        let batch = generate_text_to_image(&den, &p, &t, CANVAS, &config, &s, &IdentityCodec).unwrap();
        for img in &batch {
            let max_err = img
                .iter()
                .zip(image_space.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err < 1e-4, "t2i max err {max_err}");
        }

        let out = generate_image_to_image(
            &den,
            &image_space,
            1.0,
            &p,
            &t,
            &config,
            &s,
            &IdentityCodec,
        )
        .unwrap();
        let max_err = out
            .iter()
            .zip(image_space.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-4, "i2i max err {max_err}");
    }

    #[test]
    fn img2img_tiny_strength_returns_codec_round_trip() {
        let s = sched();
        let t = table(13);
        let p = plan(0.8, 1.0, 50);
        let config = cfg(50);
        let input = Array3::from_shape_fn(CANVAS, |(y, x, c)| ((y + x + c) % 7) as f32 / 8.0);
        // strength < 1/num_steps leaves zero steps
        let out =
            generate_image_to_image(&MixDenoiser, &input, 0.01, &p, &t, &config, &s, &IdentityCodec)
                .unwrap();
        assert_eq!(out, IdentityCodec.decode(&IdentityCodec.encode(&input)));
        assert_eq!(out, input); // dyadic-grid pixels survive the range map
    }

    #[test]
    fn img2img_runs_expected_number_of_steps() {
        let s = sched();
        let t = table(14);
        let p = plan(0.8, 1.0, 50);
        let config = SamplerConfig { num_steps: 50, guidance_scale: 1.0, ..Default::default() };
        let den = RecordingDenoiser::new();
        let input = Array3::from_elem(CANVAS, 0.5f32);
        generate_image_to_image(&den, &input, 0.5, &p, &t, &config, &s, &IdentityCodec).unwrap();
        // 25 steps at guidance scale 1 = 25 forward evals, starting at ts[25] = 500.
        let seen = den.seen.lock().unwrap();
        assert_eq!(seen.len(), 25);
        assert_eq!(seen[0].0, 500);
    }

    #[test]
    fn img2img_rejects_bad_strength_and_range() {
        let s = sched();
        let t = table(15);
        let p = plan(0.8, 1.0, 10);
        let config = cfg(10);
        let input = Array3::from_elem(CANVAS, 0.5f32);
        for bad in [0.0, -0.2, 1.5] {
            assert!(generate_image_to_image(&MixDenoiser, &input, bad, &p, &t, &config, &s, &IdentityCodec)
                .is_err());
        }
        let wild = Array3::from_elem(CANVAS, 1.5f32);
        assert!(generate_image_to_image(&MixDenoiser, &wild, 0.5, &p, &t, &config, &s, &IdentityCodec)
            .is_err());
    }

    #[test]
    fn plan_and_config_step_counts_must_agree() {
        let s = sched();
        let t = table(16);
        let p = plan(0.8, 1.0, 50);
        let config = cfg(25);
        assert!(
            generate_text_to_image(&MixDenoiser, &p, &t, CANVAS, &config, &s, &IdentityCodec).is_err()
        );
    }

}

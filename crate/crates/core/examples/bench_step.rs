use std::io::Write;
use std::path::Path;
use std::time::Instant;
use stagediff::conditioning::{Prompt, StagePlan};
use stagediff::metrics::{variance_of_laplacian, GrayImage};
use stagediff::sampler::{generate_baseline, generate_text_to_image, IdentityCodec, SamplerConfig};
use stagediff::schedule::ScheduleParams;
use stagediff::toymodel::{
    load_checkpoint, object_bbox, save_checkpoint, train, Checkpoint, DenoiserConfig, Side,
    TrainConfig, TrainingMeta, CANVAS_SIZE,
};

fn save_ppm(path: &str, imgs: &[ndarray::Array3<f32>]) {
    // simple horizontal strip
    let (h, w, _) = imgs[0].dim();
    let total_w = w * imgs.len();
    let mut f = std::fs::File::create(path).unwrap();
    write!(f, "P6\n{total_w} {h}\n255\n").unwrap();
    let mut buf = Vec::new();
    for y in 0..h {
        for img in imgs {
            for x in 0..w {
                for c in 0..3 {
                    buf.push((img[[y, x, c]] * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    f.write_all(&buf).unwrap();
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sigma: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let alpha: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let scale: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(6);
    let n_seeds: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(16);

    let params = ScheduleParams::default();
    let schedule = params.build().unwrap();
    let dir = format!("/tmp/ckpt_e{epochs}");
    let ckpt = if Path::new(&dir).join("manifest.json").exists() {
        load_checkpoint(Path::new(&dir)).unwrap()
    } else {
        let cfg = TrainConfig {
            dataset_size: 512,
            epochs,
            batch_size: 16,
            learning_rate: 2e-3,
            warmup_steps: 30,
            model: DenoiserConfig::default(),
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let out = train(&cfg, &schedule).unwrap();
        eprintln!("trained: {:.0}s, final loss {:.4}", t0.elapsed().as_secs_f64(), out.final_loss);
        let ckpt = Checkpoint {
            model: out.model,
            vocab: out.vocab,
            schedule: params,
            training: TrainingMeta { seed: 42, steps: out.steps, final_loss: out.final_loss },
        };
        save_checkpoint(&ckpt, Path::new(&dir)).unwrap();
        ckpt
    };

    let vocab = &ckpt.vocab;
    let global = Prompt::parse(vocab, &["circle", "red", "left", "circle", "red", "right"]).unwrap();
    let local = Prompt::parse(vocab, &["circle", "red", "left"]).unwrap();
    let roi_l = object_bbox(Side::Left, CANVAS_SIZE);
    let roi_r = object_bbox(Side::Right, CANVAS_SIZE);

    let mut wins_f = 0; let mut wins_b = 0; let mut n = 0;
    let mut sum_ratio_f = 0.0; let mut sum_ratio_b = 0.0;
    let mut pics = Vec::new();
    for seed in 0..n_seeds {
        let sc = SamplerConfig { num_steps: 50, guidance_scale: scale, seed, batch: 1, ..Default::default() };
        let plan = StagePlan::new(sigma, alpha, global.clone(), local.clone(), 50).unwrap();
        let base = generate_baseline(&ckpt.model.net, &global, &ckpt.model.table,
            (64, 64, 3), &sc, &schedule, &IdentityCodec).unwrap();
        let staged = generate_text_to_image(&ckpt.model.net, &plan, &ckpt.model.table,
            (64, 64, 3), &sc, &schedule, &IdentityCodec).unwrap();
        let gb = GrayImage::from_rgb(&base[0]).unwrap();
        let gs = GrayImage::from_rgb(&staged[0]).unwrap();
        let vf_b = variance_of_laplacian(&gb, &roi_l).unwrap();
        let vf_s = variance_of_laplacian(&gs, &roi_l).unwrap();
        let vb_b = variance_of_laplacian(&gb, &roi_r).unwrap();
        let vb_s = variance_of_laplacian(&gs, &roi_r).unwrap();
        if seed < 8 { 
            println!("seed {seed:2}: focused {vf_b:8.1} -> {vf_s:8.1}   bokeh {vb_b:8.1} -> {vb_s:8.1}");
            pics.push(base[0].clone()); pics.push(staged[0].clone());
        }
        if vf_s > vf_b { wins_f += 1; }
        if vb_s > vb_b { wins_b += 1; }
        sum_ratio_f += vf_s / vf_b; sum_ratio_b += vb_s / vb_b;
        n += 1;
    }
    save_ppm(&format!("/tmp/cmp_s{sigma}_a{alpha}_g{scale}.ppm"), &pics);
    println!("sigma={sigma} alpha={alpha} scale={scale}: focused wins {wins_f}/{n} (mean ratio {:.3}), bokeh wins {wins_b}/{n} (mean ratio {:.3})",
        sum_ratio_f / n as f64, sum_ratio_b / n as f64);
}

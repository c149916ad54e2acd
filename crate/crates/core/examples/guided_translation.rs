//! Classifier-guided image-to-image translation, sigmoid vs softmax guidance.
//!
//! With a pipeline output root (after `daug train-classifier`) the trained
//! models are loaded from it; otherwise small models are trained on the fly.
//!
//!     cargo run --release --example guided_translation -- [OUT_DIR]

use daug::classifier::{train_classifier, ClassifierConfig, ClassifierTrainConfig, GuidanceMode, NoisyClassifier};
use daug::diffusion::{train_denoiser, translate, DiffusionTrainConfig, GuidanceSpec, UNet, UNetConfig};
use daug::eval::heatmap_localization;
use daug::heatmap::make_heatmap;
use daug::pipeline::{load_classifier, load_dataset, load_diffusion, tile_grid, ExperimentConfig};
use daug::seeding::rng_for;
use daug::synthdata::{generate_dataset, DatasetSpec, SynthDataset};
use daug::taxonomy::{SUPER_CLASSES, SUPER_NO_FINDING};
use daug::Image;

fn models(root: Option<&str>) -> daug::Result<(SynthDataset, UNet, NoisyClassifier, usize)> {
    if let Some(root) = root {
        let cfg = ExperimentConfig::default();
        let root = std::path::Path::new(root);
        let t_start = cfg.heatmaps.bank.t_start.unwrap_or(cfg.diffusion.schedule.steps / 2);
        return Ok((load_dataset(root)?, load_diffusion(&cfg, root)?, load_classifier(&cfg, root)?, t_start));
    }
    let cfg = ExperimentConfig::smoke();
    let ds = generate_dataset(&DatasetSpec { n_train: 400, n_val: 50, n_test: 50, ..cfg.dataset })?;
    let sched = cfg.diffusion.schedule.build()?;
    let images: Vec<&Image> = ds.train.iter().map(|s| &s.image).collect();
    let unet_arch = UNetConfig { base_width: 8, time_dim: 16, ..Default::default() };
    let (unet, curve) = train_denoiser(&images, &sched, unet_arch, &DiffusionTrainConfig { epochs: 6, ..Default::default() })?;
    println!("denoiser loss {:.3} -> {:.3}", curve[0], curve[curve.len() - 1]);
    let clf_arch = ClassifierConfig { width: 8, time_dim: 16, ..Default::default() };
    let train = ClassifierTrainConfig { epochs: 10, ..Default::default() };
    let (clf, report) = train_classifier(&ds.train, &ds.val, &sched, clf_arch, &train)?;
    println!("classifier val AP at t={}: {:?}", report.eval_t, report.ap_fixed_t);
    Ok((ds, unet, clf, 10))
}

fn main() -> daug::Result<()> {
    env_logger::init();
    let root = std::env::args().nth(1);
    let (ds, unet, clf, t_start) = models(root.as_deref())?;
    let sched = ExperimentConfig::default().diffusion.schedule.build()?;
    let diseased: Vec<_> = ds.test.iter().filter(|s| s.labels14[0] == 0).take(8).collect();
    let images: Vec<&Image> = diseased.iter().map(|s| &s.image).collect();

    let mut rows = vec![images.iter().map(|&i| i.clone()).collect::<Vec<_>>()];
    for mode in [GuidanceMode::Sigmoid, GuidanceMode::Softmax] {
        // push every image towards "No Finding"; what changes is the abnormality
        let guide = GuidanceSpec::new(SUPER_NO_FINDING, 1, mode, 100.0);
        let mut rngs: Vec<_> = (0..images.len()).map(|i| rng_for(0, "example", i as u64)).collect();
        let out = translate(&unet, Some(&clf), &images, &guide, t_start, &sched, &mut rngs)?;
        let mut heat = Vec::new();
        let mut hits = 0;
        for (s, tr) in diseased.iter().zip(&out) {
            let h = make_heatmap(&s.image, tr, 1)?;
            hits += heatmap_localization(&h, &s.disease_mask(), &[0.5])?.pointing_hit as usize;
            heat.push(h);
        }
        println!("{:<8} towards {}: pointing {hits}/{}", mode.name(), SUPER_CLASSES[SUPER_NO_FINDING], diseased.len());
        rows.push(out);
        rows.push(heat);
    }
    let path = std::env::temp_dir().join("guided-translation.png");
    tile_grid(&rows, 4)?.save_png(&path)?;
    println!("rows: input, sigmoid, heatmap, softmax, heatmap -> {}", path.display());
    Ok(())
}

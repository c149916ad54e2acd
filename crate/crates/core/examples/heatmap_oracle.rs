//! Heatmaps from counterfactual pairs: the same synthetic anatomy rendered
//! with and without a finding. This is the heatmap a perfect translation
//! model would produce, so it is a handy upper bound for localization.
//!
//!     cargo run --release --example heatmap_oracle

use daug::eval::{default_thresholds, heatmap_localization};
use daug::heatmap::{augment_channels, make_heatmap, split_channels};
use daug::synthdata::{probe_sample, DatasetSpec};
use daug::taxonomy::{CARDIOMEGALY, CONSOLIDATION, FINE_CLASSES, LUNG_LESION, PLEURAL_EFFUSION, SUPPORT_DEVICES};

fn main() -> daug::Result<()> {
    let spec = DatasetSpec::default();
    let thresholds = default_thresholds();
    for finding in [CARDIOMEGALY, LUNG_LESION, CONSOLIDATION, PLEURAL_EFFUSION, SUPPORT_DEVICES] {
        let (mut hits, mut iou, n) = (0, 0.0, 32);
        for i in 0..n {
            // same tag and index -> same anatomy
            let sick = probe_sample(&spec, "oracle", i, &[finding]);
            let healthy = probe_sample(&spec, "oracle", i, &[]);
            let heat = make_heatmap(&sick.image, &healthy.image, 1)?;
            let loc = heatmap_localization(&heat, &sick.masks[finding], &thresholds)?;
            hits += loc.pointing_hit as usize;
            iou += loc.best_iou;
        }
        println!("{:<20} pointing {:.2}  best IoU {:.2}", FINE_CLASSES[finding], hits as f64 / n as f64, iou / n as f64);
    }

    let sick = probe_sample(&spec, "oracle", 0, &[CONSOLIDATION]);
    let healthy = probe_sample(&spec, "oracle", 0, &[]);
    let heat = make_heatmap(&sick.image, &healthy.image, 1)?;
    let x = augment_channels(&sick.image, &heat)?;
    println!("augmented input {:?}", x.shape());
    let [a, _, h] = split_channels(&x)?;
    assert_eq!(a, sick.image);
    assert_eq!(h, heat);

    let out = std::env::temp_dir();
    sick.image.save_png(&out.join("oracle-image.png"))?;
    heat.save_png(&out.join("oracle-heatmap.png"))?;
    println!("wrote oracle-image.png and oracle-heatmap.png to {}", out.display());
    Ok(())
}

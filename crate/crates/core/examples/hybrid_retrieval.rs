//! Train the dual encoder with the hybrid loss (CLIP + image-to-class) on
//! monochrome inputs, then classify with the prompt head and run
//! report-to-image and image-to-image retrieval.
//!
//!     cargo run --release --example hybrid_retrieval

use daug::eval::{evaluate, EvalTask};
use daug::hybridclip::{encoder_inputs, retrieve, train_hybrid, EncoderConfig, HybridTrainConfig};
use daug::synthdata::{generate_dataset, DatasetSpec};
use daug::taxonomy::FINE_CLASSES;

fn main() -> daug::Result<()> {
    let ds = generate_dataset(&DatasetSpec { n_train: 600, n_val: 0, n_test: 200, ..Default::default() })?;
    let train: Vec<_> = ds.train.iter().collect();
    let test: Vec<_> = ds.test.iter().collect();
    let arch = EncoderConfig { image_width: 8, text_hidden: 32, embed_dim: 32, ..Default::default() };

    for w in [0.7, 1.0] {
        let cfg = HybridTrainConfig { epochs: 30, w, ..Default::default() };
        let (enc, report) = train_hybrid(&train, None, arch.clone(), &cfg)?;
        println!(
            "w = {w}: loss {:.3} -> {:.3}, temperature {:.4}",
            report.loss_curve[0],
            report.loss_curve[report.loss_curve.len() - 1],
            report.temperature
        );
        for r in evaluate(&enc, &EvalTask::defaults(), &test, None, cfg.kappa)? {
            println!("  {:<20} avg {:.3}  wAvg {:.3}", r.task, r.avg, r.wavg);
        }
        if w < 1.0 {
            let query = "Pleural effusion is present.";
            let q = enc.embed_text(query)?;
            let gallery = enc.embed_images(&encoder_inputs(&test, None)?);
            let ids: Vec<&str> = test.iter().map(|s| s.id.as_str()).collect();
            println!("  top 5 for \"{query}\":");
            for i in retrieve(q.data(), &gallery, &ids, 5)? {
                let found: Vec<&str> =
                    (1..FINE_CLASSES.len()).filter(|&c| test[i].labels14[c] == 1).map(|c| FINE_CLASSES[c]).collect();
                println!("    {} {:?}", test[i].id, found);
            }
        }
    }
    Ok(())
}

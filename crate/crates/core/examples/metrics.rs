//! The evaluation metrics on hand-made inputs.
//!
//!     cargo run --example metrics

use daug::eval::{ap_at_k, auc_roc, average_precision, heatmap_localization, map_at_k};
use daug::{Image, Mask};

fn main() -> daug::Result<()> {
    let scores = [0.9, 0.8, 0.7, 0.7, 0.4, 0.1];
    let labels = [true, false, true, false, true, false];
    println!("AUC {:.4}", auc_roc(&scores, &labels)?);
    println!("AP  {:.4}", average_precision(&scores, &labels).unwrap());

    // relevance of the ranked list for one query
    println!("AP@3 of [hit, miss, hit] = {:.4}", ap_at_k(&[true, false, true], 3));

    // three queries over a gallery of four, two classes
    let gallery = [[1u8, 0], [0, 1], [1, 1], [0, 0]];
    let queries = [[1u8, 0], [0, 1], [1, 1]];
    let ranked = vec![vec![0, 2, 1, 3], vec![3, 1, 0, 2], vec![2, 0, 1, 3]];
    let r = map_at_k("toy_map@2", &ranked, &queries, &gallery, 2)?;
    println!("{}: per class {:?}, avg {:.4}, wAvg {:.4}", r.task, r.per_class, r.avg, r.wavg);

    let mut heat = Image::zeros(8, 8);
    heat.data_mut()[3 * 8 + 4] = 1.0;
    heat.data_mut()[3 * 8 + 5] = 0.6;
    let mask = Mask::from_fn(8, 8, |y, x| (2..5).contains(&y) && (4..7).contains(&x));
    let loc = heatmap_localization(&heat, &mask, &[0.5])?;
    println!("pointing hit {}, best IoU {:.3}", loc.pointing_hit, loc.best_iou);
    Ok(())
}

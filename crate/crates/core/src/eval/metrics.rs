//! Retrieval and classification metrics.

use serde::{Deserialize, Serialize};

use crate::imaging::{Image, Mask};
use crate::{Error, Result};

/// Per-class values plus their plain and count-weighted averages.
/// Classes without positives are `None` and excluded from both averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub per_class: Vec<Option<f64>>,
    /// Positive count per class in the evaluation gallery (the wAvg weights).
    pub counts: Vec<usize>,
    pub avg: f64,
    pub wavg: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl MetricReport {
    pub fn new(task: impl Into<String>, per_class: Vec<Option<f64>>, counts: Vec<usize>) -> Result<Self> {
        let task = task.into();
        assert_eq!(per_class.len(), counts.len(), "one count per class");
        let present: Vec<(f64, usize)> =
            per_class.iter().zip(&counts).filter_map(|(v, &n)| v.map(|v| (v, n))).collect();
        if present.is_empty() {
            return Err(Error::UndefinedMetric(format!("{task}: no class has a defined value")));
        }
        let avg = present.iter().map(|p| p.0).sum::<f64>() / present.len() as f64;
        let total: usize = present.iter().map(|p| p.1).sum();
        let wavg = if total == 0 {
            avg
        } else {
            present.iter().map(|&(v, n)| v * n as f64).sum::<f64>() / total as f64
        };
        Ok(Self { task, per_class, counts, avg, wavg, seed: None, config_hash: None })
    }

    pub fn with_meta(mut self, seed: u64, config_hash: impl Into<String>) -> Self {
        self.seed = Some(seed);
        self.config_hash = Some(config_hash.into());
        self
    }
}

/// Mean precision at the relevant hits among the first `k` results, divided
/// by the number of hits; 0 when nothing relevant is retrieved.
pub fn ap_at_k(relevant: &[bool], k: usize) -> f64 {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &r) in relevant.iter().take(k).enumerate() {
        if r {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        acc / hits as f64
    }
}

/// Per-class mAP@k. `ranked[q]` lists gallery indices for query `q`, best
/// first. A retrieved item is relevant to a query for class `c` iff it is
/// positive for `c`; class `c` averages over the queries positive for `c`.
pub fn map_at_k<L: AsRef<[u8]>>(
    task: &str,
    ranked: &[Vec<usize>],
    query_labels: &[L],
    gallery_labels: &[L],
    k: usize,
) -> Result<MetricReport> {
    if ranked.len() != query_labels.len() {
        return Err(Error::Argument(format!("{} rankings for {} queries", ranked.len(), query_labels.len())));
    }
    let nc = gallery_labels.first().map(|l| l.as_ref().len()).unwrap_or(0);
    let mut sums = vec![0.0; nc];
    let mut nq = vec![0usize; nc];
    for (r, ql) in ranked.iter().zip(query_labels) {
        if r.len() < k {
            return Err(Error::Argument(format!("ranking of length {} shorter than k={k}", r.len())));
        }
        for c in 0..nc {
            if ql.as_ref()[c] == 1 {
                let rel: Vec<bool> = r[..k].iter().map(|&g| gallery_labels[g].as_ref()[c] == 1).collect();
                sums[c] += ap_at_k(&rel, k);
                nq[c] += 1;
            }
        }
    }
    let per_class = (0..nc).map(|c| (nq[c] > 0).then(|| sums[c] / nq[c] as f64)).collect();
    let counts = (0..nc).map(|c| gallery_labels.iter().filter(|l| l.as_ref()[c] == 1).count()).collect();
    MetricReport::new(task, per_class, counts)
}

/// Area under the ROC curve as the normalized Mann-Whitney U statistic;
/// tied scores count one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("scores and labels differ in length".into()));
    }
    let npos = labels.iter().filter(|&&l| l).count();
    let nneg = labels.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative samples".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks (1-based) over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg_rank * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (npos * (npos + 1)) as f64 / 2.0;
    Ok(u / (npos * nneg) as f64)
}

/// Non-interpolated average precision of a ranking by descending score
/// (ties keep input order); `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let npos = labels.iter().filter(|&&l| l).count();
    if npos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        if labels[i] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / npos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub pointing_hit: bool,
    pub best_iou: f64,
}

/// Pixels within this Chebyshev distance of the mask count as pointing hits.
pub const POINTING_TOLERANCE: usize = 2;

/// Pointing game (argmax inside the dilated mask, first pixel in row-major
/// order on ties) and the best IoU of `heatmap >= tau` over `thresholds`.
pub fn heatmap_localization(heatmap: &Image, mask: &Mask, thresholds: &[f64]) -> Result<Localization> {
    if heatmap.dims() != mask.dims() {
        return Err(Error::Argument(format!("heatmap {:?} vs mask {:?}", heatmap.dims(), mask.dims())));
    }
    if mask.is_empty() {
        return Err(Error::UndefinedMetric("localization against an empty mask".into()));
    }
    let (y, x) = heatmap.argmax();
    let pointing_hit = mask.dilate(POINTING_TOLERANCE).get(y, x);
    let mut best_iou: f64 = 0.0;
    for &tau in thresholds {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&h, &m) in heatmap.data().iter().zip(mask.data()) {
            let p = h as f64 >= tau;
            inter += (p && m) as usize;
            union += (p || m) as usize;
        }
        if union > 0 {
            best_iou = best_iou.max(inter as f64 / union as f64);
        }
    }
    Ok(Localization { pointing_hit, best_iou })
}

/// Evenly spaced thresholds in `(0, 1]`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

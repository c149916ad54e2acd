//! Templated radiology reports.

use rand::Rng;

use crate::taxonomy::{fine_index, FINE_CLASSES, NO_FINDING, NUM_FINE};

pub const HEALTHY_SENTENCE: &str = "No acute findings.";

fn sentence_case(name: &str) -> String {
    let lower = name.to_lowercase();
    let mut chars = lower.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Positive findings are always stated; each absent disease is mentioned
/// independently with probability `negative_mention_prob`.
pub fn render_report<R: Rng + ?Sized>(labels14: &[u8; NUM_FINE], negative_mention_prob: f64, rng: &mut R) -> String {
    let mut sentences = Vec::new();
    let healthy = (1..NUM_FINE).all(|c| labels14[c] == 0);
    if healthy {
        sentences.push(HEALTHY_SENTENCE.to_string());
    }
    for c in 1..NUM_FINE {
        if labels14[c] == 1 {
            sentences.push(format!("{} is present.", sentence_case(FINE_CLASSES[c])));
        }
    }
    for c in 1..NUM_FINE {
        // always draw, so the stream does not depend on which labels are set
        let mention = rng.gen_bool(negative_mention_prob);
        if labels14[c] == 0 && mention {
            sentences.push(format!("No {}.", FINE_CLASSES[c].to_lowercase()));
        }
    }
    sentences.join(" ")
}

/// Split a report into sentences without their final period.
pub fn sentences(report: &str) -> Vec<&str> {
    report.split('.').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Recover the positive label set from a report; `No Finding` is set when no
/// disease is stated as present.
pub fn parse_report(report: &str) -> [u8; NUM_FINE] {
    let mut labels = [0u8; NUM_FINE];
    for s in sentences(report) {
        if let Some(name) = s.strip_suffix(" is present") {
            if let Some(c) = fine_index(name) {
                labels[c] = 1;
            }
        }
    }
    if labels.iter().all(|&l| l == 0) {
        labels[NO_FINDING] = 1;
    }
    labels
}

/// Number of "No <class>." sentences.
pub fn count_negative_mentions(report: &str) -> usize {
    sentences(report).iter().filter(|s| s.starts_with("No ") && **s != "No acute findings").count()
}

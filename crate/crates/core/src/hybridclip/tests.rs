use daug_nn::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::randn(&[n, d], 1.0, rng);
    for row in t.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// softmax cross-entropy in both directions, written out longhand
fn clip_oracle(i: &Tensor<f64>, r: &Tensor<f64>, temperature: f64) -> f64 {
    let (n, d) = i.dims2();
    let row = |t: &Tensor<f64>, k: usize| t.data()[k * d..(k + 1) * d].to_vec();
    let mut l = [0.0; 2];
    for a in 0..n {
        let s_it: Vec<f64> = (0..n).map(|b| dot(&row(i, a), &row(r, b)) / temperature).collect();
        let s_ti: Vec<f64> = (0..n).map(|b| dot(&row(r, a), &row(i, b)) / temperature).collect();
        for (k, s) in [s_it, s_ti].iter().enumerate() {
            let denom: f64 = s.iter().map(|v| v.exp()).sum();
            l[k] -= (s[a].exp() / denom).ln();
        }
    }
    (l[0] + l[1]) / (2.0 * n as f64)
}

#[test]
fn clip_loss_matches_longhand_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (i, r) = (unit_rows(4, 8, &mut rng), unit_rows(4, 8, &mut rng));
        let temp = rng.gen_range(0.05..1.0);
        let got = clip_loss(&i, &r, temp).unwrap();
        assert!((got - clip_oracle(&i, &r, temp)).abs() < 1e-6);
    }
}

#[test]
fn clip_loss_limits() {
    let e = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    assert!(clip_loss(&e, &e, 1e-3).unwrap() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one = unit_rows(1, 6, &mut rng);
    let same = Tensor::stack(&[one.clone(), one.clone(), one.clone(), one.clone(), one]);
    assert!((clip_loss(&same, &same, 0.07).unwrap() - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn clip_loss_rejects_single_pair() {
    let e = Tensor::from_f64(&[1, 2], &[1.0, 0.0]);
    assert!(matches!(clip_loss(&e, &e, 0.07), Err(Error::Argument(_))));
}

#[test]
fn clip_loss_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (i, r) = (unit_rows(6, 5, &mut rng), unit_rows(6, 5, &mut rng));
    let perm = [3, 0, 5, 1, 4, 2];
    let a = clip_loss(&i, &r, 0.1).unwrap();
    let b = clip_loss(&i.select_batch(&perm), &r.select_batch(&perm), 0.1).unwrap();
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn i2c_loss_matches_elementwise_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (i, c) = (unit_rows(3, 8, &mut rng), unit_rows(14, 8, &mut rng));
    let labels: Vec<Vec<u8>> = (0..3).map(|_| (0..14).map(|_| rng.gen_range(0..2)).collect()).collect();
    let mut total = 0.0;
    for a in 0..3 {
        for j in 0..14 {
            let s = dot(&i.data()[a * 8..(a + 1) * 8], &c.data()[j * 8..(j + 1) * 8]);
            let p = 1.0 / (1.0 + (-10.0 * s).exp());
            let y = labels[a][j] as f64;
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    let got = i2c_loss(&i, &c, &labels, 10.0).unwrap();
    assert!((got - total / 42.0).abs() < 1e-6);
}

#[test]
fn i2c_loss_limits() {
    // orthogonal image and class embeddings: every p is 1/2
    let i = Tensor::from_f64(&[2, 3], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let c = Tensor::from_f64(&[2, 3], &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let labels = [[1u8, 0], [0, 1]];
    assert!((i2c_loss(&i, &c, &labels, 10.0).unwrap() - 2f64.ln()).abs() < 1e-12);
    let e = Tensor::from_f64(&[1, 2], &[1.0, 0.0]);
    assert!(i2c_loss(&e, &e, &[[1u8]], 1e3).unwrap() < 1e-12);
}

#[test]
fn hybrid_loss_endpoints_and_blend() {
    assert_eq!(hybrid_loss(1.3, 0.4, 1.0).unwrap(), 1.3);
    assert_eq!(hybrid_loss(1.3, 0.4, 0.0).unwrap(), 0.4);
    assert!((hybrid_loss(1.0, 0.5, 0.7).unwrap() - 0.85).abs() < 1e-12);
    assert!(hybrid_loss(1.0, 0.5, 1.5).is_err());
    // affine in w
    let (a, b) = (hybrid_loss(1.0, 0.5, 0.2).unwrap(), hybrid_loss(1.0, 0.5, 0.6).unwrap());
    assert!((hybrid_loss(1.0, 0.5, 0.4).unwrap() - (a + b) / 2.0).abs() < 1e-12);
}

const REPORTS: [&str; 4] = [
    "Cardiomegaly is present. No pleural effusion.",
    "No acute findings.",
    "Pleural effusion is present. Consolidation is present.",
    "Pneumothorax is present.",
];

fn tiny_encoder(seed: u64) -> DualEncoder {
    let cfg = EncoderConfig { image_width: 4, text_hidden: 8, embed_dim: 6, ..Default::default() };
    DualEncoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn hybrid_at(enc: &DualEncoder, params: &ParamStore<f64>, x: &Tensor<f64>, labels: &Tensor<f64>, w: f64) -> (f64, Vec<Tensor<f64>>) {
    let texts = EncodedTexts::new(enc.vocab(), &REPORTS).unwrap();
    let prompts = EncodedTexts::new(enc.vocab(), &class_prompts().iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
    let mut g = Graph::<f64>::new();
    let p = params.bind(&mut g);
    let xv = g.constant(x.clone());
    let img = enc.image_graph(&mut g, &p, xv);
    let txt = enc.text_graph(&mut g, &p, &texts);
    let cls = enc.text_graph(&mut g, &p, &prompts);
    let l = hybrid_loss_graph(&mut g, img, txt, cls, labels, p.var(enc.logit_scale_id()), w, I2C_LOGIT_SCALE);
    let mut grads = g.backward(l);
    (g.value(l).data()[0], params.collect_grads(&mut grads, &p))
}

#[test]
fn hybrid_loss_gradient_matches_central_differences() {
    let h = 1e-5;
    for point in 0..10u64 {
        let enc = tiny_encoder(point);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + point);
        let x = Tensor::<f64>::uniform(&[4, 3, 8, 8], 1.0, &mut rng);
        let labels = Tensor::<f64>::new(&[4, 14], (0..56).map(|_| rng.gen_range(0..2) as f64).collect());
        let base = enc.params.cast::<f64>();
        let (_, grads) = hybrid_at(&enc, &base, &x, &labels, 0.7);
        let dir: Vec<Tensor<f64>> = base.tensors().iter().map(|t| Tensor::randn(t.shape(), 1.0, &mut rng)).collect();
        let shifted = |s: f64| {
            let mut p = base.clone();
            for (t, d) in p.tensors_mut().iter_mut().zip(&dir) {
                t.data_mut().iter_mut().zip(d.data()).for_each(|(v, dv)| *v += s * dv);
            }
            hybrid_at(&enc, &p, &x, &labels, 0.7).0
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let analytic: f64 = grads.iter().zip(&dir).map(|(g, d)| dot(g.data(), d.data())).sum();
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        assert!(rel < 1e-3, "point {point}: numeric {numeric} analytic {analytic}");
    }
}

#[test]
fn embeddings_are_unit_and_deterministic() {
    let enc = tiny_encoder(0);
    let x = Tensor::<f32>::uniform(&[3, 3, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let e = enc.embed_images(&x);
    for row in e.data().chunks(6) {
        let n: f64 = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    assert_eq!(e, enc.embed_images(&x));
    let t = enc.embed_text(REPORTS[0]).unwrap();
    assert_eq!(t, enc.embed_text(REPORTS[0]).unwrap());
    assert!(matches!(enc.embed_text(" . "), Err(Error::Argument(_))));
}

#[test]
fn prompts_go_stale_after_an_update() {
    let mut enc = tiny_encoder(0);
    let mut prompts = ClassPromptSet::default();
    assert_eq!(prompts.len(), 14);
    assert!(matches!(build_linear_head(&prompts, &enc, 10.0), Err(Error::StalePrompts { encoded: None, .. })));
    prompts.refresh(&enc).unwrap();
    assert!(build_linear_head(&prompts, &enc, 10.0).is_ok());
    enc.bump_version();
    assert!(prompts.is_stale(&enc));
    assert!(matches!(build_linear_head(&prompts, &enc, 10.0), Err(Error::StalePrompts { encoded: Some(0), current: 1 })));
}

#[test]
fn head_is_the_i2c_probability() {
    let enc = tiny_encoder(4);
    let mut prompts = ClassPromptSet::default();
    prompts.refresh(&enc).unwrap();
    let head = build_linear_head(&prompts, &enc, 10.0).unwrap();
    let x = Tensor::<f32>::uniform(&[5, 3, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
    let emb = enc.embed_images(&x);
    assert_eq!(head.classify(&emb), i2c_probs(&emb, prompts.embeddings(&enc).unwrap(), 10.0));
    let zero = Tensor::<f32>::zeros(&[1, 6]);
    assert!(head.classify(&zero)[0].iter().all(|&p| p == 0.5));
}

#[test]
fn retrieval_ranks_exact_match_first_and_breaks_ties_by_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gallery = unit_rows(10, 4, &mut rng).cast::<f32>();
    let ids: Vec<String> = (0..10).map(|i| format!("g{i:02}")).collect();
    let q = gallery.data()[12..16].to_vec();
    assert_eq!(retrieve(&q, &gallery, &ids, 3).unwrap()[0], 3);
    let mut all = retrieve(&q, &gallery, &ids, 10).unwrap();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    let dup = Tensor::<f32>::new(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    assert_eq!(retrieve(&[1.0, 0.0], &dup, &["b", "a", "c"], 3).unwrap(), vec![1, 0, 2]);
    let empty = Tensor::<f32>::zeros(&[0, 2]);
    assert!(matches!(retrieve::<&str>(&[1.0, 0.0], &empty, &[], 0), Err(Error::Argument(_))));
    assert!(retrieve(&q, &gallery, &ids, 11).is_err());
}

#[test]
fn retrieval_matches_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let gallery = Tensor::<f32>::randn(&[10, 5], 1.0, &mut rng);
        let q: Vec<f32> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ids: Vec<String> = (0..10).map(|i| format!("{i}")).collect();
        let mut oracle: Vec<(f64, usize)> = (0..10)
            .map(|j| {
                let g: Vec<f64> = gallery.data()[j * 5..(j + 1) * 5].iter().map(|&v| v as f64).collect();
                let qd: Vec<f64> = q.iter().map(|&v| v as f64).collect();
                (dot(&g, &qd) / (dot(&g, &g).sqrt() * dot(&qd, &qd).sqrt()), j)
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = oracle.iter().map(|p| p.1).take(7).collect();
        assert_eq!(retrieve(&q, &gallery, &ids, 7).unwrap(), want);
    }
}

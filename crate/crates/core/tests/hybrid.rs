use daug::heatmap::augment_channels;
use daug::hybridclip::{encoder_inputs, train_hybrid, EncoderConfig, HybridTrainConfig};
use daug::synthdata::{generate_dataset, DatasetSpec, SynthSample};
use daug::Image;
use daug_nn::Tensor;

fn data(n: usize) -> Vec<SynthSample> {
    generate_dataset(&DatasetSpec { n_train: n, n_val: 4, n_test: 4, image_size: 16, ..Default::default() })
        .unwrap()
        .train
}

fn arch() -> EncoderConfig {
    EncoderConfig { image_width: 4, text_hidden: 16, embed_dim: 16, ..Default::default() }
}

#[test]
fn training_lowers_the_loss() {
    let ds = data(96);
    let refs: Vec<_> = ds.iter().collect();
    let cfg = HybridTrainConfig { epochs: 8, batch_size: 16, ..Default::default() };
    let (_, report) = train_hybrid(&refs, None, arch(), &cfg).unwrap();
    let (first, last) = (report.loss_curve[0], *report.loss_curve.last().unwrap());
    assert!(last < 0.9 * first, "{:?}", report.loss_curve);
    assert!(report.loss_curve.windows(2).filter(|w| w[1] < w[0]).count() >= 6, "{:?}", report.loss_curve);
}

#[test]
fn clip_only_training_ignores_labels() {
    let ds = data(48);
    let mut scrambled = ds.clone();
    for (i, s) in scrambled.iter_mut().enumerate() {
        s.labels14 = ds[(i + 7) % ds.len()].labels14;
    }
    let cfg = HybridTrainConfig { epochs: 2, batch_size: 16, w: 1.0, ..Default::default() };
    let a = train_hybrid(&ds.iter().collect::<Vec<_>>(), None, arch(), &cfg).unwrap().0;
    let b = train_hybrid(&scrambled.iter().collect::<Vec<_>>(), None, arch(), &cfg).unwrap().0;
    assert_eq!(a.weights_blob().unwrap(), b.weights_blob().unwrap());

    let mixed = HybridTrainConfig { w: 0.5, ..cfg };
    let c = train_hybrid(&ds.iter().collect::<Vec<_>>(), None, arch(), &mixed).unwrap().0;
    let d = train_hybrid(&scrambled.iter().collect::<Vec<_>>(), None, arch(), &mixed).unwrap().0;
    assert_ne!(c.weights_blob().unwrap(), d.weights_blob().unwrap());
}

#[test]
fn heatmap_channel_reaches_the_embedding() {
    let ds = data(32);
    let cfg = HybridTrainConfig { epochs: 1, batch_size: 16, ..Default::default() };
    let (enc, _) = train_hybrid(&ds.iter().collect::<Vec<_>>(), None, arch(), &cfg).unwrap();
    let s = &ds[0];
    let blank = augment_channels(&s.image, &Image::zeros(16, 16)).unwrap();
    let spot = Image::new(16, 16, (0..256).map(|i| if i / 16 == 8 && i % 16 < 8 { 1.0 } else { 0.0 }).collect()).unwrap();
    let lit = augment_channels(&s.image, &spot).unwrap();
    let batch = |x: Tensor<f32>| x.reshape(&[1, 3, 16, 16]);
    let (ea, eb) = (enc.embed_images(&batch(blank.clone())), enc.embed_images(&batch(lit)));
    let cos: f32 = ea.data().iter().zip(eb.data()).map(|(a, b)| a * b).sum();
    assert!(cos < 1.0 - 1e-4, "cosine {cos}");
    // the monochrome baseline is exactly the zero-heatmap input
    assert_eq!(encoder_inputs(&[s], None).unwrap(), batch(blank));
}

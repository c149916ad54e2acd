//! Generate a small synthetic chest X-ray dataset, write it in the on-disk
//! layout and print label statistics.
//!
//!     cargo run --release --example synth_dataset -- /tmp/daug-data

use std::path::PathBuf;

use daug::synthdata::{generate_dataset, read_dataset, write_dataset, DatasetSpec};
use daug::taxonomy::{FINE_CLASSES, NUM_FINE};

fn main() -> daug::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("daug-data"));
    let spec = DatasetSpec { n_train: 200, n_val: 40, n_test: 60, ..Default::default() };
    let ds = generate_dataset(&spec)?;
    write_dataset(&ds, &dir)?;

    let mut counts = [0usize; NUM_FINE];
    for s in &ds.train {
        for (n, &l) in counts.iter_mut().zip(&s.labels14) {
            *n += l as usize;
        }
    }
    println!("wrote {} samples to {}", ds.train.len() + ds.val.len() + ds.test.len(), dir.display());
    for (name, n) in FINE_CLASSES.iter().zip(counts) {
        println!("  {name:<28} {n:>4} / {}", ds.train.len());
    }
    let s = &ds.train[0];
    println!("{}: {:?}\n  report: {}", s.id, s.labels7(), s.report);

    // pixels and labels survive the round trip exactly
    let back = read_dataset(&dir)?;
    assert_eq!(back.train[0], ds.train[0]);
    Ok(())
}

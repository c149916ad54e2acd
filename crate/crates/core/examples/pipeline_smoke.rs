//! Every pipeline stage on the reduced smoke config, in a fresh directory.
//! A second pass shows the stage cache.
//!
//!     cargo run --release --example pipeline_smoke -- /tmp/daug-smoke

use std::path::PathBuf;

use daug::pipeline::{run_all, ExperimentConfig, RunOptions};

fn main() -> daug::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ExperimentConfig::smoke();
    cfg.out_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("daug-smoke"));
    for pass in 0..2 {
        println!("pass {pass}");
        for s in run_all(&cfg, RunOptions::default())? {
            println!("  {:<18} {:?} {:.1}s", s.command, s.status, s.elapsed_secs);
        }
    }
    let table = std::fs::read_to_string(cfg.out_dir.join("ablation/table.txt"))?;
    println!("{table}");
    Ok(())
}

//! Generates the synthetic motion corpus and writes both splits to disk.
//!
//! cargo run --example generate_dataset -- [out-dir]

use behave::data::{make_dataset, DatasetConfig};
use behave::seqio::save_sequences;
use behave::synth::Family;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("behave-data"));
    let cfg = DatasetConfig {
        count_per_family: 20,
        held_out: vec![Family::IdleSway],
        ..DatasetConfig::default()
    };
    let ds = make_dataset(&cfg)?;
    std::fs::create_dir_all(&out)?;
    save_sequences(&out.join("train.jsonl"), &ds.train)?;
    save_sequences(&out.join("test.jsonl"), &ds.test)?;
    println!("{} train / {} test sequences of {} frames × {} joints", ds.train.len(), ds.test.len(), ds.frames(), ds.joints());
    for f in Family::ALL {
        let n = ds.train.iter().filter(|s| s.family.as_deref() == Some(f.name())).count();
        println!("  {:<14} {n} in train", f.name());
    }
    println!("written to {}", out.display());
    Ok(())
}

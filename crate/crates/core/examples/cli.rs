//! Runs a shipped configuration through the library entry point.

use std::path::Path;

use fracvisc::cli::{run_config, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/convergence.toml");
    let out = std::env::temp_dir().join("fracvisc-example");
    let record = run_config(
        &config,
        &RunOptions {
            out: Some(out.clone()),
            seed: 0,
        },
    )?;
    for line in &record.summary {
        println!("{line}");
    }
    println!("config sha256 {}", record.config_hash);
    println!("artifacts in {}", out.display());
    Ok(())
}

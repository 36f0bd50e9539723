//! Runs the offline pipeline into a temporary directory and lists the manifest.

use cofprm::pipeline::{run_all, PipelineConfig, RunManifest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = PipelineConfig::from_toml("seed = 11\n[label]\nk = 4\n[meta]\niterations = 200\n")?;
    cfg.paths.runs = dir.path().to_owned();
    let reports = run_all(&cfg).map_err(|(stage, e)| format!("{stage}: {e}"))?;
    for r in &reports {
        println!("{:<10} {}", r.stage.name(), r.summary);
    }
    let manifest = RunManifest::load_or_new(&cfg.run_dir(), &cfg.run_id)?;
    for e in &manifest.entries {
        println!("{:<10} {} outputs, {} ms", e.stage, e.outputs.len(), e.duration_ms);
    }
    Ok(())
}

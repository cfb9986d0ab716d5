use std::path::Path;

use uses_core::datasim::{make_example, make_separation_example, write_manifest, ManifestEntry};
use uses_core::Result;

use crate::config::CliConfig;

pub const MANIFEST: &str = "manifest.jsonl";

pub fn run(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = CliConfig::load(config)?.simulate;
    if let (Some(seed), Some(random)) = (seed, cfg.random.as_mut()) {
        random.seed = seed;
    }
    let mut mixes = cfg.mixtures.clone();
    if let Some(random) = &cfg.random {
        random.validate()?;
        mixes.extend(random.draw());
    }
    // validate everything before touching the disk
    for spec in &mixes {
        spec.validate()?;
    }
    for spec in &cfg.separations {
        spec.validate()?;
    }

    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(mixes.len() + cfg.separations.len());
    for (i, spec) in mixes.iter().enumerate() {
        let ex = make_example(spec)?;
        entries.push(ManifestEntry::write_enhance(out_dir, &format!("mix{i:04}"), &ex)?);
    }
    for (i, spec) in cfg.separations.iter().enumerate() {
        let ex = make_separation_example(spec)?;
        entries.push(ManifestEntry::write_separate(out_dir, &format!("sep{i:04}"), &ex)?);
    }
    write_manifest(out_dir.join(MANIFEST), &entries)?;
    log::info!("wrote {} examples to {}", entries.len(), out_dir.display());
    Ok(())
}

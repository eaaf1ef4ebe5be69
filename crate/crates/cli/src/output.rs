use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use dharq_core::config::ExperimentConfig;

use crate::Failure;

pub fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn write_lines(path: &Path, header: &str, rows: &[String]) -> Result<(), Failure> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

/// The manifest is a loadable config; run metadata lives in comments so
/// `--config manifest.toml` reproduces the outputs.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, wall: Duration, files: &[String]) -> Result<(), Failure> {
    let mut w = create(&dir.join("manifest.toml"))?;
    writeln!(w, "# command: {command}")?;
    writeln!(w, "# version: {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "# wall_time_s: {:.3}", wall.as_secs_f64())?;
    for f in files {
        writeln!(w, "# output: {f}")?;
    }
    writeln!(w)?;
    write!(w, "{}", cfg.to_toml())?;
    w.flush()?;
    Ok(())
}

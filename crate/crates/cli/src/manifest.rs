use crate::{Failure, Outcome};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; rerunning them reproduces the outputs.
    pub argv: Vec<String>,
    /// Model configuration after command-line overrides.
    pub config: Option<serde_json::Value>,
    pub options: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputDigest>,
}

/// Output directory that remembers every file written into it.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: &Path) -> Outcome<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| Failure::Config(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new(), started: Instant::now() })
    }

    /// Writes `name` through `fill` and records it for the manifest.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Outcome<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Outcome<()>,
    {
        let path = self.root.join(name);
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush().map_err(|e| io_failure(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Failure::Numerical(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Failure::Numerical(e.to_string()))
        })
    }

    /// Hashes the outputs and writes `manifest.json`.
    pub fn finish(self, mut manifest: RunManifest) -> Outcome<()> {
        manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        for name in &self.written {
            let path = self.root.join(name);
            let bytes = std::fs::read(&path).map_err(|e| io_failure(&path, e))?;
            manifest.outputs.push(OutputDigest { path: name.clone(), sha256: hex::encode(Sha256::digest(&bytes)) });
        }
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Numerical(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

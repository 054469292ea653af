//! Run directory: every output of a command plus a manifest of inputs, seeds and the
//! configuration hash.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    version: &'static str,
    config_hash: String,
    seeds: BTreeMap<&'static str, u64>,
    inputs: Vec<InputFile>,
    outputs: Vec<String>,
}

pub struct RunDir {
    dir: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn create(dir: &Path, command: &str, cfg: &PipelineConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let seeds = BTreeMap::from([
            ("simulator", cfg.simulator.seed),
            ("geomodel", cfg.geomodel.seed),
            ("closure", cfg.fusion.closure.seed),
        ]);
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                config_hash: cfg.hash(),
                seeds,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        self.manifest.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    pub fn create_file(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes the effective configuration and the manifest.
    pub fn finish(mut self, cfg: &PipelineConfig) -> Result<(), CliError> {
        let mut w = self.create_file("config.toml")?;
        w.write_all(cfg.to_toml().as_bytes())?;
        w.flush()?;
        let path = self.dir.join("manifest.json");
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

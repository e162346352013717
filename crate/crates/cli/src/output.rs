//! Run outputs: inputs are hashed as they are read, outputs are staged in
//! memory and committed together with a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Run {
    out: PathBuf,
    subcommand: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    pub fn new(out: &Path, subcommand: &'static str) -> Self {
        Run {
            out: out.to_path_buf(),
            subcommand,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Reads an input file and records its hash.
    pub fn read(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.push((name.to_string(), bytes));
    }

    fn manifest(&self, config: &PipelineConfig) -> Vec<u8> {
        let outputs: BTreeMap<&str, String> =
            self.outputs.iter().map(|(n, b)| (n.as_str(), sha256_hex(b))).collect();
        let doc = serde_json::json!({
            "tool": "canopyfuse",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "config": config.snapshot(),
            "inputs": self.inputs,
            "outputs": outputs,
        });
        let mut text = serde_json::to_vec_pretty(&doc).expect("manifest serialises");
        text.push(b'\n');
        text
    }

    /// Writes every output and the manifest. All files are staged under
    /// temporary names first and renamed only once every write succeeded.
    pub fn commit(mut self, config: &PipelineConfig) -> anyhow::Result<Vec<PathBuf>> {
        let manifest = self.manifest(config);
        self.outputs.push((format!("{}.manifest.json", self.subcommand), manifest));
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let mut staged = Vec::with_capacity(self.outputs.len());
        for (name, bytes) in &self.outputs {
            let tmp = self.out.join(format!(".{name}.tmp-{}", std::process::id()));
            if let Err(e) = fs::write(&tmp, bytes) {
                let _ = fs::remove_file(&tmp);
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(e).with_context(|| format!("writing {}", tmp.display()));
            }
            staged.push((tmp, self.out.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, dst) in staged {
            fs::rename(&tmp, &dst).with_context(|| format!("renaming to {}", dst.display()))?;
            log::info!("wrote {}", dst.display());
            written.push(dst);
        }
        Ok(written)
    }
}

//! Per-command record of resolved settings and SHA-256 digests of every
//! file read and written, checked again whenever the manifest is loaded.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDigest {
    /// Path relative to the experiment directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub seeds: Vec<u64>,
    pub settings: Vec<(String, String)>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            created: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            seeds: Vec::new(),
            settings: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn digest(base: &Path, rel: &str) -> Result<FileDigest> {
        Ok(FileDigest {
            path: rel.to_string(),
            sha256: sha256_file(&base.join(rel))?,
        })
    }

    pub fn add_input(&mut self, base: &Path, rel: &str) -> Result<()> {
        self.inputs.push(Self::digest(base, rel)?);
        Ok(())
    }

    pub fn add_output(&mut self, base: &Path, rel: &str) -> Result<()> {
        self.outputs.push(Self::digest(base, rel)?);
        Ok(())
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command\t{}", self.command);
        let _ = writeln!(out, "created\t{}", self.created);
        for s in &self.seeds {
            let _ = writeln!(out, "seed\t{s}");
        }
        for (k, v) in &self.settings {
            let _ = writeln!(out, "setting\t{k}\t{v}");
        }
        for d in &self.inputs {
            let _ = writeln!(out, "input\t{}\t{}", d.sha256, d.path);
        }
        for d in &self.outputs {
            let _ = writeln!(out, "output\t{}\t{}", d.sha256, d.path);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = RunManifest::new("");
        m.created = 0;
        let bad = |n: usize, line: &str| CliError::Tamper(format!("manifest line {}: cannot parse `{line}`", n + 1));
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(3, '\t').collect();
            match (f[0], f.len()) {
                ("command", 2) => m.command = f[1].to_string(),
                ("created", 2) => m.created = f[1].parse().map_err(|_| bad(n, line))?,
                ("seed", 2) => m.seeds.push(f[1].parse().map_err(|_| bad(n, line))?),
                ("setting", 3) => m.settings.push((f[1].to_string(), f[2].to_string())),
                ("input", 3) | ("output", 3) => {
                    let d = FileDigest {
                        sha256: f[1].to_string(),
                        path: f[2].to_string(),
                    };
                    if f[0] == "input" {
                        m.inputs.push(d)
                    } else {
                        m.outputs.push(d)
                    }
                }
                _ => return Err(bad(n, line)),
            }
        }
        Ok(m)
    }

    /// Recomputes every recorded digest under `base`.
    pub fn verify(&self, base: &Path) -> Result<()> {
        let mut problems = Vec::new();
        for d in self.inputs.iter().chain(&self.outputs) {
            let path = base.join(&d.path);
            if !path.exists() {
                problems.push(format!("{} is missing", d.path));
                continue;
            }
            if sha256_file(&path)? != d.sha256 {
                problems.push(format!("{} has changed since the `{}` manifest was written", d.path, self.command));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Tamper(problems.join("; ")))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    /// Reads and verifies a manifest; `base` is the experiment directory.
    pub fn load(path: &Path, base: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m = Self::from_text(&text)?;
        m.verify(base)?;
        Ok(m)
    }
}

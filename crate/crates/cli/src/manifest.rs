//! Plain-text record of a run, written before any other output.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Command-line tokens after the program name.
    pub argv: Vec<String>,
    pub seed: u64,
    /// Resolved configuration, every default materialized.
    pub config: Vec<(String, String)>,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<(String, PathBuf)>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn to_text(&self, started_unix: u64) -> String {
        let mut out = String::from("# fame run manifest\n");
        let mut line = |k: &str, v: &str| out.push_str(&format!("{k} = {v}\n"));
        line("command", &self.command);
        line("tool_version", env!("CARGO_PKG_VERSION"));
        line("seed", &self.seed.to_string());
        line("started_unix", &started_unix.to_string());
        for (i, a) in self.argv.iter().enumerate() {
            line(&format!("argv.{i}"), a);
        }
        for (k, p) in &self.inputs {
            line(&format!("input.{k}"), &p.display().to_string());
        }
        for (k, p) in &self.outputs {
            line(&format!("output.{k}"), &p.display().to_string());
        }
        for (k, v) in &self.config {
            line(&format!("config.{k}"), v);
        }
        out
    }

    /// Writes `manifest.txt` into `dir`, creating the directory.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_text(unix_now())).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Appends the completion time.
    pub fn finish(path: &Path) -> anyhow::Result<()> {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        writeln!(f, "finished_unix = {}", unix_now()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut m = RunManifest::default();
        let mut argv = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once(" = ").or_else(|| line.strip_suffix(" =").map(|k| (k, ""))) else {
                bail!("manifest line `{line}` is not `key = value`");
            };
            if let Some(i) = k.strip_prefix("argv.") {
                argv.push((i.parse::<usize>().with_context(|| format!("bad argument index in `{k}`"))?, v.to_string()));
            } else if let Some(name) = k.strip_prefix("input.") {
                m.inputs.push((name.to_string(), PathBuf::from(v)));
            } else if let Some(name) = k.strip_prefix("output.") {
                m.outputs.push((name.to_string(), PathBuf::from(v)));
            } else if let Some(name) = k.strip_prefix("config.") {
                m.config.push((name.to_string(), v.to_string()));
            } else {
                match k {
                    "command" => m.command = v.to_string(),
                    "seed" => m.seed = v.parse().context("bad seed")?,
                    _ => {}
                }
            }
        }
        argv.sort_by_key(|(i, _)| *i);
        m.argv = argv.into_iter().map(|(_, a)| a).collect();
        if m.command.is_empty() || m.argv.is_empty() {
            bail!("manifest lacks a command line");
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }
}

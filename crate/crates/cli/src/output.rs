//! Writing outputs and their run manifests, and finding trajectories on disk.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mars_core::io::{sha256_hex, RunManifest};
use mars_core::sim::Trajectory;
use serde::Serialize;
use serde_json::Value;

/// File name of the run manifest inside an output directory.
pub const RUN_MANIFEST: &str = "run-manifest.json";

/// Hash of the effective parameters of a run, with every input file folded
/// in by content.
pub fn config_hash(params: &Value, inputs: &[PathBuf]) -> Result<String> {
    let mut digests = Vec::with_capacity(inputs.len());
    for path in inputs {
        digests.push(input_digest(path)?);
    }
    let doc = serde_json::json!({ "params": params, "inputs": digests });
    Ok(sha256_hex(&serde_json::to_vec(&doc)?))
}

/// A file's SHA-256, or for a directory the digest of its files' names and
/// digests in sorted order.
fn input_digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut parts = Vec::new();
        for entry in sorted_entries(path)? {
            let name = entry.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            parts.push(format!("{name}:{}", input_digest(&entry)?));
        }
        return Ok(sha256_hex(parts.join("\n").as_bytes()));
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Manifest path for an output: inside it when it is a directory, beside it
/// with a `.manifest.json` suffix when it is a file.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join(RUN_MANIFEST)
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

pub fn write_manifest(command: &str, output: &Path, hash: String, seed: Option<u64>, outputs: Vec<String>) -> Result<()> {
    let path = manifest_path(output);
    RunManifest::new(command, hash, seed, outputs)
        .write(&path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn is_trajectory_dir(dir: &Path) -> bool {
    dir.join("manifest.json").is_file() && dir.join("events.csv").is_file()
}

/// Trajectory directories at `path`: the path itself when it holds one,
/// otherwise its immediate subdirectories that do, in name order.
pub fn trajectory_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if is_trajectory_dir(path) {
        return Ok(vec![path.to_path_buf()]);
    }
    let dirs: Vec<PathBuf> = sorted_entries(path)?.into_iter().filter(|p| is_trajectory_dir(p)).collect();
    if dirs.is_empty() {
        bail!("no trajectories under {}", path.display());
    }
    Ok(dirs)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    trajectory_dirs(path)?
        .iter()
        .map(|d| Trajectory::read_dir(d).with_context(|| format!("reading trajectory {}", d.display())))
        .collect()
}

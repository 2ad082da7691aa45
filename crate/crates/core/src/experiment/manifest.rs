//! `sha256sum`-compatible manifests of every file below a directory.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::ExperimentError;

pub const MANIFEST_NAME: &str = "MANIFEST.sha256";

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
    let entries = std::fs::read_dir(dir).map_err(|e| ExperimentError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| ExperimentError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path.strip_prefix(root).map(|p| p != Path::new(MANIFEST_NAME)).unwrap_or(false) {
            out.push(path);
        }
    }
    Ok(())
}

fn file_hash(path: &Path) -> Result<String, ExperimentError> {
    let bytes = std::fs::read(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes `MANIFEST.sha256` in `dir` listing every other file, sorted by path.
pub fn write_manifest(dir: &Path) -> Result<PathBuf, ExperimentError> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    let mut lines: Vec<(String, String)> = files
        .iter()
        .map(|p| Ok((rel(dir, p), file_hash(p)?)))
        .collect::<Result<_, ExperimentError>>()?;
    lines.sort();
    let text: String = lines.iter().map(|(p, h)| format!("{h}  {p}\n")).collect();
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, text).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(path)
}

/// Problems found when re-hashing: changed or missing listed files and unlisted files.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, ExperimentError> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
    let mut problems = Vec::new();
    let mut listed = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let Some((hash, name)) = line.split_once("  ") else {
            return Err(ExperimentError::Format {
                path,
                msg: format!("line {} is not `<hash>  <path>`", i + 1),
            });
        };
        listed.insert(name.to_string());
        let file = dir.join(name);
        if !file.exists() {
            problems.push(format!("missing: {name}"));
        } else if file_hash(&file)? != hash {
            problems.push(format!("checksum mismatch: {name}"));
        }
    }
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    for f in files {
        let name = rel(dir, &f);
        if !listed.contains(&name) {
            problems.push(format!("not in manifest: {name}"));
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.bin"), [1u8, 2]).unwrap();
        write_manifest(dir.path()).unwrap();
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert!(text.contains("  sub/b.bin\n"));
        std::fs::write(dir.path().join("a.csv"), "y\n").unwrap();
        std::fs::write(dir.path().join("c.csv"), "z\n").unwrap();
        let problems = verify_manifest(dir.path()).unwrap();
        assert_eq!(problems, vec!["checksum mismatch: a.csv", "not in manifest: c.csv"]);
    }
}

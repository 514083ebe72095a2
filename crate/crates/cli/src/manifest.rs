//! Run manifests, derived seeds and hash-guarded output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

/// Key/value description of a run. Its hash tags every output file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    /// Records a file by the hash of its contents, so renaming or moving an
    /// input does not change the manifest.
    pub fn file(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(self.set(key, digest_hex(&bytes)))
    }

    /// Sorted `key=value` lines.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Manifest::canonical`].
    pub fn hash(&self) -> String {
        digest_hex(self.canonical().as_bytes())[..16].to_string()
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seed for the named sub-stream `name`/`index` of a manifest seed.
pub fn substream(seed: u64, name: &str, index: u64) -> u64 {
    let d = Sha256::digest(format!("{seed}/{name}/{index}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

const TAG: &str = "# manifest=";

/// Manifest hash recorded in the first line of `text`, if any.
pub fn tag_of(text: &str) -> Option<&str> {
    text.lines().next().and_then(|l| l.strip_prefix(TAG)).map(str::trim)
}

/// `text` without its manifest line.
pub fn strip_tag(text: &str) -> &str {
    if tag_of(text).is_some() {
        text.split_once('\n').map_or("", |(_, rest)| rest)
    } else {
        text
    }
}

/// Output directory whose files all carry one manifest hash.
#[derive(Debug, Clone)]
pub struct Outputs {
    dir: PathBuf,
    hash: String,
}

impl Outputs {
    pub fn new(dir: &Path, manifest: &Manifest) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let out = Self {
            dir: dir.to_path_buf(),
            hash: manifest.hash(),
        };
        out.write_raw("manifest.txt", &manifest.canonical())?;
        Ok(out)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// True when `name` exists and was written under this manifest.
    pub fn is_current(&self, name: &str) -> bool {
        fs::read_to_string(self.path(name)).is_ok_and(|t| tag_of(&t) == Some(self.hash.as_str()))
    }

    /// Writes `contents` prefixed with the manifest line. Refuses to replace
    /// a file produced under a different manifest.
    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        self.write_raw(name, contents)
    }

    fn write_raw(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        guard(&path, &self.hash)?;
        fs::write(&path, format!("{TAG}{}\n{contents}", self.hash)).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Reads a file written by [`Outputs::write`], without its manifest line.
    pub fn read(&self, name: &str) -> Result<String> {
        read_untagged(&self.path(name))
    }
}

/// Errors if `path` exists with a different (or no) manifest tag.
pub fn guard(path: &Path, hash: &str) -> Result<()> {
    if let Ok(existing) = fs::read_to_string(path) {
        match tag_of(&existing) {
            Some(h) if h == hash => {}
            Some(h) => bail!(
                "{} was produced by manifest {h}, not {hash}; refusing to overwrite (remove it or choose another output directory)",
                path.display()
            ),
            None => bail!("{} exists and carries no manifest tag; refusing to overwrite", path.display()),
        }
    }
    Ok(())
}

pub fn read_untagged(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(strip_tag(&text).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_order_independent() {
        let mut a = Manifest::new("x");
        a.set("k", 50).set("eps", 0.01);
        let mut b = Manifest::new("x");
        b.set("eps", 0.01).set("k", 50);
        assert_eq!(a.hash(), b.hash());
        b.set("k", 51);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn substreams_differ() {
        assert_eq!(substream(1, "noise", 0), substream(1, "noise", 0));
        assert_ne!(substream(1, "noise", 0), substream(1, "noise", 1));
        assert_ne!(substream(1, "noise", 0), substream(1, "init", 0));
        assert_ne!(substream(1, "noise", 0), substream(2, "noise", 0));
    }

    #[test]
    fn tagged_files_are_guarded() {
        let dir = std::env::temp_dir().join(format!("tfi-manifest-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let m1 = Manifest::new("a");
        let m2 = Manifest::new("b");
        let o1 = Outputs::new(&dir, &m1).unwrap();
        o1.write("f.csv", "x\n1\n").unwrap();
        assert!(o1.is_current("f.csv"));
        assert_eq!(o1.read("f.csv").unwrap(), "x\n1\n");
        o1.write("f.csv", "x\n1\n").unwrap();
        assert!(Outputs::new(&dir, &m2).is_err(), "manifest.txt is guarded too");
        fs::write(dir.join("plain.txt"), "hello").unwrap();
        assert!(o1.write("plain.txt", "y").is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}

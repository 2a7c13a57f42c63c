//! On-disk dataset directories.
//!
//! ```text
//! <dir>/manifest.json          splits, file names, SHA-256 of every file
//! <dir>/labeled/<id>.rawt      volume
//! <dir>/labeled/<id>.mask.rawt mask
//! <dir>/unlabeled/<id>.rawt
//! <dir>/test/<id>.rawt, <id>.mask.rawt
//! <dir>/hidden/<id>.mask.rawt  truth of unlabeled samples, evaluation only
//! <dir>/hidden/index.json
//! ```
//!
//! NIfTI datasets use `.nii` instead of `.rawt`. Volumes are normalized to
//! zero mean and unit variance when loaded into samples.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{decode_volume, encode_volume, Format};
use crate::pool::{HiddenTruth, Sample};
use crate::synth::{SynthConfig, SyntheticDataset};
use crate::volume::{Mask, Volume};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const HIDDEN_INDEX_FILE: &str = "hidden/index.json";
const MANIFEST_FORMAT: &str = "dataset manifest";
const HIDDEN_FORMAT: &str = "hidden index";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    /// Path relative to the dataset directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub id: String,
    pub volume: FileRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<FileRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub labeled: Vec<Entry>,
    pub unlabeled: Vec<Entry>,
    pub test: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenEntry {
    pub id: String,
    pub mask: FileRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenIndex {
    pub entries: Vec<HiddenEntry>,
}

/// Ids become file names, so they are restricted to `[A-Za-z0-9._-]`, not
/// starting with a dot.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b));
    if ok {
        Ok(())
    } else {
        Err(Error::malformed(MANIFEST_FORMAT, format!("invalid sample id {id:?}")))
    }
}

fn check_relative(path: &str) -> Result<()> {
    let p = Path::new(path);
    if path.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(Error::malformed(
            MANIFEST_FORMAT,
            format!("path {path:?} must be relative and stay inside the dataset"),
        ));
    }
    Ok(())
}

fn check_file_ref(f: &FileRef) -> Result<()> {
    check_relative(&f.path)?;
    if f.sha256.len() != 64 || !f.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::malformed(MANIFEST_FORMAT, format!("bad sha256 for {:?}", f.path)));
    }
    Ok(())
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        check_id(id)?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

pub fn parse_manifest(bytes: &[u8]) -> Result<DatasetManifest> {
    let m: DatasetManifest =
        serde_json::from_slice(bytes).map_err(|e| Error::malformed(MANIFEST_FORMAT, e.to_string()))?;
    let all = m.labeled.iter().chain(&m.unlabeled).chain(&m.test);
    check_unique(all.clone().map(|e| e.id.as_str()))?;
    for e in all {
        check_file_ref(&e.volume)?;
        if let Some(mask) = &e.mask {
            check_file_ref(mask)?;
        }
    }
    let missing = m.labeled.iter().chain(&m.test).find(|e| e.mask.is_none());
    if let Some(e) = missing {
        return Err(Error::malformed(MANIFEST_FORMAT, format!("`{}` needs a mask", e.id)));
    }
    if let Some(e) = m.unlabeled.iter().find(|e| e.mask.is_some()) {
        return Err(Error::malformed(
            MANIFEST_FORMAT,
            format!("unlabeled sample `{}` must not list a mask", e.id),
        ));
    }
    Ok(m)
}

pub fn parse_hidden_index(bytes: &[u8]) -> Result<HiddenIndex> {
    let h: HiddenIndex = serde_json::from_slice(bytes).map_err(|e| Error::malformed(HIDDEN_FORMAT, e.to_string()))?;
    check_unique(h.entries.iter().map(|e| e.id.as_str()))?;
    for e in &h.entries {
        check_file_ref(&e.mask)?;
    }
    Ok(h)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Nifti1 => "nii",
        Format::RawTensor => "rawt",
    }
}

struct Writer<'a> {
    root: &'a Path,
    format: Format,
}

impl Writer<'_> {
    fn put(&self, rel: String, bytes: Vec<u8>) -> Result<FileRef> {
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        Ok(FileRef {
            path: rel,
            sha256: sha256_hex(&bytes),
        })
    }

    fn volume(&self, dir: &str, id: &str, v: &Volume) -> Result<FileRef> {
        self.put(format!("{dir}/{id}.{}", extension(self.format)), encode_volume(v, self.format))
    }

    fn mask(&self, dir: &str, id: &str, m: &Mask) -> Result<FileRef> {
        let v = Volume::new(m.shape().to_vec(), m.to_reals())?;
        self.put(format!("{dir}/{id}.mask.{}", extension(self.format)), encode_volume(&v, self.format))
    }

    fn entry(&self, dir: &str, s: &Sample) -> Result<Entry> {
        check_id(s.id())?;
        Ok(Entry {
            id: s.id().to_string(),
            volume: self.volume(dir, s.id(), s.volume())?,
            mask: s.mask().map(|m| self.mask(dir, s.id(), m)).transpose()?,
        })
    }
}

/// Write a generated dataset; the output is a pure function of the inputs.
pub fn write_dataset(
    dir: &Path,
    data: &SyntheticDataset,
    format: Format,
    seed: u64,
    synth: &SynthConfig,
) -> Result<DatasetManifest> {
    let w = Writer { root: dir, format };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = |split: &str, samples: &[Sample]| samples.iter().map(|s| w.entry(split, s)).collect::<Result<Vec<_>>>();
    let manifest = DatasetManifest {
        format,
        seed: Some(seed),
        synth: Some(synth.clone()),
        labeled: entries("labeled", data.pool.training())?,
        unlabeled: entries("unlabeled", data.pool.unlabeled())?,
        test: entries("test", &data.test)?,
    };
    let hidden = HiddenIndex {
        entries: data
            .hidden
            .iter()
            .map(|(id, m)| {
                check_id(id)?;
                Ok(HiddenEntry {
                    id: id.clone(),
                    mask: w.mask("hidden", id, m)?,
                })
            })
            .collect::<Result<_>>()?,
    };
    w.put(HIDDEN_INDEX_FILE.into(), to_json(&hidden))?;
    w.put(MANIFEST_FILE.into(), to_json(&manifest))?;
    Ok(manifest)
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Samples of a dataset directory, volumes normalized.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Empty when the directory has no hidden index.
    pub hidden: HiddenTruth,
}

fn read_checked(root: &Path, f: &FileRef) -> Result<Vec<u8>> {
    let path = root.join(&f.path);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if !sha256_hex(&bytes).eq_ignore_ascii_case(&f.sha256) {
        return Err(Error::malformed(MANIFEST_FORMAT, format!("checksum mismatch for {}", path.display())));
    }
    Ok(bytes)
}

fn read_volume(root: &Path, f: &FileRef, format: Format) -> Result<Volume> {
    decode_volume(&read_checked(root, f)?, format)
}

fn read_mask(root: &Path, f: &FileRef, format: Format) -> Result<Mask> {
    let v = read_volume(root, f, format)?;
    Mask::from_reals(v.shape().to_vec(), v.voxels())
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(dir);
    parse_manifest(&fs::read(&path).map_err(|e| Error::io(&path, e))?)
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = load_manifest(dir)?;
    let format = manifest.format;
    let labeled_sample = |e: &Entry| -> Result<Sample> {
        let v = read_volume(dir, &e.volume, format)?.normalized();
        let m = read_mask(dir, e.mask.as_ref().expect("validated"), format)?;
        Sample::labeled(e.id.clone(), v, m)
    };
    let labeled = manifest.labeled.iter().map(labeled_sample).collect::<Result<_>>()?;
    let test = manifest.test.iter().map(labeled_sample).collect::<Result<_>>()?;
    let unlabeled = manifest
        .unlabeled
        .iter()
        .map(|e| Ok(Sample::unlabeled(e.id.clone(), read_volume(dir, &e.volume, format)?.normalized())))
        .collect::<Result<_>>()?;
    let mut hidden = HiddenTruth::default();
    let index_path = dir.join(HIDDEN_INDEX_FILE);
    if index_path.exists() {
        let index = parse_hidden_index(&fs::read(&index_path).map_err(|e| Error::io(&index_path, e))?)?;
        for e in index.entries {
            hidden.insert(e.id, read_mask(dir, &e.mask, format)?);
        }
    }
    Ok(LoadedDataset {
        manifest,
        labeled,
        unlabeled,
        test,
        hidden,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthesize_dataset;

    fn tiny() -> SynthConfig {
        SynthConfig {
            n_labeled: 1,
            n_unlabeled: 1,
            n_test: 1,
            image_size: vec![16, 16],
            lesion_radius: [1.5, 2.5],
            ..SynthConfig::default()
        }
    }

    fn files_under(dir: &Path) -> Vec<String> {
        let mut out = Vec::new();
        for sub in ["", "labeled", "unlabeled", "test", "hidden"] {
            let d = dir.join(sub);
            for e in fs::read_dir(&d).unwrap() {
                let e = e.unwrap();
                if e.file_type().unwrap().is_file() {
                    out.push(format!("{sub}/{}", e.file_name().to_string_lossy()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn minimal_dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let ds = synthesize_dataset(&cfg, 4).unwrap();
        write_dataset(dir.path(), &ds, Format::RawTensor, 4, &cfg).unwrap();
        assert_eq!(
            files_under(dir.path()),
            [
                "/manifest.json",
                "hidden/index.json",
                "hidden/unl-0000.mask.rawt",
                "labeled/lab-0000.mask.rawt",
                "labeled/lab-0000.rawt",
                "test/test-0000.mask.rawt",
                "test/test-0000.rawt",
                "unlabeled/unl-0000.rawt",
            ]
        );
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.labeled[0].mask(), ds.pool.training()[0].mask());
        assert_eq!(loaded.hidden.get("unl-0000"), ds.hidden.get("unl-0000"));
        assert!(loaded.unlabeled[0].mask().is_none());
        let v = loaded.test[0].volume().voxels();
        assert!((v.iter().sum::<f64>() / v.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = tiny();
        for d in [&a, &b] {
            write_dataset(d.path(), &synthesize_dataset(&cfg, 8).unwrap(), Format::RawTensor, 8, &cfg).unwrap();
        }
        let read = |d: &tempfile::TempDir| fs::read(d.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(read(&a), read(&b));
    }

    #[test]
    fn checksum_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        write_dataset(dir.path(), &synthesize_dataset(&cfg, 1).unwrap(), Format::RawTensor, 1, &cfg).unwrap();
        let victim = dir.path().join("unlabeled/unl-0000.rawt");
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&victim, bytes).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn manifest_validation() {
        let entry = |id: &str, path: &str| {
            format!(r#"{{"id":"{id}","volume":{{"path":"{path}","sha256":"{}"}}}}"#, "0".repeat(64))
        };
        let doc = |u: String| format!(r#"{{"format":"raw_tensor","labeled":[],"unlabeled":[{u}],"test":[]}}"#);
        assert!(parse_manifest(doc(entry("a", "unlabeled/a.rawt")).as_bytes()).is_ok());
        assert!(parse_manifest(doc(entry("a", "../a.rawt")).as_bytes()).is_err());
        assert!(parse_manifest(doc(entry("a", "/etc/passwd")).as_bytes()).is_err());
        assert!(parse_manifest(doc(entry("a/b", "x.rawt")).as_bytes()).is_err());
        let dup = format!("{},{}", entry("a", "x.rawt"), entry("a", "y.rawt"));
        assert!(matches!(parse_manifest(doc(dup).as_bytes()), Err(Error::DuplicateId(_))));
        assert!(parse_manifest(br#"{"format":"raw_tensor","labeled":[],"unlabeled":[],"test":[],"extra":1}"#).is_err());
    }

    #[test]
    fn hidden_index_validation() {
        let ok = format!(r#"{{"entries":[{{"id":"u","mask":{{"path":"hidden/u.mask.rawt","sha256":"{}"}}}}]}}"#, "a".repeat(64));
        assert_eq!(parse_hidden_index(ok.as_bytes()).unwrap().entries.len(), 1);
        assert!(parse_hidden_index(b"{\"entries\":[{}]}").is_err());
        assert!(parse_hidden_index(b"[]").is_err());
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::label::{LabelSet, SourceLabel};
use crate::error::{GfdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    name: String,
    #[serde(default)]
    is_real: bool,
    #[serde(default)]
    train: Vec<String>,
    #[serde(default)]
    val: Vec<String>,
    #[serde(default)]
    test: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    native_resolution: usize,
    #[serde(default)]
    resize_to: Option<usize>,
    classes: Vec<RawClass>,
}

/// One class with its resolved files per split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    pub label: SourceLabel,
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

impl ClassEntry {
    pub fn files(&self, split: Split) -> &[PathBuf] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// A loaded, validated dataset manifest. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub native_resolution: usize,
    /// Explicit resize target; `None` means the default policy for the native size.
    pub resize_to: Option<usize>,
    pub labels: LabelSet,
    /// Classes ordered by label index.
    pub classes: Vec<ClassEntry>,
    pub source: PathBuf,
}

impl DatasetManifest {
    /// All `(file, label index)` pairs of a split, class by class.
    pub fn samples(&self, split: Split) -> Vec<(PathBuf, usize)> {
        self.classes
            .iter()
            .flat_map(|c| {
                c.files(split)
                    .iter()
                    .map(move |p| (p.clone(), c.label.index))
            })
            .collect()
    }

    /// Errors unless every class has at least one file in `split`.
    pub fn require_split(&self, split: Split) -> Result<()> {
        for c in &self.classes {
            if c.files(split).is_empty() {
                return Err(GfdError::EmptySplit {
                    class: c.label.name.clone(),
                    split: split.name().into(),
                });
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }
}

fn has_glob_meta(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

fn resolve(root: &Path, pattern: &str, class: &str, split: Split) -> Result<Vec<PathBuf>> {
    let full = if Path::new(pattern).is_absolute() {
        PathBuf::from(pattern)
    } else {
        root.join(pattern)
    };
    if !has_glob_meta(pattern) {
        if !full.is_file() {
            return Err(GfdError::MissingFile(full));
        }
        return Ok(vec![full]);
    }
    let pat = full.to_string_lossy().into_owned();
    let mut out: Vec<PathBuf> = glob::glob(&pat)
        .map_err(|e| GfdError::Manifest(format!("bad pattern '{pattern}': {e}")))?
        .filter_map(|r| r.ok())
        .filter(|p| p.is_file())
        .collect();
    if out.is_empty() {
        return Err(GfdError::EmptySplit {
            class: class.into(),
            split: split.name().into(),
        });
    }
    out.sort();
    Ok(out)
}

/// Loads a manifest document. Relative paths and globs resolve against the
/// manifest's directory; the real class is assigned index 0.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(GfdError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let raw: RawManifest =
        serde_json::from_str(&text).map_err(|e| GfdError::Manifest(e.to_string()))?;
    if raw.native_resolution == 0 {
        return Err(GfdError::Manifest(
            "native_resolution must be positive".into(),
        ));
    }
    let pairs: Vec<(&str, bool)> = raw
        .classes
        .iter()
        .map(|c| (c.name.as_str(), c.is_real))
        .collect();
    let labels = LabelSet::new(&pairs)?;
    let root = path.parent().unwrap_or(Path::new("."));

    let mut classes = Vec::with_capacity(raw.classes.len());
    for label in labels.iter() {
        let rc = raw
            .classes
            .iter()
            .find(|c| c.name == label.name)
            .expect("label came from classes");
        let mut entry = ClassEntry {
            label: label.clone(),
            train: vec![],
            val: vec![],
            test: vec![],
        };
        for (split, patterns) in [
            (Split::Train, &rc.train),
            (Split::Val, &rc.val),
            (Split::Test, &rc.test),
        ] {
            let mut files = Vec::new();
            for p in patterns {
                files.extend(resolve(root, p, &rc.name, split)?);
            }
            match split {
                Split::Train => entry.train = files,
                Split::Val => entry.val = files,
                Split::Test => entry.test = files,
            }
        }
        if entry.train.is_empty() && entry.val.is_empty() && entry.test.is_empty() {
            return Err(GfdError::EmptySplit {
                class: rc.name.clone(),
                split: "any".into(),
            });
        }
        classes.push(entry);
    }
    Ok(DatasetManifest {
        native_resolution: raw.native_resolution,
        resize_to: raw.resize_to,
        labels,
        classes,
        source: path.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn touch(dir: &Path, rel: &str) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, b"x").unwrap();
    }

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.json");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn indexes_real_first() {
        let dir = tempfile::tempdir().unwrap();
        for c in ["real", "ganA", "ganB"] {
            touch(dir.path(), &format!("{c}/train/0.png"));
            touch(dir.path(), &format!("{c}/train/1.png"));
        }
        let m = write_manifest(
            dir.path(),
            r#"{"native_resolution": 128, "classes": [
                {"name": "ganA", "train": ["ganA/train/*.png"]},
                {"name": "real", "is_real": true, "train": ["real/train/*.png"]},
                {"name": "ganB", "train": ["ganB/train/0.png", "ganB/train/1.png"]}]}"#,
        );
        let man = load_manifest(&m).unwrap();
        assert_eq!(man.labels.num_generators(), 2);
        assert_eq!(man.labels.names(), vec!["real", "ganA", "ganB"]);
        assert_eq!(man.samples(Split::Train).len(), 6);
        assert!(man.require_split(Split::Train).is_ok());
        assert!(matches!(
            man.require_split(Split::Val),
            Err(GfdError::EmptySplit { .. })
        ));
    }

    #[test]
    fn empty_glob_is_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "real/train/0.png");
        fs::create_dir_all(dir.path().join("ganA/train")).unwrap();
        let m = write_manifest(
            dir.path(),
            r#"{"native_resolution": 64, "classes": [
                {"name": "real", "is_real": true, "train": ["real/train/*.png"]},
                {"name": "ganA", "train": ["ganA/train/*.png"]}]}"#,
        );
        let err = load_manifest(&m).unwrap_err();
        assert!(err.to_string().contains("empty split"), "{err}");
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest(&dir.path().join("nope.json")),
            Err(GfdError::MissingFile(_))
        ));

        touch(dir.path(), "a.png");
        let m = write_manifest(
            dir.path(),
            r#"{"native_resolution": 64, "classes": [
                {"name": "real", "is_real": true, "train": ["a.png"]},
                {"name": "real", "train": ["a.png"]}]}"#,
        );
        assert!(matches!(
            load_manifest(&m),
            Err(GfdError::DuplicateLabel(_))
        ));

        let m = write_manifest(
            dir.path(),
            r#"{"native_resolution": 64, "classes": [
                {"name": "x", "train": ["a.png"]}, {"name": "y", "train": ["a.png"]}]}"#,
        );
        assert!(matches!(load_manifest(&m), Err(GfdError::NoRealClass)));

        let m = write_manifest(
            dir.path(),
            r#"{"native_resolution": 64, "classes": [
                {"name": "real", "is_real": true, "train": ["missing.png"]},
                {"name": "g", "train": ["a.png"]}]}"#,
        );
        assert!(matches!(load_manifest(&m), Err(GfdError::MissingFile(_))));

        let m = write_manifest(
            dir.path(),
            r#"{"native_resolution": 64, "classes": [], "extra": 1}"#,
        );
        assert!(matches!(load_manifest(&m), Err(GfdError::Manifest(_))));
    }
}

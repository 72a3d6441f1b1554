//! Dataset layout and IO.
//!
//! On disk a dataset root holds one directory per split, each containing one
//! directory per subject with numbered PGM slices, plus a `labels.csv` of
//! `subject_id,label` rows (no header, label 0 = non-COVID, 1 = COVID).
//! Files named `*.mask.pgm` are ground-truth sidecars and are never listed
//! as slices.

pub mod container;
pub mod pgm;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::ClassLabel;
use crate::preproc::CtSlice;

/// Subject-level label; `Unknown` is legitimate only for unlabeled (test)
/// splits and is rejected by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubjectLabel {
    Covid,
    NonCovid,
    Unknown,
}

impl SubjectLabel {
    pub fn as_class(self) -> Option<ClassLabel> {
        match self {
            SubjectLabel::Covid => Some(ClassLabel::Covid),
            SubjectLabel::NonCovid => Some(ClassLabel::NonCovid),
            SubjectLabel::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!(
                "unknown split `{other}` (expected train, validation or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// One subject: ordered slice paths plus label and split.
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: SubjectLabel,
    pub slice_paths: Vec<PathBuf>,
    pub split: Split,
}

/// Reads a `subject_id,label` CSV. Duplicate ids and labels other than 0/1
/// are errors. A missing file yields an empty map (unlabeled split).
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, ClassLabel>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, value) = line.split_once(',').ok_or_else(|| {
            Error::format(path, format!("line {}: expected `subject_id,label`", lineno + 1))
        })?;
        let label = match value.trim() {
            "0" => ClassLabel::NonCovid,
            "1" => ClassLabel::Covid,
            other => {
                return Err(Error::format(
                    path,
                    format!("line {}: label must be 0 or 1, got `{other}`", lineno + 1),
                ))
            }
        };
        if labels.insert(id.trim().to_string(), label).is_some() {
            return Err(Error::format(
                path,
                format!("duplicate subject_id `{}` in labels file", id.trim()),
            ));
        }
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &BTreeMap<String, ClassLabel>) -> Result<()> {
    let mut out = String::new();
    for (id, label) in labels {
        let v = match label {
            ClassLabel::Covid => 1,
            ClassLabel::NonCovid => 0,
        };
        out.push_str(&format!("{id},{v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Last run of decimal digits in the file stem; this is the slice index.
pub fn slice_index_from_name(path: &Path) -> Result<usize> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "slice filename is not valid UTF-8"))?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if digits.is_empty() {
        return Err(Error::format(
            path,
            "slice filename carries no numeric index",
        ));
    }
    digits
        .parse()
        .map_err(|e| Error::format(path, format!("bad slice index: {e}")))
}

fn is_slice_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    name.ends_with(".pgm") && !name.ends_with(".mask.pgm")
}

/// Scans `<root>/<split>/` into subject records: one per directory, slices
/// sorted by the integer embedded in the filename, labels joined from
/// `<root>/<split>/labels.csv`. The result depends only on the directory
/// contents, never on filesystem enumeration order.
pub fn scan_dataset(root: &Path, split: Split) -> Result<Vec<SubjectRecord>> {
    let split_dir = root.join(split.dir_name());
    let labels = read_labels(&split_dir.join("labels.csv"))?;
    let mut records = Vec::new();
    let entries = fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&split_dir, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let subject_id = entry
            .file_name()
            .into_string()
            .map_err(|_| Error::format(&path, "subject directory name is not valid UTF-8"))?;
        let mut slices: Vec<(usize, PathBuf)> = Vec::new();
        for f in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
            let f = f.map_err(|e| Error::io(&path, e))?;
            let fp = f.path();
            if fp.is_file() && is_slice_file(&fp) {
                slices.push((slice_index_from_name(&fp)?, fp));
            }
        }
        if slices.is_empty() {
            return Err(Error::Dataset(format!(
                "subject `{subject_id}` has no readable slice images"
            )));
        }
        slices.sort_by_key(|(idx, _)| *idx);
        for pair in slices.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Dataset(format!(
                    "subject `{subject_id}` has two slices with index {}",
                    pair[0].0
                )));
            }
        }
        let label = match labels.get(&subject_id) {
            Some(ClassLabel::Covid) => SubjectLabel::Covid,
            Some(ClassLabel::NonCovid) => SubjectLabel::NonCovid,
            None => SubjectLabel::Unknown,
        };
        records.push(SubjectRecord {
            subject_id,
            label,
            slice_paths: slices.into_iter().map(|(_, p)| p).collect(),
            split,
        });
    }
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(records)
}

/// Reads one slice image, recovering its index from the filename.
pub fn read_slice(path: &Path) -> Result<CtSlice> {
    Ok(CtSlice {
        image: pgm::read_pgm(path)?,
        source_index: slice_index_from_name(path)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;

    fn write_subject(dir: &Path, id: &str, names: &[&str]) {
        let sub = dir.join(id);
        fs::create_dir_all(&sub).unwrap();
        for name in names {
            pgm::write_pgm(&sub.join(name), &GrayImage::zeros(2, 2)).unwrap();
        }
    }

    #[test]
    fn empty_labels_file_yields_unknown_records() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train");
        write_subject(&train, "a", &["s1.pgm"]);
        write_subject(&train, "b", &["s1.pgm"]);
        fs::write(train.join("labels.csv"), "").unwrap();
        let records = scan_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.label == SubjectLabel::Unknown));
    }

    #[test]
    fn slices_sorted_numerically_not_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(
            &dir.path().join("train"),
            "subj",
            &["s10.pgm", "s2.pgm", "s1.pgm"],
        );
        let records = scan_dataset(dir.path(), Split::Train).unwrap();
        let names: Vec<String> = records[0]
            .slice_paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["s1.pgm", "s2.pgm", "s10.pgm"]);
    }

    #[test]
    fn labels_joined_by_subject_id() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train");
        write_subject(&train, "subj_a", &["s1.pgm"]);
        fs::write(train.join("labels.csv"), "subj_a,1\n").unwrap();
        let records = scan_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(records[0].label, SubjectLabel::Covid);
    }

    #[test]
    fn duplicate_label_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        fs::write(&path, "a,1\na,0\n").unwrap();
        assert!(read_labels(&path).is_err());
    }

    #[test]
    fn non_binary_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        fs::write(&path, "a,2\n").unwrap();
        assert!(read_labels(&path).is_err());
    }

    #[test]
    fn subject_without_images_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("train/empty")).unwrap();
        assert!(matches!(
            scan_dataset(dir.path(), Split::Train),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn mask_sidecars_are_not_slices() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(
            &dir.path().join("train"),
            "s",
            &["slice1.pgm", "slice1.mask.pgm"],
        );
        let records = scan_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(records[0].slice_paths.len(), 1);
    }

    #[test]
    fn filename_without_digits_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(&dir.path().join("train"), "s", &["noindex.pgm"]);
        assert!(scan_dataset(dir.path(), Split::Train).is_err());
    }

    #[test]
    fn scan_is_stable_across_calls() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train");
        for id in ["zeta", "alpha", "mid"] {
            write_subject(&train, id, &["s1.pgm", "s2.pgm"]);
        }
        let a = scan_dataset(dir.path(), Split::Train).unwrap();
        let b = scan_dataset(dir.path(), Split::Train).unwrap();
        let ids: Vec<&str> = a.iter().map(|r| r.subject_id.as_str()).collect();
        assert_eq!(ids, vec!["alpha", "mid", "zeta"]);
        assert_eq!(
            ids,
            b.iter().map(|r| r.subject_id.as_str()).collect::<Vec<_>>()
        );
    }
}

//! Dataset catalog (manifest), tensor files, splits and balanced sampling.
//!
//! Manifest format: UTF-8 text, one record per line,
//! `patient_id,slice_index,label,t1c_path,t2_path,mask_path`, labels
//! `nondeleted` or `codeleted`, `#` starts a comment line. Relative paths
//! resolve against the manifest's directory.

mod split;
mod tensor_file;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub use split::{balanced_sample, split_dataset, Grouping, Split, SplitSpec};
pub use tensor_file::{
    decode_tensor, encode_tensor, read_tensor_file, read_tensor_shape, write_tensor_file, MAX_RANK,
    TENSOR_MAGIC,
};

/// Slice class. Codeleted is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Nondeleted = 0,
    Codeleted = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Nondeleted, Label::Codeleted];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Nondeleted),
            1 => Some(Label::Codeleted),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Nondeleted => "nondeleted",
            Label::Codeleted => "codeleted",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.token())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "nondeleted" => Ok(Label::Nondeleted),
            "codeleted" => Ok(Label::Codeleted),
            other => Err(format!(
                "unknown label `{other}` (expected nondeleted or codeleted)"
            )),
        }
    }
}

/// Anything that carries a class label; lets one sampler serve records and
/// preprocessed samples alike.
pub trait Labeled {
    fn label(&self) -> Label;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceRecord {
    pub patient_id: String,
    pub slice_index: u32,
    pub label: Label,
    pub t1c: PathBuf,
    pub t2: PathBuf,
    pub mask: PathBuf,
}

impl SliceRecord {
    pub fn key(&self) -> (&str, u32) {
        (&self.patient_id, self.slice_index)
    }

    /// `patient_slice`, used in prediction listings.
    pub fn id(&self) -> String {
        format!("{}_{}", self.patient_id, self.slice_index)
    }
}

impl Labeled for SliceRecord {
    fn label(&self) -> Label {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<SliceRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<SliceRecord>) -> Self {
        Manifest {
            root: root.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Copy of `record` with its paths resolved against the manifest root.
    pub fn resolved(&self, record: &SliceRecord) -> SliceRecord {
        SliceRecord {
            t1c: self.resolve(&record.t1c),
            t2: self.resolve(&record.t2),
            mask: self.resolve(&record.mask),
            ..record.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# patient_id,slice_index,label,t1c_path,t2_path,mask_path\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.patient_id,
                r.slice_index,
                r.label,
                r.t1c.display(),
                r.t2.display(),
                r.mask.display()
            ));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Parse manifest text without touching the referenced files.
pub fn parse_manifest_text(
    text: &str,
    origin: &Path,
    root: &Path,
) -> Result<(Manifest, Vec<usize>)> {
    let err = |line: usize, detail: String| Error::Manifest {
        path: origin.to_path_buf(),
        line,
        detail,
    };
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(
                line_no,
                format!("expected 6 comma-separated fields, got {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(err(line_no, "empty patient_id".into()));
        }
        let slice_index: u32 = fields[1]
            .parse()
            .map_err(|_| err(line_no, format!("bad slice_index `{}`", fields[1])))?;
        let label: Label = fields[2].parse().map_err(|e| err(line_no, e))?;
        if !seen.insert((fields[0].to_string(), slice_index)) {
            return Err(err(
                line_no,
                format!("duplicate record ({}, {slice_index})", fields[0]),
            ));
        }
        records.push(SliceRecord {
            patient_id: fields[0].to_string(),
            slice_index,
            label,
            t1c: PathBuf::from(fields[3]),
            t2: PathBuf::from(fields[4]),
            mask: PathBuf::from(fields[5]),
        });
        lines.push(line_no);
    }
    Ok((Manifest::new(root, records), lines))
}

/// Read a manifest and check that every referenced tensor file exists and
/// that t1c, t2 and mask share one 2D shape.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let (manifest, lines) = parse_manifest_text(&text, path, &root)?;
    for (record, &line) in manifest.records.iter().zip(&lines) {
        let r = manifest.resolved(record);
        let err = |detail: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut shapes = Vec::with_capacity(3);
        for (what, p) in [("t1c", &r.t1c), ("t2", &r.t2), ("mask", &r.mask)] {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("{what} tensor of record {} (line {line}) not found", r.id()),
                    ),
                ));
            }
            shapes.push((what, read_tensor_shape(p)?));
        }
        if shapes[0].1.len() != 2 {
            return Err(err(format!(
                "record {}: t1c must be 2D, got {:?}",
                r.id(),
                shapes[0].1
            )));
        }
        for (what, s) in &shapes[1..] {
            if *s != shapes[0].1 {
                return Err(err(format!(
                    "record {}: {what} shape {s:?} differs from t1c shape {:?}",
                    r.id(),
                    shapes[0].1
                )));
            }
        }
    }
    Ok(manifest)
}

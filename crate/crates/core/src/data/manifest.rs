use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, LabelVector, Split, EMOTIONS};

pub const MANIFEST_HEADER: [&str; 11] = [
    "sample_id",
    "split",
    "visual_resnet_path",
    "visual_aus_path",
    "audio_path",
    "admiration",
    "amusement",
    "determination",
    "empathic_pain",
    "excitement",
    "joy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub split: Split,
    /// Paths as written in the manifest, relative to its directory unless absolute.
    pub visual_resnet_path: PathBuf,
    pub visual_aus_path: PathBuf,
    pub audio_path: PathBuf,
    pub labels: LabelVector,
}

impl ManifestRow {
    pub fn paths(&self) -> [&Path; 3] {
        [
            &self.visual_resnet_path,
            &self.visual_aus_path,
            &self.audio_path,
        ]
    }
}

/// Sample index: unique ids, disjoint splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    base_dir: PathBuf,
    rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Checks id uniqueness and split disjointness. File existence is checked by [`load`](Self::load)
    /// and [`check_files`](Self::check_files).
    pub fn new(base_dir: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self, DataError> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for row in &rows {
            if let Some(&first) = seen.get(row.sample_id.as_str()) {
                return Err(if first == row.split {
                    DataError::DuplicateId {
                        id: row.sample_id.clone(),
                    }
                } else {
                    DataError::OverlappingSplits {
                        id: row.sample_id.clone(),
                        first,
                        second: row.split,
                    }
                });
            }
            seen.insert(&row.sample_id, row.split);
        }
        Ok(Self {
            base_dir: base_dir.into(),
            rows,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::parse(&text, base)?;
        manifest.check_files()?;
        Ok(manifest)
    }

    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
            return Err(DataError::Manifest {
                line: 1,
                message: format!("header must be {}", MANIFEST_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let bad = |message: String| DataError::Manifest { line, message };
            let sample_id = record[0].to_string();
            if sample_id.is_empty() {
                return Err(bad("empty sample_id".into()));
            }
            let split: Split = record[1].parse()?;
            let mut labels = [0.0; 6];
            for (k, label) in labels.iter_mut().enumerate() {
                let text = &record[5 + k];
                *label = text
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("{}: not a number: {text:?}", EMOTIONS[k])))?;
            }
            let labels =
                LabelVector::new(labels).map_err(|e| bad(format!("sample {sample_id}: {e}")))?;
            rows.push(ManifestRow {
                sample_id,
                split,
                visual_resnet_path: PathBuf::from(&record[2]),
                visual_aus_path: PathBuf::from(&record[3]),
                audio_path: PathBuf::from(&record[4]),
                labels,
            });
        }
        Self::new(base_dir, rows)
    }

    /// Fails on the first referenced file that does not exist.
    pub fn check_files(&self) -> Result<(), DataError> {
        for row in &self.rows {
            for p in row.paths() {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(DataError::MissingFile {
                        id: row.sample_id.clone(),
                        path: full,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(MANIFEST_HEADER)
            .expect("in-memory write");
        for row in &self.rows {
            let mut record = vec![
                row.sample_id.clone(),
                row.split.to_string(),
                row.visual_resnet_path.display().to_string(),
                row.visual_aus_path.display().to_string(),
                row.audio_path.display().to_string(),
            ];
            record.extend(row.labels.values().iter().map(|v| v.to_string()));
            writer.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows of one split in manifest order.
    pub fn split(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn get(&self, sample_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.sample_id == sample_id)
    }

    /// Sample counts per split, ordered train, validation, test.
    pub fn counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.rows.iter().filter(|r| r.split == s).count())
    }
}

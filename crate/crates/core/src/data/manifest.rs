//! CSV dataset manifests: `rgb_path,depth_path,label,split`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER: [&str; 4] = ["rgb_path", "depth_path", "label", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub rgb: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub label: usize,
    pub split: Split,
}

/// Which path columns a caller needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Depth,
    Paired,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
    pub num_classes: usize,
}

impl Manifest {
    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for r in self.records.iter().filter(|r| r.split == split) {
            counts[r.label] += 1;
        }
        counts
    }

    /// Checks that every record has the path columns `modality` needs.
    pub fn require(&self, modality: Modality) -> Result<()> {
        let bad: Vec<String> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| match modality {
                Modality::Rgb => r.rgb.is_none(),
                Modality::Depth => r.depth.is_none(),
                Modality::Paired => r.rgb.is_none() || r.depth.is_none(),
            })
            .map(|(i, _)| (i + 2).to_string())
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "missing {modality:?} path columns on rows {}",
                bad.join(", ")
            )))
        }
    }

    pub fn to_csv(&self, base: &Path) -> String {
        let rel = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.strip_prefix(base).unwrap_or(p).display().to_string())
                .unwrap_or_default()
        };
        let mut out = HEADER.join(",");
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", rel(&r.rgb), rel(&r.depth), r.label, r.split));
        }
        out
    }
}

/// Parses manifest text. Relative paths resolve against `base`; existence
/// is checked only when `check_files` is set.
pub fn parse_manifest(text: &str, base: &Path, check_files: bool) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("manifest header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Data(format!(
            "manifest header must be `{}`, got `{}`",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut records = Vec::new();
    let mut problems = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // header is row 1
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("row {line}: {e}"));
                continue;
            }
        };
        let path = |s: &str| -> Option<PathBuf> {
            (!s.is_empty()).then(|| {
                let p = Path::new(s);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            })
        };
        let rgb = path(&row[0]);
        let depth = path(&row[1]);
        if rgb.is_none() && depth.is_none() {
            problems.push(format!("row {line}: both paths empty"));
        }
        if check_files {
            for p in rgb.iter().chain(depth.iter()) {
                if !p.is_file() {
                    problems.push(format!("row {line}: missing file {}", p.display()));
                }
            }
        }
        let label = match row[2].parse::<usize>() {
            Ok(l) => l,
            Err(_) => {
                problems.push(format!("row {line}: bad label `{}`", &row[2]));
                continue;
            }
        };
        let split = match &row[3] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                problems.push(format!("row {line}: unknown split `{other}`"));
                continue;
            }
        };
        records.push(Record {
            rgb,
            depth,
            label,
            split,
        });
    }
    if records.is_empty() && problems.is_empty() {
        problems.push("manifest has no rows".into());
    }

    let labels: BTreeSet<usize> = records.iter().map(|r| r.label).collect();
    let num_classes = labels.last().map_or(0, |m| m + 1);
    if labels.len() != num_classes {
        let missing: Vec<String> = (0..num_classes)
            .filter(|l| !labels.contains(l))
            .map(|l| l.to_string())
            .collect();
        problems.push(format!("non-dense labels: missing {}", missing.join(", ")));
    }
    if !problems.is_empty() {
        return Err(Error::Data(summarize(&problems)));
    }
    Ok(Manifest {
        records,
        num_classes,
    })
}

/// Joins at most ten entries and counts the rest.
fn summarize(items: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut out = items[..items.len().min(SHOWN)].join("; ");
    if items.len() > SHOWN {
        out.push_str(&format!("; and {} more", items.len() - SHOWN));
    }
    out
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, true)
}

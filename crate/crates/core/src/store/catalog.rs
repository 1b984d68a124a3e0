use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use sha2::{Digest, Sha256};

use super::sigs::{self, GridStack};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Immutable, date-ordered set of records sharing one region geometry.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    region: String,
    rows: usize,
    cols: usize,
    records: BTreeMap<NaiveDate, Arc<GridStack>>,
}

impl Catalog {
    pub fn from_stacks(stacks: impl IntoIterator<Item = GridStack>) -> Result<Self> {
        Self::from_shared(stacks.into_iter().map(Arc::new))
    }

    pub fn from_shared(stacks: impl IntoIterator<Item = Arc<GridStack>>) -> Result<Self> {
        let mut cat = Catalog::default();
        for s in stacks {
            if cat.records.is_empty() {
                cat.region = s.region.clone();
                cat.rows = s.rows;
                cat.cols = s.cols;
            } else if s.region != cat.region || (s.rows, s.cols) != (cat.rows, cat.cols) {
                return Err(Error::Shape(format!(
                    "record {} ({} {}×{}) does not match catalog ({} {}×{})",
                    s.date, s.region, s.rows, s.cols, cat.region, cat.rows, cat.cols
                )));
            }
            if cat.records.insert(s.date, s.clone()).is_some() {
                return Err(Error::Config(format!("duplicate record for {}", s.date)));
            }
        }
        Ok(cat)
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&Arc<GridStack>> {
        self.records.get(&date)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.records.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<GridStack>> + '_ {
        self.records.values()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.records.keys().next().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.records.keys().next_back().copied()
    }

    /// Channel names of the first record.
    pub fn channels(&self) -> Vec<String> {
        self.records
            .values()
            .next()
            .map(|s| s.channels.clone())
            .unwrap_or_default()
    }

    pub fn filter(&self, keep: impl Fn(NaiveDate) -> bool) -> Catalog {
        Catalog {
            region: self.region.clone(),
            rows: self.rows,
            cols: self.cols,
            records: self
                .records
                .iter()
                .filter(|(d, _)| keep(**d))
                .map(|(d, s)| (*d, s.clone()))
                .collect(),
        }
    }

    /// Writes every record under `dir/records/` plus the manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let rec_dir = dir.join("records");
        std::fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
        let mut manifest = String::new();
        for (date, stack) in &self.records {
            let rel = format!("records/{date}.sigs");
            sigs::write_stack(stack, &dir.join(&rel))?;
            let _ = writeln!(manifest, "{date}\t{rel}");
        }
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Loads a catalog from a directory holding a manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut stacks = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let field = format!("manifest line {}", n + 1);
            let (date, rel) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(&field, "expected `date<TAB>path`"))?;
            let date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
                .map_err(|e| Error::format(&field, e.to_string()))?;
            let stack = sigs::read_stack(&dir.join(rel.trim()))?;
            if stack.date != date {
                return Err(Error::format(
                    &field,
                    format!("record is dated {}, manifest says {date}", stack.date),
                ));
            }
            stacks.push(stack);
        }
        Self::from_stacks(stacks)
    }

    /// Git-style content hash: SHA-256 of a blob header plus one
    /// `date<TAB>record-hash` line per record.
    pub fn content_hash(&self) -> Result<String> {
        let mut listing = String::new();
        for (date, stack) in &self.records {
            let digest = Sha256::digest(sigs::encode(stack)?);
            let _ = writeln!(listing, "{date}\t{}", hex(&digest));
        }
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", listing.len()).as_bytes());
        h.update(listing.as_bytes());
        Ok(hex(&h.finalize()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Year boundaries of the train/validation/test partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitYears {
    pub train_last: i32,
    pub validation: i32,
    pub test: i32,
}

impl Default for SplitYears {
    fn default() -> Self {
        Self {
            train_last: 2019,
            validation: 2020,
            test: 2021,
        }
    }
}

impl SplitYears {
    pub fn split_of(&self, date: NaiveDate) -> Option<&'static str> {
        let y = date.year();
        if y <= self.train_last {
            Some("train")
        } else if y == self.validation {
            Some("validation")
        } else if y == self.test {
            Some("test")
        } else {
            None
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Catalog,
    pub validation: Catalog,
    pub test: Catalog,
}

pub fn split_by_years(catalog: &Catalog, years: SplitYears) -> Splits {
    let part = |name: &str| catalog.filter(|d| years.split_of(d) == Some(name));
    Splits {
        train: part("train"),
        validation: part("validation"),
        test: part("test"),
    }
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::export::{sample_file_name, SampleId};
use super::{io_err, DatasetError, RAY_DIR};
use crate::scalar::floor_fraction;
use crate::volume::Channel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "none",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        [Split::Train, Split::Test, Split::Unassigned].into_iter().find(|t| t.tag() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: SampleId,
    pub split: Split,
}

impl ManifestRecord {
    /// Every file belonging to the sample: PNG and `.rm3d` per modality and
    /// height, then the ray text files.
    pub fn files(&self, root: &Path, nz: usize) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for c in Channel::ALL {
            for k in 1..=nz {
                let dir = root.join(c.dir_name()).join(format!("h{k}"));
                out.push(dir.join(sample_file_name(self.id, "png")));
                out.push(dir.join(sample_file_name(self.id, "rm3d")));
            }
        }
        for k in 1..=nz {
            out.push(root.join(RAY_DIR).join(format!("h{k}")).join(sample_file_name(self.id, "txt")));
        }
        out
    }
}

/// Ordered sample inventory serialized as `BID,x,y,split` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split_seed: Option<u64>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Self { records, split_seed: None }
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# BID,x,y,split\n");
        if let Some(seed) = self.split_seed {
            writeln!(out, "# split_seed={seed}").unwrap();
        }
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.id.bid, r.id.x, r.id.y, r.split.tag()).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |message: String| DatasetError::Manifest { line: n + 1, message };
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(seed) = comment.trim().strip_prefix("split_seed=") {
                    m.split_seed = Some(seed.parse().map_err(|_| err(format!("bad seed {seed:?}")))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad number {s:?}")));
            m.records.push(ManifestRecord {
                id: SampleId { bid: num(f[0])?, x: num(f[1])? as usize, y: num(f[2])? as usize },
                split: Split::from_tag(f[3]).ok_or_else(|| err(format!("bad split {:?}", f[3])))?,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Shuffles record indices with ChaCha8(`seed`) and tags the first
/// `floor(ratio · N)` as train, the rest as test. Record order is kept.
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest, DatasetError> {
    let n = manifest.records.len();
    if n < 2 {
        return Err(DatasetError::TooFewRecords(n));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DatasetError::Ratio(ratio));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = floor_fraction(ratio, n);
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.records[idx].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    out.split_seed = Some(seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| ManifestRecord { id: SampleId { bid: i as u64, x: i, y: 2 * i }, split: Split::Unassigned })
                .collect(),
        )
    }

    #[test]
    fn ninety_ten() {
        let s = split_dataset(&manifest(100), 0.9, 3).unwrap();
        assert_eq!((s.count(Split::Train), s.count(Split::Test)), (90, 10));
        let s = split_dataset(&manifest(7), 0.9, 3).unwrap();
        assert_eq!((s.count(Split::Train), s.count(Split::Test)), (6, 1));
    }

    #[test]
    fn needs_two_records() {
        assert!(split_dataset(&manifest(1), 0.9, 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = split_dataset(&manifest(5), 0.9, 11).unwrap();
        assert_eq!(DatasetManifest::parse(&s.to_text()).unwrap(), s);
        assert!(DatasetManifest::parse("1,2,3\n").is_err());
        assert!(DatasetManifest::parse("1,2,3,val\n").is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_deterministic_partition(n in 2usize..200, seed: u64, ratio in 0.0f64..=1.0) {
            let a = split_dataset(&manifest(n), ratio, seed).unwrap();
            let b = split_dataset(&manifest(n), ratio, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.count(Split::Train), floor_fraction(ratio, n));
            prop_assert_eq!(a.count(Split::Train) + a.count(Split::Test), n);
            prop_assert_eq!(a.count(Split::Unassigned), 0);
        }
    }
}

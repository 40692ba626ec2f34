//! Polyphonic piano-roll datasets.
//!
//! On disk a dataset is a UTF-8 JSON document
//!
//! ```json
//! {"name": "jsb_chorales",
//!  "splits": {"train": [[[39, 43], [41], []], ...], "valid": [...], "test": [...]}}
//! ```
//!
//! where every sequence is a list of timesteps and every timestep lists its
//! active piano keys as 0-based indices in `[0, 88)` (MIDI pitch minus 21).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NOTES;

/// Sorted, duplicate-free active keys of one timestep.
pub type Frame = Vec<u8>;
pub type Sequence = Vec<Frame>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!(
                "unknown split {other:?} (expected train, valid or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PianoRollDataset {
    pub name: String,
    pub train: Vec<Sequence>,
    pub valid: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

#[derive(Deserialize)]
struct DatasetFile {
    name: String,
    splits: BTreeMap<String, Vec<Vec<Vec<i64>>>>,
}

impl PianoRollDataset {
    pub fn split(&self, split: Split) -> &[Sequence] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Keeps only the first `n` training sequences.
    pub fn truncate_train(&mut self, n: usize) {
        self.train.truncate(n);
    }

    pub fn from_json_str(s: &str, origin: &Path) -> Result<Self> {
        let data_err = |msg: String| Error::Data {
            path: origin.to_path_buf(),
            msg,
        };
        let file: DatasetFile = serde_json::from_str(s).map_err(|e| data_err(format!("parse error: {e}")))?;
        let mut splits = file.splits;
        let mut take = |split: Split| -> Result<Vec<Sequence>> {
            let raw = splits
                .remove(split.as_str())
                .ok_or_else(|| data_err(format!("missing split {split:?}", split = split.as_str())))?;
            raw.into_iter()
                .enumerate()
                .map(|(si, seq)| {
                    seq.into_iter()
                        .enumerate()
                        .map(|(t, frame)| {
                            validate_frame(frame)
                                .map_err(|msg| data_err(format!("{split} sequence {si}, timestep {t}: {msg}")))
                        })
                        .collect()
                })
                .collect()
        };
        let train = take(Split::Train)?;
        let valid = take(Split::Valid)?;
        let test = take(Split::Test)?;
        if let Some(extra) = splits.keys().next() {
            return Err(data_err(format!("unexpected split {extra:?}")));
        }
        Ok(PianoRollDataset {
            name: file.name,
            train,
            valid,
            test,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            splits.insert(split.as_str(), self.split(split));
        }
        #[derive(Serialize)]
        struct Out<'a> {
            name: &'a str,
            splits: BTreeMap<&'static str, &'a [Sequence]>,
        }
        Ok(serde_json::to_string(&Out {
            name: &self.name,
            splits,
        })?)
    }
}

fn validate_frame(frame: Vec<i64>) -> std::result::Result<Frame, String> {
    let mut out = Vec::with_capacity(frame.len());
    for note in frame {
        if !(0..NOTES as i64).contains(&note) {
            return Err(format!("note index {note} outside [0, {NOTES})"));
        }
        out.push(note as u8);
    }
    out.sort_unstable();
    if out.windows(2).any(|w| w[0] == w[1]) {
        return Err("repeated note index".to_string());
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PianoRollDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    PianoRollDataset::from_json_str(&text, path)
}

/// 88-entry 0/1 vector with ones at the active keys.
pub fn binarize(frame: &[u8]) -> Vec<f64> {
    let mut v = vec![0.0; NOTES];
    for &n in frame {
        v[n as usize] = 1.0;
    }
    v
}

/// Padded next-step prediction batch. Row `b` holds one sequence of length
/// `T_b`: inputs are its timesteps `0..T_b-1`, targets its timesteps `1..T_b`,
/// and the mask is 1 on the first `T_b - 1` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    batch: usize,
    steps: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    mask: Vec<f64>,
}

impl Batch {
    pub fn from_sequences(seqs: &[&Sequence]) -> Self {
        let steps = seqs.iter().map(|s| s.len().saturating_sub(1)).max().unwrap_or(0);
        let batch = seqs.len();
        let mut inputs = vec![0.0; batch * steps * NOTES];
        let mut targets = vec![0.0; batch * steps * NOTES];
        let mut mask = vec![0.0; batch * steps];
        for (b, seq) in seqs.iter().enumerate() {
            for t in 0..seq.len().saturating_sub(1) {
                let base = (b * steps + t) * NOTES;
                for &n in &seq[t] {
                    inputs[base + n as usize] = 1.0;
                }
                for &n in &seq[t + 1] {
                    targets[base + n as usize] = 1.0;
                }
                mask[b * steps + t] = 1.0;
            }
        }
        Batch {
            batch,
            steps,
            inputs,
            targets,
            mask,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Padded number of prediction positions `T_max`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn input(&self, b: usize, t: usize) -> &[f64] {
        let base = (b * self.steps + t) * NOTES;
        &self.inputs[base..base + NOTES]
    }

    pub fn target(&self, b: usize, t: usize) -> &[f64] {
        let base = (b * self.steps + t) * NOTES;
        &self.targets[base..base + NOTES]
    }

    pub fn mask(&self, b: usize, t: usize) -> f64 {
        self.mask[b * self.steps + t]
    }

    pub fn mask_row(&self, b: usize) -> &[f64] {
        &self.mask[b * self.steps..(b + 1) * self.steps]
    }

    /// Number of valid positions in row `b`.
    pub fn valid_len(&self, b: usize) -> usize {
        self.mask_row(b).iter().filter(|&&m| m > 0.0).count()
    }

    pub fn total_valid(&self) -> usize {
        (0..self.batch).map(|b| self.valid_len(b)).sum()
    }

    /// Unpadded `(inputs, targets)` of row `b`.
    pub fn row(&self, b: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let len = self.valid_len(b);
        (
            (0..len).map(|t| self.input(b, t).to_vec()).collect(),
            (0..len).map(|t| self.target(b, t).to_vec()).collect(),
        )
    }
}

/// Shuffles `split` deterministically from `seed`, drops sequences shorter than
/// two timesteps, and groups the rest into batches of at most `batch_size`.
pub fn to_batches(split: &[Sequence], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut usable: Vec<&Sequence> = split.iter().filter(|s| s.len() >= 2).collect();
    usable.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(usable.chunks(batch_size).map(Batch::from_sequences).collect())
}

/// Next-step `(inputs, targets)` pair of one sequence as dense 0/1 frames.
pub fn prediction_pairs(seq: &Sequence) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    if seq.len() < 2 {
        return (Vec::new(), Vec::new());
    }
    let frames: Vec<Vec<f64>> = seq.iter().map(|f| binarize(f)).collect();
    (frames[..frames.len() - 1].to_vec(), frames[1..].to_vec())
}

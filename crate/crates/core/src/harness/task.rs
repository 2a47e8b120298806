use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::backbone::Batch;
use crate::error::{Error, Result};
use crate::numerics::rng::{self, Rng};

/// Labelling rule of a synthetic sequence-classification task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskFamily {
    /// Most frequent token, ties to the smallest id, then `mod num_classes`.
    Majority,
    /// Token at `position`, `mod num_classes`.
    PositionProbe { position: usize },
    /// Occurrences of `token`, `mod modulus`.
    PatternCount { token: usize, modulus: usize },
}

impl TaskFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::Majority => "majority",
            TaskFamily::PositionProbe { .. } => "position_probe",
            TaskFamily::PatternCount { .. } => "pattern_count",
        }
    }

    /// Label of one sequence.
    pub fn label(&self, tokens: &[usize], num_classes: usize) -> usize {
        match *self {
            TaskFamily::Majority => majority_token(tokens) % num_classes,
            TaskFamily::PositionProbe { position } => tokens[position] % num_classes,
            TaskFamily::PatternCount { token, modulus } => tokens.iter().filter(|&&t| t == token).count() % modulus,
        }
    }
}

fn majority_token(tokens: &[usize]) -> usize {
    let top = tokens.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; top + 1];
    for &t in tokens {
        counts[t] += 1;
    }
    // max_by_key keeps the last maximum, so scan in reverse to prefer small ids
    counts.iter().enumerate().rev().max_by_key(|&(_, &c)| c).map_or(0, |(t, _)| t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub family: TaskFamily,
    pub vocab: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub splits: SplitSizes,
}

impl TaskSpec {
    pub fn majority(seed: u64) -> Self {
        TaskSpec { family: TaskFamily::Majority, ..Self::desk(seed) }
    }

    pub fn position_probe(position: usize, seed: u64) -> Self {
        TaskSpec { family: TaskFamily::PositionProbe { position }, ..Self::desk(seed) }
    }

    pub fn pattern_count(token: usize, modulus: usize, seed: u64) -> Self {
        TaskSpec { family: TaskFamily::PatternCount { token, modulus }, ..Self::desk(seed) }
    }

    fn desk(seed: u64) -> Self {
        TaskSpec {
            family: TaskFamily::Majority,
            vocab: 32,
            seq_len: 16,
            num_classes: 8,
            seed,
            splits: SplitSizes { train: 2048, val: 256, test: 512 },
        }
    }

    pub fn with_splits(self, train: usize, val: usize, test: usize) -> Self {
        TaskSpec { splits: SplitSizes { train, val, test }, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.vocab < 2 || self.seq_len == 0 || self.num_classes < 2 {
            return bad(format!(
                "task needs vocab >= 2, seq_len >= 1 and num_classes >= 2, got {} / {} / {}",
                self.vocab, self.seq_len, self.num_classes
            ));
        }
        match self.family {
            TaskFamily::Majority => {}
            TaskFamily::PositionProbe { position } if position >= self.seq_len => {
                return bad(format!("probe position {position} outside sequence of length {}", self.seq_len));
            }
            TaskFamily::PositionProbe { .. } => {}
            TaskFamily::PatternCount { token, modulus } => {
                if token >= self.vocab {
                    return bad(format!("counted token {token} outside vocabulary {}", self.vocab));
                }
                if modulus < 2 || modulus > self.num_classes {
                    return bad(format!("modulus {modulus} must lie in [2, {}]", self.num_classes));
                }
            }
        }
        Ok(())
    }

    /// Example `index` of the concatenated train, val, test index space.
    /// A pure function of the spec and the index.
    pub fn example(&self, index: usize) -> (Vec<usize>, usize) {
        let mut r = rng::substream(self.seed, &format!("task/{}/{index}", self.family.name()));
        let tokens = self.sample_tokens(&mut r);
        let label = self.family.label(&tokens, self.num_classes);
        (tokens, label)
    }

    /// Draws a class-balanced sequence by planting tokens over uniform noise.
    fn sample_tokens(&self, r: &mut Rng) -> Vec<usize> {
        let n = self.seq_len;
        let mut tokens: Vec<usize> = (0..n).map(|_| r.random_range(0..self.vocab)).collect();
        match self.family {
            TaskFamily::Majority => {
                let winner = r.random_range(0..self.vocab);
                let copies = (n / 3).max(1);
                let mut slots: Vec<usize> = (0..n).collect();
                slots.shuffle(r);
                for &s in &slots[..copies] {
                    tokens[s] = winner;
                }
            }
            TaskFamily::PositionProbe { .. } => {}
            TaskFamily::PatternCount { token, modulus } => {
                let other = |r: &mut Rng| {
                    let t = r.random_range(0..self.vocab - 1);
                    if t >= token {
                        t + 1
                    } else {
                        t
                    }
                };
                for t in tokens.iter_mut() {
                    *t = other(r);
                }
                let count = r.random_range(0..modulus.min(n + 1));
                let mut slots: Vec<usize> = (0..n).collect();
                slots.shuffle(r);
                for &s in &slots[..count] {
                    tokens[s] = token;
                }
            }
        }
        tokens
    }
}

/// Labelled sequences stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
    pub seq_len: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut tokens = Vec::with_capacity(indices.len() * self.seq_len);
        for &i in indices {
            tokens.extend_from_slice(self.sequence(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch { tokens, labels, size: indices.len(), seq_len: self.seq_len }
    }

    /// Consecutive batches of at most `size` examples covering the set once.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let size = size.max(1);
        (0..self.len().div_ceil(size)).map(move |c| self.batch(&idx[c * size..((c + 1) * size).min(self.len())]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Deterministic train, val and test splits over disjoint index ranges.
pub fn make_task(spec: &TaskSpec) -> Result<TaskData> {
    spec.validate()?;
    let build = |range: std::ops::Range<usize>| {
        let mut tokens = Vec::with_capacity(range.len() * spec.seq_len);
        let mut labels = Vec::with_capacity(range.len());
        for i in range {
            let (t, l) = spec.example(i);
            tokens.extend(t);
            labels.push(l);
        }
        Dataset { tokens, labels, seq_len: spec.seq_len }
    };
    let SplitSizes { train, val, test } = spec.splits;
    Ok(TaskData { train: build(0..train), val: build(train..train + val), test: build(train + val..train + val + test) })
}

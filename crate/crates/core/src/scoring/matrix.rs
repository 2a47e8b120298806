use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::AggregatorKind;
use crate::adapters::Edge;
use crate::error::{Error, Result};
use crate::selection::CandidateMask;

/// How a score matrix was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub aggregator: AggregatorKind,
    pub eta: f64,
    pub batches: usize,
    pub batch_size: usize,
    /// Head-pretraining steps taken before the probe gradients.
    pub head_steps: usize,
    pub seed: u64,
}

/// `n x n` placement scores, row = src, column = dst. Cells outside the
/// candidate mask hold NaN and are written as `NA`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n: usize,
    #[serde(with = "nan_as_null")]
    values: Vec<f64>,
    mask: CandidateMask,
    pub meta: ScoreMeta,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| if x.is_nan() { None } else { Some(*x) }).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

impl PartialEq for ScoreMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.mask == other.mask
            && self.meta == other.meta
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ScoreMatrix {
    /// `values` is row-major `n x n`; entries outside `mask` are replaced by
    /// the sentinel, entries inside must be finite.
    pub fn new(values: Vec<f64>, mask: CandidateMask, meta: ScoreMeta) -> Result<Self> {
        let n = mask.n();
        if values.len() != n * n {
            return Err(Error::InvalidArgument(format!("{} values for a {n}x{n} grid", values.len())));
        }
        let mut values = values;
        for (k, v) in values.iter_mut().enumerate() {
            if !mask.contains(k / n, k % n) {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::NonFinite { op: "score_matrix" });
            }
        }
        Ok(ScoreMatrix { n, values, mask, meta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mask(&self) -> &CandidateMask {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Score of a candidate cell; `None` outside the mask.
    pub fn get(&self, src: usize, dst: usize) -> Option<f64> {
        self.mask.contains(src, dst).then(|| self.values[src * self.n + dst])
    }

    /// `(edge, score)` for every candidate, row-major.
    pub fn scored_edges(&self) -> Vec<(Edge, f64)> {
        self.mask.edges().into_iter().map(|e| (e, self.values[e.src.0 * self.n + e.dst.0])).collect()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        ScoreMatrix::new(self.values.iter().map(|v| v * c).collect(), self.mask.clone(), self.meta.clone())
    }

    /// Header row `src,0,1,..`, then one row per src. Values use the
    /// shortest representation that parses back to the same bits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("src");
        for j in 0..self.n {
            write!(out, ",{j}").unwrap();
        }
        out.push('\n');
        for i in 0..self.n {
            write!(out, "{i}").unwrap();
            for j in 0..self.n {
                match self.get(i, j) {
                    Some(v) => write!(out, ",{v}").unwrap(),
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, meta: ScoreMeta) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("score csv: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let n = header.split(',').count() - 1;
        let mut values = Vec::with_capacity(n * n);
        let mut mask = CandidateMask::empty(n);
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n + 1 || i >= n {
                return Err(bad(format!("row {i} does not fit a {n}x{n} grid")));
            }
            for (j, cell) in cells[1..].iter().enumerate() {
                let cell = cell.trim();
                if cell == "NA" {
                    values.push(f64::NAN);
                } else {
                    values.push(cell.parse().map_err(|_| bad(format!("cell ({i}, {j}) = {cell:?}")))?);
                    mask.insert(Edge::new(i, j))?;
                }
            }
        }
        ScoreMatrix::new(values, mask, meta)
    }

    /// Writes `<stem>.csv` and the metadata sidecar `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let sidecar = serde_json::json!({
            "meta": self.meta,
            "n": self.n,
            "candidates": self.mask.count(),
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let csv = std::fs::read_to_string(dir.join(format!("{stem}.csv")))?;
        let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let meta: ScoreMeta = serde_json::from_value(sidecar["meta"].clone())?;
        Self::from_csv(&csv, meta)
    }
}

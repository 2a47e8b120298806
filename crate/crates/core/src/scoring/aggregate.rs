use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// Scalar summary `f(M)` of a probe-gradient matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// `min_j sum_i |M_ij|`
    MinAbsColSum,
    /// `max_j sum_i |M_ij|`
    MaxAbsColSum,
    Frobenius,
    /// Largest singular value.
    Spectral,
    /// Sum of singular values.
    Nuclear,
    /// Effective rank, see [`srank`].
    Srank,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::MinAbsColSum,
        AggregatorKind::MaxAbsColSum,
        AggregatorKind::Frobenius,
        AggregatorKind::Spectral,
        AggregatorKind::Nuclear,
        AggregatorKind::Srank,
    ];

    /// Short command-line name.
    pub fn short_name(&self) -> &'static str {
        match self {
            AggregatorKind::MinAbsColSum => "mincol",
            AggregatorKind::MaxAbsColSum => "maxcol",
            AggregatorKind::Frobenius => "fro",
            AggregatorKind::Spectral => "spec",
            AggregatorKind::Nuclear => "nuc",
            AggregatorKind::Srank => "srank",
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.short_name())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mincol" | "min_abs_col_sum" => AggregatorKind::MinAbsColSum,
            "maxcol" | "max_abs_col_sum" => AggregatorKind::MaxAbsColSum,
            "fro" | "frobenius" => AggregatorKind::Frobenius,
            "spec" | "spectral" => AggregatorKind::Spectral,
            "nuc" | "nuclear" => AggregatorKind::Nuclear,
            "srank" => AggregatorKind::Srank,
            other => return Err(Error::InvalidArgument(format!("unknown aggregator {other:?}"))),
        })
    }
}

pub const DEFAULT_ETA: f64 = 0.01;

/// An aggregator together with the srank tail threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregator {
    pub kind: AggregatorKind,
    pub eta: f64,
}

impl Aggregator {
    pub fn new(kind: AggregatorKind, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidArgument(format!("eta must lie in (0, 1), got {eta}")));
        }
        Ok(Aggregator { kind, eta })
    }

    pub fn srank(eta: f64) -> Result<Self> {
        Self::new(AggregatorKind::Srank, eta)
    }
}

impl From<AggregatorKind> for Aggregator {
    fn from(kind: AggregatorKind) -> Self {
        Aggregator { kind, eta: DEFAULT_ETA }
    }
}

// Relative slack on the tail comparison; keeps ties that sit exactly on the
// threshold, such as k equal values with eta = 1/k, from flipping by rounding.
const TAIL_SLACK: f64 = 1e-12;

/// Smallest `k >= 1` whose head `sum_{j<=k} s_j` holds at least `1 - eta` of
/// the total mass, i.e. whose tail is at most `eta` of it.
///
/// `values` must be sorted in descending order and non-negative.
pub fn srank(values: &[f64], eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 1), got {eta}")));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("singular values must be finite and non-negative".into()));
    }
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("singular values must be sorted in descending order".into()));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    // tails[k] = sum of values[k..], accumulated from the smallest value up
    let mut tails = vec![0.0; values.len() + 1];
    for k in (0..values.len()).rev() {
        tails[k] = tails[k + 1] + values[k];
    }
    let bound = eta * total * (1.0 + TAIL_SLACK);
    Ok((1..=values.len()).find(|&k| tails[k] <= bound).unwrap_or(values.len()))
}

/// Singular values of a 2-D tensor in descending order.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    let (r, c) = dims(m)?;
    if !m.is_finite() {
        return Err(Error::Svd("input contains non-finite values".into()));
    }
    let mat = DMatrix::from_row_slice(r, c, m.data());
    let svd = mat.try_svd(false, false, f64::EPSILON, 10_000).ok_or_else(|| Error::Svd("did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

fn dims(m: &Tensor) -> Result<(usize, usize)> {
    match m.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err("aggregate", format!("expected a matrix, got {s:?}"))),
    }
}

fn abs_col_sums(m: &Tensor) -> Result<Vec<f64>> {
    let (_, c) = dims(m)?;
    let mut sums = vec![0.0; c];
    for row in m.data().chunks(c) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v.abs();
        }
    }
    Ok(sums)
}

pub fn aggregate(agg: Aggregator, m: &Tensor) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::Svd("input contains non-finite values".into()));
    }
    Ok(match agg.kind {
        AggregatorKind::MinAbsColSum => abs_col_sums(m)?.into_iter().fold(f64::INFINITY, f64::min),
        AggregatorKind::MaxAbsColSum => abs_col_sums(m)?.into_iter().fold(0.0, f64::max),
        AggregatorKind::Frobenius => {
            dims(m)?;
            m.data().iter().map(|v| v * v).sum::<f64>().sqrt()
        }
        AggregatorKind::Spectral => singular_values(m)?.first().copied().unwrap_or(0.0),
        AggregatorKind::Nuclear => singular_values(m)?.iter().sum(),
        AggregatorKind::Srank => srank(&singular_values(m)?, agg.eta)? as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn srank_unit_values() {
        assert_eq!(srank(&[1.0, 0.0, 0.0], 0.01).unwrap(), 1);
        assert_eq!(srank(&[1.0; 100], 0.01).unwrap(), 99);
        assert_eq!(srank(&[0.37; 100], 0.01).unwrap(), 99);
        // tails: k=1 -> 1/11 > 0.01, k=2 -> 0
        assert_eq!(srank(&[10.0, 1.0, 0.0], 0.01).unwrap(), 2);
        assert!(matches!(srank(&[0.0, 0.0], 0.01), Err(Error::ZeroSpectrum)));
        assert!(srank(&[1.0, 2.0], 0.01).is_err());
        assert!(srank(&[1.0], 1.0).is_err());
    }

    #[test]
    fn norm_examples() {
        let m = mat(&[vec![3.0, 4.0], vec![0.0, 0.0]]);
        assert_eq!(aggregate(AggregatorKind::Frobenius.into(), &m).unwrap(), 5.0);
        let m = mat(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
        assert_eq!(aggregate(AggregatorKind::MinAbsColSum.into(), &m).unwrap(), 4.0);
        assert_eq!(aggregate(AggregatorKind::MaxAbsColSum.into(), &m).unwrap(), 6.0);
        let d = mat(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert!((aggregate(AggregatorKind::Nuclear.into(), &d).unwrap() - 5.0).abs() < 1e-12);
        assert!((aggregate(AggregatorKind::Spectral.into(), &d).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(aggregate(AggregatorKind::Srank.into(), &d).unwrap(), 2.0);
    }

    #[test]
    fn zero_matrix() {
        let z = Tensor::zeros(&[3, 3]);
        for kind in AggregatorKind::ALL {
            let r = aggregate(kind.into(), &z);
            if kind == AggregatorKind::Srank {
                assert!(matches!(r, Err(Error::ZeroSpectrum)));
            } else {
                assert_eq!(r.unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn non_finite_input_is_an_svd_error() {
        let m = mat(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(aggregate(AggregatorKind::Nuclear.into(), &m), Err(Error::Svd(_))));
    }

    #[test]
    fn names_round_trip() {
        for kind in AggregatorKind::ALL {
            assert_eq!(kind.short_name().parse::<AggregatorKind>().unwrap(), kind);
        }
        assert!("l2".parse::<AggregatorKind>().is_err());
    }

    proptest! {
        #[test]
        fn srank_is_non_increasing_in_eta(
            mut s in prop::collection::vec(0.0f64..10.0, 1..40),
            a in 0.001f64..0.999,
            b in 0.001f64..0.999,
        ) {
            s.sort_by(|x, y| y.total_cmp(x));
            prop_assume!(s.iter().sum::<f64>() > 0.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(srank(&s, hi).unwrap() <= srank(&s, lo).unwrap());
        }

        #[test]
        fn norms_scale_and_srank_does_not(
            data in prop::collection::vec(-1.0f64..1.0, 16),
            c in prop::sample::select(vec![1e-3, 0.5, 1.0, 7.0, 1e3]),
        ) {
            let m = Tensor::new(vec![4, 4], data).unwrap();
            let cm = m.map(|v| v * c);
            for kind in [AggregatorKind::Frobenius, AggregatorKind::Nuclear, AggregatorKind::Spectral,
                         AggregatorKind::MinAbsColSum, AggregatorKind::MaxAbsColSum] {
                let (x, y) = (aggregate(kind.into(), &m).unwrap(), aggregate(kind.into(), &cm).unwrap());
                prop_assert!((y - c * x).abs() <= 1e-9 * (1.0 + c * x.abs()));
            }
            prop_assert_eq!(aggregate(AggregatorKind::Srank.into(), &m).unwrap(),
                            aggregate(AggregatorKind::Srank.into(), &cm).unwrap());
        }
    }
}

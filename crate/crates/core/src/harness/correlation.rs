use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::spearman;
use super::sweep::SweepRecord;
use crate::adapters::Edge;
use crate::error::{Error, Result};
use crate::scoring::{AggregatorKind, ScoreMatrix};

/// A rank correlation, or the reason it does not exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho {
    Value(f64),
    Undefined(String),
}

impl Rho {
    fn of(xs: &[f64], ys: &[f64]) -> Result<Rho> {
        match spearman(xs, ys) {
            Ok(r) => Ok(Rho::Value(r)),
            Err(Error::UndefinedCorrelation(why)) => Ok(Rho::Undefined(why)),
            Err(e) => Err(e),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Rho::Value(r) => Some(*r),
            Rho::Undefined(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub edge: Edge,
    pub score: f64,
    pub mean_test_accuracy: f64,
    pub mean_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub aggregator: AggregatorKind,
    pub eta: f64,
    pub points: Vec<ScatterPoint>,
    pub rho_test_accuracy: Rho,
    pub rho_train_loss: Rho,
}

/// Rank correlation of the scores against the sweep outcomes, over the
/// swept edges with at least one successful run. Every such edge must be a
/// scored candidate.
pub fn correlation_report(scores: &ScoreMatrix, records: &[SweepRecord]) -> Result<CorrelationReport> {
    let mut points = Vec::with_capacity(records.len());
    for r in records {
        let (Some(acc), Some(loss)) = (r.mean_test_accuracy, r.mean_train_loss) else { continue };
        let score = scores
            .get(r.edge.src.0, r.edge.dst.0)
            .ok_or_else(|| Error::InvalidArgument(format!("swept edge {} has no score", r.edge)))?;
        points.push(ScatterPoint { edge: r.edge, score, mean_test_accuracy: acc, mean_train_loss: loss });
    }
    let s: Vec<f64> = points.iter().map(|p| p.score).collect();
    let acc: Vec<f64> = points.iter().map(|p| p.mean_test_accuracy).collect();
    let loss: Vec<f64> = points.iter().map(|p| p.mean_train_loss).collect();
    Ok(CorrelationReport {
        aggregator: scores.meta.aggregator,
        eta: scores.meta.eta,
        rho_test_accuracy: Rho::of(&s, &acc)?,
        rho_train_loss: Rho::of(&s, &loss)?,
        points,
    })
}

/// Pairwise Spearman correlation of per-edge mean test accuracy between
/// tasks swept over the same grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetCorrelation {
    pub tasks: Vec<String>,
    pub rho: Vec<Vec<Rho>>,
}

pub fn dataset_correlation_matrix(sweeps: &[(String, Vec<SweepRecord>)]) -> Result<DatasetCorrelation> {
    let means: Vec<BTreeMap<Edge, f64>> = sweeps
        .iter()
        .map(|(_, recs)| recs.iter().filter_map(|r| Some((r.edge, r.mean_test_accuracy?))).collect())
        .collect();
    let grids: Vec<Vec<Edge>> = sweeps.iter().map(|(_, recs)| recs.iter().map(|r| r.edge).collect()).collect();
    if grids.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidArgument("tasks were swept over different grids".into()));
    }
    let n = sweeps.len();
    let mut rho = vec![vec![Rho::Undefined(String::new()); n]; n];
    for a in 0..n {
        for b in a..n {
            // edges that succeeded in both sweeps
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                means[a].iter().filter_map(|(e, &x)| Some((x, *means[b].get(e)?))).unzip();
            let r = Rho::of(&xs, &ys)?;
            rho[a][b] = r.clone();
            rho[b][a] = r;
        }
    }
    Ok(DatasetCorrelation { tasks: sweeps.iter().map(|(t, _)| t.clone()).collect(), rho })
}

/// Correlation reports for several score matrices of the same sweep, keyed
/// by aggregator.
pub fn correlation_table(scores: &[ScoreMatrix], records: &[SweepRecord]) -> Result<Vec<CorrelationReport>> {
    scores.iter().map(|s| correlation_report(s, records)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::AdapterKind;
    use crate::backbone::NodeSite;
    use crate::scoring::ScoreMeta;
    use crate::selection::CandidateMask;

    fn rec(edge: Edge, acc: f64, loss: f64) -> SweepRecord {
        SweepRecord {
            edge,
            kind: AdapterKind::Parallel,
            dst_site: NodeSite::Input,
            seeds: vec![0],
            final_train_loss: vec![loss],
            test_accuracy: vec![acc],
            failures: vec![],
            mean_test_accuracy: Some(acc),
            std_test_accuracy: Some(0.0),
            mean_train_loss: Some(loss),
            std_train_loss: Some(0.0),
        }
    }

    fn scores(values: Vec<f64>) -> ScoreMatrix {
        let meta = ScoreMeta { aggregator: AggregatorKind::Srank, eta: 0.01, batches: 1, batch_size: 1, head_steps: 0, seed: 0 };
        ScoreMatrix::new(values, CandidateMask::full(2), meta).unwrap()
    }

    fn records() -> Vec<SweepRecord> {
        vec![
            rec(Edge::new(0, 0), 0.1, 2.0),
            rec(Edge::new(0, 1), 0.4, 1.5),
            rec(Edge::new(1, 0), 0.3, 1.8),
            rec(Edge::new(1, 1), 0.9, 0.2),
        ]
    }

    #[test]
    fn scores_equal_to_accuracy() {
        let r = correlation_report(&scores(vec![0.1, 0.4, 0.3, 0.9]), &records()).unwrap();
        assert_eq!(r.rho_test_accuracy, Rho::Value(1.0));
        assert_eq!(r.rho_train_loss, Rho::Value(-1.0));
        assert_eq!(r.points.len(), 4);
    }

    #[test]
    fn constant_scores_are_flagged() {
        let r = correlation_report(&scores(vec![3.0; 4]), &records()).unwrap();
        assert!(matches!(r.rho_test_accuracy, Rho::Undefined(_)));
    }

    #[test]
    fn unscored_edge_is_an_error() {
        let mut recs = records();
        recs.push(rec(Edge::new(2, 2), 0.5, 1.0));
        assert!(correlation_report(&scores(vec![0.0, 1.0, 2.0, 3.0]), &recs).is_err());
    }

    #[test]
    fn dataset_matrix_is_symmetric_with_unit_diagonal() {
        let mut other = records();
        other[0].mean_test_accuracy = Some(0.95);
        let m = dataset_correlation_matrix(&[("a".into(), records()), ("b".into(), other)]).unwrap();
        assert_eq!(m.rho[0][0], Rho::Value(1.0));
        assert_eq!(m.rho[0][1], m.rho[1][0]);
        assert_ne!(m.rho[0][1], Rho::Value(1.0));
        let short = vec![rec(Edge::new(0, 0), 0.1, 1.0)];
        assert!(dataset_correlation_matrix(&[("a".into(), records()), ("b".into(), short)]).is_err());
    }
}

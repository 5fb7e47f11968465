//! Relative L2 error and per-split reports.

use std::fmt;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::{Preprocessor, Sample};
use crate::error::{Error, Result};
use crate::featurize::median;
use crate::model::GnnModel;
use crate::scalar::Scalar;

/// `|target - prediction|_2 / |target|_2 * 100`.
pub fn relative_l2<T: Scalar>(target: ArrayView1<T>, prediction: ArrayView1<T>) -> Result<f64> {
    if target.len() != prediction.len() {
        return Err(Error::Shape(format!("target length {} vs prediction {}", target.len(), prediction.len())));
    }
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (t, p) in target.iter().zip(prediction) {
        let (t, p) = (t.as_f64(), p.as_f64());
        diff += (t - p) * (t - p);
        norm += t * t;
    }
    if norm == 0.0 {
        return Err(Error::ZeroNormTarget);
    }
    Ok((diff / norm).sqrt() * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            median: median(values.iter().copied())?,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}% ({:.1}, {:.1})", self.median, self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphError {
    pub graph_id: String,
    pub num_nodes: usize,
    /// `None` when the target has zero norm.
    pub eps_r_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub per_graph: Vec<GraphError>,
    /// Median/min/max over per-graph errors (node-level tasks).
    pub summary: Option<Summary>,
    /// Single error over all graph-level predictions (graph-level tasks).
    pub pooled: Option<f64>,
}

impl EvalReport {
    pub fn node_count_range(&self) -> Option<(usize, usize)> {
        let n = self.per_graph.iter().map(|g| g.num_nodes);
        Some((n.clone().min()?, n.max()?))
    }

    /// One-row table in the `median% (min, max)` layout.
    pub fn table(&self) -> String {
        let (lo, hi) = self.node_count_range().unwrap_or((0, 0));
        let value = match (&self.summary, self.pooled) {
            (Some(s), _) => s.to_string(),
            (None, Some(p)) => format!("{p:.2}%"),
            (None, None) => "-".into(),
        };
        let skipped = self.per_graph.iter().filter(|g| g.eps_r_percent.is_none()).count();
        let mut out = format!(
            "{:<10} {:>10} {:>16} {:>24}\n{:<10} {:>10} {:>16} {:>24}\n",
            "split",
            "graphs",
            "nodes",
            "E median (min, max)",
            self.split,
            self.per_graph.len(),
            format!("{lo}\u{2013}{hi} nodes"),
            value
        );
        if skipped > 0 {
            out += &format!("({skipped} graph(s) with zero-norm targets excluded)\n");
        }
        out
    }

    /// `graph_id,num_nodes,eps_r_percent` with a header row.
    pub fn per_graph_csv(&self) -> String {
        let mut out = String::from("graph_id,num_nodes,eps_r_percent\n");
        for g in &self.per_graph {
            let e = g.eps_r_percent.map_or_else(|| "nan".to_string(), |v| format!("{v}"));
            out += &format!("{},{},{}\n", g.graph_id, g.num_nodes, e);
        }
        out
    }
}

/// Per-graph error over all node predictions, in physical units.
pub fn evaluate_node_level<T: Scalar>(
    model: &GnnModel<T>,
    prep: &Preprocessor,
    samples: &[Sample<T>],
    split: &str,
) -> Result<EvalReport> {
    let mut per_graph = Vec::with_capacity(samples.len());
    for s in samples {
        let target = s
            .raw_node_targets
            .as_ref()
            .ok_or_else(|| Error::Config(format!("sample {} has no node targets", s.id)))?;
        let pred = model.predict(&s.graph)?;
        let nodes = pred.nodes.ok_or_else(|| Error::Config("model does not predict node values".into()))?;
        let physical = prep.denormalize_nodes(s, &nodes)?;
        let flat_t: Array1<T> = target.iter().copied().collect();
        let flat_p: Array1<T> = physical.iter().copied().collect();
        let eps = match relative_l2(flat_t.view(), flat_p.view()) {
            Ok(v) => Some(v),
            Err(Error::ZeroNormTarget) => None,
            Err(e) => return Err(e),
        };
        per_graph.push(GraphError { graph_id: s.id.clone(), num_nodes: s.graph.num_nodes(), eps_r_percent: eps });
    }
    let values: Vec<f64> = per_graph.iter().filter_map(|g| g.eps_r_percent).collect();
    Ok(EvalReport { split: split.into(), summary: Summary::of(&values), pooled: None, per_graph })
}

/// One error over the stacked graph-level predictions of every sample.
pub fn evaluate_graph_level<T: Scalar>(model: &GnnModel<T>, samples: &[Sample<T>], split: &str) -> Result<EvalReport> {
    let (mut targets, mut preds) = (Vec::new(), Vec::new());
    let mut per_graph = Vec::with_capacity(samples.len());
    for s in samples {
        let target = s
            .raw_graph_target
            .as_ref()
            .ok_or_else(|| Error::Config(format!("sample {} has no graph target", s.id)))?;
        let pred = model.predict(&s.graph)?.graph.row(0).to_owned();
        let eps = relative_l2(target.view(), pred.view()).ok();
        per_graph.push(GraphError { graph_id: s.id.clone(), num_nodes: s.graph.num_nodes(), eps_r_percent: eps });
        targets.extend(target.iter().copied());
        preds.extend(pred.iter().copied());
    }
    let pooled = relative_l2(Array1::from(targets).view(), Array1::from(preds).view())?;
    Ok(EvalReport { split: split.into(), per_graph, summary: None, pooled: Some(pooled) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn relative_error_examples() {
        let y = array![3.0, 4.0];
        assert_eq!(relative_l2(y.view(), y.view()).unwrap(), 0.0);
        assert!((relative_l2(y.view(), array![0.0, 0.0].view()).unwrap() - 100.0).abs() < 1e-12);
        assert!((relative_l2(y.view(), array![3.0, 0.0].view()).unwrap() - 80.0).abs() < 1e-12);
        let pooled = relative_l2(array![1.0, 2.0].view(), array![1.0, 0.0].view()).unwrap();
        assert!((pooled - 200.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(relative_l2(array![0.0, 0.0].view(), y.view()), Err(Error::ZeroNormTarget)));
        assert!(relative_l2(y.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[20.0, 5.0, 10.0]).unwrap();
        assert_eq!((s.median, s.min, s.max), (10.0, 5.0, 20.0));
        assert_eq!(Summary::of(&[1.0, 2.0, 4.0, 8.0]).unwrap().median, 3.0);
        assert!(Summary::of(&[]).is_none());
        let paper_like = Summary { median: 8.71, min: 5.9, max: 11.8 };
        assert_eq!(paper_like.to_string(), "8.71% (5.9, 11.8)");
    }

    #[test]
    fn csv_and_table_layout() {
        let report = EvalReport {
            split: "test1".into(),
            per_graph: vec![
                GraphError { graph_id: "a".into(), num_nodes: 194, eps_r_percent: Some(5.0) },
                GraphError { graph_id: "b".into(), num_nodes: 660, eps_r_percent: None },
            ],
            summary: Summary::of(&[5.0]),
            pooled: None,
        };
        let csv = report.per_graph_csv();
        assert_eq!(csv, "graph_id,num_nodes,eps_r_percent\na,194,5\nb,660,nan\n");
        let table = report.table();
        assert!(table.contains("194\u{2013}660 nodes"));
        assert!(table.contains("5.00% (5.0, 5.0)"));
        assert!(table.contains("1 graph(s) with zero-norm targets excluded"));
    }

    proptest! {
        #[test]
        fn scale_invariant(v in proptest::collection::vec(-10.0f64..10.0, 1..20), d in proptest::collection::vec(-1.0f64..1.0, 20), c in 1e-3f64..1e3) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let t = Array1::from(v.clone());
            let p: Array1<f64> = v.iter().zip(&d).map(|(a, b)| a + b).collect();
            let base = relative_l2(t.view(), p.view()).unwrap();
            let scaled = relative_l2((&t * c).view(), (&p * c).view()).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
            let neg = relative_l2((&t * -c).view(), (&p * -c).view()).unwrap();
            prop_assert!((base - neg).abs() <= 1e-9 * base.max(1.0));
            let tiny: Array1<f64> = v.iter().zip(&d).map(|(a, b)| a + b * 1e-12).collect();
            prop_assert!(relative_l2(t.view(), tiny.view()).unwrap() < 1e-6);
        }
    }
}

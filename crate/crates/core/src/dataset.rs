//! Turns on-disk records into featurized, normalized training samples.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::record::GraphRecord;
use crate::error::{Error, Result};
use crate::featurize::{
    encode_edges, normalize_pressure_target, AirfoilEncoding, FeatureDesignEncoding, Normalizer, PressureScaling,
    VelocityScale,
};
use crate::graph::Graph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    /// Median reference point, L1 norm, cell-type multi-hot, degree.
    FeatureDesign,
    /// Origin reference point, upper/lower one-hot, freestream.
    Airfoil,
}

/// How node-level targets are scaled for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScaling {
    None,
    /// Dataset-wide per-column z-score.
    #[default]
    ZScore,
    /// Divide by the freestream scale, then subtract the per-sample mean.
    Pressure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub encoding: EncodingKind,
    pub cell_types: Vec<String>,
    pub node_targets: TargetScaling,
    pub velocity_scale: VelocityScale,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            encoding: EncodingKind::Airfoil,
            cell_types: FeatureDesignEncoding::default().cell_types,
            node_targets: TargetScaling::ZScore,
            velocity_scale: VelocityScale::Squared,
        }
    }
}

impl FeatureSpec {
    pub fn node_width(&self) -> usize {
        match self.encoding {
            EncodingKind::FeatureDesign => 5 + self.cell_types.len(),
            EncodingKind::Airfoil => AirfoilEncoding::WIDTH,
        }
    }

    /// Edge width for positions of dimension `dim` (feature design lifts 2-D to 3-D).
    pub fn edge_width(&self, dim: usize) -> usize {
        match self.encoding {
            EncodingKind::FeatureDesign => 4,
            EncodingKind::Airfoil => dim + 1,
        }
    }
}

/// One featurized sample plus what is needed to report in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    /// Normalized features and normalized node targets.
    pub graph: Graph<T>,
    pub raw_node_targets: Option<Array2<T>>,
    pub raw_graph_target: Option<Array1<T>>,
    pub pressure: Option<Vec<PressureScaling>>,
}

/// Fitted feature and target scaling for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub spec: FeatureSpec,
    pub node_features: Normalizer,
    pub edge_features: Normalizer,
    pub node_targets: Normalizer,
}

fn lift_to_3d<T: Scalar>(g: Graph<T>) -> Result<Graph<T>> {
    if g.dim() == 3 {
        return Ok(g);
    }
    let mut pos = Array2::zeros((g.num_nodes(), 3));
    pos.slice_mut(ndarray::s![.., ..2]).assign(g.positions());
    let lifted = Graph::from_raw_parts(pos, g.edges().to_vec());
    match g.node_targets() {
        Some(t) => lifted.with_node_targets(t.clone()),
        None => Ok(lifted),
    }
}

impl Preprocessor {
    /// Unnormalized graph with node/edge features attached.
    pub fn raw_graph<T: Scalar>(spec: &FeatureSpec, rec: &GraphRecord) -> Result<Graph<T>> {
        rec.check()?;
        let mut graph: Graph<T> = rec.to_graph()?;
        let nodes = match spec.encoding {
            EncodingKind::FeatureDesign => {
                graph = lift_to_3d(graph)?;
                let empty = vec![Vec::new(); rec.num_nodes()];
                let labels = rec.node_cell_types.as_ref().unwrap_or(&empty);
                FeatureDesignEncoding::new(spec.cell_types.clone()).encode_nodes(&graph, labels)?
            }
            EncodingKind::Airfoil => {
                let (u0, v0) = rec
                    .freestream
                    .ok_or_else(|| Error::Config(format!("record {}: airfoil encoding needs a freestream", rec.id)))?;
                let upper = rec
                    .upper
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("record {}: airfoil encoding needs upper flags", rec.id)))?;
                AirfoilEncoding::new(u0, v0).encode_nodes(&graph, upper)?
            }
        };
        let edges = encode_edges(&graph);
        graph.with_node_features(nodes)?.with_edge_features(edges)
    }

    /// Fits feature normalizers (and z-score targets) on the training records.
    pub fn fit(spec: FeatureSpec, train: &[GraphRecord]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("cannot fit preprocessing on zero records".into()));
        }
        let graphs: Vec<Graph<f64>> = train.iter().map(|r| Self::raw_graph(&spec, r)).collect::<Result<_>>()?;
        let node_features = Normalizer::fit(graphs.iter().map(|g| g.node_features().view()))?;
        let edge_features = Normalizer::fit(graphs.iter().map(|g| g.edge_features().view()))?;
        let targets: Vec<Array2<f64>> = train.iter().filter_map(|r| r.node_target_matrix().transpose()).collect::<Result<_>>()?;
        let node_targets = match (spec.node_targets, targets.first()) {
            (TargetScaling::ZScore, Some(_)) => Normalizer::fit(targets.iter().map(|t| t.view()))?,
            (_, Some(t)) => Normalizer::identity(t.ncols()),
            (_, None) => Normalizer::identity(0),
        };
        Ok(Self { spec, node_features, edge_features, node_targets })
    }

    pub fn prepare<T: Scalar>(&self, rec: &GraphRecord) -> Result<Sample<T>> {
        let raw = Self::raw_graph::<T>(&self.spec, rec)?;
        let nodes = self.node_features.apply(raw.node_features().view())?;
        let edges = self.edge_features.apply(raw.edge_features().view())?;
        let mut graph = raw.clone().with_node_features(nodes)?.with_edge_features(edges)?;
        let raw_node_targets: Option<Array2<T>> = rec.node_target_matrix()?;
        let mut pressure = None;
        if let Some(t) = &raw_node_targets {
            let scaled = match self.spec.node_targets {
                TargetScaling::Pressure => {
                    let (u0, v0) = rec.freestream.ok_or(Error::DegenerateFreestream)?;
                    let mut out = Array2::zeros(t.raw_dim());
                    let mut info = Vec::new();
                    for (c, col) in t.axis_iter(Axis(1)).enumerate() {
                        let (p, s) = normalize_pressure_target(col, u0, v0, self.spec.velocity_scale)?;
                        out.column_mut(c).assign(&p);
                        info.push(s);
                    }
                    pressure = Some(info);
                    out
                }
                _ => self.node_targets.apply(t.view())?,
            };
            graph = graph.with_node_targets(scaled)?;
        } else if let (TargetScaling::Pressure, Some((u0, v0))) = (self.spec.node_targets, rec.freestream) {
            // No targets to take a mean from: predictions come back mean-free.
            let velocity = self.spec.velocity_scale.velocity(u0, v0);
            if velocity <= 0.0 {
                return Err(Error::DegenerateFreestream);
            }
            pressure = Some(vec![PressureScaling { velocity, mean: 0.0 }; self.node_targets.width()]);
        }
        let raw_graph_target = rec.graph_target_vector();
        if let Some(t) = &raw_graph_target {
            graph = graph.with_graph_target(t.clone());
        }
        Ok(Sample { id: rec.id.clone(), graph, raw_node_targets, raw_graph_target, pressure })
    }

    pub fn prepare_all<T: Scalar>(&self, records: &[GraphRecord]) -> Result<Vec<Sample<T>>> {
        records.iter().map(|r| self.prepare(r)).collect()
    }

    /// Maps node-level model outputs back to physical units.
    pub fn denormalize_nodes<T: Scalar>(&self, sample: &Sample<T>, predictions: &Array2<T>) -> Result<Array2<T>> {
        match (&self.spec.node_targets, &sample.pressure) {
            (TargetScaling::Pressure, Some(info)) => {
                let mut out = Array2::zeros(predictions.raw_dim());
                for (c, s) in info.iter().enumerate() {
                    out.column_mut(c).assign(&s.invert(predictions.column(c)));
                }
                Ok(out)
            }
            (TargetScaling::Pressure, None) => Err(Error::Config(format!(
                "sample {} has no stored pressure scaling",
                sample.id
            ))),
            _ => self.node_targets.invert(predictions.view()),
        }
    }
}

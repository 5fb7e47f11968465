//! Node and edge input features, feature scaling and target normalization.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

/// Cell-type labels used when none are configured.
pub const DEFAULT_CELL_TYPES: [&str; 4] = ["tet", "hex", "wedge", "pyramid"];

/// Median with the even-count convention of averaging the two middle values.
pub fn median<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut v: Vec<T> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / T::of(2.0) })
}

/// `(x_median, y_median, 0)` over the node positions (2-D or 3-D).
pub fn reference_point_feature_design<T: Scalar>(positions: ArrayView2<T>) -> Result<[T; 3]> {
    if positions.nrows() == 0 {
        return Err(Error::Empty("reference point of an empty graph".into()));
    }
    let x = median(positions.column(0).iter().copied()).unwrap();
    let y = median(positions.column(1).iter().copied()).unwrap();
    Ok([x, y, T::zero()])
}

fn padded_xyz<T: Scalar>(row: ArrayView1<T>) -> [T; 3] {
    [row[0], row[1], if row.len() > 2 { row[2] } else { T::zero() }]
}

/// Count of distinct neighbours per node.
pub fn compute_node_degree<T: Scalar>(graph: &Graph<T>) -> Vec<usize> {
    let mut neigh: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); graph.num_nodes()];
    for &(s, r) in graph.edges() {
        neigh[r].insert(s);
        neigh[s].insert(r);
    }
    neigh.iter().map(BTreeSet::len).collect()
}

/// Node encoding for volumetric meshes: relative coordinates to the
/// median reference point, their L1 norm, cell-type multi-hot and degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDesignEncoding {
    pub cell_types: Vec<String>,
}

impl Default for FeatureDesignEncoding {
    fn default() -> Self {
        Self { cell_types: DEFAULT_CELL_TYPES.iter().map(|s| s.to_string()).collect() }
    }
}

impl FeatureDesignEncoding {
    pub fn new(cell_types: Vec<String>) -> Self {
        Self { cell_types }
    }

    pub fn width(&self) -> usize {
        5 + self.cell_types.len()
    }

    /// `node_cell_types[i]` lists the types of every cell node `i` belongs to.
    pub fn encode_nodes<T: Scalar>(&self, graph: &Graph<T>, node_cell_types: &[Vec<String>]) -> Result<Array2<T>> {
        let n = graph.num_nodes();
        if node_cell_types.len() != n {
            return Err(Error::Shape(format!("{} cell-type lists for {n} nodes", node_cell_types.len())));
        }
        let reference = reference_point_feature_design(graph.positions().view())?;
        let degree = compute_node_degree(graph);
        let c = self.cell_types.len();
        let mut out = Array2::zeros((n, self.width()));
        for (i, pos) in graph.positions().outer_iter().enumerate() {
            let p = padded_xyz(pos);
            let mut row = out.row_mut(i);
            let mut l1 = T::zero();
            for k in 0..3 {
                let d = p[k] - reference[k];
                row[k] = d;
                l1 += d.abs();
            }
            row[3] = l1;
            for label in &node_cell_types[i] {
                let slot = self.cell_types.iter().position(|t| t == label).ok_or_else(|| Error::Vocabulary {
                    label: label.clone(),
                    vocabulary: self.cell_types.clone(),
                })?;
                row[4 + slot] = T::one();
            }
            row[4 + c] = T::of(degree[i] as f64);
        }
        Ok(out)
    }
}

/// Node encoding for airfoil surface chains: coordinates relative to the
/// leading edge at the origin, upper/lower one-hot, freestream velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirfoilEncoding {
    pub freestream: (f64, f64),
}

impl AirfoilEncoding {
    pub const WIDTH: usize = 6;

    pub fn new(u0: f64, v0: f64) -> Self {
        Self { freestream: (u0, v0) }
    }

    pub fn encode_nodes<T: Scalar>(&self, graph: &Graph<T>, upper: &[bool]) -> Result<Array2<T>> {
        let n = graph.num_nodes();
        if upper.len() != n {
            return Err(Error::Shape(format!("{} upper/lower flags for {n} nodes", upper.len())));
        }
        let (u0, v0) = (T::of(self.freestream.0), T::of(self.freestream.1));
        let mut out = Array2::zeros((n, Self::WIDTH));
        for (i, pos) in graph.positions().outer_iter().enumerate() {
            let mut row = out.row_mut(i);
            row[0] = pos[0];
            row[1] = pos[1];
            row[if upper[i] { 2 } else { 3 }] = T::one();
            row[4] = u0;
            row[5] = v0;
        }
        Ok(out)
    }
}

/// Per directed edge `(j -> i)`: `[x_j - x_i, |x_j - x_i|_2]`.
pub fn encode_edges<T: Scalar>(graph: &Graph<T>) -> Array2<T> {
    let pos = graph.positions();
    let d = graph.dim();
    let mut out = Array2::zeros((graph.num_edges(), d + 1));
    for (k, &(s, r)) in graph.edges().iter().enumerate() {
        let mut sq = T::zero();
        for c in 0..d {
            let diff = pos[[s, c]] - pos[[r, c]];
            out[[k, c]] = diff;
            sq += diff * diff;
        }
        out[[k, d]] = sq.sqrt();
    }
    out
}

/// Per-column z-score scaling. Zero-variance columns pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    fitted: bool,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Normalizer {
    /// Fits on the row-wise concatenation of `matrices` (population std).
    pub fn fit<'a, T: Scalar>(matrices: impl IntoIterator<Item = ArrayView2<'a, T>>) -> Result<Self> {
        let mut width = None;
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut mats = Vec::new();
        for m in matrices {
            let w = *width.get_or_insert(m.ncols());
            if w != m.ncols() {
                return Err(Error::Shape(format!("normalizer fit: width {} vs {w}", m.ncols())));
            }
            if sum.is_empty() {
                sum = vec![0.0; w];
            }
            for row in m.outer_iter() {
                for (acc, x) in sum.iter_mut().zip(row) {
                    *acc += x.as_f64();
                }
            }
            count += m.nrows();
            mats.push(m);
        }
        if count == 0 {
            return Err(Error::Empty("normalizer fit on zero rows".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for m in &mats {
            for row in m.outer_iter() {
                for ((acc, x), mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = x.as_f64() - mu;
                    *acc += d * d;
                }
            }
        }
        let (mut shift, mut scale) = (Vec::new(), Vec::new());
        for (v, mu) in var.iter().zip(&mean) {
            let std = (v / count as f64).sqrt();
            if std <= 1e-12 * mu.abs().max(1.0) {
                shift.push(0.0);
                scale.push(1.0);
            } else {
                shift.push(*mu);
                scale.push(std);
            }
        }
        Ok(Self { fitted: true, shift, scale })
    }

    /// Identity scaling of the given width.
    pub fn identity(width: usize) -> Self {
        Self { fitted: true, shift: vec![0.0; width], scale: vec![1.0; width] }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    fn check<T: Scalar>(&self, m: &ArrayView2<T>) -> Result<()> {
        if !self.fitted {
            return Err(Error::NotFitted);
        }
        if m.ncols() != self.width() {
            return Err(Error::Shape(format!("normalizer width {} applied to {} columns", self.width(), m.ncols())));
        }
        Ok(())
    }

    pub fn apply<T: Scalar>(&self, m: ArrayView2<T>) -> Result<Array2<T>> {
        self.check(&m)?;
        let mut out = m.to_owned();
        for (mut col, (mu, sd)) in out.axis_iter_mut(Axis(1)).zip(self.shift.iter().zip(&self.scale)) {
            let (mu, sd) = (T::of(*mu), T::of(*sd));
            col.mapv_inplace(|x| (x - mu) / sd);
        }
        Ok(out)
    }

    pub fn invert<T: Scalar>(&self, m: ArrayView2<T>) -> Result<Array2<T>> {
        self.check(&m)?;
        let mut out = m.to_owned();
        for (mut col, (mu, sd)) in out.axis_iter_mut(Axis(1)).zip(self.shift.iter().zip(&self.scale)) {
            let (mu, sd) = (T::of(*mu), T::of(*sd));
            col.mapv_inplace(|x| x * sd + mu);
        }
        Ok(out)
    }
}

/// Which freestream scale divides the surface pressure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityScale {
    /// `u0^2 + v0^2`
    #[default]
    Squared,
    /// `sqrt(u0^2 + v0^2)`
    Magnitude,
}

impl VelocityScale {
    pub fn velocity(self, u0: f64, v0: f64) -> f64 {
        let sq = u0 * u0 + v0 * v0;
        match self {
            VelocityScale::Squared => sq,
            VelocityScale::Magnitude => sq.sqrt(),
        }
    }
}

/// What was divided and subtracted from one sample's pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureScaling {
    pub velocity: f64,
    pub mean: f64,
}

impl PressureScaling {
    pub fn invert<T: Scalar>(&self, normalized: ArrayView1<T>) -> Array1<T> {
        let (vel, mean) = (T::of(self.velocity), T::of(self.mean));
        normalized.mapv(|x| (x + mean) * vel)
    }
}

/// Divides by the freestream scale then subtracts the per-sample mean.
pub fn normalize_pressure_target<T: Scalar>(
    pressure: ArrayView1<T>,
    u0: f64,
    v0: f64,
    scale: VelocityScale,
) -> Result<(Array1<T>, PressureScaling)> {
    let velocity = scale.velocity(u0, v0);
    if velocity <= 0.0 {
        return Err(Error::DegenerateFreestream);
    }
    if pressure.is_empty() {
        return Err(Error::Empty("pressure vector".into()));
    }
    let vel = T::of(velocity);
    let scaled = pressure.mapv(|p| p / vel);
    let mean = scaled.mean().unwrap();
    Ok((scaled.mapv(|p| p - mean), PressureScaling { velocity, mean: mean.as_f64() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn tri3d() -> Graph<f64> {
        Graph::build_from_mesh(array![[0.0, 0.0, 0.0], [1.0, 0.0, 1.0], [2.0, 3.0, 0.5]], &[vec![0, 1, 2]]).unwrap()
    }

    #[test]
    fn medians() {
        assert_eq!(median([0.0, 2.0, 1.0]), Some(1.0));
        assert_eq!(median([3.0, 0.0, 1.0, 2.0]), Some(1.5));
        assert_eq!(median::<f64>([]), None);
        let r = reference_point_feature_design(array![[0.0, 5.0, 9.0], [1.0, 6.0, 9.0], [2.0, 7.0, 9.0]].view())
            .unwrap();
        assert_eq!(r, [1.0, 6.0, 0.0]);
        assert!(reference_point_feature_design(Array2::<f64>::zeros((0, 3)).view()).is_err());
    }

    #[test]
    fn feature_design_rows() {
        // reference point is (1, 0, 0)
        let g = Graph::build_from_mesh(array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, -2.0, 3.0]], &[vec![0, 1, 2]])
            .unwrap();
        let enc = FeatureDesignEncoding::default();
        let labels = vec![vec!["tet".to_string()], vec![], vec!["hex".into(), "tet".into()]];
        let f = enc.encode_nodes(&g, &labels).unwrap();
        assert_eq!(f.ncols(), 9);
        assert_eq!(f.row(1).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(f.row(2).to_vec(), vec![1.0, -2.0, 3.0, 6.0, 1.0, 1.0, 0.0, 0.0, 2.0]);
        let bad = vec![vec!["prism".to_string()], vec![], vec![]];
        assert!(matches!(enc.encode_nodes(&g, &bad), Err(Error::Vocabulary { .. })));
    }

    #[test]
    fn airfoil_rows() {
        let g = Graph::build_surface_chain(array![[0.0, 0.0], [0.5, 0.1]], false).unwrap();
        let f = AirfoilEncoding::new(0.8, -0.2).encode_nodes(&g, &[true, false]).unwrap();
        assert_eq!(f.row(0).to_vec(), vec![0.0, 0.0, 1.0, 0.0, 0.8, -0.2]);
        assert_eq!(f.row(1).to_vec(), vec![0.5, 0.1, 0.0, 1.0, 0.8, -0.2]);
        assert!(AirfoilEncoding::new(1.0, 0.0).encode_nodes(&g, &[true]).is_err());
    }

    #[test]
    fn edge_features_345() {
        let g = Graph::build_surface_chain(array![[0.0, 0.0], [3.0, 4.0]], false).unwrap();
        let f = encode_edges(&g);
        // edges sorted by receiver: (1 -> 0) then (0 -> 1)
        assert_eq!(g.edges(), &[(1, 0), (0, 1)]);
        assert_eq!(f.row(0).to_vec(), vec![3.0, 4.0, 5.0]);
        assert_eq!(f.row(1).to_vec(), vec![-3.0, -4.0, 5.0]);
        let g = Graph::build_surface_chain(array![[1.0, 1.0], [1.0, 1.0]], false).unwrap();
        assert_eq!(encode_edges(&g).row(0).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn degrees() {
        let chain = Graph::build_surface_chain(Array2::<f64>::zeros((3, 2)), false).unwrap();
        assert_eq!(compute_node_degree(&chain), vec![1, 2, 1]);
        assert_eq!(compute_node_degree(&tri3d()), vec![2, 2, 2]);
    }

    #[test]
    fn normalizer_rules() {
        let m = array![[0.0, 7.0], [2.0, 7.0]];
        let n = Normalizer::fit([m.view()]).unwrap();
        assert_eq!(n.apply(m.view()).unwrap(), array![[-1.0, 7.0], [1.0, 7.0]]);
        assert!(matches!(Normalizer::default().apply(m.view()), Err(Error::NotFitted)));
        let data = array![[0.3, 1.0], [1.7, -2.0], [5.0, 0.25]];
        let n = Normalizer::fit([data.view()]).unwrap();
        let z = n.apply(data.view()).unwrap();
        for c in z.axis_iter(Axis(1)) {
            assert_abs_diff_eq!(c.mean().unwrap(), 0.0, epsilon = 1e-12);
        }
        let back = n.invert(z.view()).unwrap();
        for (a, b) in back.iter().zip(data.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pressure_normalization() {
        let p = array![2.0, 4.0];
        let (q, s) = normalize_pressure_target(p.view(), 1.0, 1.0, VelocityScale::Squared).unwrap();
        assert_eq!(q, array![-0.5, 0.5]);
        assert_eq!(s.velocity, 2.0);
        assert_eq!(s.invert(q.view()), p);
        let (q, _) = normalize_pressure_target(array![3.0f64, 3.0, 3.0].view(), 0.3, 0.1, VelocityScale::Squared).unwrap();
        assert!(q.iter().all(|&x| x.abs() < 1e-15));
        assert!(matches!(
            normalize_pressure_target(p.view(), 0.0, 0.0, VelocityScale::Squared),
            Err(Error::DegenerateFreestream)
        ));
        let (_, s) = normalize_pressure_target(p.view(), 3.0, 4.0, VelocityScale::Magnitude).unwrap();
        assert_eq!(s.velocity, 5.0);
    }

    fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
        proptest::collection::vec(prop::array::uniform3(-10.0f64..10.0), 3..25)
    }

    proptest! {
        #[test]
        fn feature_design_translation_invariant(points in cloud(), cx in -50.0f64..50.0, cy in -50.0f64..50.0) {
            let n = points.len();
            let pos = Array2::from_shape_fn((n, 3), |(i, j)| points[i][j]);
            let moved = Array2::from_shape_fn((n, 3), |(i, j)| points[i][j] + [cx, cy, 0.0][j]);
            let cells: Vec<Vec<usize>> = (0..n - 2).map(|i| vec![i, i + 1, i + 2]).collect();
            let labels = vec![vec!["tet".to_string()]; n];
            let enc = FeatureDesignEncoding::default();
            let a = Graph::build_from_mesh(pos, &cells).unwrap();
            let b = Graph::build_from_mesh(moved, &cells).unwrap();
            let fa = enc.encode_nodes(&a, &labels).unwrap();
            let fb = enc.encode_nodes(&b, &labels).unwrap();
            for (x, y) in fa.iter().zip(fb.iter()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            let (ea, eb) = (encode_edges(&a), encode_edges(&b));
            for (x, y) in ea.iter().zip(eb.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            for (k, &(s, r)) in a.edges().iter().enumerate() {
                let rev = a.edges().iter().position(|&e| e == (r, s)).unwrap();
                for c in 0..3 {
                    prop_assert_eq!(ea[[k, c]], -ea[[rev, c]]);
                }
                prop_assert_eq!(ea[[k, 3]], ea[[rev, 3]]);
            }
        }
    }
}

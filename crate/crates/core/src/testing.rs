//! Fixtures for tests: random featured graphs, small configs and a
//! finite-difference gradient check.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{BatchedGraph, Graph};
use crate::model::{GnnConfig, GnnModel, MlpShape};
use crate::nn::{Activation, Parameters};
use crate::train::batch_loss_and_grads;

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Attaches uniform random node/edge features and single-column node targets.
pub fn with_random_features(graph: Graph<f64>, node_width: usize, edge_width: usize, seed: u64) -> Graph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, e) = (graph.num_nodes(), graph.num_edges());
    let nodes = uniform(&mut rng, n, node_width);
    let edges = uniform(&mut rng, e, edge_width);
    let targets = uniform(&mut rng, n, 1);
    let g_target = ndarray::arr1(&[rng.random_range(-1.0..1.0)]);
    graph
        .with_node_features(nodes)
        .and_then(|g| g.with_edge_features(edges))
        .and_then(|g| g.with_node_targets(targets))
        .expect("shapes match")
        .with_graph_target(g_target)
}

/// Open chain of `n` nodes along the x axis.
pub fn path_graph(n: usize) -> Graph<f64> {
    let pos = Array2::from_shape_fn((n, 2), |(i, c)| if c == 0 { i as f64 } else { 0.0 });
    Graph::build_surface_chain(pos, false).expect("n >= 2")
}

/// Jittered `nx` x `ny` grid of triangles.
pub fn grid_graph(nx: usize, ny: usize, seed: u64) -> Graph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Array2::from_shape_fn((nx * ny, 2), |(k, c)| {
        let base = if c == 0 { (k % nx) as f64 } else { (k / nx) as f64 };
        base + rng.random_range(-0.2..0.2)
    });
    let mut cells = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            cells.push(vec![a, a + 1, a + nx + 1]);
            cells.push(vec![a, a + nx + 1, a + nx]);
        }
    }
    Graph::build_from_mesh(pos, &cells).expect("valid grid")
}

/// Random graph with `n` nodes: a path plus a few random chords, all bidirectional.
pub fn random_graph(n: usize, seed: u64) -> Graph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = uniform(&mut rng, n, 2);
    let mut cells: Vec<Vec<usize>> = (1..n).map(|i| vec![i - 1, i]).collect();
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            cells.push(vec![a, b]);
        }
    }
    Graph::build_from_mesh(pos, &cells).expect("valid cells")
}

/// Small model config; node-level with a linear head when `node_level`.
pub fn small_config(
    node_input: usize,
    edge_input: usize,
    latent: usize,
    steps: usize,
    depth: usize,
    width: usize,
    node_level: bool,
) -> GnnConfig {
    let m = MlpShape::new(depth, width);
    let node = node_level.then_some((m, 1, Activation::Linear));
    GnnConfig::build(node_input, edge_input, latent, steps, m, m, if node_level { 2 } else { 1 }, node)
}

/// Relative errors between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn fraction_below(&self, tol: f64) -> f64 {
        let ok = self.rel_errors.iter().filter(|&&e| e < tol).count();
        ok as f64 / self.rel_errors.len() as f64
    }
}

/// Denominator floor so that near-zero gradients compare absolutely.
pub const GRAD_FLOOR: f64 = 1e-7;

/// Checks every parameter gradient of the smooth functional
/// `sum(R_g * y_G) + sum(R_v * y_V)` with fixed random weights `R`.
pub fn gradient_check(model: &GnnModel<f64>, batch: &BatchedGraph<f64>, seed: u64, h: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pred, tape) = model.forward_taped(batch)?;
    let rg = uniform(&mut rng, pred.graph.nrows(), pred.graph.ncols());
    let rv = pred.nodes.as_ref().map(|y| uniform(&mut rng, y.nrows(), y.ncols()));
    let mut grads = model.zero_grads();
    model.backward(&tape, Some(rg.view()), rv.as_ref().map(|r| r.view()), &mut grads)?;

    let objective = |m: &GnnModel<f64>| -> Result<f64> {
        let p = m.predict_batch(batch)?;
        let mut total = (&p.graph * &rg).sum();
        if let (Some(y), Some(r)) = (&p.nodes, &rv) {
            total += (y * r).sum();
        }
        Ok(total)
    };

    let analytic: Vec<f64> = grads.param_slices().concat();
    let mut probe = model.clone();
    let mut rel_errors = Vec::with_capacity(analytic.len());
    let mut flat = 0;
    let num_slices = probe.param_slices().len();
    for s in 0..num_slices {
        let len = probe.param_slices()[s].len();
        for i in 0..len {
            let orig = probe.param_slices()[s][i];
            probe.param_slices_mut()[s][i] = orig + h;
            let up = objective(&probe)?;
            probe.param_slices_mut()[s][i] = orig - h;
            let down = objective(&probe)?;
            probe.param_slices_mut()[s][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat];
            rel_errors.push((a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR));
            flat += 1;
        }
    }
    Ok(GradCheck { rel_errors })
}

/// Checks every parameter gradient of the training loss (MAE plus
/// `lambda` times L1) with steps of `rel_step * max(1, |theta|)`.
pub fn loss_gradient_check(model: &GnnModel<f64>, batch: &BatchedGraph<f64>, lambda: f64, rel_step: f64) -> Result<GradCheck> {
    let mut grads = model.zero_grads();
    batch_loss_and_grads(model, batch, lambda, &mut grads)?;
    let analytic: Vec<f64> = grads.param_slices().concat();
    let mut scratch = model.zero_grads();
    let mut probe = model.clone();
    let mut rel_errors = Vec::with_capacity(analytic.len());
    let mut flat = 0;
    for s in 0..probe.param_slices().len() {
        for i in 0..probe.param_slices()[s].len() {
            let orig = probe.param_slices()[s][i];
            let h = rel_step * orig.abs().max(1.0);
            probe.param_slices_mut()[s][i] = orig + h;
            let up = batch_loss_and_grads(&probe, batch, lambda, &mut scratch)?;
            probe.param_slices_mut()[s][i] = orig - h;
            let down = batch_loss_and_grads(&probe, batch, lambda, &mut scratch)?;
            probe.param_slices_mut()[s][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat];
            rel_errors.push((a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR));
            flat += 1;
        }
    }
    Ok(GradCheck { rel_errors })
}

/// Max absolute difference between two equally shaped matrices.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rows of `m` reordered so that row `perm[i]` of the result is row `i` of `m`.
pub fn permute_rows(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    m.select(Axis(0), &inv)
}

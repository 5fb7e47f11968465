//! MAE + L1 loss, ADAM, reduce-on-plateau schedule and the minibatch loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BatchedGraph, Graph};
use crate::model::{GnnGrads, GnnModel, TaskMode};
use crate::nn::Parameters;
use crate::scalar::Scalar;

/// Mean absolute error over every entry plus `lambda * sum |theta|`.
pub fn loss<T: Scalar, P: Parameters<T>>(
    predictions: ArrayView2<T>,
    targets: ArrayView2<T>,
    params: &P,
    lambda: f64,
) -> Result<T> {
    let data = mae(predictions, targets)?;
    if lambda == 0.0 {
        return Ok(data);
    }
    Ok(data + T::of(lambda) * params.l1_norm())
}

pub fn mae<T: Scalar>(predictions: ArrayView2<T>, targets: ArrayView2<T>) -> Result<T> {
    if predictions.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            predictions.dim(),
            targets.dim()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("loss over zero entries".into()));
    }
    let total: T = Zip::from(&predictions).and(&targets).fold(T::zero(), |acc, &p, &t| acc + (p - t).abs());
    Ok(total / T::of(predictions.len() as f64))
}

/// `d mae / d predictions`: `sign(p - t) / count`, zero where they agree.
pub fn mae_grad<T: Scalar>(predictions: ArrayView2<T>, targets: ArrayView2<T>) -> Array2<T> {
    let inv = T::one() / T::of(predictions.len() as f64);
    Zip::from(&predictions).and(&targets).map_collect(|&p, &t| {
        let d = p - t;
        if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        }
    })
}

/// Adds `lambda * sign(theta)` to every gradient entry.
pub fn add_l1_grad<T: Scalar>(params: &impl Parameters<T>, grads: &mut impl Parameters<T>, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let lam = T::of(lambda);
    for (p, g) in params.param_slices().into_iter().zip(grads.param_slices_mut()) {
        for (theta, gi) in p.iter().zip(g.iter_mut()) {
            if *theta > T::zero() {
                *gi += lam;
            } else if *theta < T::zero() {
                *gi -= lam;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &impl Parameters<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.param_slices().iter().map(|s| vec![T::zero(); s.len()]).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected ADAM update of `params` in place.
    pub fn update(&mut self, params: &mut impl Parameters<T>, grads: &impl Parameters<T>, lr: f64) -> Result<()> {
        let mut ps = params.param_slices_mut();
        let gs = grads.param_slices();
        if ps.len() != self.m.len() || gs.len() != self.m.len() {
            return Err(Error::Shape("ADAM state does not match parameters".into()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(epsilon));
        let (one, c1, c2, lr) = (T::one(), T::of(c1), T::of(c2), T::of(lr));
        for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape("ADAM tensor length mismatch".into()));
            }
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    /// Relative improvement below which an epoch counts as a plateau.
    pub min_delta: f64,
    pub min_lr: f64,
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// relative improvement of the best loss, never going below `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    pub lr: f64,
    /// Best loss so far; `None` before the first epoch.
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, config: PlateauConfig) -> Self {
        Self { config, lr: initial_lr, best: None, bad_epochs: 0 }
    }

    /// Records one epoch loss and returns the learning rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if self.best.is_none_or(|b| loss < b * (1.0 - self.config.min_delta)) {
            self.best = Some(loss);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub l1_coefficient: f64,
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    /// Defaults to `initial_lr / 64` when unset.
    pub min_lr: Option<f64>,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 16,
            initial_lr: 5e-4,
            l1_coefficient: 1e-5,
            patience: 50,
            factor: 0.5,
            min_delta: 1e-5,
            min_lr: None,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.initial_lr > 0.0) {
            return bad(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return bad(format!("plateau factor must be in (0, 1), got {}", self.factor));
        }
        if !(self.l1_coefficient >= 0.0) {
            return bad(format!("l1_coefficient must be >= 0, got {}", self.l1_coefficient));
        }
        Ok(())
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            patience: self.patience,
            factor: self.factor,
            min_delta: self.min_delta,
            min_lr: self.min_lr.unwrap_or(self.initial_lr / 64.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

impl EpochRecord {
    /// The record as one JSON line, newline included.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record") + "\n"
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(EpochRecord::to_json_line).collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// `(epoch, loss, lr)` per record, leaving out wall time.
    pub fn trajectory(&self) -> Vec<(usize, f64, f64)> {
        self.records.iter().map(|r| (r.epoch, r.loss, r.lr)).collect()
    }
}

/// Loss and parameter gradients of one merged batch.
pub fn batch_loss_and_grads<T: Scalar>(
    model: &GnnModel<T>,
    batch: &BatchedGraph<T>,
    lambda: f64,
    grads: &mut GnnGrads<T>,
) -> Result<T> {
    grads.fill_zero();
    let (pred, tape) = model.forward_taped(batch)?;
    let data_loss = match model.config().task {
        TaskMode::NodeLevel => {
            let targets = batch
                .graph()
                .node_targets()
                .ok_or_else(|| Error::Config("node-level training needs node targets".into()))?;
            let out = pred.nodes.as_ref().expect("node-level model emits node outputs");
            let l = mae(out.view(), targets.view())?;
            let d = mae_grad(out.view(), targets.view());
            model.backward(&tape, None, Some(d.view()), grads)?;
            l
        }
        TaskMode::GraphLevel => {
            let targets = batch
                .graph_targets()
                .ok_or_else(|| Error::Config("graph-level training needs graph targets".into()))?;
            let l = mae(pred.graph.view(), targets.view())?;
            let d = mae_grad(pred.graph.view(), targets.view());
            model.backward(&tape, Some(d.view()), None, grads)?;
            l
        }
    };
    add_l1_grad(model, grads, lambda);
    let reg = if lambda == 0.0 { T::zero() } else { T::of(lambda) * model.l1_norm() };
    Ok(data_loss + reg)
}

/// Optimizer, schedule and epoch counter; everything needed to resume.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    pub scheduler: PlateauScheduler,
    pub epoch: usize,
    pub log: TrainLog,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &GnnModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: AdamState::new(model, config.adam),
            scheduler: PlateauScheduler::new(config.initial_lr, config.plateau()),
            epoch: 0,
            log: TrainLog::default(),
            config,
        })
    }

    /// Deterministic order of sample indices for `epoch`.
    pub fn epoch_order(&self, epoch: usize, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        // stream 0 belongs to weight initialization
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Shuffles, batches (keeping the final partial batch), steps ADAM per
    /// batch and updates the learning rate from the epoch's mean loss.
    pub fn run_epoch(&mut self, model: &mut GnnModel<T>, data: &[Graph<T>]) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let start = Instant::now();
        let epoch = self.epoch;
        let order = self.epoch_order(epoch, data.len());
        let mut grads = model.zero_grads();
        let lr = self.scheduler.lr;
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let members: Vec<Graph<T>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let batch = BatchedGraph::merge(&members)?;
            let loss = batch_loss_and_grads(model, &batch, self.config.l1_coefficient, &mut grads)?.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss });
            }
            self.adam.update(model, &grads, lr)?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        self.scheduler.observe(mean);
        self.epoch += 1;
        let record = EpochRecord { epoch, loss: mean, lr, wall_time_s: start.elapsed().as_secs_f64() };
        self.log.records.push(record.clone());
        Ok(record)
    }

    /// Runs until `config.epochs` epochs have completed, calling `on_epoch` after each.
    pub fn fit_with(
        &mut self,
        model: &mut GnnModel<T>,
        data: &[Graph<T>],
        mut on_epoch: impl FnMut(&Self, &GnnModel<T>, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(model, data)?;
            on_epoch(self, model, &rec)?;
        }
        Ok(())
    }
}

/// Trains `model` in place from scratch and returns the per-epoch log.
pub fn fit<T: Scalar>(model: &mut GnnModel<T>, data: &[Graph<T>], config: &TrainConfig) -> Result<TrainLog> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.fit_with(model, data, |_, _, _| Ok(()))?;
    Ok(trainer.log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Flat(Vec<f64>);

    impl Parameters<f64> for Flat {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn loss_examples() {
        let none = Flat(vec![]);
        assert_eq!(loss(array![[1.0], [3.0]].view(), array![[1.0], [3.0]].view(), &none, 0.0).unwrap(), 0.0);
        assert_eq!(loss(array![[1.0], [3.0]].view(), array![[0.0], [0.0]].view(), &none, 0.0).unwrap(), 2.0);
        let theta = Flat(vec![-2.0]);
        let l = loss(array![[0.0]].view(), array![[0.0]].view(), &theta, 0.1).unwrap();
        assert!((l - 0.2).abs() < 1e-15);
        assert!(loss(array![[0.0]].view(), array![[0.0, 1.0]].view(), &theta, 0.1).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Flat(vec![1.0, -3.0, 0.5]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.update(&mut p, &Flat(vec![0.0; 3]), 1e-3).unwrap();
        assert_eq!(p.0, vec![1.0, -3.0, 0.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let start = vec![1.0, -3.0, 0.5, 0.0];
        let mut p = Flat(start.clone());
        let g = Flat(vec![0.3, -2.0, 1e-2, 50.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let lr = 5e-4;
        st.update(&mut p, &g, lr).unwrap();
        for ((a, b), gi) in p.0.iter().zip(&start).zip(&g.0) {
            // m_hat / sqrt(v_hat) = g / |g| on the first step
            let delta = b - a;
            assert!((delta - lr * gi.signum()).abs() < 1e-6 * lr.max(1.0), "{delta}");
        }
        let mut p2 = Flat(start.clone());
        let mut st2 = AdamState::new(&p2, AdamConfig::default());
        st2.update(&mut p2, &g, lr).unwrap();
        assert_eq!(p.0, p2.0);
    }

    fn sched() -> PlateauScheduler {
        PlateauScheduler::new(5e-4, PlateauConfig { patience: 3, factor: 0.5, min_delta: 1e-5, min_lr: 5e-4 / 64.0 })
    }

    #[test]
    fn plateau_schedule() {
        let mut s = sched();
        for k in 0..20 {
            assert_eq!(s.observe(10.0 - k as f64), 5e-4);
        }
        let mut s = sched();
        let lrs: Vec<f64> = (0..4).map(|_| s.observe(1.0)).collect();
        assert_eq!(lrs, vec![5e-4, 5e-4, 5e-4, 2.5e-4]);
        let mut s = sched();
        s.lr = s.config.min_lr;
        for _ in 0..10 {
            assert_eq!(s.observe(1.0), 5e-4 / 64.0);
        }
    }

    #[test]
    fn plateau_never_increases_lr() {
        let mut s = sched();
        let mut prev = s.lr;
        let mut x = 0.3f64;
        for _ in 0..500 {
            x = (x * 3.9 * (1.0 - x)).clamp(1e-6, 1.0);
            let lr = s.observe(x);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn l1_shrinks_parameters_without_data_term() {
        let mut p = Flat(vec![0.8, -0.3, 0.05, -1.2]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut prev = p.l1_norm();
        for _ in 0..200 {
            let mut g = Flat(vec![0.0; 4]);
            add_l1_grad(&p, &mut g, 1e-2);
            st.update(&mut p, &g, 1e-3).unwrap();
            let now = p.l1_norm();
            assert!(now < prev || now < 1e-3, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { initial_lr: 0.0, ..Default::default() },
            TrainConfig { factor: 1.0, ..Default::default() },
            TrainConfig { l1_coefficient: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        use crate::model::{GnnConfig, MlpShape};
        let cfg = GnnConfig::build(1, 1, 2, 1, MlpShape::new(1, 2), MlpShape::new(1, 2), 1, None);
        let mut model = GnnModel::<f64>::he_init(&cfg, 0).unwrap();
        let g = Graph::build_surface_chain(array![[0.0, 0.0], [1.0, 0.0]], false)
            .unwrap()
            .with_node_features(array![[f64::NAN], [0.0]])
            .unwrap()
            .with_edge_features(array![[1.0], [1.0]])
            .unwrap()
            .with_graph_target(array![1.0]);
        let mut tr = Trainer::new(&model, TrainConfig { epochs: 1, ..Default::default() }).unwrap();
        let err = tr.run_epoch(&mut model, &[g]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch: 0, .. }));
        assert!(matches!(tr.run_epoch(&mut model, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn merged_gradient_is_node_weighted_average() {
        use crate::testing::{random_graph, small_config, with_random_features};
        let model = GnnModel::he_init(&small_config(3, 2, 4, 2, 2, 6, true), 2).unwrap();
        let gs: Vec<_> = (0..3).map(|k| with_random_features(random_graph(4 + 2 * k, k as u64), 3, 2, k as u64)).collect();
        let total: usize = gs.iter().map(Graph::num_nodes).sum();
        let mut merged = model.zero_grads();
        batch_loss_and_grads(&model, &BatchedGraph::merge(&gs).unwrap(), 0.0, &mut merged).unwrap();
        let mut combined = vec![0.0; model.num_params()];
        let mut grads = model.zero_grads();
        for g in &gs {
            batch_loss_and_grads(&model, &BatchedGraph::merge(std::slice::from_ref(g)).unwrap(), 0.0, &mut grads).unwrap();
            let w = g.num_nodes() as f64 / total as f64;
            for (c, v) in combined.iter_mut().zip(grads.param_slices().concat()) {
                *c += w * v;
            }
        }
        for (a, b) in merged.param_slices().concat().iter().zip(&combined) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        use crate::testing::{random_graph, small_config, with_random_features};
        let data: Vec<_> = (0..5).map(|k| with_random_features(random_graph(5, k), 3, 2, k)).collect();
        let cfg = TrainConfig { epochs: 4, batch_size: 2, seed: 3, ..Default::default() };
        let run = || {
            let mut m = GnnModel::he_init(&small_config(3, 2, 4, 1, 1, 5, true), 1).unwrap();
            let log = fit(&mut m, &data, &cfg).unwrap();
            (m, log.trajectory())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 4);
        let tr = Trainer::new(&a.0, cfg.clone()).unwrap();
        assert_ne!(tr.epoch_order(0, 10), tr.epoch_order(1, 10));
        let mut sorted = tr.epoch_order(0, 10);
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }
}

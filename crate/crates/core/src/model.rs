//! Encoder, residual message-passing processor and graph/node decoders.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BatchedGraph, Graph};
use crate::nn::{Activation, Mlp, MlpConfig, MlpGrads, MlpTape, Parameters};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    NodeLevel,
    GraphLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub latent_size: usize,
    pub steps: usize,
    pub task: TaskMode,
    pub edge_encoder: MlpConfig,
    pub node_encoder: MlpConfig,
    /// Shared shape of every per-step edge processor.
    pub edge_processor: MlpConfig,
    pub node_processor: MlpConfig,
    pub graph_decoder: MlpConfig,
    pub node_decoder: Option<MlpConfig>,
}

/// Depth and width shared by a family of MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub depth: usize,
    pub width: usize,
}

impl MlpShape {
    pub fn new(depth: usize, width: usize) -> Self {
        Self { depth, width }
    }

    fn config(self, input: usize, output: usize) -> MlpConfig {
        MlpConfig::new(input, self.depth, self.width, output)
    }
}

impl GnnConfig {
    /// Builds a consistent configuration from the free architecture choices.
    ///
    /// `node_output` is `Some((size, head))` for node-level tasks, where the
    /// graph decoder output (`graph_output`) becomes internal context.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        node_input: usize,
        edge_input: usize,
        latent_size: usize,
        steps: usize,
        body: MlpShape,
        graph_decoder: MlpShape,
        graph_output: usize,
        node_output: Option<(MlpShape, usize, Activation)>,
    ) -> Self {
        let l = latent_size;
        let task = if node_output.is_some() { TaskMode::NodeLevel } else { TaskMode::GraphLevel };
        Self {
            latent_size,
            steps,
            task,
            edge_encoder: body.config(edge_input, l),
            node_encoder: body.config(node_input, l),
            edge_processor: body.config(3 * l, l),
            node_processor: body.config(2 * l, l),
            graph_decoder: graph_decoder.config(l, graph_output),
            node_decoder: node_output
                .map(|(shape, size, head)| shape.config(l + graph_output, size).with_output_activation(head)),
        }
    }

    /// Residual-stress model on volumetric meshes: node level, ReLU head.
    pub fn residual_stress(node_input: usize, edge_input: usize) -> Self {
        let m = MlpShape::new(4, 64);
        Self::build(node_input, edge_input, 64, 6, m, m, 4, Some((m, 1, Activation::Relu)))
    }

    /// Surface-pressure model on airfoil chains: node level, linear head.
    pub fn surface_pressure(node_input: usize, edge_input: usize) -> Self {
        let m = MlpShape::new(5, 64);
        Self::build(node_input, edge_input, 64, 5, m, m, 4, Some((m, 1, Activation::Linear)))
    }

    /// Drag-coefficient model: graph level, single output.
    pub fn drag_coefficient(node_input: usize, edge_input: usize) -> Self {
        let m = MlpShape::new(5, 64);
        Self::build(node_input, edge_input, 64, 5, m, m, 1, None)
    }

    /// Lift-coefficient model: graph level, single output.
    pub fn lift_coefficient(node_input: usize, edge_input: usize) -> Self {
        let m = MlpShape::new(5, 32);
        Self::build(node_input, edge_input, 32, 5, m, m, 1, None)
    }

    /// Applies a sine frequency to every MLP.
    pub fn with_frequency(mut self, frequency: f64) -> Self {
        for c in self.mlp_configs_mut() {
            c.frequency = frequency;
        }
        self
    }

    fn mlp_configs_mut(&mut self) -> Vec<&mut MlpConfig> {
        let mut v = vec![
            &mut self.edge_encoder,
            &mut self.node_encoder,
            &mut self.edge_processor,
            &mut self.node_processor,
            &mut self.graph_decoder,
        ];
        if let Some(d) = self.node_decoder.as_mut() {
            v.push(d);
        }
        v
    }

    pub fn node_input(&self) -> usize {
        self.node_encoder.input_size
    }

    pub fn edge_input(&self) -> usize {
        self.edge_encoder.input_size
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.latent_size;
        let bad = |what: &str| Err(Error::Config(format!("GNN config: {what}")));
        if l == 0 {
            return bad("latent size must be >= 1");
        }
        let mut c = self.clone();
        for m in c.mlp_configs_mut() {
            m.validate()?;
        }
        if self.edge_encoder.output_size != l || self.node_encoder.output_size != l {
            return bad("encoders must output the latent size");
        }
        if self.edge_processor.input_size != 3 * l || self.edge_processor.output_size != l {
            return bad("edge processor must map 3 x latent to latent");
        }
        if self.node_processor.input_size != 2 * l || self.node_processor.output_size != l {
            return bad("node processor must map 2 x latent to latent");
        }
        if self.graph_decoder.input_size != l {
            return bad("graph decoder must take the latent size");
        }
        match (self.task, &self.node_decoder) {
            (TaskMode::NodeLevel, None) => return bad("node-level task needs a node decoder"),
            (TaskMode::GraphLevel, Some(_)) => return bad("graph-level task has no node decoder"),
            (TaskMode::NodeLevel, Some(d)) if d.input_size != l + self.graph_decoder.output_size => {
                return bad("node decoder must take latent + graph decoder output");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Latent node and edge matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub nodes: Array2<T>,
    pub edges: Array2<T>,
}

/// Model outputs for one graph or one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    /// `(num_graphs, graph_output)`; the model output for graph-level tasks.
    pub graph: Array2<T>,
    /// `(num_nodes, node_output)` for node-level tasks.
    pub nodes: Option<Array2<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel<T> {
    config: GnnConfig,
    edge_encoder: Mlp<T>,
    node_encoder: Mlp<T>,
    edge_processors: Vec<Mlp<T>>,
    node_processors: Vec<Mlp<T>>,
    graph_decoder: Mlp<T>,
    node_decoder: Option<Mlp<T>>,
}

/// Gradient buffers in the same layout as [`GnnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GnnGrads<T> {
    pub mlps: Vec<MlpGrads<T>>,
}

impl<T: Scalar> GnnGrads<T> {
    pub fn fill_zero(&mut self) {
        self.mlps.iter_mut().for_each(MlpGrads::fill_zero);
    }
}

impl<T> Parameters<T> for GnnGrads<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        self.mlps.iter().flat_map(|m| m.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.mlps.iter_mut().flat_map(|m| m.param_slices_mut()).collect()
    }
}

struct StepTape<T> {
    edge: MlpTape<T>,
    node: MlpTape<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct GnnTape<T> {
    senders: Vec<usize>,
    receivers: Vec<usize>,
    segments: Vec<(usize, usize)>,
    edge_encoder: MlpTape<T>,
    node_encoder: MlpTape<T>,
    steps: Vec<StepTape<T>>,
    graph_decoder: MlpTape<T>,
    node_decoder: Option<MlpTape<T>>,
}

/// Sums `values` rows into `num_rows` buckets by `index`.
pub fn scatter_sum<T: Scalar>(values: ArrayView2<T>, index: &[usize], num_rows: usize) -> Array2<T> {
    let mut out = Array2::zeros((num_rows, values.ncols()));
    for (row, &i) in values.outer_iter().zip(index) {
        let mut dst = out.row_mut(i);
        dst += &row;
    }
    out
}

/// Mean of each `(start, len)` row segment.
pub fn segment_mean<T: Scalar>(values: ArrayView2<T>, segments: &[(usize, usize)]) -> Result<Array2<T>> {
    let mut out = Array2::zeros((segments.len(), values.ncols()));
    for (g, &(start, len)) in segments.iter().enumerate() {
        if len == 0 {
            return Err(Error::Empty(format!("segment {g} has no nodes")));
        }
        let mean = values.slice(s![start..start + len, ..]).sum_axis(Axis(0)) / T::of(len as f64);
        out.row_mut(g).assign(&mean);
    }
    Ok(out)
}

fn expand_segments<T: Scalar>(per_segment: ArrayView2<T>, segments: &[(usize, usize)], num_rows: usize) -> Array2<T> {
    let mut out = Array2::zeros((num_rows, per_segment.ncols()));
    for (g, &(start, len)) in segments.iter().enumerate() {
        out.slice_mut(s![start..start + len, ..]).assign(&per_segment.row(g));
    }
    out
}

fn cat<T: Scalar>(parts: &[ArrayView2<T>]) -> Array2<T> {
    concatenate(Axis(1), parts).expect("row counts agree")
}

impl<T: Scalar> GnnModel<T> {
    fn from_builder(config: &GnnConfig, mut make: impl FnMut(&MlpConfig) -> Result<Mlp<T>>) -> Result<Self> {
        config.validate()?;
        let edge_encoder = make(&config.edge_encoder)?;
        let node_encoder = make(&config.node_encoder)?;
        let mut edge_processors = Vec::with_capacity(config.steps);
        let mut node_processors = Vec::with_capacity(config.steps);
        for _ in 0..config.steps {
            edge_processors.push(make(&config.edge_processor)?);
            node_processors.push(make(&config.node_processor)?);
        }
        let graph_decoder = make(&config.graph_decoder)?;
        let node_decoder = config.node_decoder.as_ref().map(&mut make).transpose()?;
        Ok(Self {
            config: config.clone(),
            edge_encoder,
            node_encoder,
            edge_processors,
            node_processors,
            graph_decoder,
            node_decoder,
        })
    }

    /// He-initialized model; MLPs draw from one seeded stream in a fixed order.
    pub fn he_init(config: &GnnConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_builder(config, |c| Mlp::he_init_with(c, &mut rng))
    }

    pub fn zeros(config: &GnnConfig) -> Result<Self> {
        Self::from_builder(config, Mlp::zeros)
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    /// Every MLP in parameter order: encoders, per-step (edge, node)
    /// processors, graph decoder, node decoder.
    pub fn mlps(&self) -> Vec<&Mlp<T>> {
        let mut v = vec![&self.edge_encoder, &self.node_encoder];
        for (e, n) in self.edge_processors.iter().zip(&self.node_processors) {
            v.push(e);
            v.push(n);
        }
        v.push(&self.graph_decoder);
        v.extend(self.node_decoder.as_ref());
        v
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp<T>> {
        let mut v = vec![&mut self.edge_encoder, &mut self.node_encoder];
        for (e, n) in self.edge_processors.iter_mut().zip(self.node_processors.iter_mut()) {
            v.push(e);
            v.push(n);
        }
        v.push(&mut self.graph_decoder);
        v.extend(self.node_decoder.as_mut());
        v
    }

    pub fn edge_processor_mut(&mut self, step: usize) -> &mut Mlp<T> {
        &mut self.edge_processors[step]
    }

    pub fn node_processor_mut(&mut self, step: usize) -> &mut Mlp<T> {
        &mut self.node_processors[step]
    }

    pub fn graph_decoder_mut(&mut self) -> &mut Mlp<T> {
        &mut self.graph_decoder
    }

    pub fn node_decoder_mut(&mut self) -> Option<&mut Mlp<T>> {
        self.node_decoder.as_mut()
    }

    pub fn node_encoder_mut(&mut self) -> &mut Mlp<T> {
        &mut self.node_encoder
    }

    pub fn zero_grads(&self) -> GnnGrads<T> {
        GnnGrads { mlps: self.mlps().iter().map(|m| m.zero_grads()).collect() }
    }

    /// Zeroes the output layer of every processor MLP, turning each step into the identity.
    pub fn zero_processor_outputs(&mut self) {
        for m in self.edge_processors.iter_mut().chain(self.node_processors.iter_mut()) {
            m.zero_final_layer();
        }
    }

    /// Replaces all parameters, checking that shapes match.
    pub fn with_mlps(config: &GnnConfig, mlps: Vec<Mlp<T>>) -> Result<Self> {
        let expected = 2 + 2 * config.steps + 1 + usize::from(config.node_decoder.is_some());
        if mlps.len() != expected {
            return Err(Error::Shape(format!("expected {expected} MLPs, got {}", mlps.len())));
        }
        let mut it = mlps.into_iter();
        let model = Self::from_builder(config, |_| Ok(it.next().expect("count checked")))?;
        let template = Self::zeros(config)?;
        for (a, b) in model.mlps().iter().zip(template.mlps()) {
            let shapes = |m: &Mlp<T>| m.layers().iter().map(|l| l.weight.dim()).collect::<Vec<_>>();
            if shapes(a) != shapes(b) || a.output_activation() != b.output_activation() {
                return Err(Error::Shape("MLP layer shapes do not match the config".into()));
            }
        }
        Ok(model)
    }

    fn check_graph(&self, graph: &Graph<T>) -> Result<()> {
        if graph.node_features().ncols() != self.config.node_input() {
            return Err(Error::Shape(format!(
                "node features have width {}, model expects {}",
                graph.node_features().ncols(),
                self.config.node_input()
            )));
        }
        if graph.edge_features().ncols() != self.config.edge_input() {
            return Err(Error::Shape(format!(
                "edge features have width {}, model expects {}",
                graph.edge_features().ncols(),
                self.config.edge_input()
            )));
        }
        Ok(())
    }

    /// Row-wise embedding of node and edge features.
    pub fn encode(&self, graph: &Graph<T>) -> Result<LatentState<T>> {
        self.check_graph(graph)?;
        Ok(LatentState {
            nodes: self.node_encoder.forward(graph.node_features().view())?,
            edges: self.edge_encoder.forward(graph.edge_features().view())?,
        })
    }

    /// One residual processor step: edges update from `[edge, sender, receiver]`,
    /// then nodes update from `[node, sum of updated incoming edges]`.
    pub fn message_passing_step(&self, step: usize, graph: &Graph<T>, state: &LatentState<T>) -> Result<LatentState<T>> {
        if step >= self.config.steps {
            return Err(Error::Config(format!("step {step} out of range, model has {}", self.config.steps)));
        }
        self.check_state(graph, state)?;
        let (senders, receivers) = (graph.senders(), graph.receivers());
        let edge_in = self.edge_input_rows(state, &senders, &receivers);
        let edge_update = self.edge_processors[step].forward(edge_in.view())?;
        let incoming = scatter_sum(edge_update.view(), &receivers, graph.num_nodes());
        let node_in = cat(&[state.nodes.view(), incoming.view()]);
        let node_update = self.node_processors[step].forward(node_in.view())?;
        Ok(LatentState { nodes: &state.nodes + &node_update, edges: &state.edges + &edge_update })
    }

    fn check_state(&self, graph: &Graph<T>, state: &LatentState<T>) -> Result<()> {
        let l = self.config.latent_size;
        if state.nodes.dim() != (graph.num_nodes(), l) || state.edges.dim() != (graph.num_edges(), l) {
            return Err(Error::Shape("latent state does not match graph".into()));
        }
        Ok(())
    }

    fn edge_input_rows(&self, state: &LatentState<T>, senders: &[usize], receivers: &[usize]) -> Array2<T> {
        let sv = state.nodes.select(Axis(0), senders);
        let rv = state.nodes.select(Axis(0), receivers);
        cat(&[state.edges.view(), sv.view(), rv.view()])
    }

    /// Mean-pools latent nodes per segment and applies the graph decoder.
    pub fn decode_graph(&self, state: &LatentState<T>, segments: &[(usize, usize)]) -> Result<Array2<T>> {
        let pooled = segment_mean(state.nodes.view(), segments)?;
        self.graph_decoder.forward(pooled.view())
    }

    /// Node decoder on `[latent node, graph feature of its segment]`.
    pub fn decode_node(
        &self,
        state: &LatentState<T>,
        graph_features: ArrayView2<T>,
        segments: &[(usize, usize)],
    ) -> Result<Array2<T>> {
        let dec = self
            .node_decoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no node decoder".into()))?;
        let ctx = expand_segments(graph_features, segments, state.nodes.nrows());
        dec.forward(cat(&[state.nodes.view(), ctx.view()]).view())
    }

    pub fn predict_batch(&self, batch: &BatchedGraph<T>) -> Result<Prediction<T>> {
        let graph = batch.graph();
        let mut state = self.encode(graph)?;
        for k in 0..self.config.steps {
            state = self.message_passing_step(k, graph, &state)?;
        }
        let yg = self.decode_graph(&state, batch.segments())?;
        let nodes = match self.config.task {
            TaskMode::NodeLevel => Some(self.decode_node(&state, yg.view(), batch.segments())?),
            TaskMode::GraphLevel => None,
        };
        Ok(Prediction { graph: yg, nodes })
    }

    pub fn predict(&self, graph: &Graph<T>) -> Result<Prediction<T>> {
        self.predict_batch(&BatchedGraph::merge(std::slice::from_ref(graph))?)
    }

    /// Forward pass over a batch, recording intermediates for [`GnnModel::backward`].
    pub fn forward_taped(&self, batch: &BatchedGraph<T>) -> Result<(Prediction<T>, GnnTape<T>)> {
        let graph = batch.graph();
        self.check_graph(graph)?;
        let senders = graph.senders();
        let receivers = graph.receivers();
        let (nodes, node_encoder) = self.node_encoder.forward_taped(graph.node_features().view())?;
        let (edges, edge_encoder) = self.edge_encoder.forward_taped(graph.edge_features().view())?;
        let mut state = LatentState { nodes, edges };
        let mut steps = Vec::with_capacity(self.config.steps);
        for k in 0..self.config.steps {
            let edge_in = self.edge_input_rows(&state, &senders, &receivers);
            let (edge_update, edge_tape) = self.edge_processors[k].forward_taped(edge_in.view())?;
            let incoming = scatter_sum(edge_update.view(), &receivers, graph.num_nodes());
            let node_in = cat(&[state.nodes.view(), incoming.view()]);
            let (node_update, node_tape) = self.node_processors[k].forward_taped(node_in.view())?;
            state.edges += &edge_update;
            state.nodes += &node_update;
            steps.push(StepTape { edge: edge_tape, node: node_tape });
        }
        let segments = batch.segments().to_vec();
        let pooled = segment_mean(state.nodes.view(), &segments)?;
        let (yg, graph_decoder) = self.graph_decoder.forward_taped(pooled.view())?;
        let (node_out, node_decoder) = match (&self.node_decoder, self.config.task) {
            (Some(dec), TaskMode::NodeLevel) => {
                let ctx = expand_segments(yg.view(), &segments, graph.num_nodes());
                let (y, tape) = dec.forward_taped(cat(&[state.nodes.view(), ctx.view()]).view())?;
                (Some(y), Some(tape))
            }
            _ => (None, None),
        };
        let tape = GnnTape {
            senders,
            receivers,
            segments,
            edge_encoder,
            node_encoder,
            steps,
            graph_decoder,
            node_decoder,
        };
        Ok((Prediction { graph: yg, nodes: node_out }, tape))
    }

    /// Accumulates parameter gradients given upstream gradients of the
    /// loss with respect to the graph-level and node-level outputs.
    pub fn backward(
        &self,
        tape: &GnnTape<T>,
        d_graph: Option<ArrayView2<T>>,
        d_nodes: Option<ArrayView2<T>>,
        grads: &mut GnnGrads<T>,
    ) -> Result<()> {
        let l = self.config.latent_size;
        let steps = self.config.steps;
        let n: usize = tape.segments.iter().map(|s| s.1).sum();
        let num_graphs = tape.segments.len();
        let gdec_out = self.config.graph_decoder.output_size;
        let (i_gdec, i_ndec) = (2 + 2 * steps, 3 + 2 * steps);

        let mut d_yg = match d_graph {
            Some(d) => d.to_owned(),
            None => Array2::zeros((num_graphs, gdec_out)),
        };
        let mut d_v: Array2<T> = Array2::zeros((n, l));
        if let Some(dy) = d_nodes {
            let (dec, dtape) = match (&self.node_decoder, &tape.node_decoder) {
                (Some(d), Some(t)) => (d, t),
                _ => return Err(Error::Config("node-level gradient for a model without node decoder".into())),
            };
            let d_in = dec.backward(dtape, dy, &mut grads.mlps[i_ndec])?;
            d_v += &d_in.slice(s![.., ..l]);
            let d_ctx = d_in.slice(s![.., l..]);
            for (g, &(start, len)) in tape.segments.iter().enumerate() {
                let mut row = d_yg.row_mut(g);
                row += &d_ctx.slice(s![start..start + len, ..]).sum_axis(Axis(0));
            }
        }
        let d_pooled = self.graph_decoder.backward(&tape.graph_decoder, d_yg.view(), &mut grads.mlps[i_gdec])?;
        for (g, &(start, len)) in tape.segments.iter().enumerate() {
            let share = d_pooled.row(g).mapv(|x| x / T::of(len as f64));
            let mut block = d_v.slice_mut(s![start..start + len, ..]);
            block += &share;
        }

        let num_edges = tape.senders.len();
        let mut d_e: Array2<T> = Array2::zeros((num_edges, l));
        for k in (0..steps).rev() {
            let st = &tape.steps[k];
            // node update: v_next = v + rho_v([v, agg])
            let d_node_in = self.node_processors[k].backward(&st.node, d_v.view(), &mut grads.mlps[3 + 2 * k])?;
            d_v += &d_node_in.slice(s![.., ..l]);
            let d_agg = d_node_in.slice(s![.., l..]);
            // edge update feeds both the residual and the aggregation
            let mut d_eu = d_e.clone();
            d_eu += &d_agg.select(Axis(0), &tape.receivers);
            let d_edge_in = self.edge_processors[k].backward(&st.edge, d_eu.view(), &mut grads.mlps[2 + 2 * k])?;
            d_e += &d_edge_in.slice(s![.., ..l]);
            d_v += &scatter_sum(d_edge_in.slice(s![.., l..2 * l]), &tape.senders, n);
            d_v += &scatter_sum(d_edge_in.slice(s![.., 2 * l..]), &tape.receivers, n);
        }
        self.node_encoder.backward(&tape.node_encoder, d_v.view(), &mut grads.mlps[1])?;
        self.edge_encoder.backward(&tape.edge_encoder, d_e.view(), &mut grads.mlps[0])?;
        Ok(())
    }
}

impl<T> Parameters<T> for GnnModel<T>
where
    T: Scalar,
{
    fn param_slices(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = self.edge_encoder.param_slices();
        v.extend(self.node_encoder.param_slices());
        for (e, n) in self.edge_processors.iter().zip(&self.node_processors) {
            v.extend(e.param_slices());
            v.extend(n.param_slices());
        }
        v.extend(self.graph_decoder.param_slices());
        if let Some(d) = &self.node_decoder {
            v.extend(d.param_slices());
        }
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.mlps_mut().into_iter().flat_map(|m| m.param_slices_mut()).collect()
    }
}

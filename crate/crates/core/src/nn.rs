//! MLP stages (backbone / projector / predictor), named parameter storage,
//! and deterministic initialization.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Variance epsilon shared by batch and layer normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Row-normalization epsilon guarding zero vectors.
pub const L2_EPS: f64 = 1e-12;
/// Momentum for batch-norm running statistics.
pub const BN_STATS_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
    None,
}

impl NormKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(NormKind::Batch),
            "layer" => Ok(NormKind::Layer),
            "none" => Ok(NormKind::None),
            other => Err(Error::Config(format!(
                "unknown norm kind '{other}' (expected batch|layer|none)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Layer => "layer",
            NormKind::None => "none",
        }
    }
}

/// Layer widths for the three stages. Each stage lists widths including the
/// input, so a `[a, b, c]` stage is two linear layers. Hidden layers carry
/// the stage's normalization followed by ReLU; output layers are plain.
/// The backbone and the heads normalize independently, so the head
/// normalization can be swapped while the trunk keeps its own.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub backbone: Vec<usize>,
    pub projector: Vec<usize>,
    pub predictor: Vec<usize>,
    pub backbone_norm: NormKind,
    pub head_norm: NormKind,
}

impl MlpSpec {
    pub fn new(
        backbone: Vec<usize>,
        projector: Vec<usize>,
        predictor: Vec<usize>,
        norm: NormKind,
    ) -> Result<Self> {
        MlpSpec::with_norms(backbone, projector, predictor, norm, norm)
    }

    pub fn with_norms(
        backbone: Vec<usize>,
        projector: Vec<usize>,
        predictor: Vec<usize>,
        backbone_norm: NormKind,
        head_norm: NormKind,
    ) -> Result<Self> {
        let spec = MlpSpec { backbone, projector, predictor, backbone_norm, head_norm };
        spec.validate()?;
        Ok(spec)
    }

    /// Default head geometry around a given backbone: 512 hidden units and
    /// 128-dimensional outputs for both projector and predictor.
    pub fn with_default_heads(backbone: Vec<usize>, norm: NormKind) -> Result<Self> {
        let repr = *backbone.last().ok_or_else(|| Error::invalid("empty backbone"))?;
        MlpSpec::new(backbone, vec![repr, 512, 128], vec![128, 512, 128], norm)
    }

    pub fn stage_norm(&self, stage: &str) -> NormKind {
        match stage {
            "f" => self.backbone_norm,
            _ => self.head_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.len() < 2 {
            return Err(Error::invalid(
                "backbone needs at least input and output widths",
            ));
        }
        if self.projector.len() != 3 {
            return Err(Error::invalid(
                "projector must be a 2-layer network (three widths)",
            ));
        }
        if self.predictor.len() != 3 {
            return Err(Error::invalid(
                "predictor must be a 2-layer network (three widths)",
            ));
        }
        if self.backbone.last() != self.projector.first() {
            return Err(Error::invalid(
                "projector input width must equal backbone output width",
            ));
        }
        if self.projector.last() != self.predictor.first() {
            return Err(Error::invalid(
                "predictor input width must equal projector output width",
            ));
        }
        for (stage, widths) in self.stages() {
            if widths.iter().any(|&w| w == 0) {
                return Err(Error::invalid(format!("zero width in stage {stage}")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.backbone[0]
    }

    pub fn repr_dim(&self) -> usize {
        *self.backbone.last().unwrap()
    }

    pub fn embed_dim(&self) -> usize {
        *self.predictor.last().unwrap()
    }

    pub fn stages(&self) -> [(&'static str, &[usize]); 3] {
        [
            ("f", self.backbone.as_slice()),
            ("g", self.projector.as_slice()),
            ("h", self.predictor.as_slice()),
        ]
    }

    fn stage_widths(&self, stage: &str) -> &[usize] {
        match stage {
            "f" => &self.backbone,
            "g" => &self.projector,
            "h" => &self.predictor,
            _ => panic!("unknown stage {stage}"),
        }
    }
}

/// Ordered name -> tensor map. Iteration follows insertion order, which is
/// fixed by construction, so serialization and updates are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn expect(&self, name: &str) -> &Tensor {
        self.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Subset of entries whose names start with any of the given prefixes,
    /// preserving order.
    pub fn subset(&self, prefixes: &[&str]) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                out.insert(name, t.clone());
            }
        }
        out
    }

    /// Same names, all tensors zeroed.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            out.insert(name, Tensor::zeros(t.shape().to_vec()));
        }
        out
    }
}

/// Kaiming-uniform linear weights, zero biases, unit gamma / zero beta.
/// Draw order is fixed (stage, layer) so initialization is reproducible.
pub fn init_params(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> (ParamSet, ParamSet) {
    let mut params = ParamSet::new();
    let mut buffers = ParamSet::new();
    for (stage, widths) in spec.stages() {
        let norm = spec.stage_norm(stage);
        let layers = widths.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            params.insert(
                format!("{stage}.{l}.weight"),
                Tensor::from_vec(vec![fan_in, fan_out], data).expect("init shape"),
            );
            params.insert(format!("{stage}.{l}.bias"), Tensor::zeros(vec![fan_out]));
            let hidden = l + 1 < layers;
            if hidden && norm != NormKind::None {
                params.insert(format!("{stage}.{l}.norm.gamma"), Tensor::ones(vec![fan_out]));
                params.insert(format!("{stage}.{l}.norm.beta"), Tensor::zeros(vec![fan_out]));
                if norm == NormKind::Batch {
                    buffers.insert(
                        format!("{stage}.{l}.norm.running_mean"),
                        Tensor::zeros(vec![fan_out]),
                    );
                    buffers.insert(
                        format!("{stage}.{l}.norm.running_var"),
                        Tensor::ones(vec![fan_out]),
                    );
                }
            }
        }
    }
    (params, buffers)
}

/// True for parameters excluded from LARS adaptation and weight decay:
/// biases and normalization parameters.
pub fn is_excluded_param(name: &str) -> bool {
    name.ends_with(".bias") || name.contains(".norm.")
}

/// Parameter set registered into a graph, one node per tensor.
pub struct GraphParams {
    ids: Vec<NodeId>,
    index: HashMap<String, usize>,
}

impl GraphParams {
    /// Register every tensor of `params` as a graph input. Leaves and
    /// constants are structurally identical; a caller that never reads the
    /// gradients gets stop-gradient behavior for free.
    pub fn register(graph: &mut Graph, params: &ParamSet) -> GraphParams {
        let mut ids = Vec::with_capacity(params.len());
        let mut index = HashMap::new();
        for (i, (name, t)) in params.iter().enumerate() {
            ids.push(graph.leaf(t.clone()));
            index.insert(name.to_string(), i);
        }
        GraphParams { ids, index }
    }

    pub fn id(&self, name: &str) -> NodeId {
        self.ids[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("missing graph parameter {name}"))]
    }

    pub fn try_id(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).map(|&i| self.ids[i])
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// How a stage treats normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageMode {
    /// Batch statistics, running stats updated (online network, training).
    TrainUpdate,
    /// Batch statistics, running stats untouched (target network).
    TrainFrozen,
    /// Running statistics (feature extraction).
    Eval,
}

/// Run one stage of the MLP. `buffers` is required whenever the spec uses
/// batch norm: read in `Eval`, written in `TrainUpdate`.
pub fn apply_stage(
    graph: &mut Graph,
    spec: &MlpSpec,
    stage: &str,
    params: &GraphParams,
    buffers: Option<&mut ParamSet>,
    input: NodeId,
    mode: StageMode,
) -> Result<NodeId> {
    let widths = spec.stage_widths(stage);
    let norm = spec.stage_norm(stage);
    let layers = widths.len() - 1;
    let mut buffers = buffers;
    let mut x = input;
    for l in 0..layers {
        let w = params.id(&format!("{stage}.{l}.weight"));
        let b = params.id(&format!("{stage}.{l}.bias"));
        x = graph.matmul(x, w)?;
        x = graph.add_row(x, b)?;
        let hidden = l + 1 < layers;
        if hidden {
            if norm != NormKind::None {
                let gamma = params.id(&format!("{stage}.{l}.norm.gamma"));
                let beta = params.id(&format!("{stage}.{l}.norm.beta"));
                x = match norm {
                    NormKind::Layer => graph.layer_norm(x, gamma, beta, NORM_EPS)?,
                    NormKind::Batch => match mode {
                        StageMode::Eval => {
                            let bufs = buffers
                                .as_deref()
                                .ok_or_else(|| Error::invalid("eval batch norm needs buffers"))?;
                            let mean = bufs.expect(&format!("{stage}.{l}.norm.running_mean"));
                            let var = bufs.expect(&format!("{stage}.{l}.norm.running_var"));
                            let scale: Vec<f64> = var
                                .data()
                                .iter()
                                .map(|&v| 1.0 / (v + NORM_EPS).sqrt())
                                .collect();
                            let mean_c = graph.constant(mean.clone());
                            let scale_c = graph.constant(Tensor::vector(scale));
                            let centered = graph.sub_row(x, mean_c)?;
                            let scaled = graph.mul_row(centered, scale_c)?;
                            let with_gamma = graph.mul_row(scaled, gamma)?;
                            graph.add_row(with_gamma, beta)?
                        }
                        StageMode::TrainUpdate | StageMode::TrainFrozen => {
                            let (y, stats) = graph.batch_norm_train(x, gamma, beta, NORM_EPS)?;
                            if mode == StageMode::TrainUpdate {
                                let bufs = buffers
                                    .as_deref_mut()
                                    .ok_or_else(|| Error::invalid("batch norm needs buffers"))?;
                                let m = BN_STATS_MOMENTUM;
                                let rm = bufs
                                    .get_mut(&format!("{stage}.{l}.norm.running_mean"))
                                    .expect("running mean buffer");
                                *rm = rm.scale(1.0 - m).add(&stats.mean.scale(m));
                                let rv = bufs
                                    .get_mut(&format!("{stage}.{l}.norm.running_var"))
                                    .expect("running var buffer");
                                *rv = rv.scale(1.0 - m).add(&stats.var_unbiased.scale(m));
                            }
                            y
                        }
                    },
                    NormKind::None => unreachable!(),
                };
            }
            x = graph.relu(x);
        }
    }
    Ok(x)
}

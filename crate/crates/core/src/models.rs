//! Single-feature CNN, BiGRU and CNN–BiGRU networks, the two-branch
//! spectral–cepstral fusion network, the task heads, and clip-level
//! decisions.
//!
//! Layer widths follow two printed tables:
//!
//! | variant  | CNN d1..d5             | GRU d1, d2 | CNN–GRU d6 | fusion d |
//! |----------|------------------------|------------|------------|----------|
//! | HighDim  | 512, 102, 20, 4, 64    | 1024, 64   | 64         | 128      |
//! | LowDim   | 30, 10, 3, 1, 16       | 60, 16     | 16         | 32       |
//!
//! For CNN models d1..d4 are the frequency sizes after each pooling stage
//! (d1 is the input) and d5 the width of the first dense layer. The GRU d1 is
//! the concatenated BiGRU output (per-direction hidden = d1 / 2 by default).
//! The CNN–GRU model reuses d1..d5, with d5 as its BiGRU output width and d6
//! as its dense width.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureBlock, FeatureKind, BLOCK_FRAMES};
use crate::neural::layers::{BiGru, Conv2d, Dense};
use crate::neural::{Graph, Initializer, LossKind, NumericMode, ParamSet, Real, Target, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Architecture {
    Cnn,
    Gru,
    CnnGru,
    /// Stand-in multilayer perceptron for the MFCC+delta-delta baseline.
    BaselineMlp,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::Gru => "gru",
            Architecture::CnnGru => "cnn-gru",
            Architecture::BaselineMlp => "baseline-standin",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', ' ', '–'], "-").as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "gru" | "bigru" => Ok(Architecture::Gru),
            "cnn-gru" | "cnngru" | "crnn" => Ok(Architecture::CnnGru),
            "baseline-standin" | "mlp" | "dnn" | "baseline" => Ok(Architecture::BaselineMlp),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DimVariant {
    HighDim,
    LowDim,
}

impl DimVariant {
    pub fn of(kind: FeatureKind) -> Self {
        if kind.is_high_dim() {
            DimVariant::HighDim
        } else {
            DimVariant::LowDim
        }
    }
}

/// The printed layer sizes of one dimension variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDimTable {
    pub variant: DimVariant,
    /// CNN d1..d5.
    pub cnn: [usize; 5],
    /// GRU d1 (BiGRU output) and d2 (dense).
    pub gru: [usize; 2],
    /// CNN–GRU d6.
    pub cnn_gru_d6: usize,
    /// Width of the concatenated fusion embedding.
    pub fusion_d: usize,
    pub pool: usize,
}

impl ModelDimTable {
    pub const HIGH: ModelDimTable = ModelDimTable {
        variant: DimVariant::HighDim,
        cnn: [512, 102, 20, 4, 64],
        gru: [1024, 64],
        cnn_gru_d6: 64,
        fusion_d: 128,
        pool: 5,
    };

    pub const LOW: ModelDimTable = ModelDimTable {
        variant: DimVariant::LowDim,
        cnn: [30, 10, 3, 1, 16],
        gru: [60, 16],
        cnn_gru_d6: 16,
        fusion_d: 32,
        pool: 3,
    };

    pub fn for_variant(variant: DimVariant) -> Self {
        match variant {
            DimVariant::HighDim => Self::HIGH,
            DimVariant::LowDim => Self::LOW,
        }
    }
}

/// Concrete widths used to build a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub variant: DimVariant,
    pub input_dim: usize,
    pub frames: usize,
    pub channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub cnn_dense: usize,
    /// BiGRU output width of the GRU model.
    pub gru_output: usize,
    pub gru_dense: usize,
    /// BiGRU output width of the CNN–GRU model.
    pub cnn_gru_recurrent: usize,
    pub cnn_gru_dense: usize,
    pub mlp_hidden: usize,
    /// Read `gru_output` as the per-direction hidden size instead of the
    /// concatenated width.
    pub gru_width_per_direction: bool,
}

impl NetworkDims {
    /// Widths from the printed table for a feature kind.
    pub fn for_kind(kind: FeatureKind) -> Self {
        let t = ModelDimTable::for_variant(DimVariant::of(kind));
        Self {
            variant: t.variant,
            input_dim: kind.dim(),
            frames: BLOCK_FRAMES,
            channels: 16,
            kernel: 5,
            pool: t.pool,
            cnn_dense: t.cnn[4],
            gru_output: t.gru[0],
            gru_dense: t.gru[1],
            cnn_gru_recurrent: t.cnn[4],
            cnn_gru_dense: t.cnn_gru_d6,
            mlp_hidden: 512,
            gru_width_per_direction: false,
        }
    }

    /// Same topology with every layer width divided by `factor` (input
    /// size, kernel and pooling unchanged).
    pub fn reduced(self, factor: usize) -> Self {
        let shrink = |w: usize| (w / factor).max(1);
        let even = |w: usize| ((w / factor) & !1).max(2);
        Self {
            channels: shrink(self.channels),
            cnn_dense: shrink(self.cnn_dense),
            gru_output: even(self.gru_output),
            gru_dense: shrink(self.gru_dense),
            cnn_gru_recurrent: even(self.cnn_gru_recurrent),
            cnn_gru_dense: shrink(self.cnn_gru_dense),
            mlp_hidden: shrink(self.mlp_hidden),
            ..self
        }
    }

    /// Frequency sizes: input, then after each of the three pooling stages.
    pub fn pooled_heights(&self) -> [usize; 4] {
        let h1 = self.input_dim / self.pool;
        let h2 = h1 / self.pool;
        [self.input_dim, h1, h2, h2 / self.pool]
    }

    fn gru_hidden(&self, width: usize) -> usize {
        if self.gru_width_per_direction {
            width
        } else {
            width / 2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskHead {
    /// Dense to 1, sigmoid; shout when the probability exceeds 0.5.
    Binary,
    /// Dense to 4, softmax; argmax decides.
    FourClass,
    /// Dense to 1, mapped to `1 + 6 * sigmoid(z)` in [1, 7].
    Regression,
}

impl TaskHead {
    pub fn outputs(self) -> usize {
        match self {
            TaskHead::FourClass => 4,
            _ => 1,
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            TaskHead::FourClass => LossKind::CrossEntropy,
            _ => LossKind::MeanSquaredError,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskHead::Binary => "binary",
            TaskHead::FourClass => "four-class",
            TaskHead::Regression => "regression",
        }
    }
}

impl fmt::Display for TaskHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "binary" => Ok(TaskHead::Binary),
            "four-class" | "fourclass" | "4-class" => Ok(TaskHead::FourClass),
            "regression" | "intensity" => Ok(TaskHead::Regression),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

pub const INTENSITY_MIN: f64 = 1.0;
pub const INTENSITY_MAX: f64 = 7.0;

/// What a network looks like, independent of its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelSpec {
    Single {
        arch: Architecture,
        kind: FeatureKind,
        dims: NetworkDims,
    },
    Fusion {
        left: Box<ModelSpec>,
        right: Box<ModelSpec>,
        concat_dim: usize,
    },
}

impl ModelSpec {
    pub fn single(arch: Architecture, kind: FeatureKind) -> Self {
        ModelSpec::Single {
            arch,
            kind,
            dims: NetworkDims::for_kind(kind),
        }
    }

    pub fn input_kinds(&self) -> Vec<FeatureKind> {
        match self {
            ModelSpec::Single { kind, .. } => vec![*kind],
            ModelSpec::Fusion { left, right, .. } => {
                let mut k = left.input_kinds();
                k.extend(right.input_kinds());
                k
            }
        }
    }

    pub fn arch(&self) -> Architecture {
        match self {
            ModelSpec::Single { arch, .. } => *arch,
            ModelSpec::Fusion { left, .. } => left.arch(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::Single { arch, kind, .. } => format!("{arch}/{kind}"),
            ModelSpec::Fusion { left, right, .. } => {
                let names: Vec<String> = left
                    .input_kinds()
                    .iter()
                    .chain(&right.input_kinds())
                    .map(|k| k.to_string())
                    .collect();
                format!("{}/{}", self.arch(), names.join("+"))
            }
        }
    }
}

/// Human-readable description of a built model, saved next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub label: String,
    pub spec: ModelSpec,
    pub head: TaskHead,
    pub seed: u64,
    pub numeric_mode: NumericMode,
    pub checkpoint: Option<String>,
    /// Named intermediate output sizes.
    pub dimension_ledger: Vec<(String, Vec<usize>)>,
}

impl ModelDescriptor {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Cnn {
        convs: Vec<Conv2d>,
        pool: usize,
        dense: Dense,
    },
    Gru {
        bigru: BiGru,
        dense: Dense,
    },
    CnnGru {
        convs: Vec<Conv2d>,
        pool: usize,
        bigru: BiGru,
        dense: Dense,
    },
    Mlp {
        first: Dense,
        second: Dense,
    },
    Fusion {
        left: Box<Body>,
        right: Box<Body>,
        dense: Dense,
    },
}

impl Body {
    fn embedding_dim(&self) -> usize {
        match self {
            Body::Cnn { dense, .. }
            | Body::Gru { dense, .. }
            | Body::CnnGru { dense, .. }
            | Body::Fusion { dense, .. } => dense.out_dim,
            Body::Mlp { second, .. } => second.out_dim,
        }
    }

    fn n_inputs(&self) -> usize {
        match self {
            Body::Fusion { left, right, .. } => left.n_inputs() + right.n_inputs(),
            _ => 1,
        }
    }
}

/// Named intermediate shapes recorded during a forward pass.
pub type ShapeLedger = Vec<(String, Vec<usize>)>;

fn note(ledger: &mut Option<&mut ShapeLedger>, name: &str, g: &Graph<'_, impl Real>, v: Var) {
    if let Some(l) = ledger.as_deref_mut() {
        l.push((name.to_string(), g.shape(v).to_vec()));
    }
}

fn conv_stack<T: Real>(
    params: &mut ParamSet<T>,
    init: &mut Initializer,
    prefix: &str,
    dims: &NetworkDims,
) -> Result<Vec<Conv2d>> {
    let heights = dims.pooled_heights();
    if heights[3] == 0 {
        return Err(Error::Config(format!(
            "input of {} rows cannot pass three {}x1 pooling stages",
            dims.input_dim, dims.pool
        )));
    }
    (0..3)
        .map(|i| {
            let cin = if i == 0 { 1 } else { dims.channels };
            Conv2d::new(params, init, &format!("{prefix}conv{}", i + 1), cin, dims.channels, dims.kernel)
        })
        .collect()
}

fn build_body<T: Real>(
    spec: &ModelSpec,
    params: &mut ParamSet<T>,
    init: &mut Initializer,
    prefix: &str,
) -> Result<Body> {
    match spec {
        ModelSpec::Single { arch, kind, dims } => {
            if dims.input_dim != kind.dim() {
                return Err(Error::Config(format!(
                    "{kind} has {} values per frame, dims say {}",
                    kind.dim(),
                    dims.input_dim
                )));
            }
            match arch {
                Architecture::Cnn => {
                    let convs = conv_stack(params, init, prefix, dims)?;
                    let flat = dims.channels * dims.pooled_heights()[3] * dims.frames;
                    let dense = Dense::new(params, init, &format!("{prefix}fc1"), flat, dims.cnn_dense)?;
                    Ok(Body::Cnn {
                        convs,
                        pool: dims.pool,
                        dense,
                    })
                }
                Architecture::Gru => {
                    let hidden = dims.gru_hidden(dims.gru_output);
                    let bigru = BiGru::new(params, init, &format!("{prefix}bigru"), dims.input_dim, hidden)?;
                    let dense = Dense::new(params, init, &format!("{prefix}fc1"), bigru.output_dim(), dims.gru_dense)?;
                    Ok(Body::Gru { bigru, dense })
                }
                Architecture::CnnGru => {
                    let convs = conv_stack(params, init, prefix, dims)?;
                    let per_frame = dims.channels * dims.pooled_heights()[3];
                    let hidden = dims.gru_hidden(dims.cnn_gru_recurrent);
                    let bigru = BiGru::new(params, init, &format!("{prefix}bigru"), per_frame, hidden)?;
                    let dense =
                        Dense::new(params, init, &format!("{prefix}fc1"), bigru.output_dim(), dims.cnn_gru_dense)?;
                    Ok(Body::CnnGru {
                        convs,
                        pool: dims.pool,
                        bigru,
                        dense,
                    })
                }
                Architecture::BaselineMlp => {
                    let input = dims.input_dim * dims.frames;
                    let first = Dense::new(params, init, &format!("{prefix}fc1"), input, dims.mlp_hidden)?;
                    let second = Dense::new(params, init, &format!("{prefix}fc2"), dims.mlp_hidden, dims.mlp_hidden)?;
                    Ok(Body::Mlp { first, second })
                }
            }
        }
        ModelSpec::Fusion {
            left,
            right,
            concat_dim,
        } => {
            let l = build_body(left, params, init, &format!("{prefix}left."))?;
            let r = build_body(right, params, init, &format!("{prefix}right."))?;
            let d = l.embedding_dim() + r.embedding_dim();
            if d != *concat_dim {
                return Err(Error::Config(format!(
                    "branch embeddings sum to {d}, fusion declares {concat_dim}"
                )));
            }
            let dense = Dense::new(params, init, &format!("{prefix}fusion"), d, d)?;
            Ok(Body::Fusion {
                left: Box::new(l),
                right: Box::new(r),
                dense,
            })
        }
    }
}

fn run_convs<'p, T: Real>(
    g: &mut Graph<'p, T>,
    p: &[Var],
    convs: &[Conv2d],
    pool: usize,
    mut x: Var,
    ledger: &mut Option<&mut ShapeLedger>,
) -> Result<Var> {
    for (i, conv) in convs.iter().enumerate() {
        x = conv.forward(g, p, x)?;
        note(ledger, &format!("conv{}", i + 1), g, x);
        x = g.relu(x);
        x = g.maxpool_freq(x, pool)?;
        note(ledger, &format!("pool{}", i + 1), g, x);
    }
    Ok(x)
}

fn embed<'p, T: Real>(
    body: &Body,
    g: &mut Graph<'p, T>,
    p: &[Var],
    inputs: &[Var],
    ledger: &mut Option<&mut ShapeLedger>,
) -> Result<Var> {
    match body {
        Body::Cnn { convs, pool, dense } => {
            let x = run_convs(g, p, convs, *pool, inputs[0], ledger)?;
            let n = g.value(x).len();
            let flat = g.reshape(x, &[n])?;
            note(ledger, "flatten", g, flat);
            let h = dense.forward(g, p, flat)?;
            note(ledger, "fc1", g, h);
            Ok(g.relu(h))
        }
        Body::Gru { bigru, dense } => {
            let seq = g.transpose(inputs[0])?;
            let states = bigru.forward(g, p, seq)?;
            note(ledger, "bigru", g, states);
            let last = g.shape(states)[0] - 1;
            let final_step = g.row(states, last)?;
            let h = dense.forward(g, p, final_step)?;
            note(ledger, "fc1", g, h);
            Ok(g.relu(h))
        }
        Body::CnnGru {
            convs,
            pool,
            bigru,
            dense,
        } => {
            let x = run_convs(g, p, convs, *pool, inputs[0], ledger)?;
            let s = g.shape(x).to_vec();
            let stacked = g.reshape(x, &[s[0] * s[1], s[2]])?;
            let seq = g.transpose(stacked)?;
            note(ledger, "frame-features", g, seq);
            let states = bigru.forward(g, p, seq)?;
            note(ledger, "bigru", g, states);
            let last = g.shape(states)[0] - 1;
            let final_step = g.row(states, last)?;
            let h = dense.forward(g, p, final_step)?;
            note(ledger, "fc1", g, h);
            Ok(g.relu(h))
        }
        Body::Mlp { first, second } => {
            let n = g.value(inputs[0]).len();
            let flat = g.reshape(inputs[0], &[n])?;
            let h = first.forward(g, p, flat)?;
            note(ledger, "fc1", g, h);
            let h = g.relu(h);
            let h = second.forward(g, p, h)?;
            note(ledger, "fc2", g, h);
            Ok(g.relu(h))
        }
        Body::Fusion { left, right, dense } => {
            let split = left.n_inputs();
            let mut sub = None;
            let l = embed(left, g, p, &inputs[..split], &mut sub)?;
            note(ledger, "left-embedding", g, l);
            let r = embed(right, g, p, &inputs[split..], &mut sub)?;
            note(ledger, "right-embedding", g, r);
            let joined = g.concat(&[l, r])?;
            note(ledger, "concat", g, joined);
            let h = dense.forward(g, p, joined)?;
            note(ledger, "fusion", g, h);
            Ok(g.relu(h))
        }
    }
}

/// A network with its parameters.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub descriptor: ModelDescriptor,
    pub params: ParamSet<T>,
    body: Body,
    head: Dense,
}

/// Clip-level decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClipPrediction {
    Binary { probability: f64, shout: bool },
    FourClass { probabilities: Vec<f64>, class: usize, tie: bool },
    Regression { value: f64 },
}

impl<T: Real> Network<T> {
    pub fn build(spec: ModelSpec, head: TaskHead, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut init = Initializer::new(seed);
        let body = build_body(&spec, &mut params, &mut init, "")?;
        let head_layer = Dense::new(&mut params, &mut init, "head", body.embedding_dim(), head.outputs())?;
        let mut net = Self {
            descriptor: ModelDescriptor {
                label: spec.label(),
                spec,
                head,
                seed,
                numeric_mode: T::MODE,
                checkpoint: None,
                dimension_ledger: Vec::new(),
            },
            params,
            body,
            head: head_layer,
        };
        net.descriptor.dimension_ledger = net.shape_ledger()?;
        Ok(net)
    }

    /// Shorthand for a single-feature network with the printed widths.
    pub fn single(arch: Architecture, kind: FeatureKind, head: TaskHead, seed: u64) -> Result<Self> {
        if arch == Architecture::BaselineMlp && kind != FeatureKind::MfccDeltaDelta {
            return Err(Error::Config(format!("the baseline stand-in takes {}", FeatureKind::MfccDeltaDelta)));
        }
        if arch != Architecture::BaselineMlp && kind == FeatureKind::MfccDeltaDelta {
            return Err(Error::Config(format!("{kind} is only used with the baseline stand-in")));
        }
        Self::build(ModelSpec::single(arch, kind), head, seed)
    }

    /// Joins two pretrained single-feature networks of the same family,
    /// dimension variant and head. Branch weights are copied; the fusion
    /// dense layer and head are freshly initialized, and everything remains
    /// trainable.
    pub fn fusion(left: &Network<T>, right: &Network<T>, seed: u64) -> Result<Self> {
        let (ls, rs) = (&left.descriptor.spec, &right.descriptor.spec);
        let (
            ModelSpec::Single {
                arch: la, dims: ld, ..
            },
            ModelSpec::Single {
                arch: ra, dims: rd, ..
            },
        ) = (ls, rs)
        else {
            return Err(Error::Config("fusion branches must be single-feature networks".into()));
        };
        if la != ra {
            return Err(Error::Config(format!("cannot fuse {la} with {ra}")));
        }
        if *la == Architecture::BaselineMlp {
            return Err(Error::Config("the baseline stand-in is not fused".into()));
        }
        if ld.variant != rd.variant {
            return Err(Error::Config(format!(
                "cannot fuse {:?} and {:?} branches",
                ld.variant, rd.variant
            )));
        }
        if left.descriptor.head != right.descriptor.head {
            return Err(Error::Config(format!(
                "branch heads differ: {} vs {}",
                left.descriptor.head.name(),
                right.descriptor.head.name()
            )));
        }
        let concat_dim = left.body.embedding_dim() + right.body.embedding_dim();
        let spec = ModelSpec::Fusion {
            left: Box::new(ls.clone()),
            right: Box::new(rs.clone()),
            concat_dim,
        };
        let mut net = Self::build(spec, left.descriptor.head, seed)?;
        net.copy_branch(left, "left.")?;
        net.copy_branch(right, "right.")?;
        Ok(net)
    }

    fn copy_branch(&mut self, branch: &Network<T>, prefix: &str) -> Result<()> {
        for (name, t) in branch.params.iter() {
            if name.starts_with("head.") {
                continue;
            }
            let target = format!("{prefix}{name}");
            let i = self
                .params
                .index_of(&target)
                .ok_or_else(|| Error::Config(format!("fusion has no parameter {target}")))?;
            *self.params.get_mut(i) = t.clone();
        }
        Ok(())
    }

    pub fn head(&self) -> TaskHead {
        self.descriptor.head
    }

    pub fn input_kinds(&self) -> Vec<FeatureKind> {
        self.descriptor.spec.input_kinds()
    }

    pub fn embedding_dim(&self) -> usize {
        self.body.embedding_dim()
    }

    /// Index of the head weight and bias inside `params`.
    pub fn head_params(&self) -> (usize, usize) {
        (self.head.weight, self.head.bias)
    }

    /// Index of the fusion dense weight and bias, for fusion networks.
    pub fn fusion_params(&self) -> Option<(usize, usize)> {
        match &self.body {
            Body::Fusion { dense, .. } => Some((dense.weight, dense.bias)),
            _ => None,
        }
    }

    fn input_vars<'p>(&self, g: &mut Graph<'p, T>, inputs: &[&FeatureBlock]) -> Result<Vec<Var>> {
        let kinds = self.input_kinds();
        if inputs.len() != kinds.len() {
            return Err(Error::Shape(format!(
                "model takes {} inputs, got {}",
                kinds.len(),
                inputs.len()
            )));
        }
        let cnn_like = matches!(self.descriptor.spec.arch(), Architecture::Cnn | Architecture::CnnGru);
        inputs
            .iter()
            .zip(&kinds)
            .map(|(b, k)| {
                if b.kind != *k || b.data.len() != b.dim * BLOCK_FRAMES {
                    return Err(Error::Shape(format!(
                        "expected a {k} block, got {} with {} values",
                        b.kind,
                        b.data.len()
                    )));
                }
                let shape: Vec<usize> = if cnn_like {
                    vec![1, b.dim, BLOCK_FRAMES]
                } else {
                    vec![b.dim, BLOCK_FRAMES]
                };
                Ok(g.constant(Tensor::from_f64(&shape, &b.data)?))
            })
            .collect()
    }

    fn forward_vars<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        inputs: &[&FeatureBlock],
        mut ledger: Option<&mut ShapeLedger>,
    ) -> Result<Var> {
        let p = self.params.bind(g);
        let x = self.input_vars(g, inputs)?;
        let e = embed(&self.body, g, &p, &x, &mut ledger)?;
        note(&mut ledger, "embedding", g, e);
        let z = self.head.forward(g, &p, e)?;
        let out = match self.descriptor.head {
            TaskHead::Binary => g.sigmoid(z),
            TaskHead::FourClass => g.softmax(z),
            TaskHead::Regression => {
                let s = g.sigmoid(z);
                g.affine(
                    s,
                    T::from_f64(INTENSITY_MAX - INTENSITY_MIN),
                    T::from_f64(INTENSITY_MIN),
                )
            }
        };
        note(&mut ledger, "head", g, out);
        Ok(out)
    }

    /// Intermediate output sizes from a dry forward pass.
    pub fn shape_ledger(&self) -> Result<ShapeLedger> {
        let blocks: Vec<FeatureBlock> = self
            .input_kinds()
            .into_iter()
            .map(|k| FeatureBlock {
                kind: k,
                dim: k.dim(),
                data: vec![0.0; k.dim() * BLOCK_FRAMES],
                clip_ref: "ledger".into(),
                block_index: 0,
            })
            .collect();
        let refs: Vec<&FeatureBlock> = blocks.iter().collect();
        let mut ledger = Vec::new();
        let mut g = Graph::new();
        self.forward_vars(&mut g, &refs, Some(&mut ledger))?;
        Ok(ledger)
    }

    /// Head output for one block (one block per input kind).
    pub fn predict_block(&self, inputs: &[&FeatureBlock]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward_vars(&mut g, inputs, None)?;
        Ok(g.value(out).to_f64())
    }

    /// Task loss and per-parameter gradients for one example.
    pub fn loss_and_grads(&self, inputs: &[&FeatureBlock], target: &Target) -> Result<(f64, Vec<Option<Vec<T>>>)> {
        let mut g = Graph::new();
        let out = self.forward_vars(&mut g, inputs, None)?;
        let loss = self.attach_loss(&mut g, out, target)?;
        let value = g.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value}")));
        }
        g.backward(loss)?;
        Ok((value, g.param_grads(self.params.len())))
    }

    /// Task loss for one example without gradients.
    pub fn loss(&self, inputs: &[&FeatureBlock], target: &Target) -> Result<f64> {
        let mut g = Graph::new();
        let out = self.forward_vars(&mut g, inputs, None)?;
        let loss = self.attach_loss(&mut g, out, target)?;
        Ok(g.value(loss).data()[0].as_f64())
    }

    fn attach_loss<'p>(&self, g: &mut Graph<'p, T>, out: Var, target: &Target) -> Result<Var> {
        match (self.descriptor.head.loss(), target) {
            (LossKind::MeanSquaredError, Target::Values(v)) => {
                let t: Vec<T> = v.iter().map(|&x| T::from_f64(x)).collect();
                g.mse(out, &t)
            }
            (LossKind::CrossEntropy, Target::Class(c)) => g.cross_entropy(out, *c),
            (kind, t) => Err(Error::Config(format!("target {t:?} does not fit {kind:?}"))),
        }
    }

    /// Averages block outputs and applies the head's decision rule.
    /// `blocks[i]` holds block `i` for every input kind.
    pub fn predict_clip(&self, blocks: &[Vec<&FeatureBlock>]) -> Result<ClipPrediction> {
        if blocks.is_empty() {
            return Err(Error::DegenerateInput("clip has no feature blocks".into()));
        }
        let outputs = blocks
            .iter()
            .map(|b| self.predict_block(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(decide_clip(self.descriptor.head, &outputs))
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            descriptor: ModelDescriptor {
                numeric_mode: U::MODE,
                ..self.descriptor.clone()
            },
            params: self.params.cast(),
            body: self.body.clone(),
            head: self.head.clone(),
        }
    }

    /// Rebuilds the architecture from a descriptor and loads checkpointed values.
    pub fn from_parts(descriptor: ModelDescriptor, params: ParamSet<T>) -> Result<Self> {
        let mut net = Self::build(descriptor.spec.clone(), descriptor.head, descriptor.seed)?;
        if params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params.copy_from(&params, "")?;
        net.descriptor.checkpoint = descriptor.checkpoint;
        Ok(net)
    }
}

/// Same-topology copy with every layer width divided by `factor`, freshly
/// initialized from `seed`.
pub fn reduced_spec(spec: &ModelSpec, factor: usize) -> ModelSpec {
    match spec {
        ModelSpec::Single { arch, kind, dims } => ModelSpec::Single {
            arch: *arch,
            kind: *kind,
            dims: dims.reduced(factor),
        },
        ModelSpec::Fusion { left, right, .. } => {
            let (l, r) = (reduced_spec(left, factor), reduced_spec(right, factor));
            let concat_dim = embedding_width(&l) + embedding_width(&r);
            ModelSpec::Fusion {
                left: Box::new(l),
                right: Box::new(r),
                concat_dim,
            }
        }
    }
}

fn embedding_width(spec: &ModelSpec) -> usize {
    match spec {
        ModelSpec::Single { arch, dims, .. } => match arch {
            Architecture::Cnn => dims.cnn_dense,
            Architecture::Gru => dims.gru_dense,
            Architecture::CnnGru => dims.cnn_gru_dense,
            Architecture::BaselineMlp => dims.mlp_hidden,
        },
        ModelSpec::Fusion { concat_dim, .. } => *concat_dim,
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub entries_checked: usize,
    /// Probes whose ±h interval straddles a ReLU or max-pool switch.
    /// Excluded from the maximum; see [`straddles_kink`].
    pub entries_nonsmooth: usize,
}

/// Whether a piecewise-smooth function sampled at `x + k h` for
/// `k = -2..=2` has a slope break inside `(x - h, x + h)`. For smooth
/// functions the three second differences centred at `x - h`, `x` and
/// `x + h` agree to `O(h^3)`; a break inside the central interval moves the
/// central one away from at least one neighbour by the full jump.
pub fn straddles_kink(f: &[f64; 5]) -> bool {
    let second = |a: usize| f[a] - 2.0 * f[a + 1] + f[a + 2];
    let (left, centre, right) = (second(0), second(1), second(2));
    let noise = 64.0 * f64::EPSILON * f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (left - centre).abs().max((right - centre).abs()) > 0.1 * centre.abs() + noise
}

/// Compares backpropagated gradients of the task loss with central
/// differences of step `h`, probing up to `per_tensor` seeded entries of each
/// parameter tensor. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    net: &Network<f64>,
    inputs: &[&FeatureBlock],
    target: &Target,
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradientCheck> {
    use rand::{Rng, SeedableRng};
    let (centre, analytic) = net.loss_and_grads(inputs, target)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let (mut checked, mut nonsmooth) = (0, 0);
    for i in 0..net.params.len() {
        let n = net.params.get(i).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for j in picks {
            let original = net.params.get(i).data()[j];
            let mut at = |k: f64| -> Result<f64> {
                probe.params.get_mut(i).data_mut()[j] = original + k * h;
                probe.loss(inputs, target)
            };
            let f = [at(-2.0)?, at(-1.0)?, centre, at(1.0)?, at(2.0)?];
            probe.params.get_mut(i).data_mut()[j] = original;
            if straddles_kink(&f) {
                nonsmooth += 1;
                continue;
            }
            let (up, down) = (f[3], f[1]);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].as_ref().map_or(0.0, |g| g[j]);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            checked += 1;
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        entries_checked: checked,
        entries_nonsmooth: nonsmooth,
    })
}

/// Clip decision from per-block head outputs.
pub fn decide_clip(head: TaskHead, outputs: &[Vec<f64>]) -> ClipPrediction {
    let n = outputs.len() as f64;
    let width = outputs[0].len();
    let mean: Vec<f64> = (0..width)
        .map(|j| outputs.iter().map(|o| o[j]).sum::<f64>() / n)
        .collect();
    match head {
        TaskHead::Binary => ClipPrediction::Binary {
            probability: mean[0],
            shout: mean[0] > 0.5,
        },
        TaskHead::FourClass => {
            let best = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let class = mean.iter().position(|&p| p == best).unwrap_or(0);
            let tie = mean.iter().filter(|&&p| (p - best).abs() <= 1e-12).count() > 1;
            ClipPrediction::FourClass {
                probabilities: mean,
                class,
                tie,
            }
        }
        TaskHead::Regression => ClipPrediction::Regression {
            value: mean[0].clamp(INTENSITY_MIN, INTENSITY_MAX),
        },
    }
}


impl From<Architecture> for String {
    fn from(v: Architecture) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskHead> for String {
    fn from(v: TaskHead) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for TaskHead {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

//! End-to-end training loop.
//!
//! Each iteration runs the forward chain (encode, per-layer GIP kernels,
//! fusion, Laplacians), refreshes the coefficient pair by closed-form
//! alternation, re-evaluates the objective with the fresh coefficients,
//! and applies one Adam step to the encoder parameters. Coefficients and
//! Laplacians are constants in the backward pass; gradient reaches the
//! encoder only through the fused kernels.

use crate::autodiff::Tape;
use crate::dlaprls::{
    alternate, build_laplacians, loss_tensor, predict, AlphaPair, DlaprlsConfig, LossTerms,
};
use crate::error::{Error, Result};
use crate::gat::{encode, init_features, register_params, EdgeList, GatConfig, GatParams};
use crate::ingest::HeteroAdjacency;
use crate::kernels::{fuse, split_and_kernelize, KernelBank, KernelConfig, KernelSource};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which kernels from the bank participate in fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelSelector {
    /// Base similarities plus every layer kernel.
    #[default]
    All,
    /// Base similarity kernels only.
    BaseOnly,
    /// A single layer kernel (1-based).
    Layer(usize),
}

impl KernelSelector {
    pub fn apply(&self, bank: &KernelBank) -> Result<KernelBank> {
        match self {
            KernelSelector::All => Ok(bank.clone()),
            KernelSelector::BaseOnly => bank.select(&[KernelSource::Base]),
            KernelSelector::Layer(l) => bank.select(&[KernelSource::Layer(*l)]),
        }
    }
}

impl std::fmt::Display for KernelSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSelector::All => write!(f, "all"),
            KernelSelector::BaseOnly => write!(f, "base_only"),
            KernelSelector::Layer(l) => write!(f, "layer:{l}"),
        }
    }
}

impl std::str::FromStr for KernelSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(KernelSelector::All),
            "base_only" => Ok(KernelSelector::BaseOnly),
            other => {
                if let Some(layer) = other.strip_prefix("layer:") {
                    let l: usize = layer.parse().map_err(|_| {
                        Error::config(format!("bad kernel selector layer `{other}`"))
                    })?;
                    if l == 0 {
                        return Err(Error::config("kernel selector layers are 1-based"));
                    }
                    Ok(KernelSelector::Layer(l))
                } else {
                    Err(Error::config(format!(
                        "unknown kernel selector `{other}` (expected all, base_only, layer:N)"
                    )))
                }
            }
        }
    }
}

impl Serialize for KernelSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for KernelSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Adam optimizer state over the flat parameter list.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)], learning_rate: f64) -> Self {
        AdamState {
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One Adam step with bias correction over the full parameter list.
///
/// Panics if the gradient list does not match the registered parameters
/// in count or shape.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
    assert_eq!(
        params.len(),
        grads.len(),
        "adam_step: gradient count mismatch"
    );
    assert_eq!(params.len(), state.m.len(), "adam_step: state size mismatch");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(param.dim(), grad.dim(), "adam_step: shape mismatch at {i}");
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        m.zip_mut_with(grad, |mi, &gi| *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi);
        v.zip_mut_with(grad, |vi, &gi| {
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi
        });
        for ((p, &mi), &vi) in param.iter_mut().zip(m.iter()).zip(v.iter()) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
}

/// Full training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub gat: GatConfig,
    pub kernel: KernelConfig,
    pub dlaprls: DlaprlsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20,
            learning_rate: 0.001,
            seed: 0,
            gat: GatConfig::default(),
            kernel: KernelConfig::default(),
            dlaprls: DlaprlsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("train: iterations must be >= 1"));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config("train: learning rate must be finite and >= 0"));
        }
        self.gat.validate()?;
        self.kernel.validate(self.gat.num_layers())?;
        self.dlaprls.validate()
    }
}

/// Everything the loop mutates, plus the cached fused kernels from the
/// latest forward pass (the pair the stored coefficients were solved
/// against).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelState {
    pub params: GatParams,
    pub alpha: AlphaPair,
    pub adam: AdamState,
    pub loss_history: Vec<LossTerms>,
    pub k_d: Array2<f64>,
    pub k_t: Array2<f64>,
}

impl ModelState {
    pub fn init(adj: &HeteroAdjacency, config: &TrainConfig) -> Result<Self> {
        let params = GatParams::init(&config.gat)?;
        let shapes: Vec<(usize, usize)> = params.flat().iter().map(|p| p.dim()).collect();
        Ok(ModelState {
            params,
            alpha: AlphaPair::zeros(adj.n_drugs, adj.n_targets),
            adam: AdamState::new(&shapes, config.learning_rate),
            loss_history: Vec::new(),
            k_d: Array2::zeros((adj.n_drugs, adj.n_drugs)),
            k_t: Array2::zeros((adj.n_targets, adj.n_targets)),
        })
    }
}

fn forward_kernels(
    tape: &mut Tape,
    model: &GatParams,
    h0: &Array2<f64>,
    edges: &EdgeList,
    adj: &HeteroAdjacency,
    selector: &KernelSelector,
    config: &TrainConfig,
    trainable: bool,
) -> Result<(crate::autodiff::Tensor, crate::autodiff::Tensor, Vec<crate::autodiff::Tensor>)> {
    let h0_t = tape.constant(h0.clone());
    let tensors = register_params(tape, model, trainable);
    let embeddings = encode(
        tape,
        &config.gat,
        &tensors,
        h0_t,
        edges,
        adj.n_drugs,
        adj.n_targets,
    );
    let (layer_d, layer_t) = split_and_kernelize(tape, &embeddings, &config.kernel)?;
    let bank = KernelBank::assemble(
        tape,
        &adj.k_s_d,
        &adj.k_s_t,
        layer_d,
        layer_t,
        &config.kernel,
    )?;
    let bank = selector.apply(&bank)?;
    let (k_d, k_t) = fuse(tape, &bank);
    Ok((k_d, k_t, tensors.flat()))
}

/// One outer iteration: forward, coefficient refresh, backward, Adam step.
pub fn train_iteration(
    model: &mut ModelState,
    adj: &HeteroAdjacency,
    edges: &EdgeList,
    h0: &Array2<f64>,
    y_train: &Array2<f64>,
    selector: &KernelSelector,
    config: &TrainConfig,
) -> Result<()> {
    let mut tape = Tape::new();
    let (k_d_t, k_t_t, flat_tensors) = forward_kernels(
        &mut tape,
        &model.params,
        h0,
        edges,
        adj,
        selector,
        config,
        true,
    )?;
    let k_d = tape.value(k_d_t).clone();
    let k_t = tape.value(k_t_t).clone();

    let lap = build_laplacians(&k_d, &k_t, &config.dlaprls);
    alternate(&k_d, &k_t, &mut model.alpha, &lap, y_train, &config.dlaprls)?;

    let tl = loss_tensor(
        &mut tape,
        k_d_t,
        k_t_t,
        &model.alpha,
        &lap,
        y_train,
        config.dlaprls.lambda_d,
        config.dlaprls.lambda_t,
    );
    let terms = LossTerms {
        total: tape.scalar(tl.total),
        data: tape.scalar(tl.data),
        reg_d: tape.scalar(tl.reg_d),
        reg_t: tape.scalar(tl.reg_t),
    };
    if !terms.total.is_finite() {
        let norms: Vec<String> = model
            .params
            .flat_names()
            .iter()
            .zip(model.params.flat())
            .map(|(name, p)| {
                let n: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                format!("{name}: {n:.3e}")
            })
            .collect();
        return Err(Error::numerical(format!(
            "non-finite loss {}; parameter norms: {}",
            terms.total,
            norms.join(", ")
        )));
    }

    let grads = tape.backward(tl.total);
    let grad_list: Vec<Array2<f64>> = flat_tensors
        .iter()
        .map(|t| grads.get(t).expect("registered parameter gradient").clone())
        .collect();
    let mut param_refs = model.params.flat_mut();
    adam_step(&mut model.adam, &mut param_refs, &grad_list);

    model.loss_history.push(terms);
    model.k_d = k_d;
    model.k_t = k_t;
    Ok(())
}

/// Train for `config.iterations` outer iterations and predict.
///
/// Deterministic under the config seeds. The returned prediction matrix
/// uses the kernels from the latest forward pass together with the
/// coefficients solved against them.
pub fn fit(
    adj: &HeteroAdjacency,
    y_train: &Array2<f64>,
    selector: &KernelSelector,
    config: &TrainConfig,
) -> Result<(ModelState, Array2<f64>)> {
    config.gat.validate()?;
    config.kernel.validate(config.gat.num_layers())?;
    config.dlaprls.validate()?;
    if y_train.dim() != (adj.n_drugs, adj.n_targets) {
        return Err(Error::data(format!(
            "Y_train shape {:?} does not match adjacency ({}, {})",
            y_train.dim(),
            adj.n_drugs,
            adj.n_targets
        )));
    }

    let mut model = ModelState::init(adj, config)?;
    let edges = EdgeList::from_adjacency(adj);
    let h0 = init_features(adj.n_nodes(), config.gat.input_dim, config.gat.seed);

    if config.iterations == 0 {
        // Degenerate run: populate kernels with a values-only forward so
        // prediction is still well-defined (alpha stays zero).
        let mut tape = Tape::new();
        let (k_d_t, k_t_t, _) = forward_kernels(
            &mut tape,
            &model.params,
            &h0,
            &edges,
            adj,
            selector,
            config,
            false,
        )?;
        model.k_d = tape.value(k_d_t).clone();
        model.k_t = tape.value(k_t_t).clone();
    }

    for _ in 0..config.iterations {
        train_iteration(&mut model, adj, &edges, &h0, y_train, selector, config)?;
    }

    let y_star = predict(&model.k_d, &model.k_t, &model.alpha);
    Ok((model, y_star))
}

/// Self-contained model checkpoint: encoder parameters with shapes and
/// seed metadata, solver state, cached kernels, and the catalog plus
/// association matrix needed to rank novel pairs. JSON round-trips all
/// floats exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub model: ModelState,
    pub drug_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub y: Array2<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(
        config: &TrainConfig,
        model: ModelState,
        drug_ids: Vec<String>,
        target_ids: Vec<String>,
        y: Array2<f64>,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            model,
            drug_ids,
            target_ids,
            y,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::data(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: bad checkpoint: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }
}

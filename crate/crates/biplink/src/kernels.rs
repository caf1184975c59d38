//! Gaussian interaction profile kernels and multi-kernel fusion.
//!
//! Each encoder layer's embeddings split into drug rows and target rows;
//! each part becomes a GIP kernel `K(i,j) = exp(-gamma * ||h_i - h_j||^2)`.
//! The base similarity kernels join these per-layer kernels in a bank that
//! fuses into `K_d` and `K_t` by convex weighting. GIP kernels stay on the
//! tape so gradients reach the encoder; base kernels enter as constants.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::gat::EmbeddingSet;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Where a kernel in the bank came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSource {
    /// Base similarity (Tanimoto / Jaccard or externally supplied).
    Base,
    /// GIP kernel from encoder layer `l` (1-based).
    Layer(usize),
}

impl std::fmt::Display for KernelSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSource::Base => write!(f, "base"),
            KernelSource::Layer(l) => write!(f, "layer:{l}"),
        }
    }
}

/// A materialized kernel matrix with its provenance tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    pub source: KernelSource,
}

/// Per-layer GIP bandwidths and fusion weighting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// One bandwidth per encoder layer.
    pub gammas: Vec<f64>,
    /// `None` = uniform `1/(L+1)`; otherwise explicit per-kernel weights.
    pub fusion_weights: Option<Vec<f64>>,
    /// Divide each gamma by the mean squared embedding row norm before
    /// use (classical GIP convention). Off by default: gammas are raw.
    pub normalize_bandwidth: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            gammas: vec![2f64.powi(-5), 2f64.powi(-3), 2f64.powi(-3)],
            fusion_weights: None,
            normalize_bandwidth: false,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.gammas.len() != num_layers {
            return Err(Error::config(format!(
                "kernel: {} gammas but {} encoder layers",
                self.gammas.len(),
                num_layers
            )));
        }
        if self.gammas.iter().any(|&g| g <= 0.0 || !g.is_finite()) {
            return Err(Error::config("kernel: gammas must be positive"));
        }
        if let Some(w) = &self.fusion_weights {
            if w.iter().any(|&x| x < 0.0) {
                return Err(Error::config("kernel: fusion weights must be >= 0"));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::config("kernel: fusion weights must sum to 1"));
            }
        }
        Ok(())
    }
}

/// Gaussian interaction profile kernel of embedding rows; differentiable
/// (stays on the tape).
///
/// Panics on non-finite embeddings (op-boundary check) and requires
/// `gamma > 0`.
pub fn gip_kernel(tape: &mut Tape, h_part: Tensor, gamma: f64) -> Tensor {
    assert!(gamma > 0.0, "gip_kernel: gamma must be positive");
    let d = tape.pairwise_sq_dists(h_part);
    tape.exp_neg(d, gamma)
}

/// Off-tape evaluation of [`gip_kernel`] for tests and inspection.
pub fn gip_kernel_values(h_part: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let mut tape = Tape::new();
    let h = tape.constant(h_part.clone());
    let k = gip_kernel(&mut tape, h, gamma);
    tape.value(k).clone()
}

fn effective_gamma(tape: &Tape, part: Tensor, gamma: f64, normalize: bool) -> f64 {
    if !normalize {
        return gamma;
    }
    let v = tape.value(part);
    let n = v.nrows() as f64;
    let mean_sq: f64 = v.iter().map(|x| x * x).sum::<f64>() / n;
    if mean_sq > 0.0 {
        gamma / mean_sq
    } else {
        gamma
    }
}

/// Split each layer's embeddings into drug and target rows and build the
/// per-layer GIP kernels.
pub fn split_and_kernelize(
    tape: &mut Tape,
    embeddings: &EmbeddingSet,
    config: &KernelConfig,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    config.validate(embeddings.layers.len())?;
    let n_d = embeddings.n_drugs;
    let n_t = embeddings.n_targets;
    let drug_rows: Vec<usize> = (0..n_d).collect();
    let target_rows: Vec<usize> = (n_d..n_d + n_t).collect();
    let mut drug_kernels = Vec::with_capacity(embeddings.layers.len());
    let mut target_kernels = Vec::with_capacity(embeddings.layers.len());
    for (l, &h) in embeddings.layers.iter().enumerate() {
        assert_eq!(
            h.rows(),
            n_d + n_t,
            "embedding row count does not match catalog sizes"
        );
        let gamma = config.gammas[l];
        let hd = tape.gather_rows(h, &drug_rows);
        let ht = tape.gather_rows(h, &target_rows);
        let gd = effective_gamma(tape, hd, gamma, config.normalize_bandwidth);
        let gt = effective_gamma(tape, ht, gamma, config.normalize_bandwidth);
        drug_kernels.push(gip_kernel(tape, hd, gd));
        target_kernels.push(gip_kernel(tape, ht, gt));
    }
    Ok((drug_kernels, target_kernels))
}

/// The kernel collections for both sides plus fusion weights.
/// Drug and target lists are index-aligned: entry `i` on both sides has
/// the same source and weight.
#[derive(Debug, Clone)]
pub struct KernelBank {
    pub drug: Vec<Tensor>,
    pub target: Vec<Tensor>,
    pub sources: Vec<KernelSource>,
    pub weights: Vec<f64>,
}

impl KernelBank {
    /// Assemble `[base, layer 1, ..., layer L]` with uniform or explicit
    /// weights.
    pub fn assemble(
        tape: &mut Tape,
        base_drug: &Array2<f64>,
        base_target: &Array2<f64>,
        layer_drug: Vec<Tensor>,
        layer_target: Vec<Tensor>,
        config: &KernelConfig,
    ) -> Result<Self> {
        if layer_drug.len() != layer_target.len() {
            return Err(Error::data("kernel bank: drug/target list length mismatch"));
        }
        let mut drug = vec![tape.constant(base_drug.clone())];
        let mut target = vec![tape.constant(base_target.clone())];
        let mut sources = vec![KernelSource::Base];
        for (l, (d, t)) in layer_drug.into_iter().zip(layer_target).enumerate() {
            drug.push(d);
            target.push(t);
            sources.push(KernelSource::Layer(l + 1));
        }
        let count = drug.len();
        let weights = match &config.fusion_weights {
            None => vec![1.0 / count as f64; count],
            Some(w) => {
                if w.len() != count {
                    return Err(Error::config(format!(
                        "kernel: {} fusion weights for {} kernels",
                        w.len(),
                        count
                    )));
                }
                w.clone()
            }
        };
        Ok(KernelBank {
            drug,
            target,
            sources,
            weights,
        })
    }

    /// Restrict the bank to the kernels matching `keep`, renormalizing
    /// weights uniformly over the survivors.
    pub fn select(&self, keep: &[KernelSource]) -> Result<Self> {
        let mut drug = Vec::new();
        let mut target = Vec::new();
        let mut sources = Vec::new();
        for (i, src) in self.sources.iter().enumerate() {
            if keep.contains(src) {
                drug.push(self.drug[i]);
                target.push(self.target[i]);
                sources.push(*src);
            }
        }
        if sources.is_empty() {
            return Err(Error::config("kernel selection left an empty bank"));
        }
        let w = 1.0 / sources.len() as f64;
        let weights = vec![w; sources.len()];
        Ok(KernelBank {
            drug,
            target,
            sources,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Convex combination of the bank: `K_d = sum_i w_i S_i^d` and likewise
/// for targets. Stays on the tape.
pub fn fuse(tape: &mut Tape, bank: &KernelBank) -> (Tensor, Tensor) {
    assert!(!bank.is_empty(), "fuse of empty bank");
    let combine = |tape: &mut Tape, parts: &[Tensor], weights: &[f64]| -> Tensor {
        let shape = parts[0].shape();
        assert!(
            parts.iter().all(|p| p.shape() == shape),
            "fuse shape mismatch within kernel list"
        );
        let mut acc = tape.scale(parts[0], weights[0]);
        for (p, &w) in parts.iter().zip(weights).skip(1) {
            let term = tape.scale(*p, w);
            acc = tape.add(acc, term);
        }
        acc
    };
    let k_d = combine(tape, &bank.drug, &bank.weights);
    let k_t = combine(tape, &bank.target, &bank.weights);
    (k_d, k_t)
}

/// Materialize the bank for inspection or dumping.
pub fn materialize(tape: &Tape, bank: &KernelBank) -> (Vec<KernelMatrix>, Vec<KernelMatrix>) {
    let take = |list: &[Tensor]| -> Vec<KernelMatrix> {
        list.iter()
            .zip(&bank.sources)
            .map(|(&t, &source)| KernelMatrix {
                values: tape.value(t).clone(),
                source,
            })
            .collect()
    };
    (take(&bank.drug), take(&bank.target))
}

//! Deterministic synthetic datasets with planted bipartite block structure.
//!
//! Drugs and targets are dealt round-robin into communities; associations
//! are dense within matched communities and sparse across. Fingerprints
//! share a per-block bit pool and target interaction sets concentrate
//! within blocks, so the base similarities carry the same planted signal
//! the pipeline is supposed to recover.

use crate::error::{Error, Result};
use crate::ingest::{AssociationMatrix, EntityCatalog, FingerprintSet, InteractionSet};
use crate::rng::{derive_seed, seeded_rng};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

const Y_STREAM: u64 = 0x79626c6b; // "yblk"
const FP_STREAM: u64 = 0x66707273; // "fprs"
const INT_STREAM: u64 = 0x696e7473; // "ints"

/// Pool of fingerprint bits reserved per block.
const BITS_PER_BLOCK: u32 = 48;
/// Shared noise-bit universe appended after the block pools.
const NOISE_BITS: u32 = 128;
/// Noise bits sampled per drug, scaled by `sim_noise`.
const NOISE_DRAWS: u32 = 16;

/// Generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_drugs: usize,
    pub n_targets: usize,
    pub blocks: usize,
    /// Association probability inside matched blocks.
    pub density_in: f64,
    /// Association probability across blocks.
    pub density_out: f64,
    /// Perturbation level on similarities, in `[0, 1)`.
    pub sim_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_drugs: 60,
            n_targets: 50,
            blocks: 2,
            density_in: 0.3,
            density_out: 0.02,
            sim_noise: 0.2,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_drugs == 0 || self.n_targets == 0 {
            return Err(Error::config("synth: need at least one drug and target"));
        }
        if self.blocks == 0 {
            return Err(Error::config("synth: blocks must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.density_in)
            || !(0.0..=1.0).contains(&self.density_out)
            || self.density_out >= self.density_in
        {
            return Err(Error::config(
                "synth: densities need 0 <= density_out < density_in <= 1",
            ));
        }
        if !(0.0..1.0).contains(&self.sim_noise) {
            return Err(Error::config("synth: sim_noise must be in [0, 1)"));
        }
        Ok(())
    }
}

fn block_of(index: usize, blocks: usize) -> usize {
    index % blocks
}

/// Generate a dataset. Fully deterministic under `spec.seed`; fails if the
/// sampled association matrix ends up with zero positives.
pub fn generate(
    spec: &SynthSpec,
) -> Result<(EntityCatalog, AssociationMatrix, FingerprintSet, InteractionSet)> {
    spec.validate()?;
    let drug_ids: Vec<String> = (0..spec.n_drugs).map(|i| format!("drug_{i:04}")).collect();
    let target_ids: Vec<String> = (0..spec.n_targets)
        .map(|j| format!("target_{j:04}"))
        .collect();
    let catalog = EntityCatalog::new(drug_ids, target_ids)?;

    // Associations: Bernoulli per cell, density set by block match.
    let mut rng = seeded_rng(derive_seed(spec.seed, &[Y_STREAM]));
    let mut y = Array2::zeros((spec.n_drugs, spec.n_targets));
    for i in 0..spec.n_drugs {
        for j in 0..spec.n_targets {
            let p = if block_of(i, spec.blocks) == block_of(j, spec.blocks) {
                spec.density_in
            } else {
                spec.density_out
            };
            if rng.random_range(0.0..1.0) < p {
                y[[i, j]] = 1.0;
            }
        }
    }
    let associations = AssociationMatrix::new(y)
        .map_err(|_| Error::data("synth: spec produced zero positive associations"))?;

    // Fingerprints: block pool bits kept with probability 1 - sim_noise,
    // plus a few noise bits from the shared universe.
    let mut rng = seeded_rng(derive_seed(spec.seed, &[FP_STREAM]));
    let noise_base = spec.blocks as u32 * BITS_PER_BLOCK;
    let mut bits = Vec::with_capacity(spec.n_drugs);
    for i in 0..spec.n_drugs {
        let b = block_of(i, spec.blocks) as u32;
        let mut set = BTreeSet::new();
        for bit in (b * BITS_PER_BLOCK)..((b + 1) * BITS_PER_BLOCK) {
            if rng.random_range(0.0..1.0) < 1.0 - spec.sim_noise {
                set.insert(bit);
            }
        }
        for _ in 0..NOISE_DRAWS {
            if rng.random_range(0.0..1.0) < spec.sim_noise {
                set.insert(noise_base + rng.random_range(0..NOISE_BITS));
            }
        }
        bits.push(set);
    }
    let fingerprints = FingerprintSet { bits };

    // Target interactions: mostly within-block neighbors, occasional
    // cross-block noise edges, inserted symmetrically.
    let mut rng = seeded_rng(derive_seed(spec.seed, &[INT_STREAM]));
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); spec.n_targets];
    for a in 0..spec.n_targets {
        for b in (a + 1)..spec.n_targets {
            let same = block_of(a, spec.blocks) == block_of(b, spec.blocks);
            let p = if same {
                0.7 * (1.0 - spec.sim_noise)
            } else {
                0.15 * spec.sim_noise
            };
            if rng.random_range(0.0..1.0) < p {
                neighbors[a].insert(b);
                neighbors[b].insert(a);
            }
        }
    }
    let interactions = InteractionSet { neighbors };

    Ok((catalog, associations, fingerprints, interactions))
}

/// File names produced by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub drugs: PathBuf,
    pub targets: PathBuf,
    pub associations: PathBuf,
    pub fingerprints: PathBuf,
    pub target_interactions: PathBuf,
}

/// Emit the dataset in the exact formats the loader reads. Byte-identical
/// for the same spec and seed.
pub fn write_dataset(
    dir: &Path,
    catalog: &EntityCatalog,
    y: &AssociationMatrix,
    fp: &FingerprintSet,
    ints: &InteractionSet,
) -> Result<DatasetFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = DatasetFiles {
        drugs: dir.join("drugs.txt"),
        targets: dir.join("targets.txt"),
        associations: dir.join("associations.tsv"),
        fingerprints: dir.join("fingerprints.tsv"),
        target_interactions: dir.join("target_interactions.tsv"),
    };

    let write = |path: &Path, content: String| -> Result<()> {
        fs::write(path, content).map_err(|e| Error::io(path, e))
    };

    write(&files.drugs, catalog.drug_ids.join("\n") + "\n")?;
    write(&files.targets, catalog.target_ids.join("\n") + "\n")?;

    let mut assoc = String::new();
    for i in 0..catalog.n_drugs() {
        for j in 0..catalog.n_targets() {
            if y.values[[i, j] ] == 1.0 {
                assoc.push_str(&catalog.drug_ids[i]);
                assoc.push('\t');
                assoc.push_str(&catalog.target_ids[j]);
                assoc.push('\n');
            }
        }
    }
    write(&files.associations, assoc)?;

    let mut fps = String::new();
    for (i, set) in fp.bits.iter().enumerate() {
        fps.push_str(&catalog.drug_ids[i]);
        fps.push('\t');
        let list: Vec<String> = set.iter().map(|b| b.to_string()).collect();
        fps.push_str(&list.join(","));
        fps.push('\n');
    }
    write(&files.fingerprints, fps)?;

    let mut edges = String::new();
    for (a, set) in ints.neighbors.iter().enumerate() {
        for &b in set.iter().filter(|&&b| b > a) {
            edges.push_str(&catalog.target_ids[a]);
            edges.push('\t');
            edges.push_str(&catalog.target_ids[b]);
            edges.push('\n');
        }
    }
    write(&files.target_interactions, edges)?;

    Ok(files)
}

//! Command-line interface: `generate`, `train`, `cv`, `predict`, `ablate`.
//!
//! One declarative TOML config drives everything; flags override config
//! values. Unknown config keys are rejected. Exit codes: 0 success,
//! 1 usage/config error, 2 data error, 3 numerical failure.

use crate::dlaprls::{predict, DlaprlsConfig};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, sweep_grid, CvOutcome};
use crate::gat::GatConfig;
use crate::ingest::{
    build_hetero_adjacency, jaccard_similarity, load_dataset, load_similarity_matrix,
    tanimoto_similarity, write_matrix_tsv, AdjacencyConfig, AssociationMatrix, DatasetPaths,
    EntityCatalog, HeteroAdjacency,
};
use crate::kernels::KernelConfig;
use crate::synthgen::{generate, write_dataset, SynthSpec};
use crate::trainer::{fit, Checkpoint, KernelSelector, TrainConfig};
use clap::{Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Outer-loop settings, one TOML section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            iterations: 20,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

/// Evaluation settings: fold count, seed, worker count, kernel selector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub folds: usize,
    pub seed: u64,
    pub workers: usize,
    pub ablation: KernelSelector,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            folds: 5,
            seed: 42,
            workers: 1,
            ablation: KernelSelector::All,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub dump_kernels: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            dump_kernels: false,
        }
    }
}

/// Hyperparameter grid for the sweep harness (optional section).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub gammas: Vec<Vec<f64>>,
    pub layer_dims: Vec<Vec<usize>>,
}

/// The full declarative run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<DatasetPaths>,
    pub adjacency: AdjacencyConfig,
    pub gat: GatConfig,
    pub kernel: KernelConfig,
    pub dlaprls: DlaprlsConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            learning_rate: self.train.learning_rate,
            seed: self.train.seed,
            gat: self.gat.clone(),
            kernel: self.kernel.clone(),
            dlaprls: self.dlaprls.clone(),
        }
    }

    fn data(&self) -> Result<&DatasetPaths> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::config("config is missing the [data] section"))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "biplink",
    about = "Bipartite drug-target link prediction via multi-kernel fusion of graph attention embeddings",
    version
)]
pub struct Cli {
    /// Declarative run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the fold worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Emit a synthetic dataset from a generator spec.
    Generate {
        /// Generator spec (TOML, see SynthSpec fields).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Train on the full association matrix; write checkpoint, training
    /// log, and prediction exports.
    Train,
    /// K-fold cross-validation with metric and curve reports.
    Cv,
    /// Rank unknown pairs from a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_n: usize,
    },
    /// Kernel-selection ablation, or a bandwidth x dimension sweep when
    /// the config has a [sweep] section.
    Ablate,
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with success
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.gat.seed = seed;
        config.eval.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(workers) = cli.workers {
        config.eval.workers = workers;
    }

    match cli.command {
        Command::Generate { spec } => cmd_generate(&spec, &config.output.dir),
        Command::Train => cmd_train(&config),
        Command::Cv => cmd_cv(&config),
        Command::Predict { checkpoint, top_n } => {
            cmd_predict(&checkpoint, top_n, &config.output.dir)
        }
        Command::Ablate => cmd_ablate(&config),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Load the dataset and assemble the heterogeneous network.
pub fn prepare(
    config: &RunConfig,
) -> Result<(EntityCatalog, AssociationMatrix, HeteroAdjacency)> {
    let paths = config.data()?;
    let (catalog, y, fingerprints, interactions) = load_dataset(paths)?;
    let k_s_d = match &paths.drug_similarity {
        Some(p) => load_similarity_matrix(p, &catalog.drug_ids)?,
        None => tanimoto_similarity(&fingerprints),
    };
    let k_s_t = match &paths.target_similarity {
        Some(p) => load_similarity_matrix(p, &catalog.target_ids)?,
        None => jaccard_similarity(&interactions),
    };
    let adj = build_hetero_adjacency(&k_s_d, &k_s_t, &y, &config.adjacency)?;
    Ok((catalog, y, adj))
}

pub fn cmd_generate(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", spec_path.display())))?;
    let (catalog, y, fp, ints) = generate(&spec)?;
    ensure_dir(out_dir)?;
    let files = write_dataset(out_dir, &catalog, &y, &fp, &ints)?;
    println!(
        "generated {} drugs x {} targets with {} associations",
        catalog.n_drugs(),
        catalog.n_targets(),
        y.n_positives()
    );
    for f in [
        &files.drugs,
        &files.targets,
        &files.associations,
        &files.fingerprints,
        &files.target_interactions,
    ] {
        println!("  {}", f.display());
    }
    Ok(())
}

fn write_ranked_pairs(
    path: &Path,
    catalog: &EntityCatalog,
    y_star: &Array2<f64>,
    exclude: Option<&Array2<f64>>,
    top_n: Option<usize>,
) -> Result<usize> {
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for ((i, j), &s) in y_star.indexed_iter() {
        if let Some(y) = exclude {
            if y[[i, j]] == 1.0 {
                continue;
            }
        }
        cells.push((i, j, s));
    }
    // descending score, stable (row-major) tiebreak
    cells.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then((a.0, a.1).cmp(&(b.0, b.1))));
    if let Some(n) = top_n {
        cells.truncate(n);
    }
    let mut out = String::new();
    for (i, j, s) in &cells {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            catalog.drug_ids[*i], catalog.target_ids[*j], s
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(cells.len())
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let train_config = config.train_config();
    train_config.validate()?;
    let (catalog, y, adj) = prepare(config)?;
    let selector = config.eval.ablation;
    let (model, y_star) = fit(&adj, &y.values, &selector, &train_config)?;
    ensure_dir(&config.output.dir)?;

    // training log: one line per iteration
    let log_path = config.output.dir.join("train_log.tsv");
    let mut log = String::from("iter\tJ\tdata_term\treg_d\treg_t\n");
    for (i, t) in model.loss_history.iter().enumerate() {
        log.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            i + 1,
            t.total,
            t.data,
            t.reg_d,
            t.reg_t
        ));
    }
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;

    // prediction matrix + ranked pairs
    let pred_path = config.output.dir.join("predictions.tsv");
    write_matrix_tsv(&pred_path, &y_star, &catalog.drug_ids, &catalog.target_ids)?;
    let ranked_path = config.output.dir.join("ranked_pairs.tsv");
    write_ranked_pairs(&ranked_path, &catalog, &y_star, None, None)?;

    if config.output.dump_kernels {
        let kd_path = config.output.dir.join("kernel_drug_fused.tsv");
        write_matrix_tsv(&kd_path, &model.k_d, &catalog.drug_ids, &catalog.drug_ids)?;
        let kt_path = config.output.dir.join("kernel_target_fused.tsv");
        write_matrix_tsv(&kt_path, &model.k_t, &catalog.target_ids, &catalog.target_ids)?;
        let bd_path = config.output.dir.join("kernel_drug_base.tsv");
        write_matrix_tsv(&bd_path, &adj.k_s_d, &catalog.drug_ids, &catalog.drug_ids)?;
        let bt_path = config.output.dir.join("kernel_target_base.tsv");
        write_matrix_tsv(&bt_path, &adj.k_s_t, &catalog.target_ids, &catalog.target_ids)?;
    }

    let ck_path = config.output.dir.join("checkpoint.json");
    let ck = Checkpoint::new(
        &train_config,
        model,
        catalog.drug_ids.clone(),
        catalog.target_ids.clone(),
        y.values.clone(),
    );
    ck.save(&ck_path)?;

    println!(
        "trained {} iterations; final J = {}",
        train_config.iterations,
        ck.model.loss_history.last().map(|t| t.total).unwrap_or(f64::NAN)
    );
    println!("  {}", ck_path.display());
    println!("  {}", log_path.display());
    println!("  {}", pred_path.display());
    Ok(())
}

fn format_cv_tsv(outcome: &CvOutcome) -> String {
    let mut text = String::from(
        "record\tauc\taupr\tf1\tthreshold_best\ttp\tfp\ttn\tfn\tauc_std\taupr_std\tf1_std\n",
    );
    for f in &outcome.report.folds {
        let m = &f.metrics;
        text.push_str(&format!(
            "fold_{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t\t\t\n",
            f.fold, m.auc, m.aupr, m.f1_best, m.threshold_best, m.tp, m.fp, m.tn, m.fn_
        ));
    }
    let mean = &outcome.report.mean;
    let std = &outcome.report.std;
    text.push_str(&format!(
        "aggregate\t{}\t{}\t{}\t\t\t\t\t\t{}\t{}\t{}\n",
        mean.auc, mean.aupr, mean.f1, std.auc, std.aupr, std.f1
    ));
    text
}

fn write_cv_outputs(config: &RunConfig, outcome: &CvOutcome, prefix: &str) -> Result<PathBuf> {
    ensure_dir(&config.output.dir)?;
    let tsv_path = config.output.dir.join(format!("{prefix}metrics.tsv"));
    fs::write(&tsv_path, format_cv_tsv(outcome)).map_err(|e| Error::io(&tsv_path, e))?;

    let json_path = config.output.dir.join(format!("{prefix}metrics.json"));
    let json = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| Error::data(format!("metrics serialization failed: {e}")))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

    for (fold, (scores, labels)) in outcome.fold_scores.iter().enumerate() {
        let roc = crate::eval::roc_points(scores, labels);
        let mut text = String::from("fpr\ttpr\n");
        for (fpr, tpr) in roc {
            text.push_str(&format!("{fpr}\t{tpr}\n"));
        }
        let path = config.output.dir.join(format!("{prefix}fold_{fold}_roc.tsv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        let pr = crate::eval::pr_points(scores, labels);
        let mut text = String::from("recall\tprecision\n");
        for (r, p) in pr {
            text.push_str(&format!("{r}\t{p}\n"));
        }
        let path = config.output.dir.join(format!("{prefix}fold_{fold}_pr.tsv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(tsv_path)
}

pub fn cmd_cv(config: &RunConfig) -> Result<()> {
    let train_config = config.train_config();
    train_config.validate()?;
    let (_, y, adj) = prepare(config)?;
    let outcome = cross_validate(
        &adj,
        &y.values,
        &config.eval.ablation,
        &train_config,
        config.eval.folds,
        config.eval.seed,
        config.eval.workers,
    )?;
    let tsv_path = write_cv_outputs(config, &outcome, "")?;
    println!(
        "cv ({} folds, selector {}): mean auc {} aupr {} f1 {}",
        config.eval.folds,
        config.eval.ablation,
        outcome.report.mean.auc,
        outcome.report.mean.aupr,
        outcome.report.mean.f1
    );
    println!("  {}", tsv_path.display());
    Ok(())
}

pub fn cmd_predict(checkpoint: &Path, top_n: usize, out_dir: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let catalog = EntityCatalog::new(ck.drug_ids.clone(), ck.target_ids.clone())?;
    let y_star = predict(&ck.model.k_d, &ck.model.k_t, &ck.model.alpha);
    ensure_dir(out_dir)?;
    let path = out_dir.join("novel_pairs.tsv");
    let written = write_ranked_pairs(&path, &catalog, &y_star, Some(&ck.y), Some(top_n))?;
    println!("wrote {written} ranked novel pairs to {}", path.display());
    Ok(())
}

pub fn cmd_ablate(config: &RunConfig) -> Result<()> {
    let train_config = config.train_config();
    train_config.validate()?;
    let (_, y, adj) = prepare(config)?;
    ensure_dir(&config.output.dir)?;

    if let Some(sweep) = &config.sweep {
        let records = sweep_grid(
            &adj,
            &y.values,
            &config.eval.ablation,
            &train_config,
            &sweep.gammas,
            &sweep.layer_dims,
            config.eval.folds,
            config.eval.seed,
            config.eval.workers,
        )?;
        let mut text = String::from(
            "gammas\tlayer_dims\tauc\taupr\tf1\tauc_std\taupr_std\tf1_std\n",
        );
        for r in &records {
            let g: Vec<String> = r.gammas.iter().map(|x| x.to_string()).collect();
            let d: Vec<String> = r.layer_dims.iter().map(|x| x.to_string()).collect();
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                g.join(","),
                d.join(","),
                r.mean.auc,
                r.mean.aupr,
                r.mean.f1,
                r.std.auc,
                r.std.aupr,
                r.std.f1
            ));
        }
        let path = config.output.dir.join("sweep.tsv");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let json_path = config.output.dir.join("sweep.json");
        let json = serde_json::to_string_pretty(&records)
            .map_err(|e| Error::data(format!("sweep serialization failed: {e}")))?;
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        println!("sweep: {} cells -> {}", records.len(), path.display());
        return Ok(());
    }

    // kernel-selection ablation: base_only, layer:1..L, all
    let mut selectors = vec![KernelSelector::BaseOnly];
    for l in 1..=config.gat.layer_dims.len() {
        selectors.push(KernelSelector::Layer(l));
    }
    selectors.push(KernelSelector::All);

    let mut text = String::from("selector\tauc\taupr\tf1\tauc_std\taupr_std\tf1_std\n");
    let mut rows = Vec::new();
    for selector in &selectors {
        let outcome = cross_validate(
            &adj,
            &y.values,
            selector,
            &train_config,
            config.eval.folds,
            config.eval.seed,
            config.eval.workers,
        )?;
        let mean = outcome.report.mean;
        let std = outcome.report.std;
        text.push_str(&format!(
            "{selector}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            mean.auc, mean.aupr, mean.f1, std.auc, std.aupr, std.f1
        ));
        rows.push((selector.to_string(), outcome.report));
        println!("{selector}: auc {} aupr {} f1 {}", mean.auc, mean.aupr, mean.f1);
    }
    let path = config.output.dir.join("ablation.tsv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let json_path = config.output.dir.join("ablation.json");
    let json: Vec<serde_json::Value> = rows
        .iter()
        .map(|(name, report)| {
            serde_json::json!({
                "selector": name,
                "report": report,
            })
        })
        .collect();
    let json = serde_json::to_string_pretty(&json)
        .map_err(|e| Error::data(format!("ablation serialization failed: {e}")))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    println!("  {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let err = toml::from_str::<RunConfig>("[train]\niterations = 5\nbogus_key = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus_key"), "{err}");
        assert!(toml::from_str::<RunConfig>("[not_a_section]\nx = 1\n").is_err());
    }

    #[test]
    fn config_defaults_fill_in() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.train.iterations, 20);
        assert_eq!(config.train.learning_rate, 0.001);
        assert_eq!(config.eval.folds, 5);
        assert_eq!(config.eval.workers, 1);
        assert_eq!(config.gat.layer_dims, vec![384, 192, 96]);
        assert_eq!(config.kernel.gammas.len(), 3);
        assert!(config.sweep.is_none());
    }

    #[test]
    fn ablation_selector_round_trips_through_toml() {
        let config: RunConfig =
            toml::from_str("[eval]\nablation = \"layer:2\"\n").unwrap();
        assert_eq!(config.eval.ablation, KernelSelector::Layer(2));
        assert!(toml::from_str::<RunConfig>("[eval]\nablation = \"layer:zero\"\n").is_err());
    }
}

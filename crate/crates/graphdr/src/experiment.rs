//! Batch experiment driver: run the full (model x input-mode x seed) matrix
//! from a declarative config, aggregate multi-seed results, and emit CSV,
//! Markdown and SVG artifacts.
//!
//! Outputs under `<output_dir>/<dataset>/`:
//! - `<model>_<mode>_classification.csv` - per-seed metrics plus mean/std
//! - `<model>_<mode>_clustering.csv`     - first-seed cluster scores
//! - `<model>_<mode>_<reducer>.svg`      - first-seed test-node scatter
//! - `<model>_<mode>_<reducer>.tsv`      - first-seed embedding (id, dims)
//! - `summary.md`                        - aggregated tables
//! - `timings.txt`                       - per-stage wall times (not compared
//!   byte-for-byte; everything above is deterministic given the config)

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::data::{ingest_citation_files, make_split, normalize_adjacency, SplitMask};
use crate::dimred::autoencoder::{ae_encode, ae_train};
use crate::dimred::pca::{pca_fit, pca_transform};
use crate::dimred::tsne::{tsne_embed, TsneConfig};
use crate::dimred::umap::{umap_embed, UmapConfig};
use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;
use crate::metrics::{
    classification_report, dunn_index, silhouette, ClassificationReport, ClusterScore, Labeling,
};
use crate::models::{count_parameters, forward, GraphContext, ModelKind, ModelSpec};
use crate::plot::render_scatter_svg;
use crate::rng::Rng;
use crate::train::{train, TrainConfig};

/// Feature preparation applied before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputMode {
    Original,
    Pca(usize),
    Ae(usize),
}

impl InputMode {
    pub fn label(&self) -> String {
        match self {
            InputMode::Original => "Original".into(),
            InputMode::Pca(k) => format!("PCA-{k}"),
            InputMode::Ae(k) => format!("AE-{k}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "original" {
            return Ok(InputMode::Original);
        }
        if let Some(k) = lower.strip_prefix("pca-") {
            return k
                .parse()
                .map(InputMode::Pca)
                .map_err(|_| GraphDrError::Config(format!("bad input mode {s:?}")));
        }
        if let Some(k) = lower.strip_prefix("ae-") {
            return k
                .parse()
                .map(InputMode::Ae)
                .map_err(|_| GraphDrError::Config(format!("bad input mode {s:?}")));
        }
        Err(GraphDrError::Config(format!("unknown input mode {s:?}")))
    }
}

/// Low-dimensional embedding applied to trained logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputReducer {
    Pca,
    Tsne,
    Umap,
}

impl OutputReducer {
    pub const ALL: [OutputReducer; 3] =
        [OutputReducer::Pca, OutputReducer::Tsne, OutputReducer::Umap];

    pub fn label(&self) -> &'static str {
        match self {
            OutputReducer::Pca => "PCA",
            OutputReducer::Tsne => "t-SNE",
            OutputReducer::Umap => "UMAP",
        }
    }

    /// Lowercase token used in file names.
    pub fn file_token(&self) -> &'static str {
        match self {
            OutputReducer::Pca => "pca",
            OutputReducer::Tsne => "tsne",
            OutputReducer::Umap => "umap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "pca" => Ok(OutputReducer::Pca),
            "tsne" => Ok(OutputReducer::Tsne),
            "umap" => Ok(OutputReducer::Umap),
            other => Err(GraphDrError::Config(format!("unknown reducer {other:?}"))),
        }
    }
}

/// Declarative experiment description (TOML on disk; flags override).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset_name: String,
    pub content_path: PathBuf,
    pub cites_path: PathBuf,
    pub models: Vec<ModelKind>,
    pub input_modes: Vec<InputMode>,
    pub output_reducers: Vec<OutputReducer>,
    pub seeds: Vec<u64>,
    pub train_per_class: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub hidden_dim: usize,
    pub max_epochs: usize,
    pub cluster_on_predictions: bool,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.input_modes.is_empty() || self.seeds.is_empty() {
            return Err(GraphDrError::Config(
                "models, input_modes and seeds must be nonempty".into(),
            ));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(GraphDrError::Config("seeds must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: RawDataset,
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    train: RawTrain,
}

#[derive(Debug, Deserialize)]
struct RawDataset {
    name: String,
    content: String,
    cites: String,
    #[serde(default = "default_per_class")]
    train_per_class: usize,
    #[serde(default = "default_val")]
    val_count: usize,
    #[serde(default = "default_test")]
    test_count: usize,
}

fn default_per_class() -> usize {
    20
}
fn default_val() -> usize {
    500
}
fn default_test() -> usize {
    1000
}

#[derive(Debug, Deserialize, Default)]
struct RawExperiment {
    models: Option<Vec<String>>,
    input_modes: Option<Vec<String>>,
    output_reducers: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<String>,
    cluster_on_predictions: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
struct RawTrain {
    hidden_dim: Option<usize>,
    max_epochs: Option<usize>,
}

/// Parse a TOML config file. Relative data paths resolve against the config
/// file's directory; `GRAPHDR_OUT` overrides the output root when set.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| GraphDrError::Config(format!("{path:?}: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };

    let models = match &raw.experiment.models {
        Some(list) => list
            .iter()
            .map(|s| ModelKind::parse(s))
            .collect::<Result<Vec<_>>>()?,
        None => ModelKind::ALL.to_vec(),
    };
    let input_modes = match &raw.experiment.input_modes {
        Some(list) => list
            .iter()
            .map(|s| InputMode::parse(s))
            .collect::<Result<Vec<_>>>()?,
        None => vec![InputMode::Original, InputMode::Pca(100), InputMode::Ae(100)],
    };
    let output_reducers = match &raw.experiment.output_reducers {
        Some(list) => list
            .iter()
            .map(|s| OutputReducer::parse(s))
            .collect::<Result<Vec<_>>>()?,
        None => OutputReducer::ALL.to_vec(),
    };
    let output_dir = std::env::var("GRAPHDR_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|_| {
            resolve(
                raw.experiment
                    .output_dir
                    .as_deref()
                    .unwrap_or("results"),
            )
        });

    let cfg = ExperimentConfig {
        dataset_name: raw.dataset.name,
        content_path: resolve(&raw.dataset.content),
        cites_path: resolve(&raw.dataset.cites),
        models,
        input_modes,
        output_reducers,
        seeds: raw.experiment.seeds.unwrap_or_else(|| vec![1, 2, 3, 4, 5]),
        train_per_class: raw.dataset.train_per_class,
        val_count: raw.dataset.val_count,
        test_count: raw.dataset.test_count,
        hidden_dim: raw.train.hidden_dim.unwrap_or(16),
        max_epochs: raw.train.max_epochs.unwrap_or(200),
        cluster_on_predictions: raw.experiment.cluster_on_predictions.unwrap_or(false),
        output_dir,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// One (model, input-mode, seed) training outcome.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub model: ModelKind,
    pub mode: InputMode,
    pub seed: u64,
    pub report: ClassificationReport,
    pub param_count: usize,
    pub epochs_run: usize,
}

/// First-seed cluster scores for one (model, mode, reducer).
#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub model: ModelKind,
    pub mode: InputMode,
    pub reducer: OutputReducer,
    pub score: ClusterScore,
    pub embedding: DenseMatrix,
}

/// Full matrix outcome; per-cell failures are recorded, not fatal.
pub struct RunReport {
    pub dataset: String,
    pub class_names: Vec<String>,
    pub test_labels: Vec<usize>,
    pub test_node_ids: Vec<String>,
    pub cells: Vec<std::result::Result<CellResult, String>>,
    pub clusters: Vec<std::result::Result<ClusterResult, String>>,
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.is_ok()) && self.clusters.iter().all(|c| c.is_ok())
    }

    pub fn cell(&self, model: ModelKind, mode: InputMode, seed: u64) -> Option<&CellResult> {
        self.cells.iter().flatten().find(|c| {
            c.model == model && c.mode == mode && c.seed == seed
        })
    }

    pub fn mean_accuracy(&self, model: ModelKind, mode: InputMode) -> Option<f64> {
        let accs: Vec<f64> = self
            .cells
            .iter()
            .flatten()
            .filter(|c| c.model == model && c.mode == mode)
            .map(|c| c.report.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn cluster(
        &self,
        model: ModelKind,
        mode: InputMode,
        reducer: OutputReducer,
    ) -> Option<&ClusterResult> {
        self.clusters.iter().flatten().find(|c| {
            c.model == model && c.mode == mode && c.reducer == reducer
        })
    }
}

fn train_config_for(cfg: &ExperimentConfig, model: ModelKind, seed: u64) -> TrainConfig {
    let mut tc = TrainConfig::for_kind(model);
    tc.max_epochs = cfg.max_epochs;
    tc.seed = seed;
    tc
}

/// Autoencoder training setup used for AE-k feature preparation: plain style
/// SGD with momentum on reconstruction MSE, generous epoch budget.
fn ae_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1.0,
        weight_decay: 0.0,
        momentum: 0.9,
        dropout: 0.0,
        patience: 20,
        max_epochs: 300,
        seed,
    }
}

/// Build the feature matrix for one input mode. AE features depend on the
/// seed (the autoencoder is retrained per run); PCA and Original do not.
fn build_features(
    mode: InputMode,
    original: &DenseMatrix,
    pca_cache: &BTreeMap<usize, DenseMatrix>,
    split: &SplitMask,
    seed: u64,
) -> Result<DenseMatrix> {
    match mode {
        InputMode::Original => Ok(original.clone()),
        InputMode::Pca(k) => Ok(pca_cache
            .get(&k)
            .expect("PCA features precomputed for every configured k")
            .clone()),
        InputMode::Ae(k) => {
            let model = ae_train(original, k, split, &ae_train_config(seed))?;
            ae_encode(&model, original)
        }
    }
}

/// Run the full benchmark matrix described by the config.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut timings: Vec<(String, f64)> = Vec::new();

    let t0 = Instant::now();
    let ds = ingest_citation_files(&cfg.content_path, &cfg.cites_path)?;
    let split = make_split(&ds, cfg.train_per_class, cfg.val_count, cfg.test_count)?;
    let norm = normalize_adjacency(&ds.edges)?;
    let graph = GraphContext::new(&ds.edges, &norm);
    let original = ds.features_dense();
    timings.push(("ingest".into(), t0.elapsed().as_secs_f64()));

    // PCA is seed-independent: fit once per requested width
    let t0 = Instant::now();
    let mut pca_cache: BTreeMap<usize, DenseMatrix> = BTreeMap::new();
    for mode in &cfg.input_modes {
        if let InputMode::Pca(k) = mode {
            if !pca_cache.contains_key(k) {
                let model = pca_fit(&original, *k)?;
                pca_cache.insert(*k, pca_transform(&model, &original)?);
            }
        }
    }
    if !pca_cache.is_empty() {
        timings.push(("pca_fit".into(), t0.elapsed().as_secs_f64()));
    }

    // AE features per (k, seed); built serially up front, reused by cells
    let t0 = Instant::now();
    let mut ae_cache: BTreeMap<(usize, u64), DenseMatrix> = BTreeMap::new();
    for mode in &cfg.input_modes {
        if let InputMode::Ae(k) = *mode {
            for &seed in &cfg.seeds {
                let feats = build_features(InputMode::Ae(k), &original, &pca_cache, &split, seed)?;
                ae_cache.insert((k, seed), feats);
            }
        }
    }
    if !ae_cache.is_empty() {
        timings.push(("ae_fit".into(), t0.elapsed().as_secs_f64()));
    }

    let feature_for = |mode: InputMode, seed: u64| -> DenseMatrix {
        match mode {
            InputMode::Original => original.clone(),
            InputMode::Pca(k) => pca_cache[&k].clone(),
            InputMode::Ae(k) => ae_cache[&(k, seed)].clone(),
        }
    };

    // the cell grid, in deterministic order
    struct CellSpec {
        model: ModelKind,
        mode: InputMode,
        seed: u64,
    }
    let mut grid = Vec::new();
    for &model in &cfg.models {
        for &mode in &cfg.input_modes {
            for &seed in &cfg.seeds {
                grid.push(CellSpec { model, mode, seed });
            }
        }
    }

    let t0 = Instant::now();
    let first_seed = cfg.seeds[0];
    type CellOut = (
        std::result::Result<CellResult, String>,
        Option<DenseMatrix>, // first-seed test logits for a posteriori reduction
    );
    let outcomes: Vec<CellOut> = grid
        .par_iter()
        .map(|cell| {
            let feats = feature_for(cell.mode, cell.seed);
            let spec = ModelSpec::new(cell.model, feats.cols(), ds.num_classes())
                .with_hidden_dim(cfg.hidden_dim);
            let tc = train_config_for(cfg, cell.model, cell.seed);
            let outcome = (|| -> Result<(CellResult, Option<DenseMatrix>)> {
                let (params, history) = train(&spec, &feats, &graph, &ds.labels, &split, &tc)?;
                let mut eval_rng = Rng::new(tc.seed).split(2);
                let pass = forward(&spec, &params, &feats, &graph, false, &mut eval_rng)?;
                let logits = pass.tape.value(pass.logits);
                let report = classification_report(logits, &ds.labels, &split.test)?;
                let test_logits = (cell.seed == first_seed)
                    .then(|| logits.select_rows(&SplitMask::indices(&split.test)));
                Ok((
                    CellResult {
                        model: cell.model,
                        mode: cell.mode,
                        seed: cell.seed,
                        report,
                        param_count: count_parameters(&spec),
                        epochs_run: history.epochs(),
                    },
                    test_logits,
                ))
            })();
            match outcome {
                Ok((result, logits)) => (Ok(result), logits),
                Err(e) => (
                    Err(format!(
                        "{} {} seed {}: {e}",
                        cell.model.name(),
                        cell.mode.label(),
                        cell.seed
                    )),
                    None,
                ),
            }
        })
        .collect();
    timings.push(("train".into(), t0.elapsed().as_secs_f64()));

    let cells: Vec<std::result::Result<CellResult, String>> =
        outcomes.iter().map(|(c, _)| c.clone()).collect();

    // a posteriori reduction on first-seed test logits
    let t0 = Instant::now();
    let test_indices = SplitMask::indices(&split.test);
    let test_labels: Vec<usize> = test_indices.iter().map(|&i| ds.labels[i]).collect();

    struct EmbedJob {
        model: ModelKind,
        mode: InputMode,
        reducer: OutputReducer,
        logits: DenseMatrix,
    }
    let mut jobs = Vec::new();
    for (cell, (outcome, logits)) in grid.iter().zip(&outcomes) {
        if cell.seed != first_seed || outcome.is_err() {
            continue;
        }
        let Some(logits) = logits else { continue };
        for &reducer in &cfg.output_reducers {
            jobs.push(EmbedJob {
                model: cell.model,
                mode: cell.mode,
                reducer,
                logits: logits.clone(),
            });
        }
    }
    let cluster_labels: Vec<usize> = test_labels.clone();
    let clusters: Vec<std::result::Result<ClusterResult, String>> = jobs
        .par_iter()
        .map(|job| {
            let embed = || -> Result<DenseMatrix> {
                match job.reducer {
                    OutputReducer::Pca => {
                        let model = pca_fit(&job.logits, 2)?;
                        pca_transform(&model, &job.logits)
                    }
                    OutputReducer::Tsne => {
                        let tcfg = TsneConfig::default().with_seed(first_seed);
                        Ok(tsne_embed(&job.logits, &tcfg)?.embedding)
                    }
                    OutputReducer::Umap => {
                        let ucfg = UmapConfig::default().with_seed(first_seed);
                        umap_embed(&job.logits, &ucfg)
                    }
                }
            };
            let outcome = (|| -> Result<ClusterResult> {
                let embedding = embed()?;
                let labels: Vec<usize> = if cfg.cluster_on_predictions {
                    (0..job.logits.rows())
                        .map(|i| {
                            let row = job.logits.row(i);
                            row.iter()
                                .enumerate()
                                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                                .map(|(j, _)| j)
                                .expect("nonempty")
                        })
                        .collect()
                } else {
                    cluster_labels.clone()
                };
                let score = ClusterScore {
                    silhouette: silhouette(&embedding, &labels)?,
                    dunn: dunn_index(&embedding, &labels)?,
                    labeling: if cfg.cluster_on_predictions {
                        Labeling::PredictedLabels
                    } else {
                        Labeling::TrueLabels
                    },
                };
                Ok(ClusterResult {
                    model: job.model,
                    mode: job.mode,
                    reducer: job.reducer,
                    score,
                    embedding,
                })
            })();
            outcome.map_err(|e| {
                format!(
                    "{} {} {}: {e}",
                    job.model.name(),
                    job.mode.label(),
                    job.reducer.label()
                )
            })
        })
        .collect();
    timings.push(("reduce_and_score".into(), t0.elapsed().as_secs_f64()));

    Ok(RunReport {
        dataset: cfg.dataset_name.clone(),
        class_names: ds.class_names.clone(),
        test_labels,
        test_node_ids: test_indices
            .iter()
            .map(|&i| ds.node_ids[i].clone())
            .collect(),
        cells,
        clusters,
        timings,
    })
}

/// "mean (std)" with two decimals; single samples show an em dash for std.
pub fn format_mean_std(values: &[f64]) -> String {
    if values.is_empty() {
        return "- (-)".into();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return format!("{mean:.2} (\u{2014})");
    }
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (values.len() - 1) as f64;
    format!("{mean:.2} ({:.2})", var.sqrt())
}

fn mode_file_token(mode: InputMode) -> String {
    mode.label().to_ascii_lowercase().replace('-', "")
}

/// Write every artifact for a finished run. Everything except `timings.txt`
/// is a pure function of the config, so repeat runs are byte-identical.
pub fn write_report_files(cfg: &ExperimentConfig, report: &RunReport) -> Result<()> {
    let dir = cfg.output_dir.join(&report.dataset);
    std::fs::create_dir_all(&dir)?;

    // per-(model, mode) classification CSVs
    for &model in &cfg.models {
        for &mode in &cfg.input_modes {
            let rows: Vec<&CellResult> = report
                .cells
                .iter()
                .flatten()
                .filter(|c| c.model == model && c.mode == mode)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let mut csv = String::from(
                "dataset,model,input,seed,accuracy,precision,recall,f1,parameters,epochs\n",
            );
            for c in &rows {
                writeln!(
                    csv,
                    "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
                    report.dataset,
                    model.name(),
                    mode.label(),
                    c.seed,
                    c.report.accuracy,
                    c.report.precision,
                    c.report.recall,
                    c.report.f1,
                    c.param_count,
                    c.epochs_run
                )
                .expect("string write");
            }
            let agg = |f: fn(&CellResult) -> f64| -> String {
                format_mean_std(&rows.iter().map(|c| f(c)).collect::<Vec<_>>())
            };
            writeln!(
                csv,
                "{},{},{},mean(std),{},{},{},{},{},",
                report.dataset,
                model.name(),
                mode.label(),
                agg(|c| c.report.accuracy),
                agg(|c| c.report.precision),
                agg(|c| c.report.recall),
                agg(|c| c.report.f1),
                rows[0].param_count
            )
            .expect("string write");
            let name = format!(
                "{}_{}_classification.csv",
                model.name().to_ascii_lowercase(),
                mode_file_token(mode)
            );
            std::fs::write(dir.join(name), csv)?;
        }
    }

    // per-(model, mode) clustering CSVs + embeddings + SVGs
    for &model in &cfg.models {
        for &mode in &cfg.input_modes {
            let rows: Vec<&ClusterResult> = report
                .clusters
                .iter()
                .flatten()
                .filter(|c| c.model == model && c.mode == mode)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let mut csv =
                String::from("dataset,model,input,output,silhouette,dunn,labeling\n");
            for c in &rows {
                writeln!(
                    csv,
                    "{},{},{},{},{:.4},{:.4},{}",
                    report.dataset,
                    model.name(),
                    mode.label(),
                    c.reducer.label(),
                    c.score.silhouette,
                    c.score.dunn,
                    match c.score.labeling {
                        Labeling::TrueLabels => "true-labels",
                        Labeling::PredictedLabels => "predicted-labels",
                    }
                )
                .expect("string write");
            }
            let base = format!(
                "{}_{}",
                model.name().to_ascii_lowercase(),
                mode_file_token(mode)
            );
            std::fs::write(dir.join(format!("{base}_clustering.csv")), csv)?;

            for c in &rows {
                let svg =
                    render_scatter_svg(&c.embedding, &report.test_labels, &report.class_names)?;
                std::fs::write(
                    dir.join(format!("{base}_{}.svg", c.reducer.file_token())),
                    svg,
                )?;
                let mut tsv = String::new();
                for (i, id) in report.test_node_ids.iter().enumerate() {
                    writeln!(
                        tsv,
                        "{id}\t{:.6}\t{:.6}",
                        c.embedding.get(i, 0),
                        c.embedding.get(i, 1)
                    )
                    .expect("string write");
                }
                std::fs::write(
                    dir.join(format!("{base}_{}.tsv", c.reducer.file_token())),
                    tsv,
                )?;
            }
        }
    }

    std::fs::write(dir.join("summary.md"), summary_markdown(cfg, report))?;

    let mut timings = String::new();
    for (stage, secs) in &report.timings {
        writeln!(timings, "{stage}\t{secs:.3}s").expect("string write");
    }
    std::fs::write(dir.join("timings.txt"), timings)?;
    Ok(())
}

/// Aggregated Markdown tables: classification means, cluster scores, and
/// parameter counts.
pub fn summary_markdown(cfg: &ExperimentConfig, report: &RunReport) -> String {
    let mut md = String::new();
    writeln!(md, "# Results: {}\n", report.dataset).expect("string write");

    writeln!(md, "## Classification (test nodes)\n").expect("string write");
    writeln!(
        md,
        "| Model | Input | Accuracy | Precision | Recall | F1 |\n|---|---|---|---|---|---|"
    )
    .expect("string write");
    for &mode in &cfg.input_modes {
        for &model in &cfg.models {
            let rows: Vec<&CellResult> = report
                .cells
                .iter()
                .flatten()
                .filter(|c| c.model == model && c.mode == mode)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let agg = |f: fn(&CellResult) -> f64| -> String {
                format_mean_std(&rows.iter().map(|c| f(c)).collect::<Vec<_>>())
            };
            writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                model.name(),
                mode.label(),
                agg(|c| c.report.accuracy),
                agg(|c| c.report.precision),
                agg(|c| c.report.recall),
                agg(|c| c.report.f1)
            )
            .expect("string write");
        }
    }

    if report.clusters.iter().flatten().next().is_some() {
        writeln!(md, "\n## Clustering (first seed, test nodes)\n").expect("string write");
        writeln!(
            md,
            "| Model | Input | Output | Silhouette | Dunn |\n|---|---|---|---|---|"
        )
        .expect("string write");
        for &mode in &cfg.input_modes {
            for &model in &cfg.models {
                for c in report.clusters.iter().flatten() {
                    if c.model == model && c.mode == mode {
                        writeln!(
                            md,
                            "| {} | {} | {} | {:.3} | {:.3} |",
                            model.name(),
                            mode.label(),
                            c.reducer.label(),
                            c.score.silhouette,
                            c.score.dunn
                        )
                        .expect("string write");
                    }
                }
            }
        }
    }

    writeln!(md, "\n## Trainable parameters\n").expect("string write");
    writeln!(md, "| Model | Input | Parameters |\n|---|---|---|").expect("string write");
    let mut seen = std::collections::BTreeSet::new();
    for c in report.cells.iter().flatten() {
        let key = (c.model.name(), c.mode.label());
        if seen.insert(key) {
            writeln!(
                md,
                "| {} | {} | {} |",
                c.model.name(),
                c.mode.label(),
                c.param_count
            )
            .expect("string write");
        }
    }

    if !report.all_ok() {
        writeln!(md, "\n## Failures\n").expect("string write");
        for c in &report.cells {
            if let Err(e) = c {
                writeln!(md, "- {e}").expect("string write");
            }
        }
        for c in &report.clusters {
            if let Err(e) = c {
                writeln!(md, "- {e}").expect("string write");
            }
        }
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as IoWrite;

    fn toy_dataset(dir: &Path, n: usize, classes: usize) -> (PathBuf, PathBuf) {
        let content = dir.join("toy.content");
        let cites = dir.join("toy.cites");
        let mut rng = Rng::new(4242);
        let d = 12;
        let mut f = std::fs::File::create(&content).unwrap();
        for i in 0..n {
            let class = i % classes;
            let flags: Vec<String> = (0..d)
                .map(|j| {
                    let on = j % classes == class || rng.bernoulli(0.1);
                    if on { "1".into() } else { "0".into() }
                })
                .collect();
            writeln!(f, "n{i}\t{}\tc{class}", flags.join("\t")).unwrap();
        }
        let mut f = std::fs::File::create(&cites).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                if i % classes == j % classes && rng.bernoulli(0.2) {
                    writeln!(f, "n{i}\tn{j}").unwrap();
                }
            }
        }
        (content, cites)
    }

    fn small_config(dir: &Path, seeds: Vec<u64>) -> ExperimentConfig {
        let (content, cites) = toy_dataset(dir, 60, 3);
        ExperimentConfig {
            dataset_name: "toy".into(),
            content_path: content,
            cites_path: cites,
            models: vec![ModelKind::Gcn],
            input_modes: vec![InputMode::Original],
            output_reducers: vec![OutputReducer::Pca],
            seeds,
            train_per_class: 3,
            val_count: 15,
            test_count: 20,
            hidden_dim: 8,
            max_epochs: 30,
            cluster_on_predictions: false,
            output_dir: dir.join("results"),
        }
    }

    #[test]
    fn counting_contract_two_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), vec![1, 2]);
        let report = run_matrix(&cfg).unwrap();
        assert!(report.all_ok());
        assert_eq!(report.cells.len(), 2);
        // one cluster row per reducer for the first seed only
        assert_eq!(report.clusters.len(), 1);
        let accs: Vec<f64> = report
            .cells
            .iter()
            .flatten()
            .map(|c| c.report.accuracy)
            .collect();
        assert_eq!(accs.len(), 2);
        let formatted = format_mean_std(&accs);
        assert!(formatted.contains('('), "mean/std computed: {formatted}");
    }

    #[test]
    fn every_cell_traces_to_its_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), vec![7, 8, 9]);
        let report = run_matrix(&cfg).unwrap();
        for &seed in &cfg.seeds {
            assert!(report
                .cell(ModelKind::Gcn, InputMode::Original, seed)
                .is_some());
        }
        assert_eq!(report.cells.len(), cfg.seeds.len());
    }

    #[test]
    fn format_mean_std_examples() {
        assert_eq!(format_mean_std(&[80.0, 81.0, 82.0]), "81.00 (1.00)");
        assert_eq!(format_mean_std(&[80.0]), "80.00 (\u{2014})");
        // five synthetic seeds against a hand computation
        let vals = [78.2, 79.1, 80.4, 77.9, 81.0];
        let mean = vals.iter().sum::<f64>() / 5.0;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0).sqrt();
        let expect = format!("{mean:.2} ({std:.2})");
        assert_eq!(format_mean_std(&vals), expect);
    }

    #[test]
    fn written_outputs_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), vec![1, 2]);

        cfg.output_dir = dir.path().join("run1");
        let r1 = run_matrix(&cfg).unwrap();
        write_report_files(&cfg, &r1).unwrap();

        cfg.output_dir = dir.path().join("run2");
        let r2 = run_matrix(&cfg).unwrap();
        write_report_files(&cfg, &r2).unwrap();

        for name in [
            "toy/gcn_original_classification.csv",
            "toy/gcn_original_clustering.csv",
            "toy/gcn_original_pca.svg",
            "toy/summary.md",
        ] {
            let a = std::fs::read(dir.path().join("run1").join(name)).unwrap();
            let b = std::fs::read(dir.path().join("run2").join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} differs between runs");
        }
    }

    #[test]
    fn config_round_trip_with_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let (content, cites) = toy_dataset(dir.path(), 30, 2);
        let cfg_path = dir.path().join("exp.toml");
        std::fs::write(
            &cfg_path,
            format!(
                r#"
[dataset]
name = "toy"
content = {content:?}
cites = {cites:?}
train_per_class = 2
val_count = 6
test_count = 8

[experiment]
models = ["gcn", "mlp"]
input_modes = ["original", "pca-5"]
output_reducers = ["pca"]
seeds = [3, 4]

[train]
hidden_dim = 8
max_epochs = 20
"#
            ),
        )
        .unwrap();
        let cfg = load_config(&cfg_path).unwrap();
        assert_eq!(cfg.models, vec![ModelKind::Gcn, ModelKind::Mlp]);
        assert_eq!(
            cfg.input_modes,
            vec![InputMode::Original, InputMode::Pca(5)]
        );
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.hidden_dim, 8);
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), vec![1, 1]);
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn input_mode_parsing() {
        assert_eq!(InputMode::parse("original").unwrap(), InputMode::Original);
        assert_eq!(InputMode::parse("PCA-100").unwrap(), InputMode::Pca(100));
        assert_eq!(InputMode::parse("ae-64").unwrap(), InputMode::Ae(64));
        assert!(InputMode::parse("isomap-2").is_err());
    }
}

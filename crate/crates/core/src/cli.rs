//! The `oncode` command line: one TOML run config, flags override its keys.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph_data::{experiment_groups, DataPaths, Dataset};
use crate::hetero_encoder::VgaeModel;
use crate::model::{
    classifier_cross_entropy, classifier_scores, evaluate_dynamics, load_checkpoint,
    prepare_samples, save_checkpoint, train_classifier, train_dynamics, Checkpoint, CheckpointKind,
    CheckpointMeta, DynamicsEvaluation, FoldRef, Model, ModelConfig, Sample, TrainConfig,
    Vocabulary, BLOB_FILE,
};
use crate::numkit::ParamSet;
use crate::response::{classification_metrics, grouped_kfold, MetricsReport};
use crate::synth::{export_cohort, generate_cohort, SynthConfig};
use crate::tgi::{fits_to_csv, tgi_evaluate};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSS_FILE: &str = "loss_curve.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const TGI_FITS_FILE: &str = "tgi_fits.csv";

/// An observation window in days, or the whole series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window(pub Option<f64>);

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "full" {
            return Ok(Window(None));
        }
        match s.parse::<f64>() {
            Ok(d) if d >= 0.0 && d.is_finite() => Ok(Window(Some(d))),
            _ => Err(format!(
                "window must be `full` or a nonnegative number of days, got `{s}`"
            )),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(d) => write!(f, "{d}"),
            None => f.write_str("full"),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(d) => s.serialize_f64(d),
            None => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Days(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Days(x) => Window::from_str(&x.to_string()),
            Raw::Word(w) => Window::from_str(&w),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the standard file names; single paths override it.
    pub dir: Option<PathBuf>,
    pub gene_gene: Option<PathBuf>,
    pub drug_gene: Option<PathBuf>,
    pub disease_gene: Option<PathBuf>,
    pub expression: Option<PathBuf>,
    pub volumes: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub tissue: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            gene_gene: None,
            drug_gene: None,
            disease_gene: None,
            expression: None,
            volumes: None,
            models: None,
            tissue: "synthetic".into(),
        }
    }
}

impl DataConfig {
    fn paths(&self) -> Result<DataPaths> {
        let base = self.dir.as_deref().map(DataPaths::in_dir);
        let pick = |own: &Option<PathBuf>, from_dir: Option<&PathBuf>, what: &str| {
            own.clone().or_else(|| from_dir.cloned()).ok_or_else(|| {
                Error::Invalid(format!("no {what} file: pass --data or set data.dir"))
            })
        };
        Ok(DataPaths {
            gene_gene: pick(
                &self.gene_gene,
                base.as_ref().map(|b| &b.gene_gene),
                "gene-gene",
            )?,
            drug_gene: pick(
                &self.drug_gene,
                base.as_ref().map(|b| &b.drug_gene),
                "drug-gene",
            )?,
            disease_gene: pick(
                &self.disease_gene,
                base.as_ref().map(|b| &b.disease_gene),
                "disease-gene",
            )?,
            expression: pick(
                &self.expression,
                base.as_ref().map(|b| &b.expression),
                "expression",
            )?,
            volumes: pick(&self.volumes, base.as_ref().map(|b| &b.volumes), "volume")?,
            models: pick(&self.models, base.as_ref().map(|b| &b.models), "model")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            learning_rate: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    /// Held-out fold; the others train.
    pub fold: usize,
    /// Train on every experiment, leaving no test fold.
    pub train_on_all: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            fold: 0,
            train_on_all: false,
        }
    }
}

impl CvConfig {
    fn fold_ref(&self) -> Result<Option<FoldRef>> {
        if self.train_on_all {
            return Ok(None);
        }
        if self.folds < 2 || self.fold >= self.folds {
            return Err(Error::Config(format!(
                "fold {} is not one of {} folds",
                self.fold, self.folds
            )));
        }
        Ok(Some(FoldRef {
            folds: self.folds,
            fold: self.fold,
        }))
    }
}

fn default_windows() -> Vec<Window> {
    [7.0, 14.0, 21.0, 28.0].map(|d| Window(Some(d))).to_vec()
}

fn classifier_defaults() -> TrainConfig {
    TrainConfig {
        epochs: 50,
        learning_rate: 0.005,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    /// Schedule of the dynamics head.
    pub train: TrainConfig,
    /// Schedule of the responder classifier head.
    pub classifier: TrainConfig,
    pub pretrain: PretrainConfig,
    pub cv: CvConfig,
    pub use_pretraining: bool,
    /// Pretraining run directory (or its checkpoint directory).
    pub pretrained: Option<PathBuf>,
    pub eval_windows: Vec<Window>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: None,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            classifier: classifier_defaults(),
            pretrain: PretrainConfig::default(),
            cv: CvConfig::default(),
            use_pretraining: false,
            pretrained: None,
            eval_windows: default_windows(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Invalid("a seed is required: pass --seed or set `seed`".into()))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| {
            Error::Invalid("an output directory is required: pass --out or set `out`".into())
        })
    }

    /// SHA-256 of the effective config, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Head {
    Dynamics,
    Classifier,
}

/// Which experiments a command looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Test,
    Train,
    All,
}

#[derive(Debug, Parser)]
#[command(
    name = "oncode",
    version,
    about = "Graph-conditioned neural ODEs for tumor-volume dynamics"
)]
pub struct Cli {
    /// TOML run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cohort directory with the standard file names.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort.
    Simulate {
        #[arg(long)]
        signal: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        experiments: Option<usize>,
    },
    /// VGAE pretraining of the gene trunk on training-fold tumors.
    Pretrain {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Train a head on the training folds.
    Train {
        #[arg(long, value_enum, default_value = "dynamics")]
        head: Head,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        fold: Option<usize>,
        /// Condition on the volume window alone.
        #[arg(long)]
        no_graph_encoder: bool,
        /// Start the gene trunk from this pretraining run.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Write predictions of a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "full")]
        window: Window,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Score checkpoints (one per fold) on their held-out experiments.
    Evaluate {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Replaces `eval_windows`; repeatable.
        #[arg(long)]
        window: Vec<Window>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Fit the TGI baseline to every experiment.
    FitTgi {
        #[arg(long, default_value = "full")]
        window: Window,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.out.is_some() {
        config.out = cli.out.clone();
    }
    if let Some(d) = &cli.data {
        config.data.dir = Some(d.clone());
    }
    match cli.command {
        Command::Simulate {
            signal,
            noise,
            experiments,
        } => {
            if let Some(s) = signal {
                config.synth.signal = s;
            }
            if let Some(n) = noise {
                config.synth.noise = n;
            }
            if let Some(e) = experiments {
                config.synth.experiments = e;
            }
            cmd_simulate(&config)
        }
        Command::Pretrain { epochs, fold } => {
            if let Some(e) = epochs {
                config.pretrain.epochs = e;
            }
            if let Some(f) = fold {
                config.cv.fold = f;
            }
            cmd_pretrain(&config)
        }
        Command::Train {
            head,
            epochs,
            fold,
            no_graph_encoder,
            pretrained,
        } => {
            let schedule = match head {
                Head::Dynamics => &mut config.train,
                Head::Classifier => &mut config.classifier,
            };
            if let Some(e) = epochs {
                schedule.epochs = e;
            }
            if let Some(f) = fold {
                config.cv.fold = f;
            }
            if no_graph_encoder {
                config.model.use_graph_encoder = false;
            }
            if pretrained.is_some() {
                config.pretrained = pretrained;
                config.use_pretraining = true;
            }
            cmd_train(&config, head)
        }
        Command::Predict {
            checkpoint,
            window,
            split,
        } => cmd_predict(&config, &checkpoint, window, split),
        Command::Evaluate {
            checkpoint,
            window,
            split,
        } => {
            if !window.is_empty() {
                config.eval_windows = window;
            }
            cmd_evaluate(&config, &checkpoint, split)
        }
        Command::FitTgi { window } => cmd_fit_tgi(&config, window),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    write(path, &text)
}

fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

fn provenance(config: &RunConfig, seed: u64, extra: Value) -> Value {
    let mut p = json!({
        "config_hash": config.hash(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(map), Value::Object(more)) = (&mut p, extra) {
        map.extend(more);
    }
    p
}

/// Model settings for reports; encoder fields appear only when the encoder is used.
fn model_summary(model: &ModelConfig, pretrained: Option<&str>) -> Value {
    let mut v = json!({
        "use_graph_encoder": model.use_graph_encoder,
        "volume": model.volume,
        "node": model.node,
    });
    if model.use_graph_encoder {
        v["encoder"] = json!(model.encoder);
        v["pretrained_trunk"] = json!(pretrained);
    }
    v
}

fn load_data(config: &RunConfig) -> Result<Dataset> {
    Dataset::load(&config.data.paths()?, &config.data.tissue)
}

/// Experiment indices of `split` under `fold` (seeded like the training run).
fn split_indices(
    dataset: &Dataset,
    fold: Option<FoldRef>,
    seed: u64,
    split: Split,
) -> Result<Vec<usize>> {
    let all = || (0..dataset.experiments.len()).collect();
    match (fold, split) {
        (_, Split::All) | (None, Split::Train) => Ok(all()),
        (None, Split::Test) => Err(Error::Invalid(
            "the checkpoint was trained on every experiment; there is no test fold".into(),
        )),
        (Some(f), s) => {
            let folds = grouped_kfold(&experiment_groups(&dataset.experiments), f.folds, seed)?;
            Ok(if s == Split::Test {
                folds.test_indices(f.fold)
            } else {
                folds.train_indices(f.fold)
            })
        }
    }
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.join(BLOB_FILE).exists() {
        path.to_path_buf()
    } else {
        path.join(CHECKPOINT_DIR)
    }
}

fn checkpoint_digest(dir: &Path) -> Result<String> {
    let p = dir.join(BLOB_FILE);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let synth = SynthConfig {
        seed: config.seed()?,
        ..config.synth.clone()
    };
    let out = config.out()?;
    export_cohort(&generate_cohort(&synth)?, out)?;
    Ok(())
}

pub fn cmd_pretrain(config: &RunConfig) -> Result<()> {
    let seed = config.seed()?;
    let out = config.out()?;
    let data = load_data(config)?;
    let fold = config.cv.fold_ref()?;
    let model = Model::new(config.model.clone(), &data)?;
    let vgae = VgaeModel::new(model.encoder().clone(), &data.gene_graph)?;
    let mut params = ParamSet::new();
    vgae.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
    let train = split_indices(&data, fold, seed, Split::Train)?;
    let mut tumors: Vec<&str> = train
        .iter()
        .map(|&i| data.experiments[i].model_id.as_str())
        .collect();
    tumors.sort_unstable();
    tumors.dedup();
    let features = tumors
        .iter()
        .map(|m| {
            data.expression
                .model_index(m)
                .map(|i| data.expression.row(i).to_vec())
                .ok_or_else(|| Error::Data(format!("no expression profile for model {m}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = crate::hetero_encoder::pretrain_vgae(
        &vgae,
        &params,
        &features,
        config.pretrain.epochs,
        config.pretrain.learning_rate,
        seed,
    )?;
    let meta = CheckpointMeta {
        kind: CheckpointKind::Pretrain,
        model: config.model.clone(),
        vocabulary: Vocabulary::of(&data.knowledge()),
        seed,
        fold,
    };
    let dir = out.join(CHECKPOINT_DIR);
    save_checkpoint(
        &Checkpoint {
            meta,
            params: outcome.params,
        },
        &dir,
    )?;
    write(&out.join(LOSS_FILE), &loss_csv(&outcome.losses))?;
    write_json(
        &out.join(REPORT_FILE),
        &json!({
            "command": "pretrain",
            "provenance": provenance(config, seed, json!({ "checkpoint_sha256": checkpoint_digest(&dir)? })),
            "fold": fold,
            "tumors": tumors.len(),
            "epochs": config.pretrain.epochs,
            "initial_loss": outcome.losses.first(),
            "final_loss": outcome.losses.last(),
        }),
    )
}

fn load_pretrained(
    config: &RunConfig,
    data: &Dataset,
    fold: Option<FoldRef>,
) -> Result<Option<(ParamSet, String)>> {
    if !config.use_pretraining {
        return Ok(None);
    }
    if !config.model.use_graph_encoder {
        return Err(Error::Config(
            "use_pretraining needs use_graph_encoder = true".into(),
        ));
    }
    let path = config.pretrained.as_deref().ok_or_else(|| {
        Error::Invalid("use_pretraining is set but no pretrained checkpoint was given".into())
    })?;
    let dir = checkpoint_dir(path);
    let ck = load_checkpoint(&dir)?;
    if ck.meta.kind != CheckpointKind::Pretrain {
        return Err(Error::Checkpoint(format!(
            "{} is not a pretraining checkpoint",
            dir.display()
        )));
    }
    if ck.meta.vocabulary != Vocabulary::of(&data.knowledge()) {
        return Err(Error::Checkpoint(
            "pretraining checkpoint was built for another cohort".into(),
        ));
    }
    if ck.meta.fold != fold || (fold.is_some() && ck.meta.seed != config.seed()?) {
        return Err(Error::Checkpoint(
            "pretraining checkpoint used a different split; its tumors could overlap the test fold"
                .into(),
        ));
    }
    Ok(Some((ck.params, checkpoint_digest(&dir)?)))
}

pub fn cmd_train(config: &RunConfig, head: Head) -> Result<()> {
    let seed = config.seed()?;
    let out = config.out()?;
    let data = load_data(config)?;
    let fold = config.cv.fold_ref()?;
    let model = Model::new(config.model.clone(), &data)?;
    let pretrained = load_pretrained(config, &data, fold)?;
    let train = prepare_samples(&data, &split_indices(&data, fold, seed, Split::Train)?)?;
    let (kind, schedule, outcome) = match head {
        Head::Dynamics => {
            let mut p0 = model.init_dynamics(seed);
            if let Some((p, _)) = &pretrained {
                model.load_trunk(&mut p0, p)?;
            }
            (
                CheckpointKind::Dynamics,
                &config.train,
                train_dynamics(&model, &p0, &train, &config.train, seed)?,
            )
        }
        Head::Classifier => {
            let mut p0 = model.init_classifier(seed)?;
            if let Some((p, _)) = &pretrained {
                model.load_trunk(&mut p0, p)?;
            }
            let o = train_classifier(&model, &p0, &train, &config.classifier, seed)?;
            (CheckpointKind::Classifier, &config.classifier, o)
        }
    };
    let dir = out.join(CHECKPOINT_DIR);
    let meta = CheckpointMeta {
        kind,
        model: config.model.clone(),
        vocabulary: model.vocabulary.clone(),
        seed,
        fold,
    };
    save_checkpoint(
        &Checkpoint {
            meta,
            params: outcome.params,
        },
        &dir,
    )?;
    write(&out.join(LOSS_FILE), &loss_csv(&outcome.losses))?;
    let digest = pretrained.as_ref().map(|(_, d)| d.as_str());
    write_json(
        &out.join(REPORT_FILE),
        &json!({
            "command": "train",
            "head": kind,
            "provenance": provenance(config, seed, json!({
                "checkpoint_sha256": checkpoint_digest(&dir)?,
                "model": model_summary(&config.model, digest),
            })),
            "fold": fold,
            "train_experiments": train.len(),
            "schedule": schedule,
            "initial_loss": outcome.losses.first(),
            "final_loss": outcome.losses.last(),
        }),
    )
}

struct Loaded {
    dir: PathBuf,
    checkpoint: Checkpoint,
    model: Model,
}

fn load_for_data(path: &Path, data: &Dataset) -> Result<Loaded> {
    let dir = checkpoint_dir(path);
    let checkpoint = load_checkpoint(&dir)?;
    if checkpoint.meta.kind == CheckpointKind::Pretrain {
        return Err(Error::Checkpoint(format!(
            "{} holds pretraining weights, not a trained head",
            dir.display()
        )));
    }
    let model = Model::for_checkpoint(&checkpoint.meta, data)?;
    match checkpoint.meta.kind {
        CheckpointKind::Classifier => model.check_classifier(&checkpoint.params)?,
        _ => model.check_dynamics(&checkpoint.params)?,
    }
    Ok(Loaded {
        dir,
        checkpoint,
        model,
    })
}

fn file_stem(key: &crate::graph_data::ExperimentKey) -> String {
    format!("{}__{}", key.model_id, key.treatment)
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_+.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn window_dir(w: Window) -> String {
    match w.0 {
        Some(d) => format!("w{d}"),
        None => "full".into(),
    }
}

fn samples_for(loaded: &Loaded, data: &Dataset, split: Split) -> Result<Vec<Sample>> {
    let meta = &loaded.checkpoint.meta;
    prepare_samples(data, &split_indices(data, meta.fold, meta.seed, split)?)
}

pub fn cmd_predict(
    config: &RunConfig,
    checkpoint: &Path,
    window: Window,
    split: Split,
) -> Result<()> {
    let out = config.out()?;
    let data = load_data(config)?;
    let loaded = load_for_data(checkpoint, &data)?;
    let samples = samples_for(&loaded, &data, split)?;
    let params = &loaded.checkpoint.params;
    let seed = loaded.checkpoint.meta.seed;
    let mut csv = String::new();
    match loaded.checkpoint.meta.kind {
        CheckpointKind::Classifier => {
            csv.push_str("model_id,treatment,probability\n");
            let (_, probs) = classifier_scores(&loaded.model, params, &samples)?;
            for (s, p) in samples.iter().zip(probs) {
                csv.push_str(&format!(
                    "{},{},{p}\n",
                    s.instance.key.model_id, s.instance.key.treatment
                ));
            }
        }
        _ => {
            csv.push_str("model_id,treatment,predicted_best_response,predicted_category\n");
            let ev = evaluate_dynamics(&loaded.model, params, &samples, window.0)?;
            for p in &ev.predictions {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    p.key.model_id,
                    p.key.treatment,
                    p.predicted_best_response,
                    p.predicted_category
                ));
                let path = out
                    .join(TRAJECTORY_DIR)
                    .join(window_dir(window))
                    .join(format!("{}.csv", file_stem(&p.key)));
                write(&path, &p.trajectory_csv())?;
            }
        }
    }
    write(&out.join(PREDICTIONS_FILE), &csv)?;
    write_json(
        &out.join(REPORT_FILE),
        &json!({
            "command": "predict",
            "provenance": provenance(config, seed, json!({
                "checkpoint_sha256": checkpoint_digest(&loaded.dir)?,
                "model": model_summary(&loaded.checkpoint.meta.model, None),
            })),
            "split": split,
            "window": window,
            "experiments": samples.len(),
        }),
    )
}

fn tgi_json(ev: &DynamicsEvaluation) -> Value {
    json!(ev
        .tgi_regression
        .map(|r| json!({ "r2": r.r2, "spearman": r.spearman })))
}

pub fn cmd_evaluate(config: &RunConfig, checkpoints: &[PathBuf], split: Split) -> Result<()> {
    let out = config.out()?;
    let data = load_data(config)?;
    let loaded = checkpoints
        .iter()
        .map(|c| load_for_data(c, &data))
        .collect::<Result<Vec<_>>>()?;
    let kind = loaded[0].checkpoint.meta.kind;
    let seed = loaded[0].checkpoint.meta.seed;
    if loaded.iter().any(|l| l.checkpoint.meta.kind != kind) {
        return Err(Error::Invalid(
            "checkpoints mix dynamics and classifier heads".into(),
        ));
    }
    let digests = loaded
        .iter()
        .map(|l| checkpoint_digest(&l.dir))
        .collect::<Result<Vec<_>>>()?;
    let mut folds = Vec::new();
    let mut experiments = Vec::new();
    let mut csv = format!("fold,window,{}\n", MetricsReport::CSV_HEADER);
    let fold_label = |l: &Loaded| {
        l.checkpoint
            .meta
            .fold
            .map(|f| f.fold.to_string())
            .unwrap_or_else(|| "all".into())
    };
    let pooled = if kind == CheckpointKind::Classifier {
        let (mut labels, mut probs) = (Vec::new(), Vec::new());
        for l in &loaded {
            let samples = samples_for(l, &data, split)?;
            let (y, p) = classifier_scores(&l.model, &l.checkpoint.params, &samples)?;
            let cls = classification_metrics(&y, &p, 0.5)?;
            let report = MetricsReport::from_parts(None, Some(cls), &[]);
            csv.push_str(&format!("{},,{}\n", fold_label(l), report.csv_row()));
            folds.push(json!({
                "fold": l.checkpoint.meta.fold.map(|f| f.fold),
                "experiments": samples.len(),
                "metrics": report,
                "cross_entropy": classifier_cross_entropy(&l.model, &l.checkpoint.params, &samples)?,
            }));
            for ((s, yi), pi) in samples.iter().zip(&y).zip(&p) {
                experiments
                    .push(json!({ "key": s.instance.key, "responder": yi, "probability": pi }));
            }
            labels.extend(y);
            probs.extend(p);
        }
        let report = MetricsReport::from_parts(
            None,
            Some(classification_metrics(&labels, &probs, 0.5)?),
            &[],
        );
        csv.push_str(&format!("pooled,,{}\n", report.csv_row()));
        json!({ "metrics": report })
    } else {
        let mut pooled_predictions: Vec<Vec<_>> = vec![Vec::new(); config.eval_windows.len()];
        for l in &loaded {
            let samples = samples_for(l, &data, split)?;
            let mut per_window = Vec::new();
            for (wi, &w) in config.eval_windows.iter().enumerate() {
                let ev = evaluate_dynamics(&l.model, &l.checkpoint.params, &samples, w.0)?;
                csv.push_str(&format!("{},{w},{}\n", fold_label(l), ev.report.csv_row()));
                per_window.push(json!({ "window": w, "metrics": ev.report, "tgi": tgi_json(&ev) }));
                for p in &ev.predictions {
                    let rel = Path::new(TRAJECTORY_DIR)
                        .join(window_dir(w))
                        .join(format!("{}.csv", file_stem(&p.key)));
                    write(&out.join(&rel), &p.trajectory_csv())?;
                    let mut e = json!(p);
                    e["fold"] = json!(l.checkpoint.meta.fold.map(|f| f.fold));
                    e["window"] = json!(w);
                    e["trajectory_csv"] = json!(rel.to_string_lossy());
                    experiments.push(e);
                }
                pooled_predictions[wi].extend(ev.predictions);
            }
            folds.push(json!({
                "fold": l.checkpoint.meta.fold.map(|f| f.fold),
                "experiments": samples.len(),
                "windows": per_window,
            }));
        }
        let mut pooled = Vec::new();
        for (w, preds) in config.eval_windows.iter().zip(pooled_predictions) {
            let ev = DynamicsEvaluation::from_predictions(w.0, preds)?;
            csv.push_str(&format!("pooled,{w},{}\n", ev.report.csv_row()));
            pooled.push(json!({ "window": w, "metrics": ev.report, "tgi": tgi_json(&ev) }));
        }
        json!(pooled)
    };
    write(&out.join(METRICS_FILE), &csv)?;
    write_json(
        &out.join(REPORT_FILE),
        &json!({
            "command": "evaluate",
            "head": kind,
            "provenance": provenance(config, seed, json!({
                "checkpoints_sha256": digests,
                "model": model_summary(&loaded[0].checkpoint.meta.model, None),
            })),
            "split": split,
            "folds": folds,
            "pooled": pooled,
            "experiments": experiments,
        }),
    )
}

pub fn cmd_fit_tgi(config: &RunConfig, window: Window) -> Result<()> {
    let seed = config.seed()?;
    let out = config.out()?;
    let data = load_data(config)?;
    let cohort: Vec<_> = data
        .experiments
        .iter()
        .map(|e| (e.key(), e.volumes.clone()))
        .collect();
    let ev = tgi_evaluate(&cohort, window.0);
    for (key, why) in &ev.skipped {
        eprintln!("warning: skipped {key}: {why}");
    }
    write(&out.join(TGI_FITS_FILE), &fits_to_csv(&ev.predictions))?;
    let skipped: Vec<Value> = ev
        .skipped
        .iter()
        .map(|(k, why)| json!({ "key": k, "reason": why }))
        .collect();
    write_json(
        &out.join(REPORT_FILE),
        &json!({
            "command": "fit-tgi",
            "provenance": provenance(config, seed, json!({})),
            "window": window,
            "fitted": ev.predictions.len(),
            "skipped": skipped,
            "metrics": ev.metrics.map(|m| json!({ "r2": m.r2, "spearman": m.spearman })),
        }),
    )
}

//! Experiment driver: configuration loading, the partition / train /
//! unlearn / recover / eval / report commands, and exit-code mapping.
//!
//! Every command reads one flat JSON config (see [`RunConfig`] for the
//! keys and defaults), derives all randomness from the master seed, and
//! writes its outputs plus a `manifest.json` capturing the resolved
//! configuration into the chosen output directory. With `record_timing`
//! off, repeated executions of the same config produce byte-identical
//! files.

use serde::{Deserialize, Serialize};
use sfu_core::data::{
    self, load_mnist, partition_dirichlet, partition_iid, Dataset, Partition, TriggerSpec,
};
use sfu_core::error::Error as CoreError;
use sfu_core::eval::{self, MetricsRow, Phase, SummaryEntry};
use sfu_core::fl::{self, FlConfig, UpdateHistory};
use sfu_core::nn::{load_checkpoint, save_checkpoint, ModelParams};
use sfu_core::seed;
use sfu_core::unlearn::{self, Method, UnlearnConfig};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Exit codes: 0 ok, 2 config error, 3 data/format error,
/// 4 missing prerequisite.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    MissingPrerequisite(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::MissingPrerequisite(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Format(_) | CoreError::Io(_) => CliError::Data(e.to_string()),
            CoreError::MissingPrerequisite(_) => CliError::MissingPrerequisite(e.to_string()),
            CoreError::InvalidInput(_) | CoreError::DegenerateInput(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn d_n_clients() -> usize {
    10
}
fn d_participation() -> f64 {
    1.0
}
fn d_partition() -> String {
    "iid".into()
}
fn d_beta() -> f64 {
    0.3
}
fn d_trigger_row() -> usize {
    26
}
fn d_trigger_size() -> usize {
    2
}
fn d_trigger_value() -> f64 {
    1.0
}
fn d_trigger_label() -> u8 {
    9
}
fn d_poison_fraction() -> f64 {
    0.5
}
fn d_rounds() -> usize {
    100
}
fn d_local_epochs() -> usize {
    1
}
fn d_batch_size() -> usize {
    64
}
fn d_lr() -> f64 {
    0.01
}
fn d_method() -> String {
    "sfu".into()
}
fn d_epsilon() -> f64 {
    1.0
}
fn d_clip_norm() -> f64 {
    0.2
}
fn d_ascent_clip() -> f64 {
    30.0
}
fn d_p_samples() -> usize {
    10
}
fn d_recovery_rounds() -> usize {
    10
}
fn d_seed() -> u64 {
    42
}
fn d_true() -> bool {
    true
}
fn d_dataset_name() -> String {
    "mnist".into()
}

/// Flat experiment configuration; one JSON document, every key optional
/// except the four dataset paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Dataset (IDX files) and a label for reports.
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default = "d_dataset_name")]
    pub dataset_name: String,

    // Federation topology.
    #[serde(default = "d_n_clients")]
    pub n_clients: usize,
    #[serde(default = "d_participation")]
    pub participation_fraction: f64,
    /// "iid" or "dirichlet".
    #[serde(default = "d_partition")]
    pub partition: String,
    #[serde(default = "d_beta")]
    pub dirichlet_beta: f64,
    /// The client whose contribution is later removed.
    #[serde(default)]
    pub target_client: usize,

    // Backdoor trigger stamped on the target client's data.
    #[serde(default = "d_trigger_row")]
    pub trigger_row: usize,
    #[serde(default = "d_trigger_row")]
    pub trigger_col: usize,
    #[serde(default = "d_trigger_size")]
    pub trigger_size: usize,
    #[serde(default = "d_trigger_value")]
    pub trigger_value: f64,
    #[serde(default = "d_trigger_label")]
    pub trigger_label: u8,
    #[serde(default = "d_poison_fraction")]
    pub poison_fraction: f64,

    // Federated training.
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default = "d_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub keep_history: bool,
    #[serde(default = "d_true")]
    pub parallel: bool,

    // Removal method and its knobs.
    #[serde(default = "d_method")]
    pub method: String,
    #[serde(default = "d_lr")]
    pub ascent_lr: f64,
    #[serde(default = "d_local_epochs")]
    pub ascent_epochs: usize,
    #[serde(default = "d_batch_size")]
    pub ascent_batch: usize,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_overrides: Option<Vec<f64>>,
    #[serde(default = "d_ascent_clip")]
    pub ascent_clip: f64,
    #[serde(default = "d_clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub delta_budget: Option<f64>,
    #[serde(default = "d_p_samples")]
    pub p_samples: usize,

    #[serde(default = "d_recovery_rounds")]
    pub recovery_rounds: usize,

    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Record wall-clock seconds into metrics rows. Disable to make
    /// repeated runs byte-identical.
    #[serde(default = "d_true")]
    pub record_timing: bool,
    /// Log the clients' private scaling factors into the unlearn manifest.
    #[serde(default)]
    pub log_lambdas: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.partition != "iid" && self.partition != "dirichlet" {
            return Err(CliError::Config(format!(
                "partition must be \"iid\" or \"dirichlet\", got {:?}",
                self.partition
            )));
        }
        if self.partition == "dirichlet" && !(self.dirichlet_beta > 0.0) {
            return Err(CliError::Config(format!(
                "dirichlet_beta must be positive, got {}",
                self.dirichlet_beta
            )));
        }
        if self.target_client >= self.n_clients {
            return Err(CliError::Config(format!(
                "target_client {} out of range for {} clients",
                self.target_client, self.n_clients
            )));
        }
        self.method
            .parse::<Method>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn trigger(&self) -> TriggerSpec {
        TriggerSpec {
            row: self.trigger_row,
            col: self.trigger_col,
            size: self.trigger_size,
            value: self.trigger_value,
            target_label: self.trigger_label,
            poison_fraction: self.poison_fraction,
        }
    }

    pub fn fl_config(&self) -> FlConfig {
        FlConfig {
            n_clients: self.n_clients,
            participation_fraction: self.participation_fraction,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            keep_history: self.keep_history,
            parallel: self.parallel,
            start_round: 0,
        }
    }

    pub fn unlearn_config(&self) -> CliResult<UnlearnConfig> {
        Ok(UnlearnConfig {
            method: self.method.parse()?,
            ascent_lr: self.ascent_lr,
            ascent_epochs: self.ascent_epochs,
            ascent_batch: self.ascent_batch,
            epsilon: self.epsilon,
            epsilon_overrides: self.epsilon_overrides.clone(),
            ascent_clip: self.ascent_clip,
            clip_norm: self.clip_norm,
            delta_budget: self.delta_budget,
            p_samples: self.p_samples,
        })
    }

    fn load_train(&self) -> CliResult<Dataset> {
        Ok(load_mnist(&self.train_images, &self.train_labels)?)
    }

    fn load_test(&self) -> CliResult<Dataset> {
        Ok(load_mnist(&self.test_images, &self.test_labels)?)
    }

    fn make_partition(&self, train: &Dataset) -> CliResult<Partition> {
        let part_seed = seed::partition_seed(self.seed);
        let partition = match self.partition.as_str() {
            "iid" => partition_iid(train.len(), self.n_clients, part_seed)?,
            _ => {
                partition_dirichlet(&train.labels, self.n_clients, self.dirichlet_beta, part_seed)?
            }
        };
        partition.validate(train.len())?;
        Ok(partition)
    }

    /// Partition, poison the target client, and materialize per-client sets.
    fn build_clients(&self, train: &Dataset) -> CliResult<(Vec<Dataset>, Partition)> {
        let partition = self.make_partition(train)?;
        let trigger = self.trigger();
        let (poisoned, _) = data::poison(
            train,
            &partition.client_indices[self.target_client],
            &trigger,
            seed::poison_seed(self.seed),
        )?;
        let clients = partition
            .client_indices
            .iter()
            .map(|idx| poisoned.subset(idx))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((clients, partition))
    }
}

fn ensure_out_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    derived_seeds: DerivedSeeds,
    rounds_completed: Option<usize>,
}

#[derive(Serialize)]
struct DerivedSeeds {
    init: u64,
    partition: u64,
    poison: u64,
    ascent: u64,
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    rounds_completed: Option<usize>,
) -> CliResult<()> {
    let manifest = Manifest {
        command,
        config: cfg,
        derived_seeds: DerivedSeeds {
            init: seed::init_seed(cfg.seed),
            partition: seed::partition_seed(cfg.seed),
            poison: seed::poison_seed(cfg.seed),
            ascent: seed::ascent_seed(cfg.seed),
        },
        rounds_completed,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(format!("manifest encode: {e}")))?;
    std::fs::write(out.join("manifest.json"), json).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

fn read_manifest_rounds(dir: &Path) -> CliResult<usize> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::MissingPrerequisite(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    value
        .get("rounds_completed")
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| CliError::Data(format!("{}: no rounds_completed field", path.display())))
}

/// Write the partition JSON for the configured scheme.
pub fn cmd_partition(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    ensure_out_dir(out)?;
    let train = cfg.load_train()?;
    let partition = cfg.make_partition(&train)?;
    partition.save(&out.join("partition.json"))?;
    write_manifest(out, "partition", cfg, None)?;
    Ok(())
}

/// Full federated training with the poisoned target client. Writes the
/// final checkpoint, per-round reports, the partition, the optional update
/// history, and the manifest. `resume` continues round numbering from a
/// previous run directory.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> CliResult<()> {
    ensure_out_dir(out)?;
    let train = cfg.load_train()?;
    let test = cfg.load_test()?;
    let (clients, partition) = cfg.build_clients(&train)?;
    drop(train);

    let mut fl_cfg = cfg.fl_config();
    let initial = match resume {
        None => ModelParams::mnist_mlp(seed::init_seed(cfg.seed)),
        Some(prev) => {
            fl_cfg.start_round = read_manifest_rounds(prev)?;
            load_checkpoint(&prev.join("model.ckpt"))?
        }
    };

    let trigger = cfg.trigger();
    let output = fl::run_training(&initial, &clients, &test, Some(&trigger), &fl_cfg)?;

    save_checkpoint(&out.join("model.ckpt"), &output.model)?;
    partition.save(&out.join("partition.json"))?;
    std::fs::write(out.join("rounds.csv"), fl::rounds_to_csv(&output.reports))
        .map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(
        out.join("rounds.jsonl"),
        fl::rounds_to_jsonl(&output.reports)?,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(history) = &output.history {
        history.save(&out.join("history.bin"))?;
    }
    write_manifest(out, "train", cfg, Some(fl_cfg.start_round + cfg.rounds))?;
    Ok(())
}

#[derive(Serialize)]
struct UnlearnManifest {
    method: String,
    epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_overrides: Option<Vec<f64>>,
    ascent_clip: f64,
    clip_norm: f64,
    ascent_lr: f64,
    ascent_epochs: usize,
    ascent_batch: usize,
    p_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_budget: Option<f64>,
    realized_loss_delta: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    layers: Vec<unlearn::LayerSpectrum>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambdas: Option<Vec<Vec<f64>>>,
}

/// Remove the target client's contribution from a trained checkpoint with
/// the configured method. Emits the unlearned checkpoint, pre/post metrics,
/// and a manifest with the subspace spectra and the realized loss delta.
pub fn cmd_unlearn(
    cfg: &RunConfig,
    checkpoint: &Path,
    history_path: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    ensure_out_dir(out)?;
    let ucfg = cfg.unlearn_config()?;

    // The update-subtraction baseline needs a recorded history up front.
    let history: Option<UpdateHistory> = if ucfg.method == Method::Ul {
        let path = match history_path {
            Some(p) => p.to_path_buf(),
            None => checkpoint
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("history.bin"),
        };
        if !path.exists() {
            return Err(CliError::MissingPrerequisite(format!(
                "update subtraction needs a history file; {} does not exist \
                 (rerun training with keep_history)",
                path.display()
            )));
        }
        Some(UpdateHistory::load(&path)?)
    } else {
        None
    };

    let model = load_checkpoint(checkpoint)?;
    let train = cfg.load_train()?;
    let test = cfg.load_test()?;
    let (clients, _) = cfg.build_clients(&train)?;
    drop(train);
    let trigger = cfg.trigger();

    let remaining: Vec<&Dataset> = clients
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != cfg.target_client)
        .map(|(_, d)| d)
        .collect();
    let remaining_ids: Vec<usize> = (0..cfg.n_clients)
        .filter(|i| *i != cfg.target_client)
        .collect();

    let pre_clean = eval::clean_accuracy(&model, &test)?;
    let pre_atk = eval::attack_success_rate(&model, &test, &trigger)?;

    let started = Instant::now();
    let mut spectra = Vec::new();
    let mut lambdas = None;
    let unlearned = match ucfg.method {
        Method::Sfu => {
            let outcome = unlearn::sfu_unlearn(
                &model,
                &clients[cfg.target_client],
                &remaining,
                &remaining_ids,
                &ucfg,
                cfg.seed,
            )?;
            spectra = outcome.spectra;
            if cfg.log_lambdas {
                lambdas = Some(outcome.lambdas);
            }
            outcome.model
        }
        Method::Ga => unlearn::ga_unlearn(
            &model,
            &clients[cfg.target_client],
            &ucfg,
            seed::ascent_seed(cfg.seed),
        )?,
        Method::Ul => {
            unlearn::ul_subtract(&model, &history.expect("loaded above"), cfg.target_client)?
        }
        Method::Retrain => {
            let remaining_owned: Vec<Dataset> = remaining.iter().map(|d| (*d).clone()).collect();
            let fresh = ModelParams::mnist_mlp(seed::retrain_seed(cfg.seed));
            let fl_cfg = FlConfig {
                n_clients: remaining_owned.len(),
                ..cfg.fl_config()
            };
            fl::run_training(&fresh, &remaining_owned, &test, Some(&trigger), &fl_cfg)?.model
        }
    };
    let method_secs = if cfg.record_timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };

    let post_clean = eval::clean_accuracy(&unlearned, &test)?;
    let post_atk = eval::attack_success_rate(&unlearned, &test, &trigger)?;
    let realized_delta = eval::loss_delta(&unlearned, &model, &remaining)?;

    save_checkpoint(&out.join("unlearned.ckpt"), &unlearned)?;
    let rows = vec![
        MetricsRow {
            phase: Phase::PreUnlearn,
            clean_acc: pre_clean,
            atk_acc: pre_atk,
            loss_delta: 0.0,
            wall_time: 0.0,
        },
        MetricsRow {
            phase: Phase::PostUnlearn,
            clean_acc: post_clean,
            atk_acc: post_atk,
            loss_delta: realized_delta,
            wall_time: method_secs,
        },
    ];
    eval::emit_report(&rows, &out.join("metrics"))?;

    let manifest = UnlearnManifest {
        method: ucfg.method.to_string(),
        epsilon: ucfg.epsilon,
        epsilon_overrides: ucfg.epsilon_overrides.clone(),
        ascent_clip: ucfg.ascent_clip,
        clip_norm: ucfg.clip_norm,
        ascent_lr: ucfg.ascent_lr,
        ascent_epochs: ucfg.ascent_epochs,
        ascent_batch: ucfg.ascent_batch,
        p_samples: ucfg.p_samples,
        delta_budget: ucfg.delta_budget,
        realized_loss_delta: realized_delta,
        layers: spectra,
        lambdas,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(format!("unlearn manifest encode: {e}")))?;
    std::fs::write(out.join("unlearn_manifest.json"), json)
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_manifest(out, "unlearn", cfg, None)?;
    Ok(())
}

/// Recovery training without the target client, one metrics row per round.
/// `reference` points at the pre-unlearning checkpoint for loss-delta
/// reporting; without it, deltas are measured against the starting model.
pub fn cmd_recover(
    cfg: &RunConfig,
    checkpoint: &Path,
    rounds: usize,
    reference: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    ensure_out_dir(out)?;
    let mut model = load_checkpoint(checkpoint)?;
    let w_star = match reference {
        Some(p) => load_checkpoint(p)?,
        None => model.clone(),
    };
    let train = cfg.load_train()?;
    let test = cfg.load_test()?;
    let (clients, _) = cfg.build_clients(&train)?;
    drop(train);
    let trigger = cfg.trigger();

    let remaining: Vec<Dataset> = clients
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != cfg.target_client)
        .map(|(_, d)| d)
        .collect();
    let remaining_refs: Vec<&Dataset> = remaining.iter().collect();

    let fl_cfg = FlConfig {
        seed: seed::recover_seed(cfg.seed),
        keep_history: false,
        ..cfg.fl_config()
    };

    // One round at a time so each metrics row can carry the loss delta of
    // the model at that round.
    let mut rows = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let started = Instant::now();
        let round_cfg = FlConfig {
            start_round: r,
            ..fl_cfg.clone()
        };
        let (next, _) =
            unlearn::recover(&model, &remaining, &test, Some(&trigger), &round_cfg, 1)?;
        model = next;
        let wall = if cfg.record_timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        rows.push(MetricsRow {
            phase: Phase::RecoveryRound(r),
            clean_acc: eval::clean_accuracy(&model, &test)?,
            atk_acc: eval::attack_success_rate(&model, &test, &trigger)?,
            loss_delta: eval::loss_delta(&model, &w_star, &remaining_refs)?,
            wall_time: wall,
        });
    }

    save_checkpoint(&out.join("recovered.ckpt"), &model)?;
    eval::emit_report(&rows, &out.join("metrics"))?;
    write_manifest(out, "recover", cfg, Some(rounds))?;
    Ok(())
}

/// Evaluate a checkpoint: clean accuracy, attack rate, and (against an
/// optional reference checkpoint) the loss delta on the remaining clients.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    reference: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<MetricsRow> {
    let model = load_checkpoint(checkpoint)?;
    let test = cfg.load_test()?;
    let trigger = cfg.trigger();
    let loss_delta = match reference {
        None => 0.0,
        Some(p) => {
            let w_star = load_checkpoint(p)?;
            let train = cfg.load_train()?;
            let (clients, _) = cfg.build_clients(&train)?;
            drop(train);
            let remaining: Vec<&Dataset> = clients
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != cfg.target_client)
                .map(|(_, d)| d)
                .collect();
            eval::loss_delta(&model, &w_star, &remaining)?
        }
    };
    let row = MetricsRow {
        phase: if reference.is_some() {
            Phase::PostUnlearn
        } else {
            Phase::PreUnlearn
        },
        clean_acc: eval::clean_accuracy(&model, &test)?,
        atk_acc: eval::attack_success_rate(&model, &test, &trigger)?,
        loss_delta,
        wall_time: 0.0,
    };
    if let Some(out) = out {
        ensure_out_dir(out)?;
        eval::emit_report(std::slice::from_ref(&row), &out.join("metrics"))?;
        write_manifest(out, "eval", cfg, None)?;
    }
    Ok(row)
}

/// Collate the metrics of every run directory under `run_dir` (or
/// `run_dir` itself) into a Markdown table sorted by method.
pub fn cmd_report(run_dir: &Path) -> CliResult<String> {
    let mut entries = Vec::new();
    let mut visit = |dir: &Path| -> CliResult<()> {
        let manifest_path = dir.join("manifest.json");
        let metrics_path = dir.join("metrics.jsonl");
        if !manifest_path.exists() || !metrics_path.exists() {
            return Ok(());
        }
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(&manifest_path).map_err(|e| CliError::Data(e.to_string()))?,
        )
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
        let config = manifest.get("config").unwrap_or(&serde_json::Value::Null);
        let method = config
            .get("method")
            .and_then(|v| v.as_str())
            .unwrap_or("?")
            .to_string();
        let dataset = config
            .get("dataset_name")
            .and_then(|v| v.as_str())
            .unwrap_or("?")
            .to_string();
        let rows = eval::read_report(&metrics_path)?;
        if let Some(last) = rows.last() {
            entries.push(SummaryEntry {
                dataset,
                method,
                test_acc: last.clean_acc,
                atk_acc: last.atk_acc,
            });
        }
        Ok(())
    };

    visit(run_dir)?;
    let listing = std::fs::read_dir(run_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", run_dir.display())))?;
    let mut subdirs: Vec<PathBuf> = listing
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for dir in subdirs {
        visit(&dir)?;
    }

    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no run directories with metrics found",
            run_dir.display()
        )));
    }
    Ok(eval::markdown_table(&entries))
}

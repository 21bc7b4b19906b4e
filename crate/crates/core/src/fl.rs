//! FedAvg orchestration: the round loop, client sampling, local training,
//! sample-count-weighted aggregation, and the per-round update history
//! consumed by the update-subtraction baseline.
//!
//! Every random decision is keyed by `(master seed, purpose, client, round)`
//! through [`crate::seed`], so client updates computed concurrently or
//! serially produce bit-identical global models.

use crate::data::{apply_trigger_all, Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::eval;
use crate::linalg::DenseMatrix;
use crate::nn::{
    self, backward_with_loss, sgd_step, GradientSet, ModelParams, StepDirection,
};
use crate::seed;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Round-loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlConfig {
    pub n_clients: usize,
    /// Fraction of clients drawn each round, in (0, 1].
    pub participation_fraction: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Master seed; per-round and per-client streams derive from it.
    pub seed: u64,
    /// Record every participant's delta for later subtraction.
    pub keep_history: bool,
    /// Run the clients of a round on the rayon pool.
    pub parallel: bool,
    /// First round index; lets resumed runs keep their seed streams.
    pub start_round: usize,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            n_clients: 10,
            participation_fraction: 1.0,
            rounds: 100,
            local_epochs: 1,
            batch_size: 64,
            lr: 0.01,
            seed: 0,
            keep_history: false,
            parallel: true,
            start_round: 0,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::invalid("need at least one client"));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "participation fraction must lie in (0, 1], got {}",
                self.participation_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One recorded participant contribution.
#[derive(Debug, Clone)]
pub struct UpdateRecord {
    pub round: usize,
    pub client_id: usize,
    pub delta: GradientSet,
    pub weight: f64,
}

/// Every participant delta of a training run, with aggregation weights.
/// At most one record per (round, client); weights within a round sum to 1.
#[derive(Debug, Clone, Default)]
pub struct UpdateHistory {
    pub records: Vec<UpdateRecord>,
}

const HISTORY_MAGIC: &[u8; 4] = b"FSUH";
const HISTORY_VERSION: u32 = 1;

impl UpdateHistory {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records_for(&self, client_id: usize) -> impl Iterator<Item = &UpdateRecord> {
        self.records.iter().filter(move |r| r.client_id == client_id)
    }

    /// Binary spill format, little-endian:
    /// magic "FSUH" | version u32 | record count u32 | per record:
    /// round u32 | client u32 | weight f64 | layer count u32 | per layer:
    /// rows u32 | cols u32 | weight f64s | bias len u32 | bias f64s.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        out.write_all(HISTORY_MAGIC)?;
        out.write_all(&HISTORY_VERSION.to_le_bytes())?;
        out.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for rec in &self.records {
            out.write_all(&(rec.round as u32).to_le_bytes())?;
            out.write_all(&(rec.client_id as u32).to_le_bytes())?;
            out.write_all(&rec.weight.to_le_bytes())?;
            out.write_all(&(rec.delta.layers.len() as u32).to_le_bytes())?;
            for block in &rec.delta.layers {
                out.write_all(&(block.weight.rows() as u32).to_le_bytes())?;
                out.write_all(&(block.weight.cols() as u32).to_le_bytes())?;
                for v in block.weight.data() {
                    out.write_all(&v.to_le_bytes())?;
                }
                out.write_all(&(block.bias.len() as u32).to_le_bytes())?;
                for v in &block.bias {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<UpdateHistory> {
        use std::io::Read;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(Error::format("history file truncated"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != HISTORY_MAGIC {
            return Err(Error::format("bad history magic, expected FSUH"));
        }
        macro_rules! read_u32 {
            () => {
                u32::from_le_bytes(take(4)?.try_into().unwrap())
            };
        }
        macro_rules! read_f64 {
            () => {
                f64::from_le_bytes(take(8)?.try_into().unwrap())
            };
        }
        let version = read_u32!();
        if version != HISTORY_VERSION {
            return Err(Error::format(format!(
                "unsupported history version {version}"
            )));
        }
        let n_records = read_u32!() as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let round = read_u32!() as usize;
            let client_id = read_u32!() as usize;
            let weight = read_f64!();
            let n_layers = read_u32!() as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let rows = read_u32!() as usize;
                let cols = read_u32!() as usize;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    data.push(read_f64!());
                }
                let bias_len = read_u32!() as usize;
                let mut bias = Vec::with_capacity(bias_len);
                for _ in 0..bias_len {
                    bias.push(read_f64!());
                }
                layers.push(crate::nn::ParamBlock {
                    weight: DenseMatrix::new(rows, cols, data)
                        .map_err(|e| Error::format(e.to_string()))?,
                    bias,
                });
            }
            records.push(UpdateRecord {
                round,
                client_id,
                weight,
                delta: GradientSet { layers },
            });
        }
        if pos != bytes.len() {
            return Err(Error::format("trailing bytes after history payload"));
        }
        Ok(UpdateHistory { records })
    }
}

/// Per-round progress snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub participants: Vec<usize>,
    pub clean_acc: f64,
    /// Attack success rate; absent when no trigger is being tracked.
    pub atk_acc: Option<f64>,
    pub train_loss: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ModelParams,
    pub history: Option<UpdateHistory>,
    pub reports: Vec<RoundReport>,
}

/// Train a copy of `global` on one client's data and return the parameter
/// change together with the sample count and the mean minibatch loss.
///
/// Batches are shuffled once per epoch from the stream seeded by
/// `local_seed`; the global model is untouched.
pub fn local_update(
    global: &ModelParams,
    data: &Dataset,
    cfg: &FlConfig,
    local_seed: u64,
) -> Result<(GradientSet, usize, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("client dataset is empty"));
    }
    let mut model = global.clone();
    let mut rng = seed::rng(local_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk)?;
            let (grads, loss) = backward_with_loss(&model, &batch.images, &batch.labels)?;
            model = sgd_step(&model, &grads, cfg.lr, StepDirection::Descend)?;
            loss_sum += loss;
            batches += 1;
        }
    }
    let mean_loss = if batches == 0 {
        0.0
    } else {
        loss_sum / batches as f64
    };
    let delta = nn::model_delta(&model, global)?;
    Ok((delta, data.len(), mean_loss))
}

/// Sample-count-weighted FedAvg: `global + Σ_i (n_i / Σ_j n_j) · delta_i`.
pub fn aggregate(global: &ModelParams, deltas: &[(GradientSet, usize)]) -> Result<ModelParams> {
    if deltas.is_empty() {
        return Err(Error::invalid("aggregate needs at least one delta"));
    }
    let total: usize = deltas.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("aggregate weights sum to zero"));
    }
    let mut model = global.clone();
    for (delta, n) in deltas {
        let weight = *n as f64 / total as f64;
        model = nn::apply_delta(&model, delta, weight)?;
    }
    Ok(model)
}

/// Draw `ceil(fraction · n)` distinct client ids for a round, sorted.
pub fn select_clients(
    n_clients: usize,
    fraction: f64,
    round: usize,
    master_seed: u64,
) -> Vec<usize> {
    let k = ((fraction * n_clients as f64).ceil() as usize).clamp(1, n_clients);
    if k == n_clients {
        return (0..n_clients).collect();
    }
    let mut ids: Vec<usize> = (0..n_clients).collect();
    ids.shuffle(&mut seed::rng(seed::select_seed(master_seed, round)));
    let mut chosen: Vec<usize> = ids.into_iter().take(k).collect();
    chosen.sort_unstable();
    chosen
}

/// Run `cfg.rounds` rounds of select → local update → aggregate from the
/// given starting model. Per-round metrics are evaluated on `test`; the
/// attack-rate column tracks `trigger` when present.
pub fn run_training(
    initial: &ModelParams,
    clients: &[Dataset],
    test: &Dataset,
    trigger: Option<&TriggerSpec>,
    cfg: &FlConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if clients.len() != cfg.n_clients {
        return Err(Error::invalid(format!(
            "config names {} clients but {} datasets were supplied",
            cfg.n_clients,
            clients.len()
        )));
    }
    if let Some(empty) = clients.iter().position(Dataset::is_empty) {
        return Err(Error::invalid(format!("client {empty} has no data")));
    }

    // The triggered test set does not change across rounds; stamp it once.
    let triggered = trigger
        .map(|t| apply_trigger_all(test, t))
        .transpose()?;

    let mut model = initial.clone();
    let mut history = cfg.keep_history.then(UpdateHistory::default);
    let mut reports = Vec::with_capacity(cfg.rounds);

    for r in 0..cfg.rounds {
        let round = cfg.start_round + r;
        let participants = select_clients(
            cfg.n_clients,
            cfg.participation_fraction,
            round,
            cfg.seed,
        );

        let global = &model;
        let run_one = |&id: &usize| -> Result<(usize, GradientSet, usize, f64)> {
            let (delta, n, loss) =
                local_update(global, &clients[id], cfg, seed::client_seed(cfg.seed, id, round))?;
            Ok((id, delta, n, loss))
        };
        let updates: Vec<(usize, GradientSet, usize, f64)> = if cfg.parallel {
            participants.par_iter().map(run_one).collect::<Result<_>>()?
        } else {
            participants.iter().map(run_one).collect::<Result<_>>()?
        };

        let total: usize = updates.iter().map(|(_, _, n, _)| n).sum();
        let train_loss = updates
            .iter()
            .map(|(_, _, n, loss)| *n as f64 / total as f64 * loss)
            .sum();

        if let Some(h) = history.as_mut() {
            for (id, delta, n, _) in &updates {
                h.records.push(UpdateRecord {
                    round,
                    client_id: *id,
                    delta: delta.clone(),
                    weight: *n as f64 / total as f64,
                });
            }
        }

        let deltas: Vec<(GradientSet, usize)> =
            updates.into_iter().map(|(_, d, n, _)| (d, n)).collect();
        model = aggregate(&model, &deltas)?;

        let clean_acc = eval::clean_accuracy(&model, test)?;
        let atk_acc = match (&triggered, trigger) {
            (Some(trig), Some(spec)) => Some(eval::attack_rate_on_triggered(
                &model,
                trig,
                &test.labels,
                spec.target_label,
            )?),
            _ => None,
        };
        reports.push(RoundReport {
            round,
            participants,
            clean_acc,
            atk_acc,
            train_loss,
        });
    }

    Ok(TrainOutput {
        model,
        history,
        reports,
    })
}

const ROUNDS_CSV_HEADER: &str = "round,participants,clean_acc,atk_acc,loss";

/// Round reports as CSV; participants are ';'-joined inside one column.
pub fn rounds_to_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from(ROUNDS_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let participants = r
            .participants
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";");
        let atk = r.atk_acc.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.round, participants, r.clean_acc, atk, r.train_loss
        ));
    }
    out
}

/// Round reports as JSON-lines.
pub fn rounds_to_jsonl(reports: &[RoundReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::format(format!("encode round: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Deterministic synthetic dataset for tests and smoke runs: images carry a
/// class-dependent blob pattern plus seeded noise.
pub fn synthetic_dataset(n: usize, synth_seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = seed::rng(synth_seed);
    let mut images = DenseMatrix::zeros(n, 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = rng.random_range(0..10u8);
        labels.push(class);
        let row = images.row_mut(i);
        for v in row.iter_mut() {
            *v = -1.0;
        }
        // A bright 4x4 block whose position encodes the class.
        let (br, bc) = ((class as usize / 5) * 10 + 4, (class as usize % 5) * 5 + 2);
        for dr in 0..4 {
            for dc in 0..4 {
                row[(br + dr) * 28 + bc + dc] = 1.0;
            }
        }
        for v in row.iter_mut() {
            *v = (*v + rng.random_range(-0.1..0.1)).clamp(-1.0, 1.0);
        }
    }
    Dataset {
        images,
        labels,
        height: 28,
        width: 28,
    }
}

//! Dataset ingestion, normalization, client partitioning (IID and
//! Dirichlet), and backdoor-trigger poisoning.
//!
//! Images load from IDX files (big-endian u32 magic and dimension sizes,
//! then raw u8 pixels) and are normalized to `(pixel/255 − 0.5)/0.5`, so
//! every entry lies in [−1, 1] with 0 → −1.0 and 255 → +1.0 exactly.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::seed;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A labelled image set; images are flattened row-major, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: DenseMatrix,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.images.cols()
    }

    /// Materialize the samples at `indices` as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut images = DenseMatrix::zeros(indices.len(), self.n_features());
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "sample index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            images.row_mut(row).copy_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            images,
            labels,
            height: self.height,
            width: self.width,
        })
    }
}

struct IdxReader {
    bytes: Vec<u8>,
    pos: usize,
    path: String,
}

impl IdxReader {
    fn open(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Ok(Self {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        })
    }

    fn be_u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::format(format!("{}: truncated header", self.path)));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&self, expected: usize) -> Result<&[u8]> {
        let body = &self.bytes[self.pos..];
        if body.len() < expected {
            return Err(Error::format(format!(
                "{}: payload holds {} bytes, header promises {}",
                self.path,
                body.len(),
                expected
            )));
        }
        Ok(&body[..expected])
    }
}

/// Load an IDX image/label pair and normalize pixels into [−1, 1].
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = IdxReader::open(images_path)?;
    let magic = img.be_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            img.path
        )));
    }
    let n = img.be_u32()? as usize;
    let height = img.be_u32()? as usize;
    let width = img.be_u32()? as usize;
    let pixels = img.payload(n * height * width)?;

    let mut lab = IdxReader::open(labels_path)?;
    let magic = lab.be_u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            lab.path
        )));
    }
    let n_labels = lab.be_u32()? as usize;
    if n_labels != n {
        return Err(Error::format(format!(
            "count mismatch: {} images vs {} labels",
            n, n_labels
        )));
    }
    let labels = lab.payload(n)?.to_vec();

    if n == 0 {
        return Err(Error::format(format!("{}: empty dataset", img.path)));
    }

    let data: Vec<f64> = pixels
        .iter()
        .map(|&p| (f64::from(p) / 255.0 - 0.5) / 0.5)
        .collect();
    Ok(Dataset {
        images: DenseMatrix::new(n, height * width, data)?,
        labels,
        height,
        width,
    })
}

/// How samples were split across clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    Iid,
    Dirichlet(f64),
}

/// Per-client sample indices into a dataset: pairwise disjoint lists whose
/// union is exactly `0..n`, every client nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BetaField {
    Tag(String),
    Value(f64),
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    beta: BetaField,
    seed: u64,
    client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }

    /// Disjointness, exact cover of `0..n_samples`, and nonempty clients.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let mut seen = vec![false; n_samples];
        let mut count = 0usize;
        for (c, list) in self.client_indices.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::invalid(format!("client {c} has no samples")));
            }
            for &i in list {
                if i >= n_samples {
                    return Err(Error::invalid(format!("index {i} out of range")));
                }
                if seen[i] {
                    return Err(Error::invalid(format!("index {i} assigned twice")));
                }
                seen[i] = true;
                count += 1;
            }
        }
        if count != n_samples {
            return Err(Error::invalid(format!(
                "partition covers {count} of {n_samples} samples"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PartitionFile {
            beta: match self.scheme {
                PartitionScheme::Iid => BetaField::Tag("iid".to_string()),
                PartitionScheme::Dirichlet(b) => BetaField::Value(b),
            },
            seed: self.seed,
            client_indices: self.client_indices.clone(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(format!("partition encode: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Partition> {
        let text = std::fs::read_to_string(path)?;
        let file: PartitionFile = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let scheme = match file.beta {
            BetaField::Tag(t) if t == "iid" => PartitionScheme::Iid,
            BetaField::Tag(t) => {
                return Err(Error::format(format!("unknown partition scheme {t:?}")))
            }
            BetaField::Value(b) => PartitionScheme::Dirichlet(b),
        };
        Ok(Partition {
            client_indices: file.client_indices,
            scheme,
            seed: file.seed,
        })
    }
}

/// Shuffle all indices and deal them into near-equal chunks
/// (sizes differ by at most one).
pub fn partition_iid(n_samples: usize, n_clients: usize, part_seed: u64) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if n_clients > n_samples {
        return Err(Error::invalid(format!(
            "{n_clients} clients cannot share {n_samples} samples"
        )));
    }
    let mut indices: Vec<usize> = (0..n_samples).collect();
    indices.shuffle(&mut seed::rng(part_seed));
    let base = n_samples / n_clients;
    let extra = n_samples % n_clients;
    let mut client_indices = Vec::with_capacity(n_clients);
    let mut cursor = 0;
    for c in 0..n_clients {
        let size = base + usize::from(c < extra);
        client_indices.push(indices[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(Partition {
        client_indices,
        scheme: PartitionScheme::Iid,
        seed: part_seed,
    })
}

/// For each class, draw client proportions from Dirichlet(beta·1) and
/// assign that class's samples multinomially. Clients left empty are
/// repaired by taking one sample from the currently largest client.
pub fn partition_dirichlet(
    labels: &[u8],
    n_clients: usize,
    beta: f64,
    part_seed: u64,
) -> Result<Partition> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if n_clients > labels.len() {
        return Err(Error::invalid(format!(
            "{n_clients} clients cannot share {} samples",
            labels.len()
        )));
    }
    let mut rng = seed::rng(part_seed);
    let n_classes = usize::from(labels.iter().copied().max().unwrap_or(0)) + 1;
    let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); n_clients];

    for class in 0..n_classes {
        let members: Vec<usize> = (0..labels.len())
            .filter(|&i| usize::from(labels[i]) == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        let proportions = dirichlet_draw(n_clients, beta, &mut rng);
        let picker = WeightedIndex::new(&proportions)
            .map_err(|e| Error::invalid(format!("dirichlet proportions: {e}")))?;
        for &i in &members {
            client_indices[picker.sample(&mut rng)].push(i);
        }
    }

    // Repair: a multinomial draw can starve a client outright.
    loop {
        let Some(empty) = client_indices.iter().position(Vec::is_empty) else {
            break;
        };
        let largest = (0..n_clients)
            .max_by_key(|&c| client_indices[c].len())
            .expect("nonzero clients");
        let moved = client_indices[largest]
            .pop()
            .expect("largest client nonempty");
        client_indices[empty].push(moved);
    }

    Ok(Partition {
        client_indices,
        scheme: PartitionScheme::Dirichlet(beta),
        seed: part_seed,
    })
}

/// Dirichlet(beta·1) via normalized Gamma(beta, 1) draws.
fn dirichlet_draw(n: usize, beta: f64, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.iter().map(|d| d / sum).collect();
        }
    }
}

/// A square pixel patch stamped onto images, plus the label the backdoor
/// should elicit and the fraction of the target client's data to poison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub value: f64,
    pub target_label: u8,
    pub poison_fraction: f64,
}

impl Default for TriggerSpec {
    /// 2×2 patch of normalized max value in the bottom-right corner,
    /// relabelling to class 9, poisoning half the client's samples.
    fn default() -> Self {
        TriggerSpec {
            row: 26,
            col: 26,
            size: 2,
            value: 1.0,
            target_label: 9,
            poison_fraction: 0.5,
        }
    }
}

impl TriggerSpec {
    fn check_bounds(&self, dataset: &Dataset) -> Result<()> {
        if self.row + self.size > dataset.height || self.col + self.size > dataset.width {
            return Err(Error::invalid(format!(
                "trigger footprint {}x{} at ({}, {}) exceeds {}x{} image",
                self.size, self.size, self.row, self.col, dataset.height, dataset.width
            )));
        }
        Ok(())
    }

    fn stamp(&self, dataset: &mut Dataset, sample: usize) {
        let width = dataset.width;
        let row = dataset.images.row_mut(sample);
        for dr in 0..self.size {
            for dc in 0..self.size {
                row[(self.row + dr) * width + (self.col + dc)] = self.value;
            }
        }
    }
}

/// Stamp the trigger onto a seeded `poison_fraction` of the listed samples
/// and set their labels to the target class. Returns the new dataset and
/// the sorted indices that were poisoned.
pub fn poison(
    dataset: &Dataset,
    client_indices: &[usize],
    spec: &TriggerSpec,
    poison_seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    spec.check_bounds(dataset)?;
    if client_indices.iter().any(|&i| i >= dataset.len()) {
        return Err(Error::invalid("poison index out of range"));
    }
    if !(spec.poison_fraction > 0.0 && spec.poison_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "poison fraction must lie in (0, 1], got {}",
            spec.poison_fraction
        )));
    }
    let n_poison = (spec.poison_fraction * client_indices.len() as f64).round() as usize;
    let mut pool = client_indices.to_vec();
    pool.shuffle(&mut seed::rng(poison_seed));
    let mut chosen: Vec<usize> = pool.into_iter().take(n_poison).collect();
    chosen.sort_unstable();

    let mut out = dataset.clone();
    for &i in &chosen {
        spec.stamp(&mut out, i);
        out.labels[i] = spec.target_label;
    }
    Ok((out, chosen))
}

/// Stamp the trigger onto every image, leaving labels untouched. Used by
/// evaluation; samples whose true label already equals the trigger's target
/// are excluded from attack-rate denominators downstream.
pub fn apply_trigger_all(dataset: &Dataset, spec: &TriggerSpec) -> Result<Dataset> {
    spec.check_bounds(dataset)?;
    let mut out = dataset.clone();
    for i in 0..out.len() {
        spec.stamp(&mut out, i);
    }
    Ok(out)
}

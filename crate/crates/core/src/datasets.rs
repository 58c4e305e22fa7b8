//! Dataset ingestion (CIFAR-10 binary batches and a synthetic generator),
//! and the IID / Dirichlet client partitioners.

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::rng::RngStream;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use std::path::Path;

/// CIFAR-10 binary record: 1 label byte plus 3 row-major channel planes.
const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

#[derive(Clone, Debug)]
pub struct Dataset {
    /// `[n, C, H, W]` images with values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample `[C, H, W]` shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Gathers the given sample positions into one batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let per_sample: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per_sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per_sample..(i + 1) * per_sample]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Batch {
            images: Tensor::from_vec(&shape, data).expect("gather shape matches data"),
            labels,
        }
    }
}

/// One client's private view: positions into a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Parses concatenated CIFAR-10 binary records: per record one label byte in
/// `0..=9` followed by 3072 pixel bytes (R, G, B planes, row-major), scaled
/// to `[0,1]` by division with 255.
pub fn parse_cifar10_records(bytes: &[u8], origin: &str) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::DataFormat {
            path: origin.to_string(),
            message: format!(
                "file holds {} bytes, not a positive multiple of the {}-byte record",
                bytes.len(),
                CIFAR_RECORD_BYTES
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for (rec, chunk) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(Error::DataFormat {
                path: origin.to_string(),
                message: format!("record {rec} has label byte {label}, expected 0..=9"),
            });
        }
        labels.push(label as usize);
        data.extend(chunk[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 3, 32, 32], data)?,
        labels,
        class_count: 10,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads and concatenates CIFAR-10 binary batch files in the given order.
pub fn load_cifar10(paths: &[impl AsRef<Path>]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Empty("cifar10 path list"));
    }
    let mut parts = Vec::with_capacity(paths.len());
    for p in paths {
        let path = p.as_ref();
        let bytes = read_file(path)?;
        parts.push(parse_cifar10_records(&bytes, &path.display().to_string())?);
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for part in &parts {
        labels.extend_from_slice(&part.labels);
        data.extend_from_slice(part.images.data());
    }
    let n = labels.len();
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 3, 32, 32], data)?,
        labels,
        class_count: 10,
    })
}

/// The five standard training batches under `dir`.
pub fn load_cifar10_train(dir: &Path) -> Result<Dataset> {
    let paths: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    load_cifar10(&paths)
}

/// The held-out validation batch under `dir`.
pub fn load_cifar10_val(dir: &Path) -> Result<Dataset> {
    load_cifar10(&[dir.join("test_batch.bin")])
}

/// Synthetic classification set: class `c` is a fixed oriented stripe
/// pattern, each sample perturbed by uniform pixel noise and clamped back to
/// `[0,1]`. Classes are balanced, `per_class` samples each, single channel.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    height: usize,
    width: usize,
    noise: f32,
    stream: &RngStream,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "synthetic generator needs at least 2 classes, got {classes}"
        )));
    }
    if height == 0 || width == 0 || per_class == 0 {
        return Err(Error::InvalidConfig(
            "synthetic dimensions and per-class count must be positive".into(),
        ));
    }
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * height * width);
    let mut labels = Vec::with_capacity(n);
    let diag = ((height * height + width * width) as f32).sqrt();
    for class in 0..classes {
        let angle = std::f32::consts::PI * class as f32 / classes as f32;
        let (dir_y, dir_x) = (angle.sin(), angle.cos());
        for s in 0..per_class {
            let sample = class * per_class + s;
            let mut rng = stream.child(sample as u64).rng();
            for y in 0..height {
                for x in 0..width {
                    let u = (x as f32 + 0.5) * dir_x + (y as f32 + 0.5) * dir_y;
                    let stripe =
                        0.5 + 0.4 * (2.0 * std::f32::consts::PI * 3.0 * u / diag).sin();
                    let jitter = noise * (2.0 * rng.random::<f32>() - 1.0);
                    data.push((stripe + jitter).clamp(0.0, 1.0));
                }
            }
            labels.push(class);
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 1, height, width], data)?,
        labels,
        class_count: classes,
    })
}

fn indices_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.class_count];
    for (i, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    by_class
}

fn shuffled(mut items: Vec<usize>, stream: &RngStream) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = stream.rng();
    items.shuffle(&mut rng);
    items
}

/// Splits the dataset so every client receives (nearly) the same number of
/// samples of every class: per class the samples are shuffled and dealt
/// round-robin, so shard sizes differ by at most one per class.
pub fn partition_iid(dataset: &Dataset, clients: usize, stream: &RngStream) -> Result<Vec<ClientShard>> {
    if clients == 0 || clients > dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot split {} samples across {clients} clients",
            dataset.len()
        )));
    }
    let mut shards: Vec<ClientShard> = (0..clients)
        .map(|client_id| ClientShard { client_id, indices: Vec::new() })
        .collect();
    for (class, indices) in indices_by_class(dataset).into_iter().enumerate() {
        let order = shuffled(indices, &stream.child(class as u64));
        for (j, idx) in order.into_iter().enumerate() {
            shards[j % clients].indices.push(idx);
        }
    }
    for shard in &mut shards {
        shard.indices.sort_unstable();
    }
    Ok(shards)
}

/// Splits the dataset with per-class Dirichlet(alpha) proportions over the
/// clients: the smaller alpha, the more skewed the class composition.
///
/// Per class, proportions come from normalized Gamma(alpha, 1) draws, the
/// class's shuffled samples are cut into contiguous blocks of the rounded
/// sizes, and any rounding remainder goes to the largest-proportion client
/// (ties to the lowest client id).
pub fn partition_dirichlet(
    dataset: &Dataset,
    clients: usize,
    alpha: f64,
    stream: &RngStream,
) -> Result<Vec<ClientShard>> {
    if clients == 0 {
        return Err(Error::InvalidConfig("need at least one client".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "dirichlet concentration must be positive, got {alpha}"
        )));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidConfig(format!("bad gamma parameters: {e}")))?;
    let mut shards: Vec<ClientShard> = (0..clients)
        .map(|client_id| ClientShard { client_id, indices: Vec::new() })
        .collect();

    for (class, indices) in indices_by_class(dataset).into_iter().enumerate() {
        let class_stream = stream.child(class as u64);
        let proportions = dirichlet_proportions(clients, &gamma, &class_stream.child(0));
        let order = shuffled(indices, &class_stream.child(1));
        let sizes = block_sizes(&proportions, order.len());
        let mut offset = 0;
        for (client, &size) in sizes.iter().enumerate() {
            shards[client].indices.extend_from_slice(&order[offset..offset + size]);
            offset += size;
        }
        debug_assert_eq!(offset, order.len());
    }
    for shard in &mut shards {
        shard.indices.sort_unstable();
    }
    Ok(shards)
}

pub(crate) fn dirichlet_proportions(clients: usize, gamma: &Gamma<f64>, stream: &RngStream) -> Vec<f64> {
    let mut rng = stream.rng();
    let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / clients as f64; clients];
    }
    draws.into_iter().map(|d| d / total).collect()
}

/// Rounds `p * count` per client, then settles the remainder on the clients
/// with the largest proportions, never driving a block negative.
fn block_sizes(proportions: &[f64], count: usize) -> Vec<usize> {
    let mut sizes: Vec<i64> = proportions
        .iter()
        .map(|p| (p * count as f64).round() as i64)
        .collect();
    let mut diff = count as i64 - sizes.iter().sum::<i64>();
    // client ids ordered by descending proportion, ties to the lowest id
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        proportions[b]
            .partial_cmp(&proportions[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut cursor = 0;
    while diff != 0 {
        let client = order[cursor % order.len()];
        if diff > 0 {
            sizes[client] += diff;
            diff = 0;
        } else {
            let take = (-diff).min(sizes[client]);
            sizes[client] -= take;
            diff += take;
            cursor += 1;
        }
    }
    sizes.into_iter().map(|s| s as usize).collect()
}

//! Dataset generation, IDX loading, and non-iid client partitioning.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::bnn::TargetRef;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngStream, StreamPurpose};

/// Targets for every sample in a dataset: class labels for classification,
/// real-valued rows for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Matrix),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(m) => m.rows(),
        }
    }
}

/// An in-memory dataset: one feature row per sample plus its target. For
/// synthetic regression data the noise-free generating function is kept
/// alongside, so metrics can compare predictions against ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Targets,
    pub true_fn: Option<ReferenceFn>,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Targets, true_fn: Option<ReferenceFn>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new",
                expected: features.rows(),
                actual: targets.len(),
            });
        }
        if let Targets::Classes { labels, classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                return Err(Error::ClassOutOfRange {
                    index: bad,
                    classes: *classes,
                });
            }
        }
        Ok(Self {
            features,
            targets,
            true_fn,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes for classification targets, `None` for regression.
    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { classes, .. } => Some(*classes),
            Targets::Values(_) => None,
        }
    }

    /// Output dimension a network must have to model these targets.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes { classes, .. } => *classes,
            Targets::Values(m) => m.cols(),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    /// Borrows sample `i` as (features, target).
    pub fn sample(&self, i: usize) -> (&[f64], TargetRef<'_>) {
        let x = self.features.row(i);
        let t = match &self.targets {
            Targets::Classes { labels, .. } => TargetRef::Class(labels[i]),
            Targets::Values(m) => TargetRef::Values(m.row(i)),
        };
        (x, t)
    }
}

/// A fixed two-layer tanh network used as the noise-free ground truth for
/// synthetic regression data. Weights are drawn once from scaled Gaussians,
/// so the same seed always describes the same function.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFn {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

const REFERENCE_HIDDEN: usize = 16;

impl ReferenceFn {
    /// A reference function that ignores its input and always returns
    /// `values`. Handy as a known ground truth in tests and demos.
    pub fn constant(input_dim: usize, values: Vec<f64>) -> Self {
        let out = values.len();
        Self {
            w1: Matrix::zeros(1, input_dim),
            b1: vec![0.0],
            w2: Matrix::zeros(out, 1),
            b2: values,
        }
    }

    fn random(input_dim: usize, output_dim: usize, rng: &mut RngStream) -> Self {
        let h = REFERENCE_HIDDEN;
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let w1 = Matrix::new(
            h,
            input_dim,
            rng.randn(h * input_dim).iter().map(|g| s1 * g).collect(),
        )
        .expect("reference net first layer");
        let b1 = rng.randn(h);
        let s2 = 1.0 / (h as f64).sqrt();
        let w2 = Matrix::new(
            output_dim,
            h,
            rng.randn(output_dim * h).iter().map(|g| s2 * g).collect(),
        )
        .expect("reference net second layer");
        let b2 = rng.randn(output_dim);
        Self { w1, b1, w2, b2 }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut hidden = self.w1.matvec(x)?;
        for (h, b) in hidden.iter_mut().zip(&self.b1) {
            *h = (*h + b).tanh();
        }
        let mut out = self.w2.matvec(&hidden)?;
        for (o, b) in out.iter_mut().zip(&self.b2) {
            *o += b;
        }
        Ok(out)
    }
}

/// Per-client, per-class sample counts for a train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl SplitSpec {
    pub fn small() -> Self {
        Self {
            train_per_class: 50,
            test_per_class: 950,
        }
    }

    pub fn medium() -> Self {
        Self {
            train_per_class: 200,
            test_per_class: 800,
        }
    }

    pub fn large() -> Self {
        Self {
            train_per_class: 900,
            test_per_class: 300,
        }
    }
}

fn check_positive(name: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidParam {
            name,
            reason: "must be positive".into(),
        });
    }
    Ok(())
}

fn check_noise(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::InvalidParam {
            name,
            reason: format!("must be finite and non-negative, got {v}"),
        });
    }
    Ok(())
}

/// Synthetic regression data: inputs x ~ N(0, I), targets y = f(x) + ε with
/// ε ~ N(0, noise_std²·I) and f a seeded [`ReferenceFn`]. The returned
/// dataset carries `f` in `true_fn`.
pub fn gen_synth_regression(
    n: usize,
    input_dim: usize,
    output_dim: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    check_positive("n", n)?;
    check_positive("input_dim", input_dim)?;
    check_positive("output_dim", output_dim)?;
    check_noise("noise_std", noise_std)?;
    let mut net_rng = RngStream::for_context(seed, StreamPurpose::DataGen, 0, 0);
    let true_fn = ReferenceFn::random(input_dim, output_dim, &mut net_rng);

    let mut rng = RngStream::for_context(seed, StreamPurpose::DataGen, 0, 1);
    let mut features = Vec::with_capacity(n * input_dim);
    let mut values = Vec::with_capacity(n * output_dim);
    for _ in 0..n {
        let x = rng.randn(input_dim);
        let mut y = true_fn.eval(&x)?;
        for v in y.iter_mut() {
            *v += noise_std * rng.standard_normal();
        }
        features.extend_from_slice(&x);
        values.extend_from_slice(&y);
    }
    Dataset::new(
        Matrix::new(n, input_dim, features)?,
        Targets::Values(Matrix::new(n, output_dim, values)?),
        Some(true_fn),
    )
}

/// Synthetic classification data: one Gaussian cluster per class. Centers
/// are drawn once from N(0, I); sample i gets label i mod `classes` (so
/// counts are balanced to within one) and features center + spread·N(0, I).
pub fn gen_blobs(
    n: usize,
    input_dim: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    check_positive("n", n)?;
    check_positive("input_dim", input_dim)?;
    if classes < 2 {
        return Err(Error::InvalidParam {
            name: "classes",
            reason: format!("need at least 2 classes, got {classes}"),
        });
    }
    check_noise("spread", spread)?;
    let mut center_rng = RngStream::for_context(seed, StreamPurpose::DataGen, 1, 0);
    let centers = Matrix::new(classes, input_dim, center_rng.randn(classes * input_dim))?;

    let mut rng = RngStream::for_context(seed, StreamPurpose::DataGen, 1, 1);
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let center = centers.row(label);
        for &c in center {
            features.push(c + spread * rng.standard_normal());
        }
        labels.push(label);
    }
    Dataset::new(
        Matrix::new(n, input_dim, features)?,
        Targets::Classes { labels, classes },
        None,
    )
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Reads a file fully, transparently gunzipping when the gzip magic bytes
/// lead the stream.
fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let display = path.display().to_string();
    let raw = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
    if raw.len() >= 2 && raw[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(&display, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    buf: Vec<u8>,
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(Self {
            path,
            buf: read_maybe_gzip(path)?,
            pos: 0,
        })
    }

    fn take(&mut self, len: usize) -> Result<&[u8]> {
        if self.pos + len > self.buf.len() {
            return Err(Error::IdxTruncated {
                path: self.path.display().to_string(),
                expected: self.pos + len,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_magic(&mut self, expected: u32) -> Result<()> {
        let found = self.read_u32()?;
        if found != expected {
            return Err(Error::IdxWrongMagic {
                path: self.path.display().to_string(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Loads an IDX image/label file pair (the MNIST container format: big-endian
/// headers, u8 payload, magic 0x00000803 for images and 0x00000801 for
/// labels). Gzipped files are detected and decompressed. Pixels are scaled
/// to [0, 1]; labels become a 10-class target set.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = IdxReader::open(images_path)?;
    img.expect_magic(IDX_IMAGES_MAGIC)?;
    let count = img.read_u32()? as usize;
    let rows = img.read_u32()? as usize;
    let cols = img.read_u32()? as usize;
    let pixels = img.take(count * rows * cols)?;
    let features: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();

    let mut lab = IdxReader::open(labels_path)?;
    lab.expect_magic(IDX_LABELS_MAGIC)?;
    let label_count = lab.read_u32()? as usize;
    if label_count != count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let raw_labels = lab.take(label_count)?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);

    Dataset::new(
        Matrix::new(count, rows * cols, features)?,
        Targets::Classes { labels, classes },
        None,
    )
}

/// A non-iid split of one dataset across clients. Shards hold indices into
/// the source dataset; every index appears in at most one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub train_shards: Vec<Vec<usize>>,
    pub test_shards: Vec<Vec<usize>>,
    /// The classes present on each client, ascending.
    pub client_labels: Vec<Vec<usize>>,
}

/// Assigns `labels_per_client` distinct classes to every client such that
/// each class lands on the same number of clients, up to a difference of
/// one. Greedy: every client takes the classes with the most remaining
/// slots, ties broken by a seeded shuffle; rare dead ends are retried with
/// a fresh shuffle.
fn assign_labels(
    n_clients: usize,
    classes: usize,
    labels_per_client: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<usize>>> {
    let slots = n_clients * labels_per_client;
    'attempt: for _ in 0..100 {
        let mut capacity = vec![slots / classes; classes];
        let mut order: Vec<usize> = (0..classes).collect();
        rng.shuffle(&mut order);
        for &c in order.iter().take(slots % classes) {
            capacity[c] += 1;
        }
        let mut assignment = Vec::with_capacity(n_clients);
        for _ in 0..n_clients {
            let mut ranked: Vec<usize> = (0..classes).filter(|&c| capacity[c] > 0).collect();
            if ranked.len() < labels_per_client {
                continue 'attempt;
            }
            rng.shuffle(&mut ranked);
            ranked.sort_by_key(|&c| std::cmp::Reverse(capacity[c]));
            let mut chosen: Vec<usize> = ranked[..labels_per_client].to_vec();
            for &c in &chosen {
                capacity[c] -= 1;
            }
            chosen.sort_unstable();
            assignment.push(chosen);
        }
        return Ok(assignment);
    }
    Err(Error::InvalidParam {
        name: "labels_per_client",
        reason: format!(
            "could not spread {labels_per_client} of {classes} classes over {n_clients} clients"
        ),
    })
}

/// Splits a classification dataset across clients with label skew: every
/// client sees only `labels_per_client` of the classes and receives
/// `train_per_class`/`test_per_class` samples of each. Class occurrences
/// are balanced across clients, sample shards are pairwise disjoint, and
/// each client's test shard contains only that client's classes.
pub fn partition_label_skew(
    data: &Dataset,
    n_clients: usize,
    labels_per_client: usize,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<Partition> {
    let labels = data.labels().ok_or(Error::InvalidParam {
        name: "data",
        reason: "label-skew partition requires class targets".into(),
    })?;
    let classes = data.num_classes().unwrap();
    check_positive("n_clients", n_clients)?;
    check_positive("labels_per_client", labels_per_client)?;
    check_positive("train_per_class", train_per_class)?;
    if labels_per_client > classes {
        return Err(Error::InvalidParam {
            name: "labels_per_client",
            reason: format!("{labels_per_client} exceeds the {classes} available classes"),
        });
    }

    let mut rng = RngStream::for_context(seed, StreamPurpose::Partition, 0, 0);
    let client_labels = assign_labels(n_clients, classes, labels_per_client, &mut rng)?;

    // Independent shuffled pool per class; cursors keep shards disjoint.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        let mut pool_rng = RngStream::for_context(seed, StreamPurpose::Partition, 1, c as u64);
        pool_rng.shuffle(pool);
    }
    let mut cursor = vec![0usize; classes];

    let per_client = train_per_class + test_per_class;
    let mut train_shards = Vec::with_capacity(n_clients);
    let mut test_shards = Vec::with_capacity(n_clients);
    for chosen in &client_labels {
        let mut train = Vec::with_capacity(labels_per_client * train_per_class);
        let mut test = Vec::with_capacity(labels_per_client * test_per_class);
        for &c in chosen {
            let pool = &pools[c];
            if cursor[c] + per_client > pool.len() {
                return Err(Error::InsufficientClassSamples {
                    class: c,
                    needed: cursor[c] + per_client,
                    available: pool.len(),
                });
            }
            train.extend_from_slice(&pool[cursor[c]..cursor[c] + train_per_class]);
            test.extend_from_slice(&pool[cursor[c] + train_per_class..cursor[c] + per_client]);
            cursor[c] += per_client;
        }
        train_shards.push(train);
        test_shards.push(test);
    }
    Ok(Partition {
        train_shards,
        test_shards,
        client_labels,
    })
}

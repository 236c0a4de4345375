//! Datasets: MNIST IDX files, NPY arrays, corruption generators, the
//! corrupted-digit domain-shift splits and small synthetic point sets.

mod corruptions;
mod idx;
mod npy;

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use corruptions::{corrupt_image, translate, Corruption};
pub use idx::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, read_idx_images,
    read_idx_labels, IdxImages, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use npy::{encode_npy_f64, parse_npy, read_npy, write_npy_f64, NpyArray, NpyDtype};

/// Per-digit image counts of the canonical MNIST training file.
pub const MNIST_TRAIN_COUNTS: [usize; 10] = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
/// Per-digit image counts of the canonical MNIST test file.
pub const MNIST_TEST_COUNTS: [usize; 10] = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];

/// Which source file an image came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    MnistTrain,
    MnistTest,
    External,
}

/// Images in [0, 1] with digit labels, corruption tags and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub height: usize,
    pub width: usize,
    /// `len × height × width`, row-major.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub corruptions: Vec<String>,
    pub origins: Vec<Origin>,
    /// Position of the underlying image within its source file.
    pub source_index: Vec<usize>,
}

impl LabeledImageSet {
    pub fn empty(height: usize, width: usize) -> Self {
        LabeledImageSet {
            height,
            width,
            images: Vec::new(),
            labels: Vec::new(),
            corruptions: Vec::new(),
            origins: Vec::new(),
            source_index: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels_per_image();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn push(&mut self, image: &[f64], label: u8, corruption: &str, origin: Origin, source_index: usize) {
        self.images.extend_from_slice(image);
        self.labels.push(label);
        self.corruptions.push(corruption.to_string());
        self.origins.push(origin);
        self.source_index.push(source_index);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = LabeledImageSet::empty(self.height, self.width);
        for &i in indices {
            out.push(self.image(i), self.labels[i], &self.corruptions[i], self.origins[i], self.source_index[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &LabeledImageSet) {
        self.images.extend_from_slice(&other.images);
        self.labels.extend_from_slice(&other.labels);
        self.corruptions.extend(other.corruptions.iter().cloned());
        self.origins.extend_from_slice(&other.origins);
        self.source_index.extend_from_slice(&other.source_index);
    }

    /// `[N, 1, H, W]` tensor of the images.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), 1, self.height, self.width], self.images.clone())
            .expect("consistent image buffer")
    }

    /// Rows `indices` as an `[n, 1, H, W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let p = self.pixels_per_image();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), 1, self.height, self.width], data).expect("consistent image buffer")
    }

    /// Identity of the underlying (uncorrupted) image.
    pub fn image_id(&self, i: usize) -> (Origin, usize) {
        (self.origins[i], self.source_index[i])
    }

    /// SHA-256 over pixels, labels, tags and provenance.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.images {
            h.update(v.to_le_bytes());
        }
        h.update(&self.labels);
        for i in 0..self.len() {
            h.update(self.corruptions[i].as_bytes());
            h.update([self.origins[i] as u8]);
            h.update((self.source_index[i] as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if self.images.len() != n * self.pixels_per_image()
            || self.corruptions.len() != n
            || self.origins.len() != n
            || self.source_index.len() != n
        {
            return Err(Error::Data("image, label and tag counts differ".into()));
        }
        if self.images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn label_counts(&self) -> [usize; 10] {
        let mut c = [0; 10];
        for &l in &self.labels {
            if (l as usize) < 10 {
                c[l as usize] += 1;
            }
        }
        c
    }
}

/// Pairs an IDX image file with its label file.
pub fn load_idx(images: &Path, labels: &Path, origin: Origin) -> Result<LabeledImageSet> {
    let imgs = read_idx_images(images)?;
    let labs = read_idx_labels(labels)?;
    from_idx(imgs, labs, origin)
}

pub fn from_idx(imgs: IdxImages, labels: Vec<u8>, origin: Origin) -> Result<LabeledImageSet> {
    if imgs.count != labels.len() {
        return Err(Error::format(format!(
            "{} images but {} labels",
            imgs.count,
            labels.len()
        )));
    }
    let n = imgs.count;
    Ok(LabeledImageSet {
        height: imgs.rows,
        width: imgs.cols,
        images: imgs.pixels,
        labels,
        corruptions: vec!["identity".to_string(); n],
        origins: vec![origin; n],
        source_index: (0..n).collect(),
    })
}

/// The four canonical MNIST files in `dir`.
pub fn load_mnist(dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        Origin::MnistTrain,
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        Origin::MnistTest,
    )?;
    Ok((train, test))
}

/// Images from an NPY array of shape `N×H×W` or `N×H×W×1`. Byte arrays and
/// float arrays above 1 are divided by 255; floats in [0, 1] pass through.
pub fn images_from_npy(arr: &NpyArray) -> Result<(usize, usize, usize, Vec<f64>)> {
    let (n, h, w) = match arr.shape.as_slice() {
        &[n, h, w] | &[n, h, w, 1] => (n, h, w),
        s => return Err(Error::format(format!("expected N×H×W(×1) images, got shape {s:?}"))),
    };
    let scale = match arr.dtype {
        NpyDtype::U8 => 1.0 / 255.0,
        NpyDtype::F32 | NpyDtype::F64 => {
            if arr.data.iter().any(|&v| v > 1.0) {
                1.0 / 255.0
            } else {
                1.0
            }
        }
        NpyDtype::I64 => return Err(Error::format("integer images must be unsigned bytes")),
    };
    let pixels = if scale == 1.0 {
        arr.data.clone()
    } else {
        arr.data.iter().map(|v| v * scale).collect()
    };
    if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::format("image values outside [0, 255]"));
    }
    Ok((n, h, w, pixels))
}

/// Pre-corrupted images and labels from NPY files. The corruption tag is the
/// name of the directory holding `images`.
pub fn load_npy_corrupted(images: &Path, labels: &Path, origin: Origin) -> Result<LabeledImageSet> {
    let (n, h, w, pixels) = images_from_npy(&read_npy(images)?)?;
    let lab = read_npy(labels)?;
    if lab.data.len() != n {
        return Err(Error::format(format!("{n} images but {} labels", lab.data.len())));
    }
    let tag = images
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string());
    Ok(LabeledImageSet {
        height: h,
        width: w,
        images: pixels,
        labels: lab.data.iter().map(|&v| v as u8).collect(),
        corruptions: vec![tag; n],
        origins: vec![origin; n],
        source_index: (0..n).collect(),
    })
}

/// Applies `c` to every image of `set` and retags it.
pub fn apply_corruption(c: &Corruption, set: &LabeledImageSet, seed: u64) -> LabeledImageSet {
    let mut out = LabeledImageSet::empty(set.height, set.width);
    for i in 0..set.len() {
        let img = corrupt_image(c, set.image(i), set.height, set.width, seed, set.source_index[i] as u64);
        out.push(&img, set.labels[i], c.name(), set.origins[i], set.source_index[i]);
    }
    out
}

/// Options of the corrupted-digit task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment1Options {
    pub normal: u8,
    pub outlier: u8,
    /// Seed of corruption draws and of the train/early-stop split.
    pub seed: u64,
    /// Refuse inputs whose digit counts differ from canonical MNIST.
    pub strict_counts: bool,
    /// Keep only this many corrupted training images (reduced profile).
    pub train_limit: Option<usize>,
    /// Keep only this many validation and test images each.
    pub eval_limit: Option<usize>,
    pub train_corruptions: Vec<Corruption>,
    pub test_corruptions: Vec<Corruption>,
}

impl Default for Experiment1Options {
    fn default() -> Self {
        Experiment1Options {
            normal: 3,
            outlier: 8,
            seed: 0,
            strict_counts: true,
            train_limit: None,
            eval_limit: None,
            train_corruptions: Corruption::training_set().to_vec(),
            test_corruptions: Corruption::test_set().to_vec(),
        }
    }
}

/// Train / early-stop / validation / test sets of the corrupted-digit task.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment1Splits {
    pub train: LabeledImageSet,
    pub earlystop: LabeledImageSet,
    pub val: LabeledImageSet,
    pub test: LabeledImageSet,
}

impl Experiment1Splits {
    /// `train ∪ earlystop`, the data of the final OCSVM fit.
    pub fn full_train(&self) -> LabeledImageSet {
        let mut all = self.train.clone();
        all.extend(&self.earlystop);
        all
    }
}

fn digit_indices(set: &LabeledImageSet, digits: &[u8]) -> Vec<usize> {
    (0..set.len()).filter(|&i| digits.contains(&set.labels[i])).collect()
}

fn corrupted(set: &LabeledImageSet, indices: &[usize], corruptions: &[Corruption], seed: u64) -> LabeledImageSet {
    let base = set.subset(indices);
    let mut out = LabeledImageSet::empty(set.height, set.width);
    for (k, c) in corruptions.iter().enumerate() {
        out.extend(&apply_corruption(c, &base, seed.wrapping_add(k as u64)));
    }
    out
}

fn check_counts(set: &LabeledImageSet, canonical: &[usize; 10], digits: &[u8], strict: bool, what: &str) -> Result<()> {
    let counts = set.label_counts();
    for &d in digits {
        let (have, want) = (counts[d as usize], canonical[d as usize]);
        if have != want {
            let msg = format!("{what} holds {have} images of digit {d}, canonical MNIST has {want}");
            if strict {
                return Err(Error::Data(msg));
            }
            warn!("{msg}");
        }
    }
    Ok(())
}

/// Training data: normal digit of the MNIST training file under the training
/// corruptions, split 90/10 into train and early stop. Validation: both digits
/// of the MNIST test file under the test corruptions. Test: both digits of
/// the MNIST training file under the test corruptions.
pub fn build_experiment1_splits(
    mnist_train: &LabeledImageSet,
    mnist_test: &LabeledImageSet,
    opts: &Experiment1Options,
) -> Result<Experiment1Splits> {
    if opts.normal == opts.outlier || opts.normal > 9 || opts.outlier > 9 {
        return Err(Error::usage("normal and outlier must be two different digits"));
    }
    let digits = [opts.normal, opts.outlier];
    check_counts(mnist_train, &MNIST_TRAIN_COUNTS, &digits, opts.strict_counts, "MNIST train")?;
    check_counts(mnist_test, &MNIST_TEST_COUNTS, &digits, opts.strict_counts, "MNIST test")?;

    let normal_idx = digit_indices(mnist_train, &[opts.normal]);
    let train_all = corrupted(mnist_train, &normal_idx, &opts.train_corruptions, opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED_5EED);
    let mut order: Vec<usize> = (0..train_all.len()).collect();
    order.shuffle(&mut rng);
    if let Some(limit) = opts.train_limit {
        order.truncate(limit.min(order.len()));
    }
    let n_stop = (order.len() as f64 * 0.1).round() as usize;
    let n_train = order.len() - n_stop;
    let train = train_all.subset(&order[..n_train]);
    let earlystop = train_all.subset(&order[n_train..]);

    let mut val = corrupted(mnist_test, &digit_indices(mnist_test, &digits), &opts.test_corruptions, opts.seed + 100);
    let mut test = corrupted(mnist_train, &digit_indices(mnist_train, &digits), &opts.test_corruptions, opts.seed + 200);
    if let Some(limit) = opts.eval_limit {
        for set in [&mut val, &mut test] {
            let mut idx: Vec<usize> = (0..set.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(limit.min(idx.len()));
            idx.sort_unstable();
            *set = set.subset(&idx);
        }
    }
    Ok(Experiment1Splits {
        train,
        earlystop,
        val,
        test,
    })
}

/// Anomaly labels (`true` = anomalous) for an evaluation set.
pub fn anomaly_labels(set: &LabeledImageSet, outlier: u8) -> Vec<bool> {
    set.labels.iter().map(|&l| l == outlier).collect()
}

/// Gaussian clusters plus uniformly scattered outliers in the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n: usize,
    pub centers: Vec<[f64; 2]>,
    pub std: f64,
    pub outlier_fraction: f64,
    /// Outliers are drawn uniformly from `[-extent, extent]²`.
    pub extent: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            n: 100,
            centers: vec![[0.0, 0.0]],
            std: 0.5,
            outlier_fraction: 0.0,
            extent: 4.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f64; 2]>,
    /// `true` for planted outliers.
    pub outlier: Vec<bool>,
}

pub fn synth_gaussian_blobs(spec: &BlobSpec) -> Result<PointSet> {
    if spec.centers.is_empty() || !(spec.std > 0.0) || !(0.0..=1.0).contains(&spec.outlier_fraction) {
        return Err(Error::usage("blob spec needs centers, a positive std and a fraction in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_out = (spec.n as f64 * spec.outlier_fraction).round() as usize;
    let normal = Normal::new(0.0, spec.std).map_err(|e| Error::usage(e.to_string()))?;
    let mut points = Vec::with_capacity(spec.n);
    let mut outlier = Vec::with_capacity(spec.n);
    for i in 0..spec.n - n_out {
        let c = spec.centers[i % spec.centers.len()];
        points.push([c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)]);
        outlier.push(false);
    }
    for _ in 0..n_out {
        points.push([
            rng.random_range(-spec.extent..spec.extent),
            rng.random_range(-spec.extent..spec.extent),
        ]);
        outlier.push(true);
    }
    Ok(PointSet { points, outlier })
}

//! Synthetic datasets, label-noise injection and the dataset file format.
//!
//! The on-disk format is plain text:
//!
//! ```text
//! saner-ds v1 n=<n> d=<D> c=<C>
//! <true_label>,<observed_label>,<f_1>,...,<f_D>
//! ```
//!
//! An empty true-label cell means the ground truth is unknown (for example
//! human-annotated label sets); in that case every row must leave it empty
//! and the dataset carries no noisy flags.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Batch;

const HEADER_MAGIC: &str = "saner-ds v1";

/// Features plus true and observed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    true_labels: Vec<usize>,
    observed_labels: Vec<usize>,
    is_noisy: Vec<bool>,
    num_classes: usize,
    truth_known: bool,
}

impl LabeledDataset {
    /// Builds a dataset, deriving the noisy flags from the two label columns.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        true_labels: Vec<usize>,
        observed_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = observed_labels.len();
        if true_labels.len() != n {
            return Err(Error::Shape {
                what: "true labels",
                expected: n,
                found: true_labels.len(),
            });
        }
        let mut ds = Self::unverified(features, dim, observed_labels, num_classes)?;
        if let Some((index, &label)) = true_labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        ds.is_noisy = true_labels
            .iter()
            .zip(&ds.observed_labels)
            .map(|(t, o)| t != o)
            .collect();
        ds.true_labels = true_labels;
        ds.truth_known = true;
        Ok(ds)
    }

    /// Dataset whose ground truth is unknown: no sample is flagged noisy and
    /// noise-dependent diagnostics are unavailable.
    pub fn unverified(features: Vec<f64>, dim: usize, observed_labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = observed_labels.len();
        if dim == 0 || features.len() != n * dim {
            return Err(Error::Shape {
                what: "feature matrix",
                expected: n * dim,
                found: features.len(),
            });
        }
        if num_classes < 2 {
            return Err(Error::InvalidDataset("need at least two classes".into()));
        }
        if let Some((index, &label)) = observed_labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            features,
            dim,
            true_labels: observed_labels.clone(),
            observed_labels,
            is_noisy: vec![false; n],
            num_classes,
            truth_known: false,
        })
    }

    pub fn len(&self) -> usize {
        self.observed_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed_labels
    }

    pub fn is_noisy(&self) -> &[bool] {
        &self.is_noisy
    }

    /// Whether true labels (and therefore noisy flags) are available.
    pub fn truth_known(&self) -> bool {
        self.truth_known
    }

    pub fn noisy_count(&self) -> usize {
        self.is_noisy.iter().filter(|&&b| b).count()
    }

    /// Fraction of samples whose observed label differs from the truth.
    pub fn noise_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.noisy_count() as f64 / self.len() as f64
        }
    }

    /// Mini-batch over the given sample indices (observed labels).
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Batch::new(
            features,
            self.dim,
            indices.iter().map(|&i| self.observed_labels[i]).collect(),
            indices.iter().map(|&i| self.is_noisy[i]).collect(),
        )
    }

    /// Splits off the samples from `at` onwards into a second dataset.
    pub fn split_at(mut self, at: usize) -> (Self, Self) {
        let at = at.min(self.len());
        let tail = Self {
            features: self.features.split_off(at * self.dim),
            dim: self.dim,
            true_labels: self.true_labels.split_off(at),
            observed_labels: self.observed_labels.split_off(at),
            is_noisy: self.is_noisy.split_off(at),
            num_classes: self.num_classes,
            truth_known: self.truth_known,
        };
        (self, tail)
    }

    fn require_clean(&self) -> Result<()> {
        match self.noisy_count() {
            0 => Ok(()),
            n => Err(Error::NotClean(n)),
        }
    }

    fn with_observed(&self, observed: Vec<usize>) -> Self {
        let is_noisy = self.true_labels.iter().zip(&observed).map(|(t, o)| t != o).collect();
        Self {
            observed_labels: observed,
            is_noisy,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Symmetric,
    AsymmetricCircular,
    AsymmetricPairmap,
    /// Feature-dependent flips from fixed random projections; a stand-in
    /// for DNN-synthesised instance-dependent noise.
    InstanceProxy,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::AsymmetricCircular => "asymmetric_circular",
            NoiseKind::AsymmetricPairmap => "asymmetric_pairmap",
            NoiseKind::InstanceProxy => "instance_proxy",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "asymmetric_circular" | "circular" => Ok(NoiseKind::AsymmetricCircular),
            "asymmetric_pairmap" | "pairmap" => Ok(NoiseKind::AsymmetricPairmap),
            "instance_proxy" | "instance" => Ok(NoiseKind::InstanceProxy),
            other => Err(Error::InvalidNoise(format!("unknown noise kind {other:?}"))),
        }
    }
}

pub type PairMap = BTreeMap<usize, usize>;

/// Parses `"9:1,2:0"` into a class map.
pub fn parse_pair_map(s: &str) -> Result<PairMap> {
    let mut map = PairMap::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let (from, to) = item
            .split_once(':')
            .ok_or_else(|| Error::InvalidNoise(format!("pair {item:?} is not of the form a:b")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidNoise(format!("bad class index {v:?}")))
        };
        if map.insert(parse(from)?, parse(to)?).is_some() {
            return Err(Error::InvalidNoise(format!("class {from} mapped twice")));
        }
    }
    Ok(map)
}

pub fn format_pair_map(map: &PairMap) -> String {
    map.iter()
        .map(|(a, b)| format!("{a}:{b}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub pair_map: Option<PairMap>,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Self {
        Self {
            kind,
            rate,
            seed,
            pair_map: None,
        }
    }

    pub fn pairmap(rate: f64, seed: u64, map: PairMap) -> Self {
        Self {
            kind: NoiseKind::AsymmetricPairmap,
            rate,
            seed,
            pair_map: Some(map),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.rate)?;
        match (self.kind, &self.pair_map) {
            (NoiseKind::AsymmetricPairmap, None) => {
                Err(Error::InvalidNoise("pair-map noise requires a pair map".into()))
            }
            (NoiseKind::AsymmetricPairmap, Some(map)) => match map.iter().find(|(a, b)| a == b) {
                Some((a, _)) => Err(Error::InvalidNoise(format!("pair map sends class {a} to itself"))),
                None => Ok(()),
            },
            (_, Some(_)) => Err(Error::InvalidNoise(format!(
                "a pair map is only meaningful for asymmetric_pairmap, not {}",
                self.kind
            ))),
            _ => Ok(()),
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidRate(rate))
    }
}

/// `C` unit-covariance Gaussian clusters with centres at least `separation`
/// apart. Labels are balanced (class sizes differ by at most one) and
/// shuffled.
pub fn make_gaussian_blobs(n: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::InvalidDataset("need at least two classes".into()));
    }
    if n < classes {
        return Err(Error::InvalidDataset(format!("n = {n} is smaller than the class count {classes}")));
    }
    if dim < 2 {
        return Err(Error::InvalidDataset("need at least two feature dimensions".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidDataset(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = place_centers(classes, dim, separation, &mut rng)?;

    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * dim);
    for &y in &labels {
        let c = &centers[y * dim..(y + 1) * dim];
        features.extend(c.iter().map(|m| {
            let z: f64 = StandardNormal.sample(&mut rng);
            m + z
        }));
    }
    LabeledDataset::new(features, dim, labels.clone(), labels, classes)
}

/// With `C <= D` the centres are scaled, randomly signed basis vectors
/// (exactly `separation` apart). Otherwise they are drawn one at a time
/// from a ball and rejected until far enough from every earlier centre.
fn place_centers(classes: usize, dim: usize, separation: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut centers = vec![0.0; classes * dim];
    if classes <= dim {
        let mut axes: Vec<usize> = (0..dim).collect();
        axes.shuffle(rng);
        let scale = separation / 2f64.sqrt();
        for (c, &axis) in axes.iter().take(classes).enumerate() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            centers[c * dim + axis] = sign * scale;
        }
        return Ok(centers);
    }

    let radius = separation * (classes as f64).powf(1.0 / dim as f64);
    place_in_ball(&mut centers, classes, dim, separation, radius, rng)?;
    Ok(centers)
}

fn place_in_ball(
    centers: &mut [f64],
    classes: usize,
    dim: usize,
    separation: f64,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    const ATTEMPTS_PER_CENTER: usize = 2000;
    let mut candidate = vec![0.0; dim];
    for c in 0..classes {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_CENTER {
            sample_in_ball(&mut candidate, radius, rng);
            let clear = (0..c).all(|o| {
                let other = &centers[o * dim..(o + 1) * dim];
                let d2: f64 = other.iter().zip(&candidate).map(|(a, b)| (a - b).powi(2)).sum();
                d2 >= separation * separation
            });
            if clear {
                centers[c * dim..(c + 1) * dim].copy_from_slice(&candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasiblePacking {
                classes,
                dim,
                separation,
            });
        }
    }
    Ok(())
}

fn sample_in_ball(out: &mut [f64], radius: f64, rng: &mut ChaCha8Rng) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / out.len() as f64);
    for v in out.iter_mut() {
        *v *= r / norm;
    }
}

/// Each sample flips with probability `rate` to a uniformly chosen other
/// class.
pub fn inject_symmetric(ds: &LabeledDataset, rate: f64, seed: u64) -> Result<LabeledDataset> {
    check_rate(rate)?;
    ds.require_clean()?;
    let c = ds.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observed = ds
        .true_labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < rate {
                let r = rng.random_range(0..c - 1);
                if r >= y {
                    r + 1
                } else {
                    r
                }
            } else {
                y
            }
        })
        .collect();
    Ok(ds.with_observed(observed))
}

/// Circular (`y -> y + 1 mod C`) or pair-map class flips, each eligible
/// sample flipping with probability `spec.rate`.
pub fn inject_asymmetric(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    ds.require_clean()?;
    let c = ds.num_classes;
    let target: Box<dyn Fn(usize) -> Option<usize>> = match spec.kind {
        NoiseKind::AsymmetricCircular => Box::new(move |y| Some((y + 1) % c)),
        NoiseKind::AsymmetricPairmap => {
            let map = spec.pair_map.as_ref().expect("validated");
            if let Some((&a, &b)) = map.iter().find(|(&a, &b)| a >= c || b >= c) {
                return Err(Error::InvalidNoise(format!("pair {a}:{b} outside {c} classes")));
            }
            Box::new(move |y| map.get(&y).copied())
        }
        other => {
            return Err(Error::InvalidNoise(format!("{other} is not an asymmetric noise kind")));
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let observed = ds
        .true_labels
        .iter()
        .map(|&y| match target(y) {
            Some(t) if rng.random::<f64>() < spec.rate => t,
            _ => y,
        })
        .collect();
    Ok(ds.with_observed(observed))
}

/// Feature-dependent noise.
///
/// A seeded projection `u` scores each sample; the standardised score goes
/// through a sigmoid to give `s_i`, and the flip probability is
/// `min(1, rate * s_i / mean(s))`. A flipped sample takes the non-true
/// class scoring highest under a second seeded projection.
pub fn inject_instance_proxy(ds: &LabeledDataset, rate: f64, seed: u64) -> Result<LabeledDataset> {
    check_rate(rate)?;
    ds.require_clean()?;
    let probs = instance_flip_probabilities(ds, rate, seed);
    let (dim, c) = (ds.dim, ds.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let class_proj: Vec<f64> = (0..c * dim).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut flip_rng = ChaCha8Rng::seed_from_u64(seed);
    flip_rng.set_stream(2);
    let observed = (0..ds.len())
        .map(|i| {
            let y = ds.true_labels[i];
            if flip_rng.random::<f64>() >= probs[i] {
                return y;
            }
            let x = ds.row(i);
            (0..c)
                .filter(|&k| k != y)
                .map(|k| {
                    let w = &class_proj[k * dim..(k + 1) * dim];
                    (k, w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                })
                .fold((y, f64::NEG_INFINITY), |best, (k, s)| if s > best.1 { (k, s) } else { best })
                .0
        })
        .collect();
    Ok(ds.with_observed(observed))
}

/// Per-sample flip probabilities used by [`inject_instance_proxy`].
pub fn instance_flip_probabilities(ds: &LabeledDataset, rate: f64, seed: u64) -> Vec<f64> {
    let n = ds.len();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f64> = (0..ds.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw: Vec<f64> = (0..n)
        .map(|i| proj.iter().zip(ds.row(i)).map(|(a, b)| a * b).sum())
        .collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let std = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scores: Vec<f64> = raw
        .iter()
        .map(|v| {
            let z = if std > 0.0 { (v - mean) / std } else { 0.0 };
            1.0 / (1.0 + (-z).exp())
        })
        .collect();
    let mean_score = scores.iter().sum::<f64>() / n as f64;
    scores.iter().map(|s| (rate * s / mean_score).min(1.0)).collect()
}

/// Dispatches to the injector named by `spec.kind`.
pub fn apply_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    match spec.kind {
        NoiseKind::Symmetric => inject_symmetric(ds, spec.rate, spec.seed),
        NoiseKind::AsymmetricCircular | NoiseKind::AsymmetricPairmap => inject_asymmetric(ds, spec),
        NoiseKind::InstanceProxy => inject_instance_proxy(ds, spec.rate, spec.seed),
    }
}

/// Serialises a dataset in the `saner-ds v1` text format.
pub fn encode_dataset(ds: &LabeledDataset) -> String {
    let mut out = String::with_capacity(ds.len() * (ds.dim + 2) * 20);
    writeln!(out, "{HEADER_MAGIC} n={} d={} c={}", ds.len(), ds.dim, ds.num_classes).unwrap();
    for i in 0..ds.len() {
        if ds.truth_known {
            write!(out, "{}", ds.true_labels[i]).unwrap();
        }
        write!(out, ",{}", ds.observed_labels[i]).unwrap();
        for v in ds.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn decode_dataset(text: &str) -> Result<LabeledDataset> {
    let err = |line: usize, message: String| Error::DatasetParse { line, message };
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or_default();
    let (n, dim, classes) = parse_header(header).map_err(|m| err(1, m))?;
    if dim == 0 {
        return Err(err(1, "d must be positive".into()));
    }

    let mut features = Vec::with_capacity(n * dim);
    let mut truth = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    let mut truth_known = None;
    for row in 0..n {
        let line_no = row + 2;
        let line = match lines.next() {
            Some(l) if !l.is_empty() => l,
            _ => return Err(err(line_no, format!("expected {n} data rows, file ends after {row}"))),
        };
        let mut cells = line.split(',');
        let t = cells.next().unwrap_or_default();
        let has_truth = !t.is_empty();
        if *truth_known.get_or_insert(has_truth) != has_truth {
            return Err(err(line_no, "true labels must be given on every row or on none".into()));
        }
        let label = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| err(line_no, format!("bad {what} label {s:?}")))
        };
        if has_truth {
            truth.push(label(t, "true")?);
        }
        let o = cells
            .next()
            .ok_or_else(|| err(line_no, "missing observed label".into()))?;
        observed.push(label(o, "observed")?);
        let before = features.len();
        for cell in cells {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(line_no, format!("bad feature value {cell:?}")))?;
            features.push(v);
        }
        if features.len() - before != dim {
            return Err(err(
                line_no,
                format!("expected {dim} features, found {}", features.len() - before),
            ));
        }
    }
    for (extra, l) in lines.enumerate() {
        if !l.is_empty() {
            return Err(err(n + 2 + extra, "unexpected data after the declared rows".into()));
        }
    }
    let mapped = |e: Error| match e {
        Error::LabelOutOfRange { index, label, classes } => {
            err(index + 2, format!("label {label} outside {classes} classes"))
        }
        other => other,
    };
    if truth_known.unwrap_or(true) {
        LabeledDataset::new(features, dim, truth, observed, classes).map_err(mapped)
    } else {
        LabeledDataset::unverified(features, dim, observed, classes).map_err(mapped)
    }
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize, usize), String> {
    let rest = line
        .strip_prefix(HEADER_MAGIC)
        .ok_or_else(|| format!("expected header starting with {HEADER_MAGIC:?}"))?;
    let (mut n, mut d, mut c) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("malformed header field {field:?}"))?;
        let value: usize = value
            .parse()
            .map_err(|_| format!("header field {key} is not a count"))?;
        match key {
            "n" => n = Some(value),
            "d" => d = Some(value),
            "c" => c = Some(value),
            _ => return Err(format!("unknown header field {key:?}")),
        }
    }
    match (n, d, c) {
        (Some(n), Some(d), Some(c)) => Ok((n, d, c)),
        _ => Err("header must declare n, d and c".into()),
    }
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&text)
}

//! Controlled segmentation errors: impulse noise and binary morphology.
//!
//! Noise positions are drawn without replacement from one seeded permutation, so
//! the number of touched pixels is exact and a larger fraction always touches a
//! superset of the pixels a smaller fraction touches (for the same seed).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Label, LabeledArray, Result};

/// Default label written by salt noise (white).
pub const SALT_LABEL: Label = 1;
/// Default label written by pepper noise (black).
pub const PEPPER_LABEL: Label = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Salt,
    Pepper,
    SaltAndPepper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub fraction: f64,
    pub seed: u64,
    pub salt_label: Label,
    pub pepper_label: Label,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, fraction: f64, seed: u64) -> Self {
        Self {
            kind,
            fraction,
            seed,
            salt_label: SALT_LABEL,
            pepper_label: PEPPER_LABEL,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidConfig(format!(
                "noise fraction {} outside [0, 1]",
                self.fraction
            )));
        }
        if self.salt_label == self.pepper_label {
            return Err(Error::InvalidConfig(
                "salt and pepper labels must differ".into(),
            ));
        }
        Ok(())
    }
}

/// `floor(fraction * n)`, tolerant of representation error such as `0.3 * 10`.
fn portion(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).min(n)
}

fn shuffled(mut indices: Vec<usize>, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    indices.shuffle(&mut rng);
    indices
}

pub fn apply_noise(arr: &LabeledArray, spec: &NoiseSpec) -> Result<LabeledArray> {
    spec.validate()?;
    arr.ensure_labels_within(spec.salt_label, spec.pepper_label)?;
    let mut labels = arr.labels().to_vec();
    match spec.kind {
        NoiseKind::Salt | NoiseKind::Pepper => {
            let target = if spec.kind == NoiseKind::Salt {
                spec.salt_label
            } else {
                spec.pepper_label
            };
            let k = portion(spec.fraction, labels.len());
            let order = shuffled((0..labels.len()).collect(), spec.seed, 0);
            for &idx in &order[..k] {
                labels[idx] = target;
            }
        }
        NoiseKind::SaltAndPepper => {
            let (salted, peppered): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| labels[i] == spec.salt_label);
            let to_pepper = shuffled(salted, spec.seed, 1);
            let to_salt = shuffled(peppered, spec.seed, 2);
            for &idx in &to_pepper[..portion(spec.fraction, to_pepper.len())] {
                labels[idx] = spec.pepper_label;
            }
            for &idx in &to_salt[..portion(spec.fraction, to_salt.len())] {
                labels[idx] = spec.salt_label;
            }
        }
    }
    Ok(arr.with_labels(labels))
}

/// Sets `floor(fraction * MN)` random pixels to [`SALT_LABEL`].
pub fn salt_noise(arr: &LabeledArray, fraction: f64, seed: u64) -> Result<LabeledArray> {
    apply_noise(arr, &NoiseSpec::new(NoiseKind::Salt, fraction, seed))
}

/// Sets `floor(fraction * MN)` random pixels to [`PEPPER_LABEL`].
pub fn pepper_noise(arr: &LabeledArray, fraction: f64, seed: u64) -> Result<LabeledArray> {
    apply_noise(arr, &NoiseSpec::new(NoiseKind::Pepper, fraction, seed))
}

/// Flips `floor(level * count)` pixels of each label to the other one; level 1
/// is the exact complement.
pub fn salt_and_pepper(arr: &LabeledArray, level: f64, seed: u64) -> Result<LabeledArray> {
    apply_noise(arr, &NoiseSpec::new(NoiseKind::SaltAndPepper, level, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

/// Binary morphology with a square footprint of odd side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphSpec {
    pub op: MorphOp,
    pub footprint_side: usize,
    pub foreground_label: Label,
    pub background_label: Label,
}

impl MorphSpec {
    /// Foreground 0 (black) on background 1 (white).
    pub fn new(op: MorphOp, footprint_side: usize) -> Self {
        Self {
            op,
            footprint_side,
            foreground_label: 0,
            background_label: 1,
        }
    }

    pub fn with_labels(mut self, foreground: Label, background: Label) -> Self {
        self.foreground_label = foreground;
        self.background_label = background;
        self
    }
}

/// Applies `spec` to the foreground set of `arr`.
///
/// Pixels outside the image count as background, so erosion shrinks shapes that
/// touch the border. Closing runs on a canvas padded by the footprint radius so
/// that dilated pixels beyond the border are still seen by the erosion; with
/// that, opening is anti-extensive, closing extensive, and both idempotent.
pub fn morph(arr: &LabeledArray, spec: &MorphSpec) -> Result<LabeledArray> {
    if spec.footprint_side.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "footprint side must be odd, got {}",
            spec.footprint_side
        )));
    }
    if spec.foreground_label == spec.background_label {
        return Err(Error::InvalidConfig(
            "foreground and background labels must differ".into(),
        ));
    }
    arr.ensure_labels_within(spec.foreground_label, spec.background_label)?;
    let radius = spec.footprint_side / 2;
    let (rows, cols) = arr.shape();
    let mask: Vec<bool> = arr
        .labels()
        .iter()
        .map(|&l| l == spec.foreground_label)
        .collect();
    let out = match spec.op {
        MorphOp::Erode => square(&mask, rows, cols, radius, Pass::Erode),
        MorphOp::Dilate => square(&mask, rows, cols, radius, Pass::Dilate),
        MorphOp::Open => {
            let eroded = square(&mask, rows, cols, radius, Pass::Erode);
            square(&eroded, rows, cols, radius, Pass::Dilate)
        }
        MorphOp::Close => {
            let (prows, pcols) = (rows + 2 * radius, cols + 2 * radius);
            let mut padded = vec![false; prows * pcols];
            for r in 0..rows {
                let start = (r + radius) * pcols + radius;
                padded[start..start + cols].copy_from_slice(&mask[r * cols..(r + 1) * cols]);
            }
            let dilated = square(&padded, prows, pcols, radius, Pass::Dilate);
            let closed = square(&dilated, prows, pcols, radius, Pass::Erode);
            (0..rows)
                .flat_map(|r| {
                    let start = (r + radius) * pcols + radius;
                    closed[start..start + cols].to_vec()
                })
                .collect()
        }
    };
    Ok(arr.with_labels(
        out.into_iter()
            .map(|fg| {
                if fg {
                    spec.foreground_label
                } else {
                    spec.background_label
                }
            })
            .collect(),
    ))
}

#[derive(Clone, Copy)]
enum Pass {
    Erode,
    Dilate,
}

/// Square footprint as a row pass followed by a column pass.
fn square(mask: &[bool], rows: usize, cols: usize, radius: usize, pass: Pass) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let mut horizontal = vec![false; mask.len()];
    for r in 0..rows {
        let line: Vec<bool> = mask[r * cols..(r + 1) * cols].to_vec();
        window(&line, radius, pass, |c, v| horizontal[r * cols + c] = v);
    }
    let mut out = vec![false; mask.len()];
    for c in 0..cols {
        let line: Vec<bool> = (0..rows).map(|r| horizontal[r * cols + c]).collect();
        window(&line, radius, pass, |r, v| out[r * cols + c] = v);
    }
    out
}

/// 1-D sliding window via prefix counts; out-of-range neighbours are background.
fn window(line: &[bool], radius: usize, pass: Pass, mut emit: impl FnMut(usize, bool)) {
    let n = line.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &b in line {
        prefix.push(prefix.last().unwrap() + usize::from(b));
    }
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        let count = prefix[hi] - prefix[lo];
        let value = match pass {
            Pass::Dilate => count > 0,
            Pass::Erode => count == 2 * radius + 1,
        };
        emit(i, value);
    }
}

//! Metric response studies: perturbation sweeps, sum images of several
//! annotations, pairwise distance tables and agreement statistics.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::Evaluation;
use crate::perturb::{self, MorphOp, MorphSpec, NoiseKind, NoiseSpec};
use crate::{Error, Label, LabeledArray, MetricName, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Noise(NoiseKind),
    Morph(MorphOp),
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "salt" => SweepKind::Noise(NoiseKind::Salt),
            "pepper" => SweepKind::Noise(NoiseKind::Pepper),
            "salt_and_pepper" | "saltpepper" => SweepKind::Noise(NoiseKind::SaltAndPepper),
            "open" | "opening" => SweepKind::Morph(MorphOp::Open),
            "close" | "closing" => SweepKind::Morph(MorphOp::Close),
            "erode" => SweepKind::Morph(MorphOp::Erode),
            "dilate" => SweepKind::Morph(MorphOp::Dilate),
            other => return Err(Error::InvalidConfig(format!("unknown sweep kind `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub steps: usize,
    pub seed: u64,
    /// Label written by salt noise.
    pub white_label: Label,
    /// Label written by pepper noise.
    pub black_label: Label,
    /// Region grown or shrunk by morphology; must be the white or black label.
    pub foreground_label: Label,
}

impl SweepSpec {
    /// Black (0) foreground on white (1) background.
    pub fn new(kind: SweepKind, steps: usize, seed: u64) -> Self {
        Self {
            kind,
            steps,
            seed,
            white_label: 1,
            black_label: 0,
            foreground_label: 0,
        }
    }

    /// Perturbs `base` at step `step`: noise level `step/steps` or footprint `2*step+1`.
    pub fn perturb(&self, base: &LabeledArray, step: usize) -> Result<LabeledArray> {
        let level = step as f64 / self.steps as f64;
        match self.kind {
            SweepKind::Noise(kind) => {
                let mut spec = NoiseSpec::new(kind, level, self.seed);
                spec.salt_label = self.white_label;
                spec.pepper_label = self.black_label;
                perturb::apply_noise(base, &spec)
            }
            SweepKind::Morph(op) => {
                let background = if self.foreground_label == self.white_label {
                    self.black_label
                } else {
                    self.white_label
                };
                let spec = MorphSpec::new(op, 2 * step + 1).with_labels(self.foreground_label, background);
                perturb::morph(base, &spec)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub step: usize,
    pub level: f64,
    pub nhd: f64,
    pub bsm: Option<f64>,
    pub rm: f64,
    pub lad: f64,
    pub madlad: f64,
    pub madlad_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str = "step,level,nhd,bsm,rm,lad,madlad,madlad_degenerate";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let bsm = r.bsm.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.step, r.level, r.nhd, bsm, r.rm, r.lad, r.madlad, r.madlad_degenerate
            );
        }
        out
    }
}

/// Runs `steps + 1` perturbations of `base` (step 0 is the unperturbed array)
/// and scores each against `base`.
pub fn run_sweep(base: &LabeledArray, spec: &SweepSpec) -> Result<SweepResult> {
    if spec.steps < 2 {
        return Err(Error::InvalidConfig(format!("sweep needs at least 2 steps, got {}", spec.steps)));
    }
    if spec.white_label == spec.black_label {
        return Err(Error::InvalidConfig("white and black labels must differ".into()));
    }
    if spec.foreground_label != spec.white_label && spec.foreground_label != spec.black_label {
        return Err(Error::InvalidConfig(format!(
            "foreground label {} is neither the white nor the black label",
            spec.foreground_label
        )));
    }
    base.ensure_labels_within(spec.white_label, spec.black_label)?;
    let rows = (0..=spec.steps)
        .into_par_iter()
        .map(|step| {
            let perturbed = spec.perturb(base, step)?;
            let eval = Evaluation::new(base, &perturbed)?;
            let madlad = eval.metric(MetricName::Madlad)?;
            Ok(SweepRow {
                step,
                level: step as f64 / spec.steps as f64,
                nhd: eval.metric(MetricName::Nhd)?.value,
                bsm: eval.metric(MetricName::Bsm).ok().map(|r| r.value),
                rm: eval.metric(MetricName::Rm)?.value,
                lad: eval.metric(MetricName::Lad)?.value,
                madlad: madlad.value,
                madlad_degenerate: madlad.degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        kind: spec.kind,
        rows,
    })
}

/// Per-pixel count of masks that carry label 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SumImage {
    pub rows: usize,
    pub cols: usize,
    pub masks: usize,
    pub values: Vec<u32>,
}

impl SumImage {
    pub fn to_labeled_array(&self) -> LabeledArray {
        LabeledArray::new(self.rows, self.cols, self.values.clone())
            .expect("sum image has the shape of its masks")
    }

    /// PGM with `maxval` equal to the number of masks.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        crate::io::encode_pgm(&self.to_labeled_array(), self.masks as u32)
    }
}

pub fn sum_image(masks: &[LabeledArray]) -> Result<SumImage> {
    if masks.len() < 2 {
        return Err(Error::InvalidConfig("sum image needs at least two masks".into()));
    }
    let first = &masks[0];
    let mut values = vec![0u32; first.len()];
    for mask in masks {
        first.ensure_same_shape(mask)?;
        mask.ensure_labels_within(0, 1)?;
        for (acc, &l) in values.iter_mut().zip(mask.labels()) {
            *acc += l;
        }
    }
    Ok(SumImage {
        rows: first.rows(),
        cols: first.cols(),
        masks: masks.len(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `entries[a][b] = metric(gt = a, candidate = b)`.
    RowAsGt,
    /// `entries[a][b] = metric(gt = b, candidate = a)`.
    ColAsGt,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "row_as_gt" | "row" => Ok(Direction::RowAsGt),
            "col_as_gt" | "col" | "column" => Ok(Direction::ColAsGt),
            other => Err(Error::InvalidConfig(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    pub ids: Vec<String>,
    pub entries: Vec<Vec<f64>>,
    pub metric: String,
    pub direction_note: String,
}

impl DistanceTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a][b]
    }

    /// Entries `(a, b)` with `a < b`, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .map(|(a, b)| self.entries[a][b])
            .collect()
    }

    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(a, row)| row.iter().enumerate().filter(move |(b, _)| *b != a).map(|(_, &v)| v))
    }

    /// Header `id,<id1>,...` then one row per id.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (id, row) in self.ids.iter().zip(&self.entries) {
            let mut record = vec![id.clone()];
            record.extend(row.iter().map(f64::to_string));
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }

    pub fn from_csv(text: &str, metric: impl Into<String>) -> Result<Self> {
        let (ids, rows) = read_square_csv(text, |s| s.trim().parse::<f64>().ok())?;
        Ok(DistanceTable {
            ids,
            entries: rows,
            metric: metric.into(),
            direction_note: String::new(),
        })
    }
}

/// Parses the `id,<id1>,...` square-matrix CSV shared by distance tables and
/// choice matrices.
pub(crate) fn read_square_csv<T>(
    text: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<(Vec<String>, Vec<Vec<T>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse(0, "empty matrix CSV"))??;
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::with_capacity(ids.len());
    for (i, record) in records.enumerate() {
        let record = record?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        if record.len() != ids.len() + 1 {
            return Err(Error::parse(offset, format!("row has {} cells, expected {}", record.len(), ids.len() + 1)));
        }
        if ids.get(i).map(String::as_str) != Some(&record[0]) {
            return Err(Error::parse(offset, format!("row id `{}` does not match header order", &record[0])));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|cell| parse(cell).ok_or_else(|| Error::parse(offset, format!("invalid cell `{cell}`"))))
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    if rows.len() != ids.len() {
        return Err(Error::parse(text.len() as u64, format!("expected {} rows, found {}", ids.len(), rows.len())));
    }
    Ok((ids, rows))
}

/// Pairwise table with ids `"1"`, `"2"`, ... in input order.
pub fn distance_table(arrays: &[LabeledArray], metric: MetricName, direction: Direction) -> Result<DistanceTable> {
    let ids: Vec<String> = (1..=arrays.len()).map(|i| i.to_string()).collect();
    distance_table_named(&ids, arrays, metric, direction)
}

pub fn distance_table_named(
    ids: &[String],
    arrays: &[LabeledArray],
    metric: MetricName,
    direction: Direction,
) -> Result<DistanceTable> {
    if arrays.len() < 2 {
        return Err(Error::InvalidConfig("distance table needs at least two arrays".into()));
    }
    if ids.len() != arrays.len() {
        return Err(Error::InvalidConfig(format!("{} ids for {} arrays", ids.len(), arrays.len())));
    }
    for a in arrays {
        arrays[0].ensure_same_shape(a)?;
    }
    let n = arrays.len();
    let cells: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (idx / n, idx % n);
            if a == b {
                return Ok(0.0);
            }
            let (gt, candidate) = match direction {
                Direction::RowAsGt => (&arrays[a], &arrays[b]),
                Direction::ColAsGt => (&arrays[b], &arrays[a]),
            };
            Ok(Evaluation::new(gt, candidate)?.metric(metric)?.value)
        })
        .collect::<Result<_>>()?;
    let direction_note = match direction {
        Direction::RowAsGt => "row is ground truth, column is candidate",
        Direction::ColAsGt => "column is ground truth, row is candidate",
    };
    Ok(DistanceTable {
        ids: ids.to_vec(),
        entries: cells.chunks(n).map(<[f64]>::to_vec).collect(),
        metric: metric.to_string(),
        direction_note: direction_note.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgreementStats {
    pub threshold: f64,
    /// Off-diagonal cells below the threshold; exact zeros always count.
    pub below_count: usize,
    pub below_mean: Option<f64>,
    pub offdiag_count: usize,
    pub offdiag_mean: f64,
}

pub fn agreement_stats(table: &DistanceTable, threshold: f64) -> AgreementStats {
    let mut below = (0usize, 0.0f64);
    let mut all = (0usize, 0.0f64);
    for v in table.off_diagonal() {
        all.0 += 1;
        all.1 += v;
        if v < threshold || v == 0.0 {
            below.0 += 1;
            below.1 += v;
        }
    }
    AgreementStats {
        threshold,
        below_count: below.0,
        below_mean: (below.0 > 0).then(|| below.1 / below.0 as f64),
        offdiag_count: all.0,
        offdiag_mean: if all.0 > 0 { all.1 / all.0 as f64 } else { 0.0 },
    }
}

/// Centered rectangle of `foreground` on `background`.
pub fn box_mask(
    rows: usize,
    cols: usize,
    box_rows: usize,
    box_cols: usize,
    foreground: Label,
    background: Label,
) -> Result<LabeledArray> {
    if box_rows > rows || box_cols > cols {
        return Err(Error::InvalidConfig("box larger than the image".into()));
    }
    let (r0, c0) = ((rows - box_rows) / 2, (cols - box_cols) / 2);
    let labels = (0..rows * cols)
        .map(|idx| {
            let (r, c) = (idx / cols, idx % cols);
            if (r0..r0 + box_rows).contains(&r) && (c0..c0 + box_cols).contains(&c) {
                foreground
            } else {
                background
            }
        })
        .collect();
    LabeledArray::new(rows, cols, labels)
}

/// Stand-in for several people annotating the same image: each annotator is
/// a seeded opening or closing of `base` (labels 0/1, foreground 0) with a
/// footprint of side 1, 3 or 5.
pub fn synthetic_annotators(base: &LabeledArray, count: usize, seed: u64) -> Result<Vec<LabeledArray>> {
    base.ensure_labels_within(0, 1)?;
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let op = if rng.random_bool(0.5) { MorphOp::Open } else { MorphOp::Close };
            let side = [1, 3, 5][rng.random_range(0..3)];
            perturb::morph(base, &MorphSpec::new(op, side))
        })
        .collect()
}

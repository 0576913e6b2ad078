//! Distances between a ground truth `G` and a candidate segmentation `I`.
//!
//! | metric  | value                                   | label invariant |
//! |---------|-----------------------------------------|-----------------|
//! | NHD     | `d_H / MN`                              | no              |
//! | BSM     | `1 - |1 - 2 d_H / MN|` (binary only)    | binary swap     |
//! | RM      | `P / MN`                                | yes             |
//! | LAD     | `(P + |U - V|) / MN`                    | yes             |
//! | MADLAD  | `(P/MN + r)^(1 - r)`, `r = |U-V|/(U+V)` | yes             |
//!
//! `P` is the number of pixels left unexplained when every candidate region is
//! mapped onto the ground-truth region it overlaps most. The mapping runs from
//! `I` to `G`, so RM, LAD and MADLAD are not symmetric in their arguments.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::{Error, Label, LabeledArray, Result};

/// MADLAD value reported when the mapping collapses onto a single region.
pub const DEGENERATE_SENTINEL: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Nhd,
    Bsm,
    Rm,
    Lad,
    Madlad,
}

impl MetricName {
    pub const ALL: [MetricName; 5] = [
        MetricName::Nhd,
        MetricName::Bsm,
        MetricName::Rm,
        MetricName::Lad,
        MetricName::Madlad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Nhd => "nhd",
            MetricName::Bsm => "bsm",
            MetricName::Rm => "rm",
            MetricName::Lad => "lad",
            MetricName::Madlad => "madlad",
        }
    }

    /// Whether relabeling either input bijectively leaves the value unchanged.
    pub fn is_label_invariant(self) -> bool {
        matches!(self, MetricName::Rm | MetricName::Lad | MetricName::Madlad)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: MetricName,
    pub value: f64,
    /// Authoritative degeneracy flag; only MADLAD reports the sentinel value.
    pub degenerate: bool,
}

/// Sparse joint histogram of `(ground truth label, candidate label)` pairs.
#[derive(Clone, Debug)]
pub struct ContingencyTable {
    overlaps: FxHashMap<(Label, Label), usize>,
    g_marginals: BTreeMap<Label, usize>,
    v_marginals: BTreeMap<Label, usize>,
    total: usize,
}

impl ContingencyTable {
    /// Number of pixels carrying `g` in the ground truth and `v` in the candidate.
    pub fn overlap(&self, g: Label, v: Label) -> usize {
        self.overlaps.get(&(g, v)).copied().unwrap_or(0)
    }

    /// Non-zero cells in arbitrary order.
    pub fn cells(&self) -> impl Iterator<Item = ((Label, Label), usize)> + '_ {
        self.overlaps.iter().map(|(&k, &c)| (k, c))
    }

    /// Non-zero cells sorted by `(g, v)`.
    pub fn sorted_cells(&self) -> Vec<((Label, Label), usize)> {
        let mut cells: Vec<_> = self.cells().collect();
        cells.sort_unstable();
        cells
    }

    pub fn g_marginals(&self) -> &BTreeMap<Label, usize> {
        &self.g_marginals
    }

    pub fn v_marginals(&self) -> &BTreeMap<Label, usize> {
        &self.v_marginals
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Distinct labels in the ground truth.
    pub fn u(&self) -> usize {
        self.g_marginals.len()
    }

    /// Distinct labels in the candidate.
    pub fn v(&self) -> usize {
        self.v_marginals.len()
    }

    /// Pixels whose labels differ exactly, read off the diagonal.
    pub fn hamming(&self) -> usize {
        let agree: usize = self
            .overlaps
            .iter()
            .filter(|((g, v), _)| g == v)
            .map(|(_, &c)| c)
            .sum();
        self.total - agree
    }

    /// Number of distinct labels across both arrays.
    pub fn union_size(&self) -> usize {
        let mut n = self.g_marginals.len();
        n += self
            .v_marginals
            .keys()
            .filter(|v| !self.g_marginals.contains_key(v))
            .count();
        n
    }
}

pub fn build_contingency(g: &LabeledArray, i: &LabeledArray) -> Result<ContingencyTable> {
    g.ensure_same_shape(i)?;
    let mut overlaps: FxHashMap<(Label, Label), usize> = FxHashMap::default();
    // Neighbouring pixels usually share a pair, so counts are batched per run.
    let mut run_key = (g.labels()[0], i.labels()[0]);
    let mut run_len = 0usize;
    for (&gl, &il) in g.labels().iter().zip(i.labels()) {
        if (gl, il) == run_key {
            run_len += 1;
        } else {
            *overlaps.entry(run_key).or_insert(0) += run_len;
            run_key = (gl, il);
            run_len = 1;
        }
    }
    *overlaps.entry(run_key).or_insert(0) += run_len;

    let mut g_marginals = BTreeMap::new();
    let mut v_marginals = BTreeMap::new();
    for (&(gl, vl), &c) in &overlaps {
        *g_marginals.entry(gl).or_insert(0) += c;
        *v_marginals.entry(vl).or_insert(0) += c;
    }
    Ok(ContingencyTable {
        overlaps,
        g_marginals,
        v_marginals,
        total: g.len(),
    })
}

/// Assignment of every candidate region to a ground-truth region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RegionMapping {
    /// Candidate label to the ground-truth label it overlaps most; ties go to the
    /// smallest ground-truth id.
    pub assignment: BTreeMap<Label, Label>,
    /// `P`: pixels not covered by the assigned overlaps.
    pub mismatched_pixels: usize,
    /// At least two candidate regions, all mapped onto one ground-truth region.
    pub degenerate: bool,
    pub u: usize,
    pub v: usize,
    pub total: usize,
}

impl RegionMapping {
    pub fn from_table(table: &ContingencyTable) -> Self {
        let cells: Vec<_> = table.cells().collect();
        let mut best: HashMap<Label, (Label, usize)> = HashMap::with_capacity(table.v());
        for &((g, v), c) in &cells {
            best.entry(v)
                .and_modify(|cur| {
                    if c > cur.1 || (c == cur.1 && g < cur.0) {
                        *cur = (g, c);
                    }
                })
                .or_insert((g, c));
        }
        let explained: usize = best.values().map(|&(_, c)| c).sum();
        // Degenerate when one g is a maximal overlap for every candidate,
        // so the flag does not depend on how ties are broken.
        let mut shared: HashMap<Label, usize> = HashMap::new();
        for &((g, v), c) in &cells {
            if c == best[&v].1 {
                *shared.entry(g).or_default() += 1;
            }
        }
        let degenerate = best.len() >= 2 && shared.values().any(|&n| n == best.len());
        let assignment: BTreeMap<Label, Label> = best.into_iter().map(|(v, (g, _))| (v, g)).collect();
        RegionMapping {
            assignment,
            mismatched_pixels: table.total() - explained,
            degenerate,
            u: table.u(),
            v: table.v(),
            total: table.total(),
        }
    }

    fn region_gap(&self) -> usize {
        self.u.abs_diff(self.v)
    }
}

pub fn region_mapping(g: &LabeledArray, i: &LabeledArray) -> Result<RegionMapping> {
    Ok(RegionMapping::from_table(&build_contingency(g, i)?))
}

/// Count of pixels whose labels differ.
pub fn hamming(g: &LabeledArray, i: &LabeledArray) -> Result<usize> {
    g.ensure_same_shape(i)?;
    Ok(g.labels()
        .iter()
        .zip(i.labels())
        .filter(|(a, b)| a != b)
        .count())
}

pub fn nhd(g: &LabeledArray, i: &LabeledArray) -> Result<MetricResult> {
    Ok(plain(MetricName::Nhd, hamming(g, i)? as f64 / g.len() as f64))
}

pub fn bsm_distance(g: &LabeledArray, i: &LabeledArray) -> Result<MetricResult> {
    Evaluation::new(g, i)?.metric(MetricName::Bsm)
}

pub fn rm_distance(g: &LabeledArray, i: &LabeledArray) -> Result<MetricResult> {
    Evaluation::new(g, i)?.metric(MetricName::Rm)
}

pub fn lad(g: &LabeledArray, i: &LabeledArray) -> Result<MetricResult> {
    Evaluation::new(g, i)?.metric(MetricName::Lad)
}

pub fn madlad(g: &LabeledArray, i: &LabeledArray) -> Result<MetricResult> {
    Evaluation::new(g, i)?.metric(MetricName::Madlad)
}

fn plain(metric: MetricName, value: f64) -> MetricResult {
    MetricResult {
        metric,
        value,
        degenerate: false,
    }
}

/// One contingency pass shared by every metric of a `(G, I)` pair.
#[derive(Clone, Debug)]
pub struct Evaluation {
    table: ContingencyTable,
    mapping: RegionMapping,
}

impl Evaluation {
    pub fn new(g: &LabeledArray, i: &LabeledArray) -> Result<Self> {
        let table = build_contingency(g, i)?;
        let mapping = RegionMapping::from_table(&table);
        Ok(Self { table, mapping })
    }

    pub fn table(&self) -> &ContingencyTable {
        &self.table
    }

    pub fn mapping(&self) -> &RegionMapping {
        &self.mapping
    }

    pub fn into_mapping(self) -> RegionMapping {
        self.mapping
    }

    pub fn is_binary(&self) -> bool {
        self.table.union_size() <= 2
    }

    pub fn metric(&self, metric: MetricName) -> Result<MetricResult> {
        let total = self.table.total() as f64;
        let nhd = self.table.hamming() as f64 / total;
        let rm = self.mapping.mismatched_pixels as f64 / total;
        Ok(match metric {
            MetricName::Nhd => plain(metric, nhd),
            MetricName::Bsm => {
                if !self.is_binary() {
                    return Err(Error::Inapplicable {
                        metric: "bsm",
                        reason: format!(
                            "{} distinct labels across both arrays, at most 2 allowed",
                            self.table.union_size()
                        ),
                    });
                }
                let d = self.table.hamming();
                let folded = d.min(self.table.total() - d);
                plain(metric, (2 * folded) as f64 / total)
            }
            MetricName::Rm => plain(metric, rm),
            MetricName::Lad => plain(
                metric,
                (self.mapping.mismatched_pixels + self.mapping.region_gap()) as f64 / total,
            ),
            MetricName::Madlad => {
                if self.mapping.degenerate {
                    MetricResult {
                        metric,
                        value: DEGENERATE_SENTINEL,
                        degenerate: true,
                    }
                } else if self.mapping.u == self.mapping.v {
                    plain(metric, rm)
                } else {
                    let r = self.mapping.region_gap() as f64 / (self.mapping.u + self.mapping.v) as f64;
                    plain(metric, (rm + r).powf(1.0 - r))
                }
            }
        })
    }
}

/// Every applicable metric for one pair.
#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub results: BTreeMap<MetricName, MetricResult>,
    /// Metrics that were skipped, with the reason.
    pub inapplicable: BTreeMap<MetricName, String>,
    pub mismatched_pixels: usize,
    pub u: usize,
    pub v: usize,
    pub total: usize,
    pub degenerate: bool,
}

impl Comparison {
    pub fn value(&self, metric: MetricName) -> Option<f64> {
        self.results.get(&metric).map(|r| r.value)
    }
}

pub fn compare_all(g: &LabeledArray, i: &LabeledArray) -> Result<Comparison> {
    let eval = Evaluation::new(g, i)?;
    let mut results = BTreeMap::new();
    let mut inapplicable = BTreeMap::new();
    for metric in MetricName::ALL {
        match eval.metric(metric) {
            Ok(r) => {
                results.insert(metric, r);
            }
            Err(Error::Inapplicable { reason, .. }) => {
                inapplicable.insert(metric, reason);
            }
            Err(e) => return Err(e),
        }
    }
    let m = eval.mapping();
    Ok(Comparison {
        results,
        inapplicable,
        mismatched_pixels: m.mismatched_pixels,
        u: m.u,
        v: m.v,
        total: m.total,
        degenerate: m.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(rows: &[&[Label]]) -> LabeledArray {
        LabeledArray::from_rows(rows).unwrap()
    }

    fn g0() -> LabeledArray {
        arr(&[&[0, 0], &[0, 1]])
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming(&g0(), &g0()).unwrap(), 0);
        assert_eq!(hamming(&g0(), &arr(&[&[1, 1], &[1, 0]])).unwrap(), 4);
        assert_eq!(hamming(&g0(), &arr(&[&[0, 0], &[0, 0]])).unwrap(), 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let small = g0();
        let big = LabeledArray::filled(3, 3, 0).unwrap();
        assert!(matches!(hamming(&small, &big), Err(Error::ShapeMismatch(2, 2, 3, 3))));
        assert!(matches!(lad(&small, &big), Err(Error::ShapeMismatch(..))));
        assert!(compare_all(&small, &big).is_err());
    }

    #[test]
    fn nhd_examples() {
        assert_eq!(nhd(&g0(), &g0()).unwrap().value, 0.0);
        assert_eq!(nhd(&g0(), &arr(&[&[1, 1], &[1, 0]])).unwrap().value, 1.0);
        assert_eq!(nhd(&g0(), &arr(&[&[0, 0], &[0, 0]])).unwrap().value, 0.25);
    }

    #[test]
    fn bsm_examples() {
        assert_eq!(bsm_distance(&g0(), &g0()).unwrap().value, 0.0);
        assert_eq!(bsm_distance(&g0(), &arr(&[&[1, 1], &[1, 0]])).unwrap().value, 0.0);
        assert_eq!(bsm_distance(&g0(), &arr(&[&[0, 0], &[0, 0]])).unwrap().value, 0.5);
        let three = arr(&[&[0, 1], &[2, 0]]);
        assert!(matches!(
            bsm_distance(&g0(), &three),
            Err(Error::Inapplicable { metric: "bsm", .. })
        ));
        // union of labels counts, not each side separately
        assert!(bsm_distance(&g0(), &arr(&[&[0, 0], &[0, 2]])).is_err());
    }

    #[test]
    fn contingency_examples() {
        let t = build_contingency(&g0(), &arr(&[&[1, 1], &[1, 0]])).unwrap();
        assert_eq!(t.sorted_cells(), vec![((0, 1), 3), ((1, 0), 1)]);
        assert_eq!(t.total(), 4);

        let t = build_contingency(&g0(), &g0()).unwrap();
        assert!(t.cells().all(|((g, v), _)| g == v));

        let t = build_contingency(&g0(), &LabeledArray::filled(2, 2, 7).unwrap()).unwrap();
        let column: BTreeMap<Label, usize> = t.cells().map(|((g, _), c)| (g, c)).collect();
        assert_eq!(&column, t.g_marginals());
        assert_eq!(t.v_marginals().len(), 1);
    }

    #[test]
    fn mapping_examples() {
        let m = region_mapping(&g0(), &arr(&[&[1, 1], &[1, 0]])).unwrap();
        assert_eq!(m.assignment, BTreeMap::from([(0, 1), (1, 0)]));
        assert_eq!(m.mismatched_pixels, 0);
        assert!(!m.degenerate);

        let m = region_mapping(&g0(), &arr(&[&[0, 0], &[0, 0]])).unwrap();
        assert_eq!(m.assignment, BTreeMap::from([(0, 0)]));
        assert_eq!(m.mismatched_pixels, 1);
        assert!(!m.degenerate);

        let m = region_mapping(&arr(&[&[0, 1], &[0, 1]]), &arr(&[&[0, 1], &[1, 0]])).unwrap();
        assert_eq!(m.assignment, BTreeMap::from([(0, 0), (1, 0)]));
        assert_eq!(m.mismatched_pixels, 2);
        assert!(m.degenerate);
    }

    #[test]
    fn rm_lad_madlad_examples() {
        let unique = arr(&[&[0, 1], &[2, 3]]);
        let flat = arr(&[&[0, 0], &[0, 0]]);
        assert_eq!(rm_distance(&g0(), &g0()).unwrap().value, 0.0);
        assert_eq!(rm_distance(&g0(), &unique).unwrap().value, 0.0);
        assert_eq!(rm_distance(&g0(), &flat).unwrap().value, 0.25);

        assert_eq!(lad(&g0(), &g0()).unwrap().value, 0.0);
        assert_eq!(lad(&g0(), &unique).unwrap().value, 0.5);
        assert_eq!(lad(&g0(), &flat).unwrap().value, 0.5);

        assert_eq!(madlad(&g0(), &g0()).unwrap().value, 0.0);
        let m = madlad(&g0(), &flat).unwrap();
        assert!(!m.degenerate);
        assert!((m.value - (0.25f64 + 1.0 / 3.0).powf(2.0 / 3.0)).abs() < 1e-15);
        assert!((m.value - 0.6980).abs() < 5e-4);

        let d = madlad(&arr(&[&[0, 1], &[0, 1]]), &arr(&[&[0, 1], &[1, 0]])).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.value, DEGENERATE_SENTINEL);
    }

    #[test]
    fn compare_all_binary_and_multilabel() {
        let swap = arr(&[&[1, 1], &[1, 0]]);
        let c = compare_all(&g0(), &swap).unwrap();
        assert_eq!(c.results.len(), 5);
        assert!(c.inapplicable.is_empty());

        let three = arr(&[&[0, 1], &[2, 2]]);
        let c = compare_all(&g0(), &three).unwrap();
        assert_eq!(c.results.len(), 4);
        assert!(c.inapplicable.contains_key(&MetricName::Bsm));

        let c = compare_all(&three, &three).unwrap();
        assert!(c.results.values().all(|r| r.value == 0.0));
    }

    #[test]
    fn metric_names_parse() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
        }
        assert!("iou".parse::<MetricName>().is_err());
    }

    #[test]
    fn table_hamming_matches_direct_count() {
        let a = arr(&[&[0, 1, 2], &[2, 2, 1]]);
        let b = arr(&[&[0, 2, 2], &[1, 2, 1]]);
        assert_eq!(build_contingency(&a, &b).unwrap().hamming(), hamming(&a, &b).unwrap());
    }
}

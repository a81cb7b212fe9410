//! Join Count test for spatial autocorrelation of categorical cell labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::clustering::{ClusterResult, UsageLabel};
use crate::error::{Error, Result};
use crate::grid::CellId;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    /// Eight neighbours.
    #[default]
    Queen,
    /// Four neighbours.
    Rook,
}

impl Adjacency {
    fn adjacent(self, a: CellId, b: CellId) -> bool {
        let dr = a.row.abs_diff(b.row);
        let dc = a.col.abs_diff(b.col);
        match self {
            Adjacency::Queen => dr.max(dc) == 1,
            Adjacency::Rook => dr + dc == 1,
        }
    }
}

/// Labelled cells with binary symmetric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledLattice {
    pub cells: Vec<CellId>,
    /// Index into `names` per cell.
    pub labels: Vec<usize>,
    pub names: Vec<String>,
    /// Undirected edges, `i < j`.
    pub edges: Vec<(usize, usize)>,
}

impl LabelledLattice {
    /// Builds the lattice from cell labels, dropping any label in `exclude`.
    pub fn new(
        labels: &BTreeMap<CellId, String>,
        exclude: &[&str],
        adjacency: Adjacency,
    ) -> Result<Self> {
        let kept: Vec<(CellId, &String)> = labels
            .iter()
            .filter(|(_, l)| !exclude.contains(&l.as_str()))
            .map(|(c, l)| (*c, l))
            .collect();
        if kept.is_empty() {
            return Err(Error::InsufficientData("no labelled cells".into()));
        }
        let names: Vec<String> = kept
            .iter()
            .map(|(_, l)| (*l).clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let cells: Vec<CellId> = kept.iter().map(|(c, _)| *c).collect();
        let idx: Vec<usize> = kept
            .iter()
            .map(|(_, l)| names.binary_search(l).unwrap())
            .collect();
        let mut edges = Vec::new();
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                if adjacency.adjacent(cells[i], cells[j]) {
                    edges.push((i, j));
                }
            }
        }
        Ok(LabelledLattice {
            cells,
            labels: idx,
            names,
            edges,
        })
    }

    /// Cluster labels with the high-intensity class removed.
    pub fn from_clusters(r: &ClusterResult) -> Result<Self> {
        let labels = r
            .cell_labels()
            .into_iter()
            .map(|(c, l)| (c, l.to_string()))
            .collect();
        Self::new(
            &labels,
            &[&UsageLabel::HighIntensity.to_string()],
            Adjacency::Queen,
        )
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.names.len()];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }

    /// Joins between every unordered label pair, indexed `[a][b]` with `a <= b`.
    pub fn join_matrix(&self) -> Vec<Vec<u64>> {
        let k = self.names.len();
        let mut m = vec![vec![0u64; k]; k];
        for &(i, j) in &self.edges {
            let (a, b) = (
                self.labels[i].min(self.labels[j]),
                self.labels[i].max(self.labels[j]),
            );
            m[a][b] += 1;
        }
        m
    }

    fn same_label_counts(&self, labels: &[usize]) -> Vec<u64> {
        let mut out = vec![0u64; self.names.len()];
        for &(i, j) in &self.edges {
            if labels[i] == labels[j] {
                out[labels[i]] += 1;
            }
        }
        out
    }

    /// Weight sums S0, S1, S2 of the binary symmetric weights.
    fn weight_sums(&self) -> (f64, f64, f64) {
        let mut degree = vec![0f64; self.n()];
        for &(i, j) in &self.edges {
            degree[i] += 1.0;
            degree[j] += 1.0;
        }
        let s0 = 2.0 * self.edges.len() as f64;
        (s0, 2.0 * s0, degree.iter().map(|d| 4.0 * d * d).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Label counts fixed, positions permuted.
    #[default]
    Nonfree,
    /// Labels drawn independently with the observed proportions.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinCountRow {
    pub label: String,
    pub n_cells: usize,
    pub observed: u64,
    pub expected: f64,
    pub variance: f64,
    /// `None` when the variance is zero.
    pub z: Option<f64>,
    /// Upper-tail normal p-value.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationRow {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    /// `(1 + #{perm >= observed}) / (permutations + 1)`.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinCountReport {
    pub sampling: Sampling,
    pub total_joins: u64,
    pub rows: Vec<JoinCountRow>,
    pub permutations: usize,
    pub permutation_rows: Vec<PermutationRow>,
    pub notes: Vec<String>,
}

impl JoinCountReport {
    pub fn row(&self, label: &str) -> Option<&JoinCountRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "label",
            "n_cells",
            "count",
            "expected",
            "variance",
            "z",
            "p_value",
            "perm_mean",
            "perm_p_value",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6e}"));
        for r in &self.rows {
            let perm = self.permutation_rows.iter().find(|p| p.label == r.label);
            wtr.write_record([
                r.label.clone(),
                r.n_cells.to_string(),
                r.observed.to_string(),
                format!("{:.4}", r.expected),
                format!("{:.4}", r.variance),
                opt(r.z),
                opt(r.p_value),
                perm.map_or("NA".into(), |p| format!("{:.4}", p.mean)),
                perm.map_or("NA".into(), |p| format!("{:.6}", p.p_value)),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Mean and variance of the same-label join count of a class with `nb` of
/// `n` cells.
pub fn join_count_moments(
    n: usize,
    nb: usize,
    s: (f64, f64, f64),
    sampling: Sampling,
) -> (f64, f64) {
    let (s0, s1, s2) = s;
    match sampling {
        Sampling::Nonfree => {
            let (n, b) = (n as f64, nb as f64);
            let n2 = n * (n - 1.0);
            let n3 = n2 * (n - 2.0);
            let n4 = n3 * (n - 3.0);
            let b2 = b * (b - 1.0);
            let b3 = b2 * (b - 2.0);
            let b4 = b3 * (b - 3.0);
            let mean = s0 * b2 / (2.0 * n2);
            let mut m2 = s1 * b2 / n2;
            if n3 != 0.0 {
                m2 += (s2 - 2.0 * s1) * b3 / n3;
            }
            if n4 != 0.0 {
                m2 += (s0 * s0 + s1 - s2) * b4 / n4;
            }
            (mean, (0.25 * m2 - mean * mean).max(0.0))
        }
        Sampling::Free => {
            let p = nb as f64 / n as f64;
            let mean = 0.5 * s0 * p * p;
            let m2 = s1 * p.powi(2) + (s2 - 2.0 * s1) * p.powi(3) + (s0 * s0 + s1 - s2) * p.powi(4);
            (mean, (0.25 * m2 - mean * mean).max(0.0))
        }
    }
}

/// Closed-form same-label Join Count test for every label.
pub fn join_count(lattice: &LabelledLattice, sampling: Sampling) -> Result<JoinCountReport> {
    if lattice.edges.is_empty() {
        return Err(Error::InsufficientData(
            "lattice has no adjacent cells".into(),
        ));
    }
    let counts = lattice.label_counts();
    let observed = lattice.same_label_counts(&lattice.labels);
    let s = lattice.weight_sums();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for (l, name) in lattice.names.iter().enumerate() {
        if counts[l] < 2 {
            notes.push(format!("label {name} has {} cell(s); omitted", counts[l]));
            continue;
        }
        let (expected, variance) = join_count_moments(lattice.n(), counts[l], s, sampling);
        let (z, p_value) = if variance > 1e-12 {
            let z = (observed[l] as f64 - expected) / variance.sqrt();
            (Some(z), Some(normal.sf(z)))
        } else {
            notes.push(format!(
                "label {name}: zero variance, trivially autocorrelated"
            ));
            (None, None)
        };
        rows.push(JoinCountRow {
            label: name.clone(),
            n_cells: counts[l],
            observed: observed[l],
            expected,
            variance,
            z,
            p_value,
        });
    }
    Ok(JoinCountReport {
        sampling,
        total_joins: lattice.edges.len() as u64,
        rows,
        permutations: 0,
        permutation_rows: Vec::new(),
        notes,
    })
}

/// Same-label join counts for `permutations` random relabellings; one
/// vector per permutation.
pub fn permutation_counts(
    lattice: &LabelledLattice,
    permutations: usize,
    seed: u64,
) -> Vec<Vec<u64>> {
    (0..permutations)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, &[seed::key("joincount"), i as u64]));
            let mut labels = lattice.labels.clone();
            labels.shuffle(&mut rng);
            lattice.same_label_counts(&labels)
        })
        .collect()
}

/// [`join_count`] plus a Monte-Carlo permutation cross-check.
pub fn join_count_with_permutations(
    lattice: &LabelledLattice,
    sampling: Sampling,
    permutations: usize,
    seed: u64,
) -> Result<JoinCountReport> {
    let mut report = join_count(lattice, sampling)?;
    if permutations == 0 {
        return Ok(report);
    }
    let sims = permutation_counts(lattice, permutations, seed);
    let observed = lattice.same_label_counts(&lattice.labels);
    report.permutations = permutations;
    report.permutation_rows = report
        .rows
        .iter()
        .map(|row| {
            let l = lattice.names.iter().position(|n| *n == row.label).unwrap();
            let xs: Vec<f64> = sims.iter().map(|s| s[l] as f64).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var =
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
            let above = sims.iter().filter(|s| s[l] >= observed[l]).count();
            PermutationRow {
                label: row.label.clone(),
                mean,
                sd: var.sqrt(),
                p_value: (1 + above) as f64 / (permutations + 1) as f64,
            }
        })
        .collect();
    Ok(report)
}

#[derive(Deserialize)]
struct AssignmentRecord {
    row: u32,
    col: u32,
    label: String,
}

/// Reads a `row,col,...,label` assignment CSV.
pub fn read_assignment_csv<R: Read>(r: R) -> Result<BTreeMap<CellId, String>> {
    let mut out = BTreeMap::new();
    for rec in csv::Reader::from_reader(r).deserialize() {
        let rec: AssignmentRecord = rec?;
        if out
            .insert(CellId::new(rec.row, rec.col), rec.label)
            .is_some()
        {
            return Err(Error::invalid(format!(
                "duplicate cell ({}, {})",
                rec.row, rec.col
            )));
        }
    }
    Ok(out)
}

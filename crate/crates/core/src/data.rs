//! Sample sets, the synthetic Gaussian-cluster generator, squared-Euclidean
//! costs and CSV ingestion.
//!
//! Synthetic data is reproducible from a seed: the generator is ChaCha8
//! (`rand_chacha`) seeded with `seed_from_u64`, each 2-D point draws one
//! Box-Muller pair from two uniforms `u1, u2` in `[0, 1)`:
//!
//! ```text
//! r = sqrt(-2 ln(1 - u1));  (x, y) = (r cos(2 pi u2), r sin(2 pi u2))
//! ```
//!
//! Source points are drawn class by class, then target points class by class,
//! then the target rows are shuffled with the same generator.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::ColMatrix;
use crate::problem::{GroupPartition, ProblemInstance};

/// Spacing of the class means along the first axis.
pub const CLASS_SPACING: f64 = 5.0;
/// Second coordinate of the source means; the target uses its negation.
pub const SOURCE_OFFSET: f64 = -5.0;

/// Labeled source samples, rows sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSamples {
    pub dim: usize,
    /// Row-major `m x dim`.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    /// Optional per-row mass, used only when weighted marginals are requested.
    pub weights: Option<Vec<f64>>,
}

/// Unlabeled target samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSamples {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub features: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl LabeledSamples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn groups(&self) -> Result<GroupPartition> {
        GroupPartition::from_sorted_labels(&self.labels)
    }

    /// Stable reorder so labels are non-decreasing.
    fn sort_by_label(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.labels[i]);
        let dim = self.dim;
        self.features = order.iter().flat_map(|&i| self.features[i * dim..(i + 1) * dim].to_vec()).collect();
        self.labels = order.iter().map(|&i| self.labels[i]).collect();
        if let Some(w) = &self.weights {
            self.weights = Some(order.iter().map(|&i| w[i]).collect());
        }
    }
}

impl UnlabeledSamples {
    pub fn len(&self) -> usize {
        self.features.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.features[j * self.dim..(j + 1) * self.dim]
    }
}

fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
    let (s, c) = (TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Two-dimensional Gaussian clusters: class `l` (1-based) has source mean
/// `(5 l, -5)` and target mean `(5 l, 5)`, unit covariance, `per_class`
/// points per class on each side. Target rows are shuffled and unlabeled.
pub fn gen_synthetic(num_classes: usize, per_class: usize, seed: u64) -> Result<(LabeledSamples, UnlabeledSamples)> {
    if num_classes == 0 {
        return Err(Error::InvalidParameter { name: "num_classes", value: 0.0 });
    }
    if per_class == 0 {
        return Err(Error::InvalidParameter { name: "per_class", value: 0.0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = num_classes * per_class;
    let mut draw = |offset: f64| {
        let mut pts = Vec::with_capacity(2 * total);
        for l in 1..=num_classes {
            let cx = l as f64 * CLASS_SPACING;
            for _ in 0..per_class {
                let (x, y) = normal_pair(&mut rng);
                pts.push(cx + x);
                pts.push(offset + y);
            }
        }
        pts
    };
    let source = draw(SOURCE_OFFSET);
    let target = draw(-SOURCE_OFFSET);
    let labels = (1..=num_classes as u32).flat_map(|l| std::iter::repeat_n(l, per_class)).collect();

    let mut rows: Vec<[f64; 2]> = target.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    rows.shuffle(&mut rng);

    Ok((
        LabeledSamples { dim: 2, features: source, labels, weights: None },
        UnlabeledSamples { dim: 2, features: rows.into_iter().flatten().collect(), weights: None },
    ))
}

/// `c_ij = |x_i - y_j|^2`.
pub fn cost_matrix(src: &LabeledSamples, tgt: &UnlabeledSamples) -> Result<ColMatrix> {
    if src.dim != tgt.dim {
        return Err(Error::DimensionMismatch { what: "feature dimension", expected: src.dim, found: tgt.dim });
    }
    let (m, n) = (src.len(), tgt.len());
    let mut cost = ColMatrix::zeros(m, n);
    cost.as_mut_slice().par_chunks_mut(m.max(1)).enumerate().for_each(|(j, col)| {
        let y = tgt.row(j);
        for (i, c) in col.iter_mut().enumerate() {
            *c = src.row(i).iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    Ok(cost)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InstanceOptions {
    /// Divide the cost matrix by its largest entry.
    pub normalize_cost: bool,
    /// Use the `weight` columns as marginals instead of uniform mass.
    pub weighted: bool,
}

fn weights_to_marginal(w: Option<&Vec<f64>>, len: usize, weighted: bool) -> Vec<f64> {
    match w {
        Some(w) if weighted => {
            let total: f64 = w.iter().sum();
            w.iter().map(|v| v / total).collect()
        }
        _ => vec![1.0 / len as f64; len],
    }
}

/// Builds a validated transport problem from two sample sets.
pub fn instance_from_samples(src: &LabeledSamples, tgt: &UnlabeledSamples, opts: InstanceOptions) -> Result<ProblemInstance> {
    let mut cost = cost_matrix(src, tgt)?;
    if opts.normalize_cost {
        let max = cost.max_abs();
        if max > 0.0 {
            cost.scale(1.0 / max);
        }
    }
    let a = weights_to_marginal(src.weights.as_ref(), src.len(), opts.weighted);
    let b = weights_to_marginal(tgt.weights.as_ref(), tgt.len(), opts.weighted);
    ProblemInstance::new(cost, a, b, src.groups()?)
}

fn parse_field(raw: &str, line: u64, column: usize) -> Result<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
        line,
        column,
        message: format!("`{raw}` is not a finite number"),
    })
}

struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let header = reader.headers()?.iter().map(|h| h.trim().to_string()).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

/// Reads a source file (`label,f0,f1,...`) and a target file (`f0,f1,...`).
///
/// An optional `weight` column is accepted in either file. Source rows come
/// back stably sorted by label.
pub fn load_csv(source_path: impl AsRef<Path>, target_path: impl AsRef<Path>) -> Result<(LabeledSamples, UnlabeledSamples)> {
    let src = read_table(source_path.as_ref())?;
    let tgt = read_table(target_path.as_ref())?;

    let label_col = src.header.iter().position(|h| h == "label").ok_or(Error::MissingLabelColumn)?;
    let src_weight = src.header.iter().position(|h| h == "weight");
    let src_features: Vec<usize> = (0..src.header.len()).filter(|&c| c != label_col && Some(c) != src_weight).collect();
    let tgt_weight = tgt.header.iter().position(|h| h == "weight");
    let tgt_features: Vec<usize> = (0..tgt.header.len()).filter(|&c| Some(c) != tgt_weight).collect();

    let src_names: Vec<&str> = src_features.iter().map(|&c| src.header[c].as_str()).collect();
    let tgt_names: Vec<&str> = tgt_features.iter().map(|&c| tgt.header[c].as_str()).collect();
    if src_names != tgt_names {
        let column = src_names.iter().zip(&tgt_names).position(|(a, b)| a != b).unwrap_or(src_names.len().min(tgt_names.len()));
        return Err(Error::Parse {
            line: 1,
            column,
            message: format!("target header {tgt_names:?} does not match source features {src_names:?}"),
        });
    }
    let dim = src_features.len();

    let mut labels = Vec::with_capacity(src.rows.len());
    let mut features = Vec::with_capacity(src.rows.len() * dim);
    let mut weights = src_weight.map(|_| Vec::with_capacity(src.rows.len()));
    for (line, row) in &src.rows {
        if row.len() != src.header.len() {
            return Err(Error::InconsistentDimension { line: *line, expected: src.header.len(), found: row.len() });
        }
        let raw = row[label_col].trim();
        let label = raw.parse::<u32>().ok().filter(|l| *l > 0).ok_or_else(|| Error::Parse {
            line: *line,
            column: label_col,
            message: format!("label `{raw}` is not a positive integer"),
        })?;
        labels.push(label);
        for &c in &src_features {
            features.push(parse_field(&row[c], *line, c)?);
        }
        if let (Some(w), Some(c)) = (weights.as_mut(), src_weight) {
            w.push(parse_field(&row[c], *line, c)?);
        }
    }

    let mut tfeatures = Vec::with_capacity(tgt.rows.len() * dim);
    let mut tweights = tgt_weight.map(|_| Vec::with_capacity(tgt.rows.len()));
    for (line, row) in &tgt.rows {
        if row.len() != tgt.header.len() {
            return Err(Error::InconsistentDimension { line: *line, expected: tgt.header.len(), found: row.len() });
        }
        for &c in &tgt_features {
            tfeatures.push(parse_field(&row[c], *line, c)?);
        }
        if let (Some(w), Some(c)) = (tweights.as_mut(), tgt_weight) {
            w.push(parse_field(&row[c], *line, c)?);
        }
    }

    let mut source = LabeledSamples { dim, features, labels, weights };
    source.sort_by_label();
    Ok((source, UnlabeledSamples { dim, features: tfeatures, weights: tweights }))
}

fn feature_header(dim: usize) -> impl Iterator<Item = String> {
    (0..dim).map(|k| format!("f{k}"))
}

/// Writes `label,f0,...` rows. Values use the shortest round-trip formatting.
pub fn save_source_csv(samples: &LabeledSamples, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = std::iter::once("label".to_string()).chain(feature_header(samples.dim)).collect();
    if samples.weights.is_some() {
        header.push("weight".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..samples.len() {
        write!(w, "{}", samples.labels[i])?;
        for v in samples.row(i) {
            write!(w, ",{v}")?;
        }
        if let Some(ws) = &samples.weights {
            write!(w, ",{}", ws[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `f0,f1,...` rows.
pub fn save_target_csv(samples: &UnlabeledSamples, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = feature_header(samples.dim).collect();
    if samples.weights.is_some() {
        header.push("weight".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for j in 0..samples.len() {
        let row: Vec<String> = samples.row(j).iter().map(f64::to_string).collect();
        write!(w, "{}", row.join(","))?;
        if let Some(ws) = &samples.weights {
            write!(w, ",{}", ws[j])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an `m x n` matrix as headerless CSV, one source row per line.
pub fn save_matrix_csv(matrix: &ColMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..matrix.rows() {
        let row: Vec<String> = (0..matrix.cols()).map(|j| matrix.get(i, j).to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

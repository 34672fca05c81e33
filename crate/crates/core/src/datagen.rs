//! Synthetic correlated streams and CSV ingestion.
//!
//! Generated samples follow `x = A s + σ·e`, `y = B s + σ·e'` with a shared
//! standard-normal latent `s`. The mixing matrices are redrawn at each change
//! point.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CcaError, Result};

/// Largest accepted condition number of a mixing matrix.
pub const MAX_MIXING_CONDITION: f64 = 1e6;
/// A change is redrawn when every principal angle to the previous span is
/// below this many radians.
pub const MIN_CHANGE_ANGLE: f64 = 0.01;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    pub n: usize,
    pub m: usize,
    pub p_true: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub noise_sigma: f64,
    pub change_points: Vec<usize>,
    pub seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            n: 36,
            m: 34,
            p_true: 4,
            t_len: 2000,
            noise_sigma: 0.05,
            change_points: Vec::new(),
            seed: 0,
        }
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CcaError::InvalidArgument(msg));
        if self.n == 0 || self.m == 0 {
            return bad(format!("view dimensions must be positive, got {}x{}", self.n, self.m));
        }
        if self.p_true == 0 || self.p_true > self.n.min(self.m) {
            return bad(format!(
                "p_true = {} must lie in 1..={}",
                self.p_true,
                self.n.min(self.m)
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma = {} must be finite and >= 0", self.noise_sigma));
        }
        let mut prev = 0;
        for &c in &self.change_points {
            if c <= prev || c >= self.t_len {
                return bad(format!(
                    "change points must be strictly increasing within (0, {}), got {:?}",
                    self.t_len, self.change_points
                ));
            }
            prev = c;
        }
        Ok(())
    }
}

/// A time-ordered sequence of sample pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stream {
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<f64>, &DVector<f64>)> {
        self.x.iter().zip(&self.y)
    }

    /// `(n, m)`, or `None` for an empty stream.
    pub fn dims(&self) -> Option<(usize, usize)> {
        Some((self.x.first()?.len(), self.y.first()?.len()))
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = a.singular_values();
    let max = s.max();
    let min = s.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// Principal angles (radians) between the column spans of `a` and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    (qa.transpose() * qb)
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect()
}

fn draw_mixing(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    previous: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    for _ in 0..MAX_REDRAWS {
        let a = gaussian_matrix(rng, rows, cols);
        if condition_number(&a) > MAX_MIXING_CONDITION {
            continue;
        }
        if let Some(prev) = previous {
            if principal_angles(prev, &a).iter().all(|&t| t < MIN_CHANGE_ANGLE) {
                continue;
            }
        }
        return Ok(a);
    }
    Err(CcaError::InvalidArgument(format!(
        "no acceptable {rows}x{cols} mixing matrix after {MAX_REDRAWS} draws"
    )))
}

/// The mixing matrices in force for one segment of a generated stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Generates the stream together with its mixing segments.
pub fn generate_with_segments(spec: &StreamSpec) -> Result<(Stream, Vec<Segment>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = draw_mixing(&mut rng, spec.n, spec.p_true, None)?;
    let mut b = draw_mixing(&mut rng, spec.m, spec.p_true, None)?;
    let mut segments = vec![Segment { start: 0, a: a.clone(), b: b.clone() }];
    let mut changes = spec.change_points.iter().peekable();
    let mut stream = Stream {
        x: Vec::with_capacity(spec.t_len),
        y: Vec::with_capacity(spec.t_len),
    };
    for t in 0..spec.t_len {
        if changes.next_if_eq(&&t).is_some() {
            a = draw_mixing(&mut rng, spec.n, spec.p_true, Some(&a))?;
            b = draw_mixing(&mut rng, spec.m, spec.p_true, Some(&b))?;
            segments.push(Segment { start: t, a: a.clone(), b: b.clone() });
        }
        let s = gaussian_vector(&mut rng, spec.p_true);
        let ex = gaussian_vector(&mut rng, spec.n);
        let ey = gaussian_vector(&mut rng, spec.m);
        stream.x.push(&a * &s + ex * spec.noise_sigma);
        stream.y.push(&b * &s + ey * spec.noise_sigma);
    }
    Ok((stream, segments))
}

pub fn generate(spec: &StreamSpec) -> Result<Stream> {
    generate_with_segments(spec).map(|(s, _)| s)
}

/// Column assignment of a feature file to the two views.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSplit {
    pub x_columns: Vec<usize>,
    pub y_columns: Vec<usize>,
}

impl ViewSplit {
    /// Columns `0..n` for x and `n..n+m` for y.
    pub fn contiguous(n: usize, m: usize) -> Self {
        Self {
            x_columns: (0..n).collect(),
            y_columns: (n..n + m).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_columns.is_empty() || self.y_columns.is_empty() {
            return Err(CcaError::InvalidArgument("view split has an empty view".into()));
        }
        let mut seen = HashSet::new();
        for c in self.x_columns.iter().chain(&self.y_columns) {
            if !seen.insert(*c) {
                return Err(CcaError::InvalidArgument(format!(
                    "column {c} appears more than once in the view split"
                )));
            }
        }
        Ok(())
    }

    /// Smallest row width that covers every referenced column.
    pub fn min_width(&self) -> usize {
        self.x_columns
            .iter()
            .chain(&self.y_columns)
            .max()
            .map_or(0, |c| c + 1)
    }
}

/// Parses a comma-separated feature table into a stream.
///
/// Rows and columns in errors are 1-based and count the header line.
pub fn read_stream_csv<R: Read>(reader: R, split: &ViewSplit, header: bool) -> Result<Stream> {
    split.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let need = split.min_width();
    let mut stream = Stream::default();
    let mut width = None;
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(CcaError::Parse {
                    row: row + 1,
                    column: 0,
                    message: e.to_string(),
                })
            }
        }
        row += 1;
        if header && row == 1 {
            width = Some(record.len());
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CcaError::Parse {
                row,
                column: record.len().min(expected) + 1,
                message: format!("ragged row: {} fields, expected {expected}", record.len()),
            });
        }
        if record.len() < need {
            return Err(CcaError::Parse {
                row,
                column: record.len() + 1,
                message: format!("row has {} fields but the split needs {need}", record.len()),
            });
        }
        let field = |c: usize| -> Result<f64> {
            let text = &record[c];
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(CcaError::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-finite value {text:?}"),
                }),
                Err(e) => Err(CcaError::Parse {
                    row,
                    column: c + 1,
                    message: format!("{text:?}: {e}"),
                }),
            }
        };
        let x = split
            .x_columns
            .iter()
            .map(|&c| field(c))
            .collect::<Result<Vec<_>>>()?;
        let y = split
            .y_columns
            .iter()
            .map(|&c| field(c))
            .collect::<Result<Vec<_>>>()?;
        stream.x.push(DVector::from_vec(x));
        stream.y.push(DVector::from_vec(y));
    }
    Ok(stream)
}

pub fn ingest_csv(path: impl AsRef<Path>, split: &ViewSplit, header: bool) -> Result<Stream> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| CcaError::Io(format!("{}: {e}", path.display())))?;
    read_stream_csv(BufReader::new(file), split, header)
}

/// Writes `x` then `y` columns with a `x0,..,y0,..` header. Values use the
/// shortest representation that parses back exactly.
pub fn write_stream_csv<W: Write>(out: W, stream: &Stream) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let err = |e: csv::Error| CcaError::Io(e.to_string());
    let (n, m) = stream.dims().unwrap_or((0, 0));
    let header: Vec<String> = (0..n)
        .map(|i| format!("x{i}"))
        .chain((0..m).map(|j| format!("y{j}")))
        .collect();
    w.write_record(&header).map_err(err)?;
    for (x, y) in stream.iter() {
        if x.len() != n || y.len() != m {
            return Err(CcaError::DimensionMismatch {
                context: "write_stream_csv",
                expected: format!("{n}+{m}"),
                actual: format!("{}+{}", x.len(), y.len()),
            });
        }
        w.write_record(x.iter().chain(y.iter()).map(|v| v.to_string()))
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub const LABELS_HEADER: &str = "t";

/// Writes change indices one per line under a `t` header.
pub fn write_labels<W: Write>(mut out: W, changes: &[usize]) -> Result<()> {
    writeln!(out, "{LABELS_HEADER}")?;
    for c in changes {
        writeln!(out, "{c}")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a labels file: an optional `t` header, then one non-negative
/// integer per line in strictly increasing order. Blank lines are skipped.
pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || (i == 0 && text == LABELS_HEADER) {
            continue;
        }
        let v: usize = text.parse().map_err(|e| CcaError::Parse {
            row: i + 1,
            column: 1,
            message: format!("{text:?}: {e}"),
        })?;
        if out.last().is_some_and(|&last| v <= last) {
            return Err(CcaError::Parse {
                row: i + 1,
                column: 1,
                message: format!("change index {v} is not increasing"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| CcaError::Io(format!("{}: {e}", path.display())))?;
    read_labels(BufReader::new(file))
}

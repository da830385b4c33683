//! Dataset and tangent-target file formats, plus a seeded two-class toy
//! generator.
//!
//! Dataset files are plain text: a header line
//! `cfcnn-data <rows> <cols> <depth> <classes> <count>` followed, per
//! sample, by one line of `rows*cols*depth` input scalars (slice-major) and
//! one line of `classes` target scalars. Tangent files mirror this:
//! `cfcnn-tangents <rows> <cols> <depth> <classes> <count>` followed, per
//! record, by a 1-based sample-index line, a direction line, and a target
//! line; several records may share one index. Numbers are whitespace-
//! separated decimals; floats are printed in shortest round-trip form, so a
//! write/read cycle is value-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{FeatureStack, Vec1D};
use crate::network::{NetworkSpec, NetworkState};
use crate::train::{Sample, TangentTarget};

/// A loaded dataset: input dimensions, class count, and the samples (with
/// empty tangent lists; tangent files attach separately).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub classes: usize,
    pub samples: Vec<Sample>,
}

fn parse_numbers(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "line {line_no}: expected a decimal number, got `{tok}`"
                ))
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Data(format!(
            "line {line_no}: expected {expected} values, got {}",
            values.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "line {line_no}: non-finite value {bad}"
        )));
    }
    Ok(values)
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    next_no: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        LineReader {
            lines: text.lines(),
            next_no: 1,
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        let no = self.next_no;
        match self.lines.next() {
            Some(line) => {
                self.next_no += 1;
                Ok((no, line))
            }
            None => Err(Error::Data(format!("line {no}: unexpected end of file"))),
        }
    }

    fn expect_end(&mut self) -> Result<()> {
        let no = self.next_no;
        match self.lines.next() {
            None => Ok(()),
            Some(line) if line.trim().is_empty() => self.expect_end(),
            Some(_) => Err(Error::Data(format!(
                "line {no}: unexpected trailing content"
            ))),
        }
    }
}

fn parse_header(
    line_no: usize,
    line: &str,
    tag: &str,
) -> Result<(usize, usize, usize, usize, usize)> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let usage = format!("expected header `{tag} rows cols depth classes count`");
    if tokens.len() != 6 || tokens[0] != tag {
        return Err(Error::Data(format!("line {line_no}: {usage}")));
    }
    let mut nums = [0usize; 5];
    for (slot, tok) in nums.iter_mut().zip(&tokens[1..]) {
        *slot = tok
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("line {line_no}: {usage}, got `{tok}`")))?;
    }
    let [rows, cols, depth, classes, count] = nums;
    if rows == 0 || cols == 0 || depth == 0 || classes == 0 {
        return Err(Error::Data(format!(
            "line {line_no}: dimensions must be positive"
        )));
    }
    Ok((rows, cols, depth, classes, count))
}

/// Reads a dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut reader = LineReader::new(text);
    let (header_no, header) = reader.next_line()?;
    let (rows, cols, depth, classes, count) = parse_header(header_no, header, "cfcnn-data")?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let (x_no, x_line) = reader.next_line()?;
        let x_values = parse_numbers(x_no, x_line, rows * cols * depth)?;
        let (y_no, y_line) = reader.next_line()?;
        let y_values = parse_numbers(y_no, y_line, classes)?;
        samples.push(Sample {
            x: FeatureStack::from_vec(rows, cols, depth, x_values)?,
            y: Vec1D::from_vec(y_values),
            tangents: Vec::new(),
        });
    }
    reader.expect_end()?;
    Ok(Dataset {
        rows,
        cols,
        depth,
        classes,
        samples,
    })
}

fn join_numbers(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out
}

/// Writes a dataset in the text format read by [`load_dataset`].
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = format!(
        "cfcnn-data {} {} {} {} {}\n",
        ds.rows,
        ds.cols,
        ds.depth,
        ds.classes,
        ds.samples.len()
    );
    for sample in &ds.samples {
        out.push_str(&join_numbers(sample.x.data()));
        out.push('\n');
        out.push_str(&join_numbers(sample.y.data()));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a tangent-target file, validating dimensions and sample indices
/// against the owning dataset. A file with no content yields an empty map;
/// records sharing an index accumulate.
pub fn load_tangents(path: &Path, ds: &Dataset) -> Result<BTreeMap<usize, Vec<TangentTarget>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_tangents(&text, ds)
}

pub fn parse_tangents(text: &str, ds: &Dataset) -> Result<BTreeMap<usize, Vec<TangentTarget>>> {
    let mut map: BTreeMap<usize, Vec<TangentTarget>> = BTreeMap::new();
    if text.trim().is_empty() {
        return Ok(map);
    }
    let mut reader = LineReader::new(text);
    let (header_no, header) = reader.next_line()?;
    let (rows, cols, depth, classes, count) = parse_header(header_no, header, "cfcnn-tangents")?;
    if (rows, cols, depth, classes) != (ds.rows, ds.cols, ds.depth, ds.classes) {
        return Err(Error::Data(format!(
            "line {header_no}: tangent dims {rows}x{cols}x{depth}/{classes} do not match \
             dataset dims {}x{}x{}/{}",
            ds.rows, ds.cols, ds.depth, ds.classes
        )));
    }
    for _ in 0..count {
        let (idx_no, idx_line) = reader.next_line()?;
        let index = idx_line.trim().parse::<usize>().map_err(|_| {
            Error::Data(format!(
                "line {idx_no}: expected a 1-based sample index, got `{}`",
                idx_line.trim()
            ))
        })?;
        if index < 1 || index > ds.samples.len() {
            return Err(Error::Data(format!(
                "line {idx_no}: sample index {index} out of range 1..={}",
                ds.samples.len()
            )));
        }
        let (v_no, v_line) = reader.next_line()?;
        let v_values = parse_numbers(v_no, v_line, rows * cols * depth)?;
        let (b_no, b_line) = reader.next_line()?;
        let b_values = parse_numbers(b_no, b_line, classes)?;
        map.entry(index).or_default().push(TangentTarget {
            v: FeatureStack::from_vec(rows, cols, depth, v_values)?,
            beta: Vec1D::from_vec(b_values),
        });
    }
    reader.expect_end()?;
    Ok(map)
}

/// Writes tangent targets in the format read by [`load_tangents`].
pub fn save_tangents(
    path: &Path,
    ds: &Dataset,
    map: &BTreeMap<usize, Vec<TangentTarget>>,
) -> Result<()> {
    let count: usize = map.values().map(Vec::len).sum();
    let mut out = format!(
        "cfcnn-tangents {} {} {} {} {count}\n",
        ds.rows, ds.cols, ds.depth, ds.classes
    );
    for (index, targets) in map {
        for target in targets {
            let _ = writeln!(out, "{index}");
            out.push_str(&join_numbers(target.v.data()));
            out.push('\n');
            out.push_str(&join_numbers(target.beta.data()));
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Attaches loaded tangent targets to their samples.
pub fn attach_tangents(ds: &mut Dataset, map: BTreeMap<usize, Vec<TangentTarget>>) {
    for (index, targets) in map {
        ds.samples[index - 1].tangents.extend(targets);
    }
}

/// Seeded two-class toy set: `per_class` samples per class, inputs
/// `rows x cols x 1` drawn from per-pixel Gaussians centered at -0.5
/// (class 1) and +0.5 (class 2) with standard deviation 0.3, one-hot
/// targets, classes interleaved.
pub fn generate_blobs(rows: usize, cols: usize, per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    let mut samples = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let class = i % 2;
        let center = if class == 0 { -0.5 } else { 0.5 };
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| center + noise.sample(&mut rng))
            .collect();
        let mut y = vec![0.0; 2];
        y[class] = 1.0;
        samples.push(Sample {
            x: FeatureStack::from_vec(rows, cols, 1, data).expect("length matches"),
            y: Vec1D::from_vec(y),
            tangents: Vec::new(),
        });
    }
    Dataset {
        rows,
        cols,
        depth: 1,
        classes: 2,
        samples,
    }
}

/// Dumps the final parameters in the dataset scalar format: a header
/// `cfcnn-params <layer count>`, then per layer one line of filter scalars
/// and one line of bias scalars (slice-major).
pub fn save_params(path: &Path, spec: &NetworkSpec, state: &NetworkState) -> Result<()> {
    let mut out = format!("cfcnn-params {}\n", spec.len());
    for lp in state.layers() {
        out.push_str(&join_numbers(lp.bank.filters().data()));
        out.push('\n');
        out.push_str(&join_numbers(lp.bias.data()));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

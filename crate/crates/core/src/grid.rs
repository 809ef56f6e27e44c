//! Rectangular N-D lattices, dense row-major value storage, multilinear
//! interpolation, central-difference gradients and the `CLVF1` text format.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{ClvfError, Result};

/// Largest dimension supported by the stack-allocated interpolation paths.
pub const MAX_DIMS: usize = 12;

/// Relative slack (in cells) tolerated when a query lands a hair outside
/// the grid because of rounding in a coordinate projection.
const EDGE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != counts.len() {
            return Err(ClvfError::InvalidGrid(format!(
                "{} bound pairs for {} node counts",
                bounds.len(),
                counts.len()
            )));
        }
        if bounds.len() > MAX_DIMS {
            return Err(ClvfError::InvalidGrid(format!(
                "{} dimensions exceeds the supported maximum of {MAX_DIMS}",
                bounds.len()
            )));
        }
        for (k, (&(lo, hi), &c)) in bounds.iter().zip(counts).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(ClvfError::InvalidGrid(format!(
                    "dimension {k}: bounds [{lo}, {hi}] are degenerate"
                )));
            }
            if c < 3 {
                return Err(ClvfError::InvalidGrid(format!(
                    "dimension {k}: {c} nodes, need at least 3"
                )));
            }
        }
        let n = counts.len();
        let mut strides = vec![1; n];
        for k in (0..n - 1).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        Ok(Self {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            spacing: bounds
                .iter()
                .zip(counts)
                .map(|(&(lo, hi), &c)| (hi - lo) / (c - 1) as f64)
                .collect(),
            counts: counts.to_vec(),
            strides,
        })
    }

    /// Same bounds and node count on every axis.
    pub fn uniform(dim: usize, lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(&vec![(lo, hi); dim], &vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo
            .iter()
            .copied()
            .zip(self.hi.iter().copied())
            .collect()
    }

    pub fn coord(&self, k: usize, i: usize) -> f64 {
        self.lo[k] + i as f64 * self.spacing[k]
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = flat % self.counts[k];
            flat /= self.counts[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Index of `flat` along axis `k`.
    pub fn axis_index(&self, flat: usize, k: usize) -> usize {
        (flat / self.strides[k]) % self.counts[k]
    }

    pub fn node_into(&self, flat: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = self.coord(k, self.axis_index(flat, k));
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(flat, &mut x);
        x
    }

    /// Flat index of the node closest to `x` (coordinates clamped to the grid).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        (0..self.dim())
            .map(|k| {
                let r = ((x[k] - self.lo[k]) / self.spacing[k]).round();
                r.clamp(0.0, (self.counts[k] - 1) as f64) as usize * self.strides[k]
            })
            .sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|k| {
            let slack = EDGE_SLACK * self.spacing[k];
            x[k] >= self.lo[k] - slack && x[k] <= self.hi[k] + slack
        })
    }

    /// Number of cells between node `flat` and the nearest grid face.
    pub fn boundary_distance(&self, flat: usize) -> usize {
        (0..self.dim())
            .map(|k| {
                let i = self.axis_index(flat, k);
                i.min(self.counts[k] - 1 - i)
            })
            .min()
            .unwrap_or(0)
    }

    /// The grid restricted to the listed axes, in the listed order.
    pub fn select(&self, dims: &[usize]) -> Result<Grid> {
        let bounds: Vec<_> = dims.iter().map(|&k| (self.lo[k], self.hi[k])).collect();
        let counts: Vec<_> = dims.iter().map(|&k| self.counts[k]).collect();
        Grid::new(&bounds, &counts)
    }

    /// Cell lower index and fractional offset per axis.
    fn locate(&self, x: &[f64], base: &mut [usize], frac: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(ClvfError::DimensionMismatch {
                what: "query point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        for k in 0..self.dim() {
            let s = (x[k] - self.lo[k]) / self.spacing[k];
            let last = (self.counts[k] - 1) as f64;
            if !(s >= -EDGE_SLACK && s <= last + EDGE_SLACK) {
                return Err(ClvfError::OutOfBounds {
                    dim: k,
                    value: x[k],
                    lo: self.lo[k],
                    hi: self.hi[k],
                });
            }
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(self.counts[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        Ok(())
    }

    /// Calls `visit(flat_index, weight)` for each of the `2^N` corners of the
    /// cell containing `x`. Corners with zero weight are skipped.
    pub fn for_each_corner(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) -> Result<()> {
        let n = self.dim();
        let mut base = [0usize; MAX_DIMS];
        let mut frac = [0f64; MAX_DIMS];
        self.locate(x, &mut base[..n], &mut frac[..n])?;
        let base_flat: usize = (0..n).map(|k| base[k] * self.strides[k]).sum();
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = base_flat;
            for k in 0..n {
                if corner >> (n - 1 - k) & 1 == 1 {
                    w *= frac[k];
                    flat += self.strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                visit(flat, w);
            }
        }
        Ok(())
    }
}

/// Samples on a grid, with an optional per-node divergence mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueArray {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl ValueArray {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(ClvfError::DimensionMismatch {
                what: "value buffer",
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            values,
            mask: None,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.node_into(i, &mut x);
                f(&x)
            })
            .collect();
        Self {
            grid,
            values,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(ClvfError::DimensionMismatch {
                what: "mask",
                expected: self.values.len(),
                got: mask.len(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[i])
    }

    pub fn masked_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&b| b).count())
    }

    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        self.grid
            .for_each_corner(x, |i, w| acc += w * self.values[i])?;
        Ok(acc)
    }

    /// Interpolated value, or `None` when any contributing corner is masked.
    pub fn interpolate_unmasked(&self, x: &[f64]) -> Result<Option<f64>> {
        let mut acc = 0.0;
        let mut hit = false;
        self.grid.for_each_corner(x, |i, w| {
            acc += w * self.values[i];
            hit |= self.is_masked(i);
        })?;
        Ok((!hit).then_some(acc))
    }

    /// Central difference along `k` at node `i`, one-sided on the faces.
    pub fn node_derivative(&self, i: usize, k: usize) -> f64 {
        let g = &self.grid;
        let s = g.strides[k];
        let h = g.spacing[k];
        let ik = g.axis_index(i, k);
        let v = &self.values;
        if ik == 0 {
            (v[i + s] - v[i]) / h
        } else if ik == g.counts[k] - 1 {
            (v[i] - v[i - s]) / h
        } else {
            (v[i + s] - v[i - s]) / (2.0 * h)
        }
    }

    /// Node-wise gradient arrays, one per dimension.
    pub fn gradient(&self) -> Vec<Vec<f64>> {
        (0..self.grid.dim())
            .map(|k| {
                (0..self.values.len())
                    .map(|i| self.node_derivative(i, k))
                    .collect()
            })
            .collect()
    }

    /// Multilinear interpolation of the node-wise gradient at `x`; equal to
    /// interpolating the arrays returned by [`gradient`](Self::gradient).
    pub fn gradient_at(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.grid.dim();
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        self.grid.for_each_corner(x, |i, w| {
            for (k, o) in out.iter_mut().enumerate().take(n) {
                *o += w * self.node_derivative(i, k);
            }
        })
    }

    /// Value and gradient in one pass.
    pub fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = self.grid.dim();
        grad[..n].iter_mut().for_each(|v| *v = 0.0);
        let mut acc = 0.0;
        self.grid.for_each_corner(x, |i, w| {
            acc += w * self.values[i];
            for (k, o) in grad.iter_mut().enumerate().take(n) {
                *o += w * self.node_derivative(i, k);
            }
        })?;
        Ok(acc)
    }

    /// Value and gradient in one pass, `None` when a contributing corner is
    /// masked. Same results as [`value_and_gradient`](Self::value_and_gradient).
    pub fn sample(&self, x: &[f64], grad: &mut [f64]) -> Result<Option<f64>> {
        let g = &self.grid;
        let n = g.dim();
        let mut base = [0usize; MAX_DIMS];
        let mut frac = [0f64; MAX_DIMS];
        g.locate(x, &mut base[..n], &mut frac[..n])?;
        let base_flat: usize = (0..n).map(|k| base[k] * g.strides[k]).sum();
        grad[..n].iter_mut().for_each(|v| *v = 0.0);
        let v = &self.values;
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = base_flat;
            for k in 0..n {
                if corner >> (n - 1 - k) & 1 == 1 {
                    w *= frac[k];
                    flat += g.strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w == 0.0 {
                continue;
            }
            if self.is_masked(flat) {
                return Ok(None);
            }
            acc += w * v[flat];
            for k in 0..n {
                let ik = base[k] + (corner >> (n - 1 - k) & 1);
                let (s, h) = (g.strides[k], g.spacing[k]);
                let d = if ik == 0 {
                    (v[flat + s] - v[flat]) / h
                } else if ik == g.counts[k] - 1 {
                    (v[flat] - v[flat - s]) / h
                } else {
                    (v[flat + s] - v[flat - s]) / (2.0 * h)
                };
                grad[k] += w * d;
            }
        }
        Ok(Some(acc))
    }

    /// Value and exact gradient of the multilinear interpolant in the cell
    /// containing `x` (the upper cell on a shared face); `None` when a
    /// corner is masked.
    pub fn sample_cellwise(&self, x: &[f64], grad: &mut [f64]) -> Result<Option<f64>> {
        let g = &self.grid;
        let n = g.dim();
        let mut base = [0usize; MAX_DIMS];
        let mut frac = [0f64; MAX_DIMS];
        g.locate(x, &mut base[..n], &mut frac[..n])?;
        let base_flat: usize = (0..n).map(|k| base[k] * g.strides[k]).sum();
        grad[..n].iter_mut().for_each(|v| *v = 0.0);
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut flat = base_flat;
            let mut w = [0f64; MAX_DIMS];
            let mut dw = [0f64; MAX_DIMS];
            for k in 0..n {
                if corner >> (n - 1 - k) & 1 == 1 {
                    flat += g.strides[k];
                    (w[k], dw[k]) = (frac[k], 1.0 / g.spacing[k]);
                } else {
                    (w[k], dw[k]) = (1.0 - frac[k], -1.0 / g.spacing[k]);
                }
            }
            let all: f64 = w[..n].iter().product();
            let mut dk = [0f64; MAX_DIMS];
            for k in 0..n {
                dk[k] = dw[k] * (0..n).filter(|&j| j != k).map(|j| w[j]).product::<f64>();
            }
            if all == 0.0 && dk[..n].iter().all(|&d| d == 0.0) {
                continue;
            }
            if self.is_masked(flat) {
                return Ok(None);
            }
            let v = self.values[flat];
            acc += all * v;
            for k in 0..n {
                grad[k] += dk[k] * v;
            }
        }
        Ok(Some(acc))
    }

    /// Reduced array with the given coordinates held fixed.
    pub fn slice(&self, fixed: &[(usize, f64)]) -> Result<ValueArray> {
        let n = self.grid.dim();
        for &(d, _) in fixed {
            if d >= n {
                return Err(ClvfError::InvalidGrid(format!(
                    "slice dimension {d} out of range for a {n}-D grid"
                )));
            }
        }
        let keep: Vec<usize> = (0..n).filter(|k| fixed.iter().all(|f| f.0 != *k)).collect();
        if keep.is_empty() {
            return Err(ClvfError::InvalidGrid("slice fixes every dimension".into()));
        }
        let sub = self.grid.select(&keep)?;
        let mut full = vec![0.0; n];
        for &(d, v) in fixed {
            full[d] = v;
        }
        let mut values = Vec::with_capacity(sub.len());
        let mut mask = Vec::with_capacity(sub.len());
        let mut z = vec![0.0; keep.len()];
        for i in 0..sub.len() {
            sub.node_into(i, &mut z);
            for (j, &k) in keep.iter().enumerate() {
                full[k] = z[j];
            }
            let mut acc = 0.0;
            let mut hit = false;
            self.grid.for_each_corner(&full, |c, w| {
                acc += w * self.values[c];
                hit |= self.is_masked(c);
            })?;
            values.push(acc);
            mask.push(hit);
        }
        let out = ValueArray::new(sub, values)?;
        Ok(if self.mask.is_some() {
            out.with_mask(mask)?
        } else {
            out
        })
    }
}

/// Header fields of a `CLVF1` file besides the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FileMeta {
    pub gamma: f64,
    pub converged: bool,
    pub cap: f64,
}

impl FileMeta {
    /// Metadata for 0/1 mask exports.
    pub fn mask() -> Self {
        Self {
            gamma: 0.0,
            converged: true,
            cap: f64::INFINITY,
        }
    }
}

pub fn write_clvf1<W: Write>(mut w: W, va: &ValueArray, meta: &FileMeta) -> Result<()> {
    let g = &va.grid;
    let mut head = String::new();
    writeln!(head, "CLVF1").unwrap();
    writeln!(head, "{}", g.dim()).unwrap();
    for k in 0..g.dim() {
        writeln!(head, "{} {} {}", g.lo[k], g.hi[k], g.counts[k]).unwrap();
    }
    writeln!(head, "gamma {}", meta.gamma).unwrap();
    let status = if meta.converged {
        "converged"
    } else {
        "maxiter"
    };
    writeln!(head, "status {status}").unwrap();
    writeln!(head, "cap {}", meta.cap).unwrap();
    w.write_all(head.as_bytes())?;
    let mut line = String::new();
    for (i, &v) in va.values.iter().enumerate() {
        let v = if va.is_masked(i) { meta.cap.max(v) } else { v };
        line.clear();
        writeln!(line, "{v:.16e}").unwrap();
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clvf1<R: BufRead>(r: R) -> Result<(ValueArray, FileMeta)> {
    let mut tokens = Vec::new();
    let mut lines = r.lines();
    let mut header = |what: &str| -> Result<String> {
        match lines.next() {
            Some(line) => Ok(line?),
            None => Err(ClvfError::Format(format!("missing {what}"))),
        }
    };
    if header("magic")?.trim() != "CLVF1" {
        return Err(ClvfError::Format("bad magic, expected CLVF1".into()));
    }
    let n: usize = parse(header("dimension")?.trim(), "dimension")?;
    let mut bounds = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    for k in 0..n {
        let line = header("axis line")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(ClvfError::Format(format!(
                "axis {k}: expected 'lo hi count'"
            )));
        }
        bounds.push((parse(parts[0], "lo")?, parse(parts[1], "hi")?));
        counts.push(parse(parts[2], "count")?);
    }
    let gamma = keyed(&header("gamma")?, "gamma")?;
    let status = header("status")?;
    let converged = match status.trim().strip_prefix("status").map(str::trim) {
        Some("converged") => true,
        Some("maxiter") => false,
        _ => return Err(ClvfError::Format(format!("bad status line '{status}'"))),
    };
    let cap = keyed(&header("cap")?, "cap")?;
    for line in lines {
        let line = line?;
        for t in line.split_whitespace() {
            tokens.push(parse::<f64>(t, "value")?);
        }
    }
    let grid = Grid::new(&bounds, &counts)?;
    if tokens.len() != grid.len() {
        return Err(ClvfError::Format(format!(
            "expected {} values, found {}",
            grid.len(),
            tokens.len()
        )));
    }
    let mask: Vec<bool> = tokens.iter().map(|&v| v >= cap).collect();
    let mut va = ValueArray::new(grid, tokens)?;
    if mask.iter().any(|&m| m) {
        va = va.with_mask(mask)?;
    }
    Ok((
        va,
        FileMeta {
            gamma,
            converged,
            cap,
        },
    ))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| ClvfError::Format(format!("cannot parse {what} from '{s}'")))
}

fn keyed(line: &str, key: &str) -> Result<f64> {
    match line.trim().strip_prefix(key) {
        Some(rest) => parse(rest.trim(), key),
        None => Err(ClvfError::Format(format!(
            "expected '{key} <value>', got '{line}'"
        ))),
    }
}

pub fn save_clvf1(path: &Path, va: &ValueArray, meta: &FileMeta) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_clvf1(std::io::BufWriter::new(f), va, meta)
}

pub fn load_clvf1(path: &Path) -> Result<(ValueArray, FileMeta)> {
    let f =
        std::fs::File::open(path).map_err(|e| ClvfError::Io(format!("{}: {e}", path.display())))?;
    read_clvf1(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn spacing_examples() {
        let g = Grid::uniform(3, -2.0, 2.0, 61).unwrap();
        for &h in g.spacing() {
            assert_abs_diff_eq!(h, 1.0 / 15.0, epsilon = 1e-15);
        }
        let g = Grid::uniform(2, -2.0, 2.0, 101).unwrap();
        assert_abs_diff_eq!(g.spacing()[0], 0.04, epsilon = 1e-15);
        let g = Grid::new(&[(0.0, 1.0)], &[3]).unwrap();
        assert_eq!(
            (0..3).map(|i| g.coord(0, i)).collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(&[(0.0, 1.0)], &[2]).is_err());
        assert!(Grid::new(&[(1.0, 1.0)], &[5]).is_err());
        assert!(Grid::new(&[(0.0, 1.0)], &[5, 5]).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let g = Grid::new(&[(0.0, 2.0)], &[3]).unwrap();
        let va = ValueArray::new(g, vec![1.0, 3.0, 0.0]).unwrap();
        assert_eq!(va.interpolate(&[0.5]).unwrap(), 2.0);
        assert_eq!(va.interpolate(&[1.0]).unwrap(), 3.0);
        assert!(matches!(
            va.interpolate(&[2.5]),
            Err(ClvfError::OutOfBounds { dim: 0, .. })
        ));

        let g = Grid::new(&[(0.0, 2.0), (0.0, 2.0)], &[3, 3]).unwrap();
        let mut vals = vec![0.0; 9];
        // corners of the lower-left cell: (0,0)=0, (0,1)=1, (1,0)=2, (1,1)=3
        vals[g.flat_index(&[0, 0])] = 0.0;
        vals[g.flat_index(&[0, 1])] = 1.0;
        vals[g.flat_index(&[1, 0])] = 2.0;
        vals[g.flat_index(&[1, 1])] = 3.0;
        let va = ValueArray::new(g, vals).unwrap();
        assert_abs_diff_eq!(va.interpolate(&[0.5, 0.5]).unwrap(), 1.5);
    }

    #[test]
    fn gradient_examples() {
        let g = Grid::new(&[(-1.0, 2.0), (0.0, 1.0)], &[7, 5]).unwrap();
        let lin = ValueArray::from_fn(g.clone(), |x| 2.0 * x[0] - x[1]);
        let grad = lin.gradient();
        assert!(grad[0].iter().all(|&d| (d - 2.0).abs() < 1e-12));
        assert!(grad[1].iter().all(|&d| (d + 1.0).abs() < 1e-12));

        let c = ValueArray::from_fn(g.clone(), |_| 4.0);
        assert!(c.gradient().iter().flatten().all(|&d| d == 0.0));

        let q = ValueArray::from_fn(g.clone(), |x| x[0] * x[0]);
        let d = q.gradient();
        for i in 0..g.len() {
            let ix = g.axis_index(i, 0);
            if ix > 0 && ix < 6 {
                assert_abs_diff_eq!(d[0][i], 2.0 * g.node(i)[0], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_second_order() {
        let err = |count: usize| {
            let g = Grid::uniform(2, -1.0, 1.0, count).unwrap();
            let va = ValueArray::from_fn(g.clone(), |x| (x[0] * 1.3).sin() * x[1].exp());
            let d = va.gradient();
            (0..g.len())
                .filter(|&i| g.boundary_distance(i) > 0)
                .map(|i| {
                    let x = g.node(i);
                    (d[0][i] - 1.3 * (1.3 * x[0]).cos() * x[1].exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(21) / err(41);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn gradient_at_matches_arrays() {
        let g = Grid::uniform(3, -1.0, 1.0, 9).unwrap();
        let va = ValueArray::from_fn(g.clone(), |x| x[0] * x[1] + x[2].powi(3));
        let arrays = va.gradient();
        let x = [0.13, -0.77, 0.5];
        let mut out = [0.0; 3];
        va.gradient_at(&x, &mut out).unwrap();
        for k in 0..3 {
            let arr = ValueArray::new(g.clone(), arrays[k].clone()).unwrap();
            assert_abs_diff_eq!(out[k], arr.interpolate(&x).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn slice_fixes_coordinates() {
        let g = Grid::uniform(3, -1.0, 1.0, 5).unwrap();
        let va = ValueArray::from_fn(g, |x| x[0] + 10.0 * x[1] + 100.0 * x[2]);
        let s = va.slice(&[(1, 0.5)]).unwrap();
        assert_eq!(s.grid.dim(), 2);
        for i in 0..s.grid.len() {
            let z = s.grid.node(i);
            assert_abs_diff_eq!(s.values[i], z[0] + 5.0 + 100.0 * z[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn clvf1_round_trip_is_bit_exact() {
        let g = Grid::new(&[(-2.0, 2.0), (-0.3, 1.7)], &[5, 4]).unwrap();
        let mut va = ValueArray::from_fn(g, |x| (x[0] * 3.1).exp() / 7.0 + x[1] * 1e-300);
        va.values[3] = 1e3;
        va = va.with_mask((0..20).map(|i| i == 3).collect()).unwrap();
        let meta = FileMeta {
            gamma: 0.1,
            converged: false,
            cap: 1e3,
        };
        let mut buf = Vec::new();
        write_clvf1(&mut buf, &va, &meta).unwrap();
        let (back, meta2) = read_clvf1(&buf[..]).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(back.grid, va.grid);
        assert!(back
            .values
            .iter()
            .zip(&va.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.mask, va.mask);
    }

    #[test]
    fn clvf1_rejects_garbage() {
        assert!(read_clvf1(&b"CLVF2\n1\n"[..]).is_err());
        assert!(
            read_clvf1(&b"CLVF1\n1\n0 1 3\ngamma 0\nstatus converged\ncap 1\n0 0\n"[..]).is_err()
        );
    }

    proptest! {
        #[test]
        fn flat_index_round_trip(c0 in 3usize..7, c1 in 3usize..7, c2 in 3usize..7) {
            let g = Grid::new(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)], &[c0, c1, c2]).unwrap();
            for i in 0..g.len() {
                prop_assert_eq!(g.flat_index(&g.multi_index(i)), i);
            }
        }

        #[test]
        fn multilinear_reproduced(
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0,
            x in -1.0f64..3.0, y in 0.0f64..0.5,
        ) {
            let g = Grid::new(&[(-1.0, 3.0), (0.0, 0.5)], &[6, 4]).unwrap();
            let f = |p: &[f64]| a + b * p[0] + c * p[1] + d * p[0] * p[1];
            let va = ValueArray::from_fn(g, f);
            let v = va.interpolate(&[x, y]).unwrap();
            let exact = f(&[x, y]);
            prop_assert!((v - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
        }

        #[test]
        fn interpolation_exact_on_nodes(seed in 0u64..1000) {
            let g = Grid::new(&[(-1.0, 1.0), (2.0, 5.0)], &[5, 7]).unwrap();
            let va = ValueArray::from_fn(g.clone(), |x| (x[0] * 7.0 + x[1] + seed as f64).sin());
            let i = (seed as usize * 7) % g.len();
            prop_assert_eq!(va.interpolate(&g.node(i)).unwrap(), va.values[i]);
        }

        #[test]
        fn cellwise_gradient_is_exact_for_multilinear(
            c in -2.0f64..2.0, d in -2.0f64..2.0, e in -2.0f64..2.0, x in -1.0f64..1.0, y in 2.0f64..5.0,
        ) {
            let g = Grid::new(&[(-1.0, 1.0), (2.0, 5.0)], &[5, 7]).unwrap();
            let va = ValueArray::from_fn(g, |p| c * p[0] + d * p[1] + e * p[0] * p[1]);
            let mut gr = [0.0; 2];
            let v = va.sample_cellwise(&[x, y], &mut gr).unwrap().unwrap();
            prop_assert!((v - (c * x + d * y + e * x * y)).abs() < 1e-9);
            prop_assert!((gr[0] - (c + e * y)).abs() < 1e-9);
            prop_assert!((gr[1] - (d + e * x)).abs() < 1e-9);
        }

        #[test]
        fn sample_agrees_with_separate_passes(x in -1.0f64..1.0, y in 2.0f64..5.0, z in 0.0f64..1.0) {
            let g = Grid::new(&[(-1.0, 1.0), (2.0, 5.0), (0.0, 1.0)], &[5, 7, 4]).unwrap();
            let va = ValueArray::from_fn(g, |p| (p[0] * 3.0).sin() * p[1] + p[2] * p[2]);
            let (mut g1, mut g2) = ([0.0; 3], [0.0; 3]);
            let v1 = va.value_and_gradient(&[x, y, z], &mut g1).unwrap();
            let v2 = va.sample(&[x, y, z], &mut g2).unwrap().unwrap();
            prop_assert!((v1 - v2).abs() < 1e-12);
            for k in 0..3 {
                prop_assert!((g1[k] - g2[k]).abs() < 1e-10);
            }
        }
    }
}

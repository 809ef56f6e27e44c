//! Composition of subsystem value functions on the full state space, either
//! materialised on a full grid or evaluated pointwise, and grid comparisons.

use std::fmt::Write as _;

use crate::dynamics::Partition;
use crate::error::{ClvfError, Result};
use crate::grid::{Grid, ValueArray, MAX_DIMS};
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Max,
    Sum,
}

impl Combine {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Combine::Max => a.max(b),
            Combine::Sum => a + b,
        }
    }
}

/// Evaluates `sub` at the projection `dims` of every node of `full`. A node
/// is masked when any corner of its interpolation stencil is masked.
pub fn broadcast(
    sub: &ValueArray,
    full: &Grid,
    dims: &[usize],
    exec: Execution,
) -> Result<ValueArray> {
    if dims.len() != sub.grid.dim() {
        return Err(ClvfError::DimensionMismatch {
            what: "broadcast axes",
            expected: sub.grid.dim(),
            got: dims.len(),
        });
    }
    if let Some(&bad) = dims.iter().find(|&&k| k >= full.dim()) {
        return Err(ClvfError::InvalidGrid(format!(
            "axis {bad} not in the full grid"
        )));
    }
    // the projected coordinates span the full grid's range per axis, so
    // checking the extreme nodes catches every out-of-range projection
    for (j, &k) in dims.iter().enumerate() {
        for v in [full.lo()[k], full.hi()[k]] {
            let g = &sub.grid;
            let slack = 1e-9 * g.spacing()[j];
            if v < g.lo()[j] - slack || v > g.hi()[j] + slack {
                return Err(ClvfError::OutOfBounds {
                    dim: k,
                    value: v,
                    lo: g.lo()[j],
                    hi: g.hi()[j],
                });
            }
        }
    }
    let len = full.len();
    let pairs: Vec<(f64, bool)> = par::map_indices(exec, len, |i| {
        let mut z = [0.0; MAX_DIMS];
        for (j, &k) in dims.iter().enumerate() {
            z[j] = full.coord(k, full.axis_index(i, k));
        }
        let mut acc = 0.0;
        let mut hit = false;
        sub.grid
            .for_each_corner(&z[..dims.len()], |c, w| {
                acc += w * sub.values[c];
                hit |= sub.is_masked(c);
            })
            .expect("range checked above");
        (acc, hit)
    });
    let (values, mask): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
    ValueArray::new(full.clone(), values)?.with_mask(mask)
}

/// [`broadcast`] along the state axes of subsystem `i` of `part`.
pub fn broadcast_subsystem(
    sub: &ValueArray,
    full: &Grid,
    part: &Partition,
    i: usize,
    exec: Execution,
) -> Result<ValueArray> {
    broadcast(sub, full, &part.subsystem_states(i), exec)
}

fn combine(a: &ValueArray, b: &ValueArray, op: Combine) -> Result<ValueArray> {
    if a.grid != b.grid {
        return Err(ClvfError::GridMismatch);
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| op.apply(x, y))
        .collect();
    let out = ValueArray::new(a.grid.clone(), values)?;
    if a.mask.is_none() && b.mask.is_none() {
        return Ok(out);
    }
    let mask = (0..a.values.len())
        .map(|i| a.is_masked(i) || b.is_masked(i))
        .collect();
    out.with_mask(mask)
}

/// Pointwise maximum; masked where either input is.
pub fn reconstruct_max(a: &ValueArray, b: &ValueArray) -> Result<ValueArray> {
    combine(a, b, Combine::Max)
}

/// Pointwise sum; masked where either input is.
pub fn reconstruct_sum(a: &ValueArray, b: &ValueArray) -> Result<ValueArray> {
    combine(a, b, Combine::Sum)
}

/// One term of a [`Composite`]: a subsystem value function over some of
/// the full state axes, and the full control indices it is steered by.
#[derive(Clone, Debug)]
pub struct CompositePart {
    pub value: ValueArray,
    pub states: Vec<usize>,
    pub controls: Vec<usize>,
}

/// Max or sum of subsystem value functions, evaluated at query states
/// without materialising a full-dimensional grid.
#[derive(Clone, Debug)]
pub struct Composite {
    pub parts: Vec<CompositePart>,
    pub mode: Combine,
    pub state_dim: usize,
}

/// Value of a composite at a point together with its (sub)gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Per-part values and full-space gradients.
    pub parts: Vec<(f64, Vec<f64>)>,
}

impl Composite {
    pub fn new(parts: Vec<CompositePart>, mode: Combine, state_dim: usize) -> Result<Self> {
        if parts.is_empty() {
            return Err(ClvfError::InvalidPartition(
                "composite needs at least one part".into(),
            ));
        }
        for p in &parts {
            if p.states.len() != p.value.grid.dim() {
                return Err(ClvfError::DimensionMismatch {
                    what: "composite part axes",
                    expected: p.value.grid.dim(),
                    got: p.states.len(),
                });
            }
            if let Some(&k) = p.states.iter().find(|&&k| k >= state_dim) {
                return Err(ClvfError::InvalidPartition(format!(
                    "state axis {k} out of range"
                )));
            }
        }
        Ok(Self {
            parts,
            mode,
            state_dim,
        })
    }

    /// Builds the composite from per-subsystem values along a partition.
    pub fn from_partition(
        values: Vec<ValueArray>,
        part: &Partition,
        mode: Combine,
    ) -> Result<Self> {
        let n = part.owned_states.iter().map(Vec::len).sum::<usize>() + part.shared_states.len();
        let parts = values
            .into_iter()
            .enumerate()
            .map(|(i, value)| CompositePart {
                value,
                states: part.subsystem_states(i),
                controls: part.subsystem_controls(i),
            })
            .collect();
        Self::new(parts, mode, n)
    }

    /// Parts steer disjoint controls, so each can be handled on its own.
    pub fn controls_disjoint(&self) -> bool {
        let mut seen = Vec::new();
        for p in &self.parts {
            for &j in &p.controls {
                if seen.contains(&j) {
                    return false;
                }
                seen.push(j);
            }
        }
        true
    }

    /// `None` when `x` projects onto a masked stencil of any part.
    pub fn value(&self, x: &[f64]) -> Result<Option<f64>> {
        let mut acc: Option<f64> = None;
        let mut z = [0.0; MAX_DIMS];
        for p in &self.parts {
            for (j, &k) in p.states.iter().enumerate() {
                z[j] = x[k];
            }
            match p.value.interpolate_unmasked(&z[..p.states.len()])? {
                Some(v) => acc = Some(acc.map_or(v, |a| self.mode.apply(a, v))),
                None => return Ok(None),
            }
        }
        Ok(acc)
    }

    /// Value and gradient; for `Max` the gradient is that of the first part
    /// attaining the maximum.
    pub fn evaluate(&self, x: &[f64]) -> Result<Option<CompositeEval>> {
        self.evaluate_with(x, false)
    }

    /// As [`evaluate`](Self::evaluate); `cellwise` differentiates the
    /// interpolant itself instead of interpolating node differences.
    pub fn evaluate_with(&self, x: &[f64], cellwise: bool) -> Result<Option<CompositeEval>> {
        let n = self.state_dim;
        let mut parts = Vec::with_capacity(self.parts.len());
        let mut z = [0.0; MAX_DIMS];
        let mut gz = [0.0; MAX_DIMS];
        for p in &self.parts {
            let d = p.states.len();
            for (j, &k) in p.states.iter().enumerate() {
                z[j] = x[k];
            }
            let sampled = if cellwise {
                p.value.sample_cellwise(&z[..d], &mut gz[..d])?
            } else {
                p.value.sample(&z[..d], &mut gz[..d])?
            };
            let Some(v) = sampled else {
                return Ok(None);
            };
            let mut grad = vec![0.0; n];
            for (j, &k) in p.states.iter().enumerate() {
                grad[k] = gz[j];
            }
            parts.push((v, grad));
        }
        let (value, gradient) = match self.mode {
            Combine::Sum => {
                let mut g = vec![0.0; n];
                for (_, pg) in &parts {
                    for (a, b) in g.iter_mut().zip(pg) {
                        *a += b;
                    }
                }
                (parts.iter().map(|p| p.0).sum(), g)
            }
            Combine::Max => {
                let mut best = 0;
                for (i, p) in parts.iter().enumerate() {
                    if p.0 > parts[best].0 {
                        best = i;
                    }
                }
                (parts[best].0, parts[best].1.clone())
            }
        };
        Ok(Some(CompositeEval {
            value,
            gradient,
            parts,
        }))
    }

    /// Materialises the composite on `full` (for low-dimensional checks).
    pub fn to_grid(&self, full: &Grid, exec: Execution) -> Result<ValueArray> {
        let mut out: Option<ValueArray> = None;
        for p in &self.parts {
            let b = broadcast(&p.value, full, &p.states, exec)?;
            out = Some(match out {
                None => b,
                Some(acc) => combine(&acc, &b, self.mode)?,
            });
        }
        Ok(out.expect("at least one part"))
    }
}

/// Nodes excluded from comparisons: within `band` cells (Chebyshev
/// distance) of a grid face or of a node masked in either input.
pub fn band_exclusion(grid: &Grid, masked: &[bool], band: usize) -> Vec<bool> {
    let mut out = masked.to_vec();
    // a Chebyshev dilation is separable: dilate along each axis in turn
    for k in 0..grid.dim() {
        let s = grid.strides()[k];
        let c = grid.counts()[k];
        let prev = out.clone();
        for i in 0..grid.len() {
            if prev[i] {
                continue;
            }
            let ik = grid.axis_index(i, k);
            let lo = ik.saturating_sub(band);
            let hi = (ik + band).min(c - 1);
            out[i] = (lo..=hi).any(|j| prev[i - ik * s + j * s]);
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        if grid.boundary_distance(i) < band {
            *o = true;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub band: usize,
    /// Nodes compared (jointly unmasked, outside the band).
    pub compared: usize,
    pub sup_diff: f64,
    pub mean_diff: f64,
    /// Sup difference over all jointly unmasked nodes, ignoring the band.
    pub sup_diff_unbanded: f64,
    /// Fraction of nodes whose mask flags agree.
    pub mask_agreement: f64,
    /// Nodes with disagreeing masks further than `band` cells from a face.
    pub mask_disagreement_interior: usize,
    pub level: Option<f64>,
    /// Compared nodes inside exactly one of the two `{V <= level}` sets.
    pub level_symmetric_difference: Option<usize>,
}

impl CompareReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "band {}", self.band).unwrap();
        writeln!(s, "compared_nodes {}", self.compared).unwrap();
        writeln!(s, "sup_diff {:.6e}", self.sup_diff).unwrap();
        writeln!(s, "mean_diff {:.6e}", self.mean_diff).unwrap();
        writeln!(s, "sup_diff_unbanded {:.6e}", self.sup_diff_unbanded).unwrap();
        writeln!(s, "mask_agreement {:.6}", self.mask_agreement).unwrap();
        writeln!(
            s,
            "mask_disagreement_interior {}",
            self.mask_disagreement_interior
        )
        .unwrap();
        if let (Some(l), Some(d)) = (self.level, self.level_symmetric_difference) {
            writeln!(s, "level {l}").unwrap();
            writeln!(s, "level_symmetric_difference {d}").unwrap();
        }
        s
    }
}

pub fn compare(
    a: &ValueArray,
    b: &ValueArray,
    band: usize,
    level: Option<f64>,
) -> Result<CompareReport> {
    compare_on(a, b, band, level, None)
}

/// As [`compare`], restricted to nodes where `region` is set.
pub fn compare_on(
    a: &ValueArray,
    b: &ValueArray,
    band: usize,
    level: Option<f64>,
    region: Option<&[bool]>,
) -> Result<CompareReport> {
    if a.grid != b.grid {
        return Err(ClvfError::GridMismatch);
    }
    let grid = &a.grid;
    let len = grid.len();
    let masked: Vec<bool> = (0..len).map(|i| a.is_masked(i) || b.is_masked(i)).collect();
    let excluded = band_exclusion(grid, &masked, band);
    let in_region = |i: usize| region.is_none_or(|r| r[i]);
    let mut sup: f64 = 0.0;
    let mut sup_all: f64 = 0.0;
    let mut sum = 0.0;
    let mut compared = 0;
    let mut agree = 0;
    let mut disagree_inner = 0;
    let mut sym = 0;
    for i in 0..len {
        if a.is_masked(i) == b.is_masked(i) {
            agree += 1;
        } else if grid.boundary_distance(i) >= band {
            disagree_inner += 1;
        }
        if masked[i] || !in_region(i) {
            continue;
        }
        let d = (a.values[i] - b.values[i]).abs();
        sup_all = sup_all.max(d);
        if excluded[i] {
            continue;
        }
        compared += 1;
        sup = sup.max(d);
        sum += d;
        if let Some(l) = level {
            if (a.values[i] <= l) != (b.values[i] <= l) {
                sym += 1;
            }
        }
    }
    Ok(CompareReport {
        band,
        compared,
        sup_diff: sup,
        mean_diff: if compared > 0 {
            sum / compared as f64
        } else {
            0.0
        },
        sup_diff_unbanded: sup_all,
        mask_agreement: agree as f64 / len as f64,
        mask_disagreement_interior: disagree_inner,
        level,
        level_symmetric_difference: level.map(|_| sym),
    })
}

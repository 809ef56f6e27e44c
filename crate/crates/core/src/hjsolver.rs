//! Backward time-marching of the CLVF variational inequality
//!
//! ```text
//! 0 = max{ l(x) - V, V_t + min_u DV.(f + g u) + gamma V },   V(x, T) = l(x)
//! ```
//!
//! with an upwind (or Lax-Friedrichs) Hamiltonian and explicit time
//! stepping, `V(t - dt) = max(l, V + dt (H + gamma V))`. Nodes whose
//! value reaches the divergence cap are frozen and masked; the unmasked set is
//! the region of exponential stabilizability.

use crate::dynamics::SystemDef;
use crate::error::{ClvfError, Result};
use crate::grid::{Grid, ValueArray};
use crate::par::{self, Execution};

/// Discretisation of the Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    /// `min_u sum_k [max(b_k, 0) D+_k + min(b_k, 0) D-_k]` with `b = f + g u`.
    /// The minimum over the box is exact when each state row is driven by at
    /// most one control; systems without that structure fall back to
    /// [`Scheme::LaxFriedrichs`].
    #[default]
    Upwind,
    /// Central costate plus dissipation `sum_k alpha_k (D+_k - D-_k) / 2`,
    /// `alpha_k` the max of `|x_k'|` over the grid and control box.
    LaxFriedrichs,
    /// As `LaxFriedrichs` with `alpha_k` bounded per node over its axis
    /// neighbours.
    LocalLaxFriedrichs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub gamma: f64,
    /// `None` picks `cfl` times the stability limit.
    pub dt: Option<f64>,
    pub cfl: f64,
    pub eps_conv: f64,
    /// Consecutive steps the sup change must stay below `eps_conv`.
    pub stable_steps: usize,
    pub t_max: f64,
    /// `None` means `1e3 * max l` over the grid.
    pub cap: Option<f64>,
    pub scheme: Scheme,
    /// Spacing of stored snapshots in time; `None` keeps no history.
    pub history_dt: Option<f64>,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            dt: None,
            cfl: 0.5,
            eps_conv: 1e-4,
            stable_steps: 3,
            t_max: 200.0,
            cap: None,
            scheme: Scheme::Upwind,
            history_dt: None,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ClvfError::InvalidConfig(msg));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl factor must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.eps_conv > 0.0) {
            return bad(format!("eps_conv must be positive, got {}", self.eps_conv));
        }
        if self.stable_steps == 0 {
            return bad("stable_steps must be at least 1".into());
        }
        if !(self.t_max > 0.0) {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if let Some(h) = self.history_dt {
            if !(h > 0.0) {
                return bad(format!("history_dt must be positive, got {h}"));
            }
        }
        Ok(())
    }
}

/// Solver output.
#[derive(Clone, Debug)]
pub struct ClvfResult {
    /// Final values; `mask` marks diverged nodes (outside the ROES).
    pub values: ValueArray,
    pub gamma: f64,
    pub cap: f64,
    pub converged: bool,
    /// Backward time at which the convergence test first passed (or the
    /// horizon reached when it did not).
    pub t_conv: f64,
    pub steps: usize,
    pub dt: f64,
    /// Snapshots spaced `history_dt` apart in backward time; entry 0 is the
    /// terminal condition, the last entry the converged value.
    pub history: Vec<ValueArray>,
    pub history_dt: f64,
    /// Sup change over unmasked nodes at every step.
    pub change_log: Vec<f64>,
}

impl ClvfResult {
    pub fn grid(&self) -> &Grid {
        &self.values.grid
    }

    pub fn meta(&self) -> crate::grid::FileMeta {
        crate::grid::FileMeta {
            gamma: self.gamma,
            converged: self.converged,
            cap: self.cap,
        }
    }
}

/// `H(x, p) = p.f(x) + sum_j min_{u_j} (p.g_j(x)) u_j` and its minimiser.
pub fn hamiltonian(sys: &SystemDef, x: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let (n, m) = (sys.state_dim(), sys.control_dim());
    let f = sys.drift(x);
    let g = sys.control_matrix(x);
    let mut h: f64 = p.iter().zip(&f).map(|(a, b)| a * b).sum();
    let mut u = vec![0.0; m];
    for (j, iv) in sys.control_box().iter().enumerate() {
        let c: f64 = (0..n).map(|k| p[k] * g[k * m + j]).sum();
        h += iv.min_linear(c);
        u[j] = iv.argmin_linear(c);
    }
    (h, u)
}

/// Per-node data precomputed once per solve, plus the chosen step.
pub struct Stepper {
    grid: Grid,
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    loss: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    alpha: Vec<f64>,
    /// Per-node dissipation bounds in local mode, `n` per node.
    local_alpha: Option<Vec<f64>>,
    scheme: Scheme,
    /// State rows driven by each control (disjoint in upwind mode).
    ctrl_rows: Vec<Vec<usize>>,
    free_rows: Vec<usize>,
    gamma: f64,
    dt: f64,
    cap: f64,
    execution: Execution,
}

const CHUNK: usize = 2048;

impl Stepper {
    pub fn new(sys: &SystemDef, grid: &Grid, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, m) = (sys.state_dim(), sys.control_dim());
        if grid.dim() != n {
            return Err(ClvfError::DimensionMismatch {
                what: "grid",
                expected: n,
                got: grid.dim(),
            });
        }
        let len = grid.len();
        let exec = cfg.execution;
        let loss = par::map_indices(exec, len, |i| sys.loss_at(&grid.node(i)));
        let mut f = vec![0.0; len * n];
        let mut g = vec![0.0; len * n * m];
        for_each_node_data(exec, grid, sys, &mut f, &mut g);

        let lo: Vec<f64> = sys.control_box().iter().map(|iv| iv.lo).collect();
        let hi: Vec<f64> = sys.control_box().iter().map(|iv| iv.hi).collect();
        let node_alpha = |i: usize, k: usize| -> f64 {
            let row = &g[i * n * m + k * m..i * n * m + (k + 1) * m];
            let mut amin = f[i * n + k];
            let mut amax = f[i * n + k];
            for j in 0..m {
                amin += (row[j] * lo[j]).min(row[j] * hi[j]);
                amax += (row[j] * lo[j]).max(row[j] * hi[j]);
            }
            amin.abs().max(amax.abs())
        };
        let per_node: Vec<f64> = par::map_indices(exec, len * n, |q| node_alpha(q / n, q % n));
        let mut alpha = vec![0.0f64; n];
        for (q, &a) in per_node.iter().enumerate() {
            alpha[q % n] = alpha[q % n].max(a);
        }
        let mut ctrl_rows = vec![Vec::new(); m];
        for j in 0..m {
            for k in 0..n {
                if (0..len).any(|i| g[i * n * m + k * m + j] != 0.0) {
                    ctrl_rows[j].push(k);
                }
            }
        }
        let free_rows: Vec<usize> = (0..n)
            .filter(|k| ctrl_rows.iter().all(|r| !r.contains(k)))
            .collect();
        let separable = ctrl_rows.iter().map(Vec::len).sum::<usize>() + free_rows.len() == n;
        let scheme = match cfg.scheme {
            Scheme::Upwind if !separable => Scheme::LaxFriedrichs,
            s => s,
        };
        let local_alpha = match scheme {
            Scheme::Upwind | Scheme::LaxFriedrichs => None,
            Scheme::LocalLaxFriedrichs => Some(par::map_indices(exec, len * n, |q| {
                let (i, k) = (q / n, q % n);
                let s = grid.strides()[k];
                let ik = grid.axis_index(i, k);
                let mut a = per_node[q];
                if ik > 0 {
                    a = a.max(per_node[(i - s) * n + k]);
                }
                if ik + 1 < grid.counts()[k] {
                    a = a.max(per_node[(i + s) * n + k]);
                }
                a
            })),
        };

        let rate: f64 = alpha.iter().zip(grid.spacing()).map(|(a, h)| a / h).sum();
        let limit = if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        };
        let dt = match cfg.dt {
            Some(dt) if dt > limit => return Err(ClvfError::CflViolation { dt, limit }),
            Some(dt) => dt,
            None if rate > 0.0 => cfg.cfl * limit,
            None => grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min),
        };
        // shrink an automatic step so snapshots land exactly history_dt apart
        let dt = match (cfg.dt, cfg.history_dt) {
            (None, Some(h)) => h / (h / dt).ceil(),
            _ => dt,
        };
        let max_loss = loss.iter().cloned().fold(0.0, f64::max);
        let cap = cfg.cap.unwrap_or(1e3 * max_loss.max(f64::MIN_POSITIVE));
        if !(cap > max_loss) {
            return Err(ClvfError::InvalidConfig(format!(
                "divergence cap {cap} must exceed the largest loss {max_loss}"
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            n,
            m,
            lo,
            hi,
            loss,
            f,
            g,
            alpha,
            local_alpha,
            scheme,
            ctrl_rows,
            free_rows,
            gamma: cfg.gamma,
            dt,
            cap,
            execution: exec,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// The scheme in use after any fallback.
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Terminal condition `V(x, T) = l(x)` with an all-clear mask.
    pub fn initial(&self) -> ValueArray {
        ValueArray::new(self.grid.clone(), self.loss.clone())
            .and_then(|v| v.with_mask(vec![false; self.grid.len()]))
            .expect("sizes agree")
    }

    /// Tentative update `V + dt (H + gamma V)` at unmasked node `i`.
    fn tentative(&self, v: &[f64], i: usize) -> f64 {
        let n = self.n;
        let grid = &self.grid;
        let vi = v[i];
        let mut dm = [0.0f64; crate::grid::MAX_DIMS];
        let mut dp = [0.0f64; crate::grid::MAX_DIMS];
        let mut face = [0i8; crate::grid::MAX_DIMS];
        for k in 0..n {
            let s = grid.strides()[k];
            let h = grid.spacing()[k];
            let ik = (i / s) % grid.counts()[k];
            // one-sided at the faces: the missing difference copies the other
            if ik == 0 {
                dp[k] = (v[i + s] - vi) / h;
                dm[k] = dp[k];
                face[k] = -1;
            } else if ik == grid.counts()[k] - 1 {
                dm[k] = (vi - v[i - s]) / h;
                dp[k] = dm[k];
                face[k] = 1;
            } else {
                dm[k] = (vi - v[i - s]) / h;
                dp[k] = (v[i + s] - vi) / h;
            }
        }
        let ham = match self.scheme {
            Scheme::Upwind => self.upwind_hamiltonian(i, &dm[..n], &dp[..n], &face[..n]),
            _ => self.lf_hamiltonian(i, &dm[..n], &dp[..n]),
        };
        vi + self.dt * (ham + self.gamma * vi)
    }

    /// Velocities pointing out of the grid through a face are inadmissible,
    /// so a node whose every control exits the grid diverges.
    fn upwind_hamiltonian(&self, i: usize, dm: &[f64], dp: &[f64], face: &[i8]) -> f64 {
        let (n, m) = (self.n, self.m);
        let f = &self.f[i * n..(i + 1) * n];
        let g = &self.g[i * n * m..(i + 1) * n * m];
        let phi = |k: usize, b: f64| {
            let tol = 1e-12 * self.alpha[k];
            if (face[k] < 0 && b < -tol) || (face[k] > 0 && b > tol) {
                f64::INFINITY
            } else if b > 0.0 {
                b * dp[k]
            } else {
                b * dm[k]
            }
        };
        let mut ham: f64 = self.free_rows.iter().map(|&k| phi(k, f[k])).sum();
        for (j, rows) in self.ctrl_rows.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            // piecewise linear in u_j: the minimum sits at an end or a kink
            let eval =
                |u: f64| -> f64 { rows.iter().map(|&k| phi(k, f[k] + g[k * m + j] * u)).sum() };
            let (lo, hi) = (self.lo[j], self.hi[j]);
            let mut best = eval(lo).min(eval(hi));
            for &k in rows {
                let gk = g[k * m + j];
                if gk != 0.0 {
                    let u = -f[k] / gk;
                    if u > lo && u < hi {
                        best = best.min(eval(u));
                    }
                }
            }
            ham += best;
        }
        ham
    }

    fn lf_hamiltonian(&self, i: usize, dm: &[f64], dp: &[f64]) -> f64 {
        let (n, m) = (self.n, self.m);
        let f = &self.f[i * n..(i + 1) * n];
        let g = &self.g[i * n * m..(i + 1) * n * m];
        let mut ham = 0.0;
        for k in 0..n {
            let a = match &self.local_alpha {
                Some(la) => la[i * n + k],
                None => self.alpha[k],
            };
            ham += 0.5 * (dp[k] + dm[k]) * f[k] + 0.5 * a * (dp[k] - dm[k]);
        }
        for j in 0..m {
            let mut c = 0.0;
            for k in 0..n {
                c += 0.5 * (dp[k] + dm[k]) * g[k * m + j];
            }
            ham += if c > 0.0 {
                c * self.lo[j]
            } else if c < 0.0 {
                c * self.hi[j]
            } else {
                0.0
            };
        }
        ham
    }

    /// One backward step over raw buffers.
    pub fn step_into(&self, v: &[f64], mask: &[bool], out: &mut [f64], out_mask: &mut [bool]) {
        let cap = self.cap;
        par::for_each_chunk2(self.execution, out, out_mask, CHUNK, |c, ov, om| {
            let base = c * CHUNK;
            for (off, (o, mo)) in ov.iter_mut().zip(om.iter_mut()).enumerate() {
                let i = base + off;
                if mask[i] {
                    *o = v[i];
                    *mo = true;
                    continue;
                }
                let next = self.tentative(v, i).max(self.loss[i]);
                if next >= cap || !next.is_finite() {
                    *o = cap;
                    *mo = true;
                } else {
                    *o = next;
                    *mo = false;
                }
            }
        });
    }

    pub fn step(&self, cur: &ValueArray) -> Result<ValueArray> {
        if cur.grid != self.grid {
            return Err(ClvfError::GridMismatch);
        }
        let len = self.grid.len();
        let mask = cur.mask.clone().unwrap_or_else(|| vec![false; len]);
        let mut out = vec![0.0; len];
        let mut out_mask = vec![false; len];
        self.step_into(&cur.values, &mask, &mut out, &mut out_mask);
        ValueArray::new(self.grid.clone(), out)?.with_mask(out_mask)
    }
}

fn for_each_node_data(exec: Execution, grid: &Grid, sys: &SystemDef, f: &mut [f64], g: &mut [f64]) {
    let (n, m) = (sys.state_dim(), sys.control_dim());
    let nodes_per_chunk = CHUNK;
    // f and g have different strides per node, so they are filled in matching chunks
    let fchunks = f.chunks_mut(nodes_per_chunk * n);
    let gchunks = g.chunks_mut(nodes_per_chunk * n * m);
    let pairs: Vec<_> = fchunks.zip(gchunks).collect();
    let fill = |c: usize, fc: &mut [f64], gc: &mut [f64]| {
        let mut x = vec![0.0; n];
        for off in 0..fc.len() / n {
            grid.node_into(c * nodes_per_chunk + off, &mut x);
            sys.drift_into(&x, &mut fc[off * n..(off + 1) * n]);
            sys.control_matrix_into(&x, &mut gc[off * n * m..(off + 1) * n * m]);
        }
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            pairs
                .into_par_iter()
                .enumerate()
                .for_each(|(c, (fc, gc))| fill(c, fc, gc));
        }
        _ => pairs
            .into_iter()
            .enumerate()
            .for_each(|(c, (fc, gc))| fill(c, fc, gc)),
    }
}

/// Single backward step from `v_t`. Builds the per-node tables on every call;
/// use [`Stepper`] when stepping repeatedly.
pub fn step_vi(v_t: &ValueArray, sys: &SystemDef, cfg: &SolverConfig) -> Result<ValueArray> {
    Stepper::new(sys, &v_t.grid, cfg)?.step(v_t)
}

pub fn solve_clvf(sys: &SystemDef, grid: &Grid, cfg: &SolverConfig) -> Result<ClvfResult> {
    solve_clvf_observed(sys, grid, cfg, |_, _, _| {})
}

/// As [`solve_clvf`], calling `observe(step, before, after)` after every step.
pub fn solve_clvf_observed(
    sys: &SystemDef,
    grid: &Grid,
    cfg: &SolverConfig,
    mut observe: impl FnMut(usize, &[f64], &[f64]),
) -> Result<ClvfResult> {
    let stepper = Stepper::new(sys, grid, cfg)?;
    let dt = stepper.dt;
    let len = grid.len();
    let stride = cfg.history_dt.map(|h| ((h / dt).round() as usize).max(1));
    let history_dt = stride.map_or(0.0, |s| s as f64 * dt);

    let mut cur = stepper.loss.clone();
    let mut cur_mask = vec![false; len];
    let mut next = vec![0.0; len];
    let mut next_mask = vec![false; len];
    let mut history = Vec::new();
    let snapshot = |v: &[f64], mk: &[bool]| {
        ValueArray::new(grid.clone(), v.to_vec())
            .and_then(|a| a.with_mask(mk.to_vec()))
            .expect("sizes agree")
    };
    if stride.is_some() {
        history.push(snapshot(&cur, &cur_mask));
    }

    let max_steps = (cfg.t_max / dt).ceil() as usize;
    let mut change_log = Vec::new();
    let mut quiet = 0;
    let mut steps = 0;
    let mut converged = false;
    let mut conv_steps = None;
    while steps < max_steps {
        stepper.step_into(&cur, &cur_mask, &mut next, &mut next_mask);
        steps += 1;
        observe(steps, &cur, &next);
        let change = par::max_over(cfg.execution, len, |i| {
            if next_mask[i] {
                0.0
            } else {
                (next[i] - cur[i]).abs()
            }
        })
        .max(0.0);
        change_log.push(change);
        std::mem::swap(&mut cur, &mut next);
        std::mem::swap(&mut cur_mask, &mut next_mask);
        if let Some(s) = stride {
            if steps % s == 0 {
                history.push(snapshot(&cur, &cur_mask));
            }
        }
        if conv_steps.is_none() {
            quiet = if change < cfg.eps_conv { quiet + 1 } else { 0 };
            if quiet >= cfg.stable_steps {
                converged = true;
                conv_steps = Some(steps);
            }
        }
        if conv_steps.is_some() && stride.is_none_or(|s| steps % s == 0) {
            break;
        }
    }
    let t_conv = conv_steps.unwrap_or(steps) as f64 * dt;
    let values = ValueArray::new(grid.clone(), cur)?.with_mask(cur_mask)?;
    Ok(ClvfResult {
        values,
        gamma: cfg.gamma,
        cap: stepper.cap,
        converged,
        t_conv,
        steps,
        dt,
        history,
        history_dt,
        change_log,
    })
}

/// Nodes inside the region of exponential stabilizability.
pub fn extract_roes(res: &ClvfResult) -> Vec<bool> {
    (0..res.values.values.len())
        .map(|i| !res.values.is_masked(i))
        .collect()
}

//! Admissible control sets: the half-space `{u in box : a.u <= b}` where a
//! value function can decay at the requested rate, its projection onto shared
//! controls, intersections across subsystems, the forward rollout that
//! certifies where a max-reconstruction is exact, and the domain on which a
//! sum-reconstruction is a CLF.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{Interval, Partition, SubsystemDef, SystemDef};
use crate::error::{ClvfError, Result};
use crate::grid::{Grid, ValueArray, MAX_DIMS};
use crate::hjsolver::ClvfResult;
use crate::par::{self, Execution};
use crate::reconstruct::broadcast;

/// `{u in box : a.u <= b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfspaceAcs {
    pub a: Vec<f64>,
    pub b: f64,
    pub bounds: Vec<Interval>,
}

impl HalfspaceAcs {
    pub fn new(a: Vec<f64>, b: f64, bounds: Vec<Interval>) -> Result<Self> {
        if a.len() != bounds.len() {
            return Err(ClvfError::DimensionMismatch {
                what: "half-space normal",
                expected: bounds.len(),
                got: a.len(),
            });
        }
        Ok(Self { a, b, bounds })
    }

    /// `min over the box of a.u`, attained at a vertex.
    pub fn min_value(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.bounds)
            .map(|(&c, iv)| iv.min_linear(c))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.min_value() > self.b
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().zip(&self.bounds).all(|(&v, iv)| iv.contains(v))
            && self.a.iter().zip(u).map(|(a, v)| a * v).sum::<f64>() <= self.b
    }

    /// Box vertex minimising `a.u` (midpoint where a component is zero).
    pub fn minimiser(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.bounds)
            .map(|(&c, iv)| iv.argmin_linear(c))
            .collect()
    }
}

/// Constraint `a.D V.(f + g u) <= -gamma V` at `x`, with `D V` the
/// interpolated central-difference gradient.
pub fn acs_infinite(
    v: &ValueArray,
    sys: &SystemDef,
    x: &[f64],
    gamma: f64,
) -> Result<HalfspaceAcs> {
    if v.interpolate_unmasked(x)?.is_none() {
        return Err(ClvfError::OutsideRoes);
    }
    let mut grad = vec![0.0; x.len()];
    let value = v.value_and_gradient(x, &mut grad)?;
    halfspace(sys, x, &grad, -gamma * value)
}

/// Time-varying constraint between snapshots `V(., t - dt)` and `V(., t)`:
/// `(V(x,t-dt) - V(x,t)) - (D V(x,t).(f + g u) + gamma V(x,t)) dt >= 0`.
pub fn acs_tv(
    v_tm: &ValueArray,
    v_t: &ValueArray,
    sys: &SystemDef,
    x: &[f64],
    gamma: f64,
    dt: f64,
) -> Result<HalfspaceAcs> {
    if v_tm.grid != v_t.grid {
        return Err(ClvfError::GridMismatch);
    }
    let mut grad = vec![0.0; x.len()];
    let vt = v_t.value_and_gradient(x, &mut grad)?;
    let vtm = v_tm.interpolate(x)?;
    halfspace(sys, x, &grad, (vtm - vt) / dt - gamma * vt)
}

fn halfspace(sys: &SystemDef, x: &[f64], grad: &[f64], rhs: f64) -> Result<HalfspaceAcs> {
    let (n, m) = (sys.state_dim(), sys.control_dim());
    if x.len() != n {
        return Err(ClvfError::DimensionMismatch {
            what: "state",
            expected: n,
            got: x.len(),
        });
    }
    let f = sys.drift(x);
    let g = sys.control_matrix(x);
    let a = (0..m)
        .map(|j| (0..n).map(|k| grad[k] * g[k * m + j]).sum())
        .collect();
    let b = rhs - grad.iter().zip(&f).map(|(p, v)| p * v).sum::<f64>();
    HalfspaceAcs::new(a, b, sys.control_box().to_vec())
}

/// A half-space over the shared controls only.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedAcs {
    pub a: Vec<f64>,
    pub b: f64,
    pub bounds: Vec<Interval>,
}

/// Existential projection onto the shared controls: `u_c` is kept iff some
/// owned control completes it to a member of `h`. Owned controls are the
/// first entries of the subsystem control vector.
pub fn shared_component(h: &HalfspaceAcs, sub: &SubsystemDef) -> Result<SharedAcs> {
    if sub.n_shared_controls == 0 {
        return Err(ClvfError::NoSharedControls);
    }
    Ok(split_shared(h, sub.n_owned_controls()))
}

fn split_shared(h: &HalfspaceAcs, n_owned: usize) -> SharedAcs {
    let own_min: f64 = h.a[..n_owned]
        .iter()
        .zip(&h.bounds[..n_owned])
        .map(|(&c, iv)| iv.min_linear(c))
        .sum();
    SharedAcs {
        a: h.a[n_owned..].to_vec(),
        b: h.b - own_min,
        bounds: h.bounds[n_owned..].to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Intersection {
    pub nonempty: bool,
    pub witness: Option<Vec<f64>>,
}

/// Intersection of two shared-control sets over the same box.
pub fn intersect_shared(s1: &SharedAcs, s2: &SharedAcs) -> Result<Intersection> {
    intersect_all(&[s1, s2], None)
}

/// Decides whether every set shares a point and returns one. The
/// deterministic witness fixes coordinates in order, each as close to its
/// box midpoint as the constraints allow (for one shared control this is the
/// point of the intersection nearest the midpoint). With `rng` each
/// coordinate is drawn uniformly from its admissible interval instead.
pub fn intersect_all(sets: &[&SharedAcs], rng: Option<&mut ChaCha8Rng>) -> Result<Intersection> {
    let first = sets
        .first()
        .ok_or_else(|| ClvfError::InvalidConfig("no sets to intersect".into()))?;
    let mc = first.bounds.len();
    for s in sets {
        if s.bounds != first.bounds || s.a.len() != mc {
            return Err(ClvfError::DimensionMismatch {
                what: "shared control box",
                expected: mc,
                got: s.a.len(),
            });
        }
    }
    let mut rows: Vec<(Vec<f64>, f64)> = sets.iter().map(|s| (s.a.clone(), s.b)).collect();
    for (j, iv) in first.bounds.iter().enumerate() {
        let mut e = vec![0.0; mc];
        e[j] = 1.0;
        rows.push((e.clone(), iv.hi));
        e[j] = -1.0;
        rows.push((e, -iv.lo));
    }
    let levels = eliminate(rows, mc);
    if levels[0].iter().any(|(_, rhs)| *rhs < -feas_tol(*rhs)) {
        return Ok(Intersection {
            nonempty: false,
            witness: None,
        });
    }
    let mut u = Vec::with_capacity(mc);
    let mut rng = rng;
    for (j, iv) in first.bounds.iter().enumerate() {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (c, rhs) in &levels[j + 1] {
            let rest = rhs - c[..j].iter().zip(&u).map(|(a, v)| a * v).sum::<f64>();
            if c[j] > 0.0 {
                hi = hi.min(rest / c[j]);
            } else if c[j] < 0.0 {
                lo = lo.max(rest / c[j]);
            }
        }
        let (lo, hi) = (lo.max(iv.lo), hi.min(iv.hi));
        if lo > hi + feas_tol(hi) {
            return Ok(Intersection {
                nonempty: false,
                witness: None,
            });
        }
        let hi = hi.max(lo);
        let v = match rng.as_deref_mut() {
            Some(r) if hi > lo => r.gen_range(lo..=hi),
            _ => iv.mid().clamp(lo, hi),
        };
        u.push(v);
    }
    Ok(Intersection {
        nonempty: true,
        witness: Some(u),
    })
}

fn feas_tol(v: f64) -> f64 {
    1e-12 * (1.0 + v.abs())
}

/// Fourier-Motzkin elimination. `levels[d]` holds the constraints that
/// involve only the first `d` variables.
fn eliminate(rows: Vec<(Vec<f64>, f64)>, nvars: usize) -> Vec<Vec<(Vec<f64>, f64)>> {
    let mut levels = vec![Vec::new(); nvars + 1];
    levels[nvars] = rows;
    for d in (0..nvars).rev() {
        let cur = &levels[d + 1];
        let mut next = Vec::new();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for r in cur {
            if r.0[d] > 0.0 {
                pos.push(r);
            } else if r.0[d] < 0.0 {
                neg.push(r);
            } else {
                next.push(r.clone());
            }
        }
        for p in &pos {
            for q in &neg {
                let (sp, sq) = (1.0 / p.0[d], -1.0 / q.0[d]);
                let mut c: Vec<f64> = p.0.iter().zip(&q.0).map(|(a, b)| a * sp + b * sq).collect();
                c[d] = 0.0;
                next.push((c, p.1 * sp + q.1 * sq));
            }
        }
        levels[d] = next;
    }
    levels
}

/// Why a node left the rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cause {
    Survived,
    AcsEmpty,
    OutOfBounds,
    /// The node or a later state projects onto diverged subsystem values.
    OutsideRoes,
}

impl Cause {
    pub fn label(self) -> &'static str {
        match self {
            Cause::Survived => "survived",
            Cause::AcsEmpty => "acs-empty",
            Cause::OutOfBounds => "out-of-bounds",
            Cause::OutsideRoes => "outside-roes",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeOutcome {
    pub steps: usize,
    pub cause: Cause,
}

#[derive(Clone, Debug)]
pub struct SGammaResult {
    /// Max-reconstruction of the converged subsystem values on the full grid.
    pub vbar: ValueArray,
    pub t_gamma: Vec<bool>,
    pub s_gamma: Vec<bool>,
    /// `S_gamma = {unmasked nodes with vbar <= level}`; `None` when empty.
    pub level: Option<f64>,
    pub outcomes: Vec<NodeOutcome>,
    /// Rollout length in steps and the step used.
    pub horizon_steps: usize,
    pub dt: f64,
}

impl SGammaResult {
    pub fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|&&b| b).count()
    }

    pub fn diagnostics_csv(&self) -> String {
        let g = &self.vbar.grid;
        let mut s = String::from("node");
        for k in 0..g.dim() {
            write!(s, ",x{}", k + 1).unwrap();
        }
        s.push_str(",steps,cause\n");
        let mut x = vec![0.0; g.dim()];
        for (i, o) in self.outcomes.iter().enumerate() {
            g.node_into(i, &mut x);
            write!(s, "{i}").unwrap();
            for v in &x {
                write!(s, ",{v}").unwrap();
            }
            writeln!(s, ",{},{}", o.steps, o.cause.label()).unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct RolloutConfig {
    pub seed: Option<u64>,
    pub execution: Execution,
}

/// Largest sublevel set of `v` (unmasked nodes) that avoids every failed
/// node: everything strictly below the smallest failed value.
pub fn largest_sublevel(v: &ValueArray, ok: &[bool]) -> (Vec<bool>, Option<f64>) {
    let len = v.values.len();
    let bad_min = (0..len)
        .filter(|&i| !v.is_masked(i) && !ok[i])
        .map(|i| v.values[i])
        .fold(f64::INFINITY, f64::min);
    let inside: Vec<bool> = (0..len)
        .map(|i| !v.is_masked(i) && v.values[i] < bad_min)
        .collect();
    let level = (0..len)
        .filter(|&i| inside[i])
        .map(|i| v.values[i])
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    (inside, level)
}

struct SubView<'a> {
    states: Vec<usize>,
    controls: Vec<usize>,
    n_owned: usize,
    history: &'a [ValueArray],
}

/// Forward rollouts under the time-reversed subsystem value histories; nodes
/// whose reconstructed shared admissible set stays nonempty for the whole
/// horizon form `T_gamma`, and `S_gamma` is the largest sublevel set of the
/// max-reconstruction inside it.
pub fn algorithm1_sgamma(
    sys: &SystemDef,
    part: &Partition,
    results: &[ClvfResult],
    full: &Grid,
    cfg: &RolloutConfig,
) -> Result<SGammaResult> {
    let k = part.num_subsystems();
    if results.len() != k {
        return Err(ClvfError::DimensionMismatch {
            what: "subsystem results",
            expected: k,
            got: results.len(),
        });
    }
    part.validate(sys.state_dim(), sys.control_dim())?;
    if full.dim() != sys.state_dim() {
        return Err(ClvfError::DimensionMismatch {
            what: "full grid",
            expected: sys.state_dim(),
            got: full.dim(),
        });
    }
    let dt = results[0].history_dt;
    let gamma = results[0].gamma;
    for (i, r) in results.iter().enumerate() {
        if r.history.len() < 2 {
            return Err(ClvfError::MissingHistory(format!(
                "subsystem {i} stored no snapshots"
            )));
        }
        if (r.history_dt - dt).abs() > 1e-9 * dt {
            return Err(ClvfError::MissingHistory(format!(
                "snapshot spacing differs: {} vs {dt}",
                r.history_dt
            )));
        }
        if r.gamma != gamma {
            return Err(ClvfError::InvalidConfig(format!(
                "subsystem decay rates differ: {} vs {gamma}",
                r.gamma
            )));
        }
    }
    let views: Vec<SubView> = results
        .iter()
        .enumerate()
        .map(|(i, r)| SubView {
            states: part.subsystem_states(i),
            controls: part.subsystem_controls(i),
            n_owned: part.owned_controls[i].len(),
            history: &r.history,
        })
        .collect();

    let mut vbar: Option<ValueArray> = None;
    for (v, r) in views.iter().zip(results) {
        let b = broadcast(&r.values, full, &v.states, cfg.execution)?;
        vbar = Some(match vbar {
            None => b,
            Some(acc) => crate::reconstruct::reconstruct_max(&acc, &b)?,
        });
    }
    let vbar = vbar.expect("two or more subsystems");
    let horizon = views.iter().map(|v| v.history.len() - 1).max().unwrap_or(0);

    let outcomes = par::map_indices(cfg.execution, full.len(), |i| {
        if vbar.is_masked(i) {
            return NodeOutcome {
                steps: 0,
                cause: Cause::OutsideRoes,
            };
        }
        let mut rng = cfg
            .seed
            .map(|s| ChaCha8Rng::seed_from_u64(s ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        rollout(
            sys,
            part,
            &views,
            full,
            &full.node(i),
            gamma,
            dt,
            horizon,
            rng.as_mut(),
        )
    });
    let t_gamma: Vec<bool> = outcomes
        .iter()
        .map(|o| o.cause == Cause::Survived)
        .collect();
    let (s_gamma, level) = largest_sublevel(&vbar, &t_gamma);
    Ok(SGammaResult {
        vbar,
        t_gamma,
        s_gamma,
        level,
        outcomes,
        horizon_steps: horizon,
        dt,
    })
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    sys: &SystemDef,
    part: &Partition,
    views: &[SubView],
    full: &Grid,
    x0: &[f64],
    gamma: f64,
    dt: f64,
    horizon: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> NodeOutcome {
    let (n, m) = (sys.state_dim(), sys.control_dim());
    let ubox = sys.control_box();
    let mc = part.shared_controls.len();
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * m];
    let mut u = vec![0.0; m];
    let mut z = [0.0; MAX_DIMS];
    let mut grad = [0.0; MAX_DIMS];
    let mut a = [0.0; MAX_DIMS];
    // general path only: one set per subsystem
    let mut shared: Vec<SharedAcs> = Vec::new();
    let shared_bounds: Vec<Interval> = part.shared_controls.iter().map(|&j| ubox[j]).collect();
    let fail = |steps, cause| NodeOutcome { steps, cause };
    for j in 0..horizon {
        sys.drift_into(&x, &mut f);
        sys.control_matrix_into(&x, &mut g);
        shared.clear();
        // running intersection for a single shared control
        let (mut lo, mut hi) = match shared_bounds.first() {
            Some(iv) if mc == 1 => (iv.lo, iv.hi),
            _ => (0.0, 0.0),
        };
        for v in views {
            let d = v.states.len();
            for (q, &s) in v.states.iter().enumerate() {
                z[q] = x[s];
            }
            let last = v.history.len() - 1;
            let snap_t = &v.history[(horizon - j).min(last)];
            let snap_tm = &v.history[(horizon - j + 1).min(last)];
            let vt = match snap_t.sample(&z[..d], &mut grad[..d]) {
                Ok(Some(vt)) => vt,
                Ok(None) => return fail(j, Cause::OutsideRoes),
                Err(_) => return fail(j, Cause::OutOfBounds),
            };
            let vtm = snap_tm.interpolate(&z[..d]).unwrap_or(vt);
            let mut b = (vtm - vt) / dt - gamma * vt;
            for (q, &s) in v.states.iter().enumerate() {
                b -= grad[q] * f[s];
            }
            for (q, &c) in v.controls.iter().enumerate() {
                a[q] = v
                    .states
                    .iter()
                    .enumerate()
                    .map(|(r, &s)| grad[r] * g[s * m + c])
                    .sum();
            }
            // owned controls take the box vertex minimising their share
            for (q, &c) in v.controls[..v.n_owned].iter().enumerate() {
                let iv = ubox[c];
                b -= iv.min_linear(a[q]);
                u[c] = iv.argmin_linear(a[q]);
            }
            let ac = &a[v.n_owned..v.controls.len()];
            match mc {
                0 => {
                    if b < -feas_tol(b) {
                        return fail(j, Cause::AcsEmpty);
                    }
                }
                1 => {
                    if ac[0] > 0.0 {
                        hi = hi.min(b / ac[0]);
                    } else if ac[0] < 0.0 {
                        lo = lo.max(b / ac[0]);
                    } else if b < -feas_tol(b) {
                        return fail(j, Cause::AcsEmpty);
                    }
                }
                _ => shared.push(SharedAcs {
                    a: ac.to_vec(),
                    b,
                    bounds: shared_bounds.clone(),
                }),
            }
        }
        if mc == 1 {
            if lo > hi + feas_tol(hi) {
                return fail(j, Cause::AcsEmpty);
            }
            let hi = hi.max(lo);
            u[part.shared_controls[0]] = match rng.as_deref_mut() {
                Some(r) if hi > lo => r.gen_range(lo..=hi),
                _ => shared_bounds[0].mid().clamp(lo, hi),
            };
        } else if mc > 1 {
            let refs: Vec<&SharedAcs> = shared.iter().collect();
            match intersect_all(&refs, rng.as_deref_mut()) {
                Ok(Intersection {
                    witness: Some(w), ..
                }) => {
                    for (q, &c) in part.shared_controls.iter().enumerate() {
                        u[c] = w[q];
                    }
                }
                _ => return fail(j, Cause::AcsEmpty),
            }
        }
        for r in 0..n {
            let mut xd = f[r];
            for c in 0..m {
                xd += g[r * m + c] * u[c];
            }
            x[r] += dt * xd;
        }
        if !full.contains(&x) {
            return fail(j + 1, Cause::OutOfBounds);
        }
    }
    fail(horizon, Cause::Survived)
}

/// Relaxation of each subsystem's offset when checking shared feasibility
/// of the converged CLVFs, absorbing grid error in the gradients.
#[derive(Clone, Debug, PartialEq)]
pub enum Slack {
    None,
    /// Fixed offset per subsystem.
    Uniform(Vec<f64>),
    /// `factor * dx * L`, `L` the largest node-gradient norm on the
    /// interpolation stencil at the query point (a local Lipschitz bound).
    Local {
        factor: f64,
    },
}

impl Default for Slack {
    fn default() -> Self {
        Slack::Local { factor: 2.0 }
    }
}

/// Largest node-gradient norm on the interpolation stencil of `z`.
pub fn local_lipschitz(v: &ValueArray, z: &[f64]) -> Result<f64> {
    let d = v.grid.dim();
    let mut lip = 0.0f64;
    v.grid.for_each_corner(z, |i, _| {
        let n2: f64 = (0..d).map(|k| v.node_derivative(i, k).powi(2)).sum();
        lip = lip.max(n2.sqrt());
    })?;
    Ok(lip)
}

/// Domain on which the sum of subsystem CLVFs is a CLF: nodes where the
/// intersected shared admissible sets are nonempty, and the largest
/// sublevel set of the sum inside them.
#[derive(Clone, Debug)]
pub struct SBarResult {
    pub vbar: ValueArray,
    pub feasible: Vec<bool>,
    pub s_bar: Vec<bool>,
    pub level: Option<f64>,
    pub slack: Slack,
}

/// Shared-control feasibility of the converged subsystem CLVFs at `x`.
pub fn reconstructed_acs_nonempty(
    sys: &SystemDef,
    part: &Partition,
    finals: &[&ValueArray],
    x: &[f64],
    gamma: f64,
    slack: &Slack,
) -> Result<bool> {
    let m = sys.control_dim();
    let f = sys.drift(x);
    let g = sys.control_matrix(x);
    let bounds: Vec<Interval> = part
        .shared_controls
        .iter()
        .map(|&j| sys.control_box()[j])
        .collect();
    let mut sets = Vec::new();
    for (i, v) in finals.iter().enumerate() {
        let states = part.subsystem_states(i);
        let z: Vec<f64> = states.iter().map(|&s| x[s]).collect();
        let mut grad = vec![0.0; z.len()];
        let val = v.sample(&z, &mut grad)?.ok_or(ClvfError::OutsideRoes)?;
        let relax = match slack {
            Slack::None => 0.0,
            Slack::Uniform(s) => s[i],
            Slack::Local { factor } => {
                let h = v.grid.spacing().iter().cloned().fold(0.0, f64::max);
                factor * h * local_lipschitz(v, &z)?
            }
        };
        let mut b = -gamma * val + relax;
        for (q, &s) in states.iter().enumerate() {
            b -= grad[q] * f[s];
        }
        let ctrls = part.subsystem_controls(i);
        let a: Vec<f64> = ctrls
            .iter()
            .map(|&c| {
                states
                    .iter()
                    .enumerate()
                    .map(|(q, &s)| grad[q] * g[s * m + c])
                    .sum()
            })
            .collect();
        let owned = part.owned_controls[i].len();
        let h = HalfspaceAcs::new(a, b, ctrls.iter().map(|&c| sys.control_box()[c]).collect())?;
        if part.shared_controls.is_empty() {
            if h.is_empty() {
                return Ok(false);
            }
            continue;
        }
        let mut s = split_shared(&h, owned);
        s.bounds = bounds.clone();
        sets.push(s);
    }
    if sets.is_empty() {
        return Ok(true);
    }
    let refs: Vec<&SharedAcs> = sets.iter().collect();
    Ok(intersect_all(&refs, None)?.nonempty)
}

pub fn sbar_gamma(
    sys: &SystemDef,
    part: &Partition,
    finals: &[&ValueArray],
    full: &Grid,
    gamma: f64,
    slack: &Slack,
    exec: Execution,
) -> Result<SBarResult> {
    if finals.len() != part.num_subsystems() {
        return Err(ClvfError::DimensionMismatch {
            what: "subsystem values",
            expected: part.num_subsystems(),
            got: finals.len(),
        });
    }
    if let Slack::Uniform(s) = slack {
        if s.len() != finals.len() {
            return Err(ClvfError::DimensionMismatch {
                what: "slack offsets",
                expected: finals.len(),
                got: s.len(),
            });
        }
    }
    let mut vbar: Option<ValueArray> = None;
    for (i, v) in finals.iter().enumerate() {
        let b = broadcast(v, full, &part.subsystem_states(i), exec)?;
        vbar = Some(match vbar {
            None => b,
            Some(acc) => crate::reconstruct::reconstruct_sum(&acc, &b)?,
        });
    }
    let vbar = vbar.ok_or_else(|| ClvfError::InvalidPartition("no subsystems".into()))?;
    let feasible = par::map_indices(exec, full.len(), |i| {
        !vbar.is_masked(i)
            && reconstructed_acs_nonempty(sys, part, finals, &full.node(i), gamma, slack)
                .unwrap_or(false)
    });
    let (s_bar, level) = largest_sublevel(&vbar, &feasible);
    Ok(SBarResult {
        vbar,
        feasible,
        s_bar,
        level,
        slack: slack.clone(),
    })
}

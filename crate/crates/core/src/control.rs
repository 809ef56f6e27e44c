//! Pointwise minimum-deviation controller and closed-loop simulation.
//!
//! At each state the controller solves
//! `min ||u - u_ref||  s.t.  D V.(f + g u) <= -gamma V,  u in box`
//! for a value function `V` sampled on a grid or assembled from subsystem
//! grids, then the loop is integrated with RK4 under a zero-order hold.

use std::fmt::Write as _;

use crate::acs::local_lipschitz;
use crate::dynamics::{Interval, SystemDef};
use crate::error::{ClvfError, Result};
use crate::grid::{ValueArray, MAX_DIMS};
use crate::par::{self, Execution};
use crate::reconstruct::{Combine, Composite};

fn max_spacing(v: &ValueArray) -> f64 {
    v.grid.spacing().iter().cloned().fold(0.0, f64::max)
}

/// `min ||u - u_ref||_2` over `{u in box : a.u <= b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub u_ref: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
    pub bounds: Vec<Interval>,
}

/// Exact solution: the minimiser is `clip(u_ref - lambda a)` for the
/// smallest `lambda >= 0` meeting the constraint, and `a.clip(u_ref - lambda a)`
/// is piecewise linear in `lambda` with breakpoints where coordinates hit
/// the box.
pub fn qp_control(p: &QpProblem) -> Result<Vec<f64>> {
    let m = p.bounds.len();
    if p.a.len() != m || p.u_ref.len() != m {
        return Err(ClvfError::DimensionMismatch {
            what: "QP vectors",
            expected: m,
            got: if p.a.len() != m {
                p.a.len()
            } else {
                p.u_ref.len()
            },
        });
    }
    let min_value: f64 =
        p.a.iter()
            .zip(&p.bounds)
            .map(|(&c, iv)| iv.min_linear(c))
            .sum();
    if min_value > p.b {
        return Err(ClvfError::Infeasible {
            min_value,
            offset: p.b,
        });
    }
    let at = |lambda: f64| -> Vec<f64> {
        p.u_ref
            .iter()
            .zip(&p.a)
            .zip(&p.bounds)
            .map(|((&r, &c), iv)| iv.clamp(r - lambda * c))
            .collect()
    };
    let phi = |u: &[f64]| -> f64 { p.a.iter().zip(u).map(|(a, v)| a * v).sum() };
    let u0 = at(0.0);
    if phi(&u0) <= p.b {
        return Ok(u0);
    }
    let mut breaks: Vec<f64> = p
        .u_ref
        .iter()
        .zip(&p.a)
        .zip(&p.bounds)
        .filter(|((_, &c), _)| c != 0.0)
        .flat_map(|((&r, &c), iv)| [(r - iv.lo) / c, (r - iv.hi) / c])
        .filter(|&l| l > 0.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    let (mut l0, mut f0) = (0.0, phi(&u0));
    for &l1 in &breaks {
        let f1 = phi(&at(l1));
        if f1 <= p.b {
            let lambda = if f0 > f1 {
                l0 + (f0 - p.b) / (f0 - f1) * (l1 - l0)
            } else {
                l1
            };
            // rounding can leave the interpolated point an ulp outside
            let (mut lo, mut hi) = (lambda, l1);
            if phi(&at(lo)) <= p.b {
                return Ok(at(lo));
            }
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if phi(&at(mid)) <= p.b {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(at(hi));
        }
        (l0, f0) = (l1, f1);
    }
    // every coordinate with a nonzero weight is saturated at the minimising vertex
    Ok(at(breaks.last().copied().unwrap_or(0.0)))
}

/// A value function the controller can follow.
#[derive(Clone, Copy, Debug)]
pub enum ValueSource<'a> {
    Grid(&'a ValueArray),
    Composite(&'a Composite),
}

impl ValueSource<'_> {
    pub fn state_dim(&self) -> usize {
        match self {
            ValueSource::Grid(v) => v.grid.dim(),
            ValueSource::Composite(c) => c.state_dim,
        }
    }

    /// `None` outside the finite region.
    pub fn value(&self, x: &[f64]) -> Result<Option<f64>> {
        match self {
            ValueSource::Grid(v) => v.interpolate_unmasked(x),
            ValueSource::Composite(c) => c.value(x),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ValueSource::Grid(v) => v.grid.contains(x),
            ValueSource::Composite(c) => c.parts.iter().all(|p| {
                let z: Vec<f64> = p.states.iter().map(|&k| x[k]).collect();
                p.value.grid.contains(&z)
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub gamma: f64,
    /// Reference control; `None` means the zero vector.
    pub u_ref: Option<Vec<f64>>,
    /// Relaxes the constraint offset by `factor * dx * L` per value part,
    /// `L` the local Lipschitz bound on the part's interpolation stencil
    /// (the same slack the certified-domain check uses).
    pub relax_factor: Option<f64>,
    pub gradient: GradientMode,
}

/// How the controller differentiates grid values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientMode {
    /// Multilinear interpolation of node central differences.
    #[default]
    Smoothed,
    /// Exact derivative of the multilinear interpolant inside the cell, so
    /// the constraint matches the value the trajectory is scored on.
    Cellwise,
}

impl ControllerConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            u_ref: None,
            relax_factor: None,
            gradient: GradientMode::Smoothed,
        }
    }
}

/// The controller's output at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSample {
    pub u: Vec<f64>,
    pub value: f64,
}

pub struct Controller<'a> {
    sys: &'a SystemDef,
    source: ValueSource<'a>,
    cfg: ControllerConfig,
    u_ref: Vec<f64>,
}

impl<'a> Controller<'a> {
    pub fn new(sys: &'a SystemDef, source: ValueSource<'a>, cfg: ControllerConfig) -> Result<Self> {
        let m = sys.control_dim();
        if source.state_dim() != sys.state_dim() {
            return Err(ClvfError::DimensionMismatch {
                what: "value source",
                expected: sys.state_dim(),
                got: source.state_dim(),
            });
        }
        let u_ref = cfg.u_ref.clone().unwrap_or_else(|| vec![0.0; m]);
        if u_ref.len() != m {
            return Err(ClvfError::DimensionMismatch {
                what: "reference control",
                expected: m,
                got: u_ref.len(),
            });
        }
        Ok(Self {
            sys,
            source,
            cfg,
            u_ref,
        })
    }

    pub fn source(&self) -> ValueSource<'a> {
        self.source
    }

    /// Control at `x`. A max-composite whose parts steer disjoint controls
    /// is handled part by part, so every part decays on its own; other
    /// sources get a single QP on the (sub)gradient.
    pub fn control(&self, x: &[f64]) -> Result<ControlSample> {
        let (n, m) = (self.sys.state_dim(), self.sys.control_dim());
        let f = self.sys.drift(x);
        let g = self.sys.control_matrix(x);
        let relax = |v: &ValueArray, z: &[f64]| -> Result<f64> {
            match self.cfg.relax_factor {
                Some(k) => Ok(k * max_spacing(v) * local_lipschitz(v, z)?),
                None => Ok(0.0),
            }
        };
        let gamma = self.cfg.gamma;
        let problem = |grad: &[f64], value: f64, controls: &[usize], slack: f64| QpProblem {
            u_ref: controls.iter().map(|&j| self.u_ref[j]).collect(),
            a: controls
                .iter()
                .map(|&j| (0..n).map(|k| grad[k] * g[k * m + j]).sum())
                .collect(),
            b: -gamma * value - grad.iter().zip(&f).map(|(p, v)| p * v).sum::<f64>() + slack,
            bounds: controls
                .iter()
                .map(|&j| self.sys.control_box()[j])
                .collect(),
        };
        let all: Vec<usize> = (0..m).collect();
        match self.source {
            ValueSource::Grid(v) => {
                let mut grad = [0.0; MAX_DIMS];
                let value = match self.cfg.gradient {
                    GradientMode::Smoothed => v.sample(x, &mut grad[..n])?,
                    GradientMode::Cellwise => v.sample_cellwise(x, &mut grad[..n])?,
                }
                .ok_or(ClvfError::OutsideRoes)?;
                let u = qp_control(&problem(&grad[..n], value, &all, relax(v, x)?))?;
                Ok(ControlSample { u, value })
            }
            ValueSource::Composite(c) => {
                let e = c
                    .evaluate_with(x, self.cfg.gradient == GradientMode::Cellwise)?
                    .ok_or(ClvfError::OutsideRoes)?;
                let mut slacks = Vec::with_capacity(c.parts.len());
                for p in &c.parts {
                    let z: Vec<f64> = p.states.iter().map(|&k| x[k]).collect();
                    slacks.push(relax(&p.value, &z)?);
                }
                if c.mode == Combine::Max && c.controls_disjoint() {
                    let mut u: Vec<f64> = all
                        .iter()
                        .map(|&j| self.sys.control_box()[j].clamp(self.u_ref[j]))
                        .collect();
                    for ((p, (value, grad)), &sl) in c.parts.iter().zip(&e.parts).zip(&slacks) {
                        let up = qp_control(&problem(grad, *value, &p.controls, sl))?;
                        for (&j, v) in p.controls.iter().zip(up) {
                            u[j] = v;
                        }
                    }
                    Ok(ControlSample { u, value: e.value })
                } else {
                    let u = qp_control(&problem(&e.gradient, e.value, &all, slacks.iter().sum()))?;
                    Ok(ControlSample { u, value: e.value })
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Stop once `||x||_inf` drops below this (after at least one step).
    pub eps_origin: f64,
}

impl SimConfig {
    /// Control held for a fifth of the solver step.
    pub fn from_solver_dt(solver_dt: f64, t_final: f64) -> Self {
        Self {
            dt: solver_dt / 5.0,
            t_final,
            eps_origin: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Horizon,
    ReachedOrigin,
    Infeasible,
    OutOfBounds,
    /// Left the region where the value function is finite.
    OutsideDomain,
}

impl Termination {
    pub fn label(self) -> &'static str {
        match self {
            Termination::Horizon => "horizon",
            Termination::ReachedOrigin => "reached-origin",
            Termination::Infeasible => "infeasible",
            Termination::OutOfBounds => "out-of-bounds",
            Termination::OutsideDomain => "outside-domain",
        }
    }
}

/// Samples of a closed-loop run. `controls[k]` is held on `[t[k], t[k+1])`,
/// so there is one control fewer than states.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub reason: Termination,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("at least the initial state")
    }

    /// `t, x1..xn, u1..um, value, envelope` with the envelope
    /// `V(x0) exp(-gamma t) (1 + eta)`; the last row has empty controls.
    pub fn to_csv(&self, gamma: f64, eta: f64) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut s = String::from("t");
        (1..=n).for_each(|k| write!(s, ",x{k}").unwrap());
        (1..=m).for_each(|k| write!(s, ",u{k}").unwrap());
        s.push_str(",value,envelope\n");
        let v0 = self.values.first().copied().unwrap_or(0.0);
        for (k, t) in self.t.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for v in &self.states[k] {
                write!(s, ",{v}").unwrap();
            }
            match self.controls.get(k) {
                Some(u) => u.iter().for_each(|v| write!(s, ",{v}").unwrap()),
                None => (0..m).for_each(|_| s.push(',')),
            }
            writeln!(
                s,
                ",{},{}",
                self.values[k],
                v0 * (-gamma * (t - self.t[0])).exp() * (1.0 + eta)
            )
            .unwrap();
        }
        s
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Closed loop from `x0`: the control is recomputed every `cfg.dt` and held
/// over an RK4 step.
pub fn simulate(
    sys: &SystemDef,
    ctrl: &Controller,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    if x0.len() != sys.state_dim() {
        return Err(ClvfError::DimensionMismatch {
            what: "initial state",
            expected: sys.state_dim(),
            got: x0.len(),
        });
    }
    if !(cfg.dt > 0.0 && cfg.t_final >= 0.0) {
        return Err(ClvfError::InvalidConfig(format!(
            "simulation step {} and horizon {} must be positive",
            cfg.dt, cfg.t_final
        )));
    }
    let src = ctrl.source();
    let mut traj = Trajectory {
        t: vec![0.0],
        states: vec![x0.to_vec()],
        controls: Vec::new(),
        values: Vec::new(),
        reason: Termination::Horizon,
    };
    if !src.contains(x0) {
        traj.values.push(f64::NAN);
        traj.reason = Termination::OutOfBounds;
        return Ok(traj);
    }
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut x = x0.to_vec();
    let n = x.len();
    let m = sys.control_dim();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    let mut gbuf = vec![0.0; n * m];
    let mut velocity = |x: &[f64], u: &[f64], out: &mut [f64]| {
        sys.drift_into(x, out);
        sys.control_matrix_into(x, &mut gbuf);
        for r in 0..n {
            out[r] += (0..m).map(|c| gbuf[r * m + c] * u[c]).sum::<f64>();
        }
    };
    for step in 0..=steps {
        let sample = match ctrl.control(&x) {
            Ok(s) => s,
            Err(ClvfError::Infeasible { .. }) => {
                traj.values.push(src.value(&x)?.unwrap_or(f64::NAN));
                traj.reason = Termination::Infeasible;
                return Ok(traj);
            }
            Err(ClvfError::OutsideRoes) => {
                traj.values.push(f64::NAN);
                traj.reason = Termination::OutsideDomain;
                return Ok(traj);
            }
            Err(e) => return Err(e),
        };
        traj.values.push(sample.value);
        if step > 0 && inf_norm(&x) < cfg.eps_origin {
            traj.reason = Termination::ReachedOrigin;
            return Ok(traj);
        }
        if step == steps {
            break;
        }
        let u = sample.u;
        let h = cfg.dt;
        velocity(&x, &u, &mut k[0]);
        for (stage, scale) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
            for r in 0..n {
                tmp[r] = x[r] + scale * h * k[stage - 1][r];
            }
            let (_, rest) = k.split_at_mut(stage);
            velocity(&tmp, &u, &mut rest[0]);
        }
        for r in 0..n {
            x[r] += h / 6.0 * (k[0][r] + 2.0 * k[1][r] + 2.0 * k[2][r] + k[3][r]);
        }
        traj.controls.push(u);
        traj.t.push((step + 1) as f64 * h);
        traj.states.push(x.clone());
        if !src.contains(&x) {
            traj.values.push(f64::NAN);
            traj.reason = Termination::OutOfBounds;
            return Ok(traj);
        }
    }
    Ok(traj)
}

/// Independent runs from several initial states.
pub fn simulate_many(
    sys: &SystemDef,
    ctrl: &Controller,
    x0s: &[Vec<f64>],
    cfg: &SimConfig,
    exec: Execution,
) -> Vec<Result<Trajectory>> {
    par::map_indices(exec, x0s.len(), |i| simulate(sys, ctrl, &x0s[i], cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    pub gamma: f64,
    pub eta: f64,
    pub samples: usize,
    /// Largest `V - envelope` over the samples (negative when all are inside).
    pub max_violation: f64,
    pub first_violation: Option<f64>,
    pub violations: usize,
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_text(&self) -> String {
        format!(
            "gamma {}\neta {}\nsamples {}\nviolations {}\nmax_violation {:.6e}\nfirst_violation {}\nstatus {}\n",
            self.gamma,
            self.eta,
            self.samples,
            self.violations,
            self.max_violation,
            self.first_violation.map_or("none".to_string(), |t| t.to_string()),
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

/// Checks `V(t) <= V(t0) exp(-gamma (t - t0)) (1 + eta)` at every sample
/// with a finite value.
pub fn certify_decay(traj: &Trajectory, gamma: f64, eta: f64) -> Result<DecayReport> {
    let finite: Vec<(f64, f64)> = traj
        .t
        .iter()
        .zip(&traj.values)
        .filter(|(_, v)| v.is_finite())
        .map(|(&t, &v)| (t, v))
        .collect();
    if finite.len() < 2 {
        return Err(ClvfError::ShortTrajectory(finite.len()));
    }
    let (t0, v0) = finite[0];
    let mut report = DecayReport {
        gamma,
        eta,
        samples: finite.len(),
        max_violation: f64::NEG_INFINITY,
        first_violation: None,
        violations: 0,
    };
    for &(t, v) in &finite {
        let excess = v - v0 * (-gamma * (t - t0)).exp() * (1.0 + eta);
        report.max_violation = report.max_violation.max(excess);
        if excess > 0.0 {
            report.violations += 1;
            report.first_violation.get_or_insert(t);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::catalog;
    use crate::grid::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(m: usize) -> Vec<Interval> {
        vec![Interval::symmetric(1.0); m]
    }

    fn dist(u: &[f64], r: &[f64]) -> f64 {
        u.iter()
            .zip(r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn qp_examples() {
        let p = QpProblem {
            u_ref: vec![0.0],
            a: vec![1.0],
            b: 0.5,
            bounds: unit(1),
        };
        assert_eq!(qp_control(&p).unwrap(), vec![0.0]);
        let p = QpProblem {
            u_ref: vec![1.0],
            a: vec![1.0],
            b: -0.5,
            bounds: unit(1),
        };
        assert!((qp_control(&p).unwrap()[0] + 0.5).abs() < 1e-12);
        let p = QpProblem {
            u_ref: vec![0.0],
            a: vec![1.0],
            b: -2.0,
            bounds: unit(1),
        };
        assert!(matches!(qp_control(&p), Err(ClvfError::Infeasible { .. })));
    }

    #[test]
    fn qp_saturates_then_slides() {
        // (1, 1).u <= -1.5 from u_ref = 0: projection hits u1 = -1? no, lands at (-0.75, -0.75)
        let p = QpProblem {
            u_ref: vec![0.0, 0.0],
            a: vec![1.0, 1.0],
            b: -1.5,
            bounds: unit(2),
        };
        let u = qp_control(&p).unwrap();
        assert!((u[0] + 0.75).abs() < 1e-12 && (u[1] + 0.75).abs() < 1e-12);
        // a steep weight saturates its coordinate first and the other takes the rest
        let p = QpProblem {
            u_ref: vec![0.0, 0.0],
            a: vec![4.0, 1.0],
            b: -4.5,
            bounds: unit(2),
        };
        let u = qp_control(&p).unwrap();
        assert_eq!(u[0], -1.0);
        assert!((u[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn qp_rejects_bad_sizes() {
        let p = QpProblem {
            u_ref: vec![0.0],
            a: vec![1.0, 1.0],
            b: 0.0,
            bounds: unit(2),
        };
        assert!(matches!(
            qp_control(&p),
            Err(ClvfError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn qp_matches_lattice_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let m = rng.gen_range(1..=3);
            let bounds: Vec<Interval> = (0..m)
                .map(|_| {
                    let lo = rng.gen_range(-2.0..0.0);
                    Interval::new(lo, lo + rng.gen_range(0.2..3.0)).unwrap()
                })
                .collect();
            let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let u_ref: Vec<f64> = bounds
                .iter()
                .map(|iv| rng.gen_range(iv.lo..=iv.hi))
                .collect();
            let b = rng.gen_range(-3.0..1.0);
            let p = QpProblem {
                u_ref: u_ref.clone(),
                a: a.clone(),
                b,
                bounds: bounds.clone(),
            };
            let res = qp_control(&p);
            let per = 21usize;
            let mut best = f64::INFINITY;
            let mut any = false;
            for idx in 0..per.pow(m as u32) {
                let mut rem = idx;
                let u: Vec<f64> = bounds
                    .iter()
                    .map(|iv| {
                        let q = rem % per;
                        rem /= per;
                        iv.lo + (iv.hi - iv.lo) * q as f64 / (per - 1) as f64
                    })
                    .collect();
                if a.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>() <= b {
                    any = true;
                    best = best.min(dist(&u, &u_ref));
                }
            }
            match res {
                Ok(u) => {
                    assert!(u.iter().zip(&bounds).all(|(v, iv)| iv.contains(*v)));
                    assert!(a.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>() <= b + 1e-9);
                    assert!(
                        dist(&u, &u_ref) <= best + 1e-9,
                        "{p:?} {u:?} {} {best}",
                        dist(&u, &u_ref)
                    );
                }
                Err(_) => assert!(!any),
            }
        }
    }

    fn integrator_setup() -> (SystemDef, ValueArray) {
        let sys = catalog::system("integrator1d").unwrap();
        let g = Grid::uniform(1, -2.0, 2.0, 81).unwrap();
        (sys, ValueArray::from_fn(g, |x| x[0].abs()))
    }

    #[test]
    fn origin_stays_put() {
        let (sys, v) = integrator_setup();
        let c = Controller::new(&sys, ValueSource::Grid(&v), ControllerConfig::new(0.5)).unwrap();
        let tr = simulate(
            &sys,
            &c,
            &[0.0],
            &SimConfig {
                dt: 0.01,
                t_final: 1.0,
                eps_origin: 1e-2,
            },
        )
        .unwrap();
        assert_eq!(tr.reason, Termination::ReachedOrigin);
        assert!(tr.states.iter().all(|x| x[0] == 0.0));
        assert!(tr.controls.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn integrator_decays_at_the_requested_rate() {
        let (sys, v) = integrator_setup();
        let c = Controller::new(&sys, ValueSource::Grid(&v), ControllerConfig::new(0.5)).unwrap();
        let tr = simulate(
            &sys,
            &c,
            &[1.5],
            &SimConfig {
                dt: 0.01,
                t_final: 20.0,
                eps_origin: 1e-2,
            },
        )
        .unwrap();
        assert_eq!(tr.reason, Termination::ReachedOrigin);
        let rep = certify_decay(&tr, 0.5, 0.05).unwrap();
        assert!(rep.passed(), "{}", rep.to_text());
        // minimum-deviation control decays at exactly gamma, not faster
        assert!((tr.controls[0][0] + 0.75).abs() < 1e-9);
        let csv = tr.to_csv(0.5, 0.05);
        assert!(csv.starts_with("t,x1,u1,value,envelope\n"));
        assert_eq!(csv.lines().count(), tr.t.len() + 1);
    }

    #[test]
    fn leaving_the_grid_is_recorded() {
        let sys = catalog::system("integrator1d").unwrap();
        let g = Grid::uniform(1, -2.0, 2.0, 81).unwrap();
        let v = ValueArray::from_fn(g, |x| x[0].abs());
        let cfg = ControllerConfig {
            u_ref: Some(vec![1.0]),
            ..ControllerConfig::new(0.0)
        };
        let c = Controller::new(&sys, ValueSource::Grid(&v), cfg).unwrap();
        // at gamma 0 and x < 0 pushing right is admissible and heads for the origin
        let tr = simulate(
            &sys,
            &c,
            &[-1.0],
            &SimConfig {
                dt: 0.05,
                t_final: 5.0,
                eps_origin: 1e-2,
            },
        )
        .unwrap();
        assert_eq!(tr.reason, Termination::ReachedOrigin);
        let tr = simulate(
            &sys,
            &c,
            &[3.0],
            &SimConfig {
                dt: 0.05,
                t_final: 5.0,
                eps_origin: 1e-2,
            },
        )
        .unwrap();
        assert_eq!(tr.reason, Termination::OutOfBounds);
    }

    #[test]
    fn decay_report_examples() {
        let mk = |values: Vec<f64>| Trajectory {
            t: (0..values.len()).map(|k| k as f64).collect(),
            states: vec![vec![0.0]; values.len()],
            controls: vec![],
            values,
            reason: Termination::Horizon,
        };
        let rep = certify_decay(&mk(vec![1.0, 1.0, 0.9, 1.05]), 0.0, 0.1).unwrap();
        assert!(rep.passed());
        let rep = certify_decay(&mk(vec![1.0, 1.2]), 0.0, 0.1).unwrap();
        assert_eq!((rep.violations, rep.first_violation), (1, Some(1.0)));
        // constant value against a decaying envelope: crossing after ln(1.1)/0.5
        let rep = certify_decay(&mk(vec![1.0; 5]), 0.5, 0.1).unwrap();
        assert_eq!(rep.first_violation, Some(1.0));
        assert_eq!(rep.violations, 4);
        assert!(matches!(
            certify_decay(&mk(vec![1.0]), 0.5, 0.1),
            Err(ClvfError::ShortTrajectory(1))
        ));
    }

    proptest! {
        #[test]
        fn qp_output_is_feasible(
            a0 in -3.0f64..3.0, a1 in -3.0f64..3.0, b in -4.0f64..2.0,
            r0 in -1.0f64..1.0, r1 in -1.0f64..1.0,
        ) {
            let p = QpProblem { u_ref: vec![r0, r1], a: vec![a0, a1], b, bounds: unit(2) };
            if let Ok(u) = qp_control(&p) {
                prop_assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
                prop_assert!(a0 * u[0] + a1 * u[1] <= b + 1e-9);
            } else {
                prop_assert!(-(a0.abs() + a1.abs()) > b);
            }
        }
    }
}

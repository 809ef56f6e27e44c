//! Control-affine systems `x' = f(x) + g(x) u` with box-bounded controls,
//! state/control partitions and the projection operators between the full
//! system and its self-contained subsystems.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ClvfError, Result};

/// Absolute tolerance when checking that two subsystem controls agree on
/// their shared components.
pub const SHARED_CONTROL_TOL: f64 = 1e-9;

/// Absolute tolerance of the self-containment probe.
pub const SELF_CONTAINMENT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(ClvfError::InvalidSystem(format!(
                "control interval [{lo}, {hi}] is empty or unbounded"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    /// `min over u in [lo, hi] of c * u`.
    pub fn min_linear(&self, c: f64) -> f64 {
        if c > 0.0 {
            c * self.lo
        } else if c < 0.0 {
            c * self.hi
        } else {
            0.0
        }
    }

    /// Minimiser of `c * u` with the midpoint as tie-break.
    pub fn argmin_linear(&self, c: f64) -> f64 {
        if c > 0.0 {
            self.lo
        } else if c < 0.0 {
            self.hi
        } else {
            self.mid()
        }
    }
}

/// Loss function `l(x)` defining the value function obstacle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    InfNorm,
    TwoNorm,
}

impl Loss {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Loss::InfNorm => x.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            Loss::TwoNorm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::InfNorm => "inf-norm",
            Loss::TwoNorm => "two-norm",
        }
    }
}

/// Drift and input matrix of a control-affine model.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Writes `f(x)` into `out` (length `n`).
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// Writes `g(x)` row-major (`n x m`) into `out`.
    fn control_matrix(&self, x: &[f64], out: &mut [f64]);
}

/// A control-affine system together with its control box and loss.
#[derive(Clone, Debug)]
pub struct SystemDef {
    name: String,
    control_box: Vec<Interval>,
    loss: Loss,
    model: Arc<dyn Dynamics>,
}

impl SystemDef {
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn Dynamics>,
        control_box: Vec<Interval>,
        loss: Loss,
    ) -> Result<Self> {
        if model.state_dim() == 0 || model.control_dim() == 0 {
            return Err(ClvfError::InvalidSystem(
                "state and control dimensions must be positive".into(),
            ));
        }
        if control_box.len() != model.control_dim() {
            return Err(ClvfError::DimensionMismatch {
                what: "control box",
                expected: model.control_dim(),
                got: control_box.len(),
            });
        }
        for iv in &control_box {
            Interval::new(iv.lo, iv.hi)?;
        }
        Ok(Self {
            name: name.into(),
            control_box,
            loss,
            model,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    pub fn control_box(&self) -> &[Interval] {
        &self.control_box
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn with_loss(mut self, loss: Loss) -> Self {
        self.loss = loss;
        self
    }

    pub fn model(&self) -> &Arc<dyn Dynamics> {
        &self.model
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.model.drift(x, out)
    }

    pub fn control_matrix_into(&self, x: &[f64], out: &mut [f64]) {
        self.model.control_matrix(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.model.drift(x, &mut out);
        out
    }

    pub fn control_matrix(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim() * self.control_dim()];
        self.model.control_matrix(x, &mut out);
        out
    }

    /// `f(x) + g(x) u` without validating `u` against the box.
    pub fn velocity(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let mut xdot = self.drift(x);
        let g = self.control_matrix(x);
        for (r, xd) in xdot.iter_mut().enumerate() {
            for j in 0..m {
                *xd += g[r * m + j] * u[j];
            }
        }
        debug_assert_eq!(xdot.len(), n);
        xdot
    }

    /// Checked evaluation of `f(x) + g(x) u`.
    pub fn eval_dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(ClvfError::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.control_dim() {
            return Err(ClvfError::DimensionMismatch {
                what: "control",
                expected: self.control_dim(),
                got: u.len(),
            });
        }
        for (index, (&value, iv)) in u.iter().zip(&self.control_box).enumerate() {
            if !iv.contains(value) {
                return Err(ClvfError::ControlOutOfBox {
                    index,
                    value,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        Ok(self.velocity(x, u))
    }

    pub fn loss_at(&self, x: &[f64]) -> f64 {
        self.loss.eval(x)
    }

    pub fn box_midpoint(&self) -> Vec<f64> {
        self.control_box.iter().map(Interval::mid).collect()
    }
}

/// Parameters of the 10D near-hover quadrotor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorParams {
    pub d0: f64,
    pub d1: f64,
    pub n0: f64,
    pub gravity: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            d0: 10.0,
            d1: 8.0,
            n0: 10.0,
            gravity: 9.81,
        }
    }
}

/// Hard-coded models of the catalog.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CatalogModel {
    /// `x' = u`
    Integrator1d,
    /// `x1' = x1^2 + u1`, `x2' = x2 + u2`
    Nonlinear2d,
    /// `x1' = x3 + u1`, `x2' = x3 + u2`, `x3' = u3`
    Coupled3d,
    /// `x1' = x3`, `x2' = x3`, `x3' = u`
    Single3d,
    Quad10d(QuadrotorParams),
    /// Planar VTOL with constant thrust `thrust`; the origin is an
    /// equilibrium only when `thrust == gravity`.
    Pvtol6d {
        thrust: f64,
        gravity: f64,
    },
    /// `x1' = -x3`, `x2' = x3`, `x3' = u`
    Exercise3d,
    /// `x1' = -x2`, `x2' = u`
    Exercise2d,
    /// `x1' = x2`, `x2' = u`
    DoubleIntegrator2d,
}

impl Dynamics for CatalogModel {
    fn state_dim(&self) -> usize {
        match self {
            CatalogModel::Integrator1d => 1,
            CatalogModel::Nonlinear2d
            | CatalogModel::Exercise2d
            | CatalogModel::DoubleIntegrator2d => 2,
            CatalogModel::Coupled3d | CatalogModel::Single3d | CatalogModel::Exercise3d => 3,
            CatalogModel::Quad10d(_) => 10,
            CatalogModel::Pvtol6d { .. } => 6,
        }
    }

    fn control_dim(&self) -> usize {
        match self {
            CatalogModel::Nonlinear2d => 2,
            CatalogModel::Coupled3d | CatalogModel::Quad10d(_) => 3,
            _ => 1,
        }
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            CatalogModel::Integrator1d => out[0] = 0.0,
            CatalogModel::Nonlinear2d => {
                out[0] = x[0] * x[0];
                out[1] = x[1];
            }
            CatalogModel::Coupled3d | CatalogModel::Single3d => {
                out[0] = x[2];
                out[1] = x[2];
                out[2] = 0.0;
            }
            CatalogModel::Exercise3d => {
                out[0] = -x[2];
                out[1] = x[2];
                out[2] = 0.0;
            }
            CatalogModel::Exercise2d => {
                out[0] = -x[1];
                out[1] = 0.0;
            }
            CatalogModel::DoubleIntegrator2d => {
                out[0] = x[1];
                out[1] = 0.0;
            }
            CatalogModel::Quad10d(p) => {
                out[0] = x[1];
                out[1] = p.gravity * x[2].tan();
                out[2] = -p.d1 * x[2] + x[3];
                out[3] = -p.d0 * x[2];
                out[4] = x[5];
                out[5] = p.gravity * x[6].tan();
                out[6] = -p.d1 * x[6] + x[7];
                out[7] = -p.d0 * x[6];
                out[8] = x[9];
                out[9] = 0.0;
            }
            CatalogModel::Pvtol6d { thrust, gravity } => {
                out[0] = x[1];
                out[1] = -thrust * x[4].sin();
                out[2] = x[3];
                out[3] = thrust * x[4].cos() - gravity;
                out[4] = x[5];
                out[5] = 0.0;
            }
        }
    }

    fn control_matrix(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let m = self.control_dim();
        let mut set = |row: usize, col: usize, v: f64| out[row * m + col] = v;
        match *self {
            CatalogModel::Integrator1d => set(0, 0, 1.0),
            CatalogModel::Nonlinear2d => {
                set(0, 0, 1.0);
                set(1, 1, 1.0);
            }
            CatalogModel::Coupled3d => {
                set(0, 0, 1.0);
                set(1, 1, 1.0);
                set(2, 2, 1.0);
            }
            CatalogModel::Single3d | CatalogModel::Exercise3d => set(2, 0, 1.0),
            CatalogModel::Exercise2d | CatalogModel::DoubleIntegrator2d => set(1, 0, 1.0),
            CatalogModel::Quad10d(p) => {
                set(3, 0, p.n0);
                set(7, 1, p.n0);
                set(9, 2, 1.0);
            }
            CatalogModel::Pvtol6d { .. } => set(5, 0, 1.0),
        }
    }
}

/// One monomial `coeff * prod x_k^powers[k]`, optionally multiplied by a control.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub powers: Vec<u32>,
    pub control: Option<usize>,
}

/// User-defined control-affine system whose equations are sums of monomials.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialModel {
    n: usize,
    m: usize,
    equations: Vec<Vec<Term>>,
}

impl PolynomialModel {
    pub fn new(n: usize, m: usize, equations: Vec<Vec<Term>>) -> Result<Self> {
        if equations.len() != n {
            return Err(ClvfError::DimensionMismatch {
                what: "polynomial equations",
                expected: n,
                got: equations.len(),
            });
        }
        for eq in &equations {
            for t in eq {
                if !t.powers.is_empty() && t.powers.len() != n {
                    return Err(ClvfError::InvalidSystem(format!(
                        "term exponent list has {} entries, expected {n}",
                        t.powers.len()
                    )));
                }
                if let Some(j) = t.control {
                    if j >= m {
                        return Err(ClvfError::InvalidSystem(format!(
                            "term references control {j} but the system has {m}"
                        )));
                    }
                }
            }
        }
        Ok(Self { n, m, equations })
    }

    fn monomial(t: &Term, x: &[f64]) -> f64 {
        t.powers
            .iter()
            .zip(x)
            .fold(t.coeff, |acc, (&p, &xv)| acc * xv.powi(p as i32))
    }
}

impl Dynamics for PolynomialModel {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        self.m
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, eq) in out.iter_mut().zip(&self.equations) {
            *o = eq
                .iter()
                .filter(|t| t.control.is_none())
                .map(|t| Self::monomial(t, x))
                .sum();
        }
    }

    fn control_matrix(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, eq) in self.equations.iter().enumerate() {
            for t in eq {
                if let Some(j) = t.control {
                    out[r * self.m + j] += Self::monomial(t, x);
                }
            }
        }
    }
}

/// The parent dynamics seen through a subsystem's coordinates. Coordinates
/// the subsystem does not own are held at zero, which is harmless once the
/// partition has passed the self-containment probe.
#[derive(Debug)]
struct RestrictedModel {
    parent: Arc<dyn Dynamics>,
    states: Vec<usize>,
    controls: Vec<usize>,
}

impl RestrictedModel {
    fn embed(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.parent.state_dim()];
        for (&k, &v) in self.states.iter().zip(z) {
            x[k] = v;
        }
        x
    }
}

impl Dynamics for RestrictedModel {
    fn state_dim(&self) -> usize {
        self.states.len()
    }

    fn control_dim(&self) -> usize {
        self.controls.len()
    }

    fn drift(&self, z: &[f64], out: &mut [f64]) {
        let x = self.embed(z);
        let mut f = vec![0.0; self.parent.state_dim()];
        self.parent.drift(&x, &mut f);
        for (o, &k) in out.iter_mut().zip(&self.states) {
            *o = f[k];
        }
    }

    fn control_matrix(&self, z: &[f64], out: &mut [f64]) {
        let x = self.embed(z);
        let (n, m) = (self.parent.state_dim(), self.parent.control_dim());
        let mut g = vec![0.0; n * m];
        self.parent.control_matrix(&x, &mut g);
        let ms = self.controls.len();
        for (r, &k) in self.states.iter().enumerate() {
            for (c, &j) in self.controls.iter().enumerate() {
                out[r * ms + c] = g[k * m + j];
            }
        }
    }
}

/// State/control index partition into subsystems that own disjoint
/// coordinates and share a common set. Subsystems are numbered from 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub owned_states: Vec<Vec<usize>>,
    pub shared_states: Vec<usize>,
    pub owned_controls: Vec<Vec<usize>>,
    pub shared_controls: Vec<usize>,
}

impl Partition {
    /// Two-subsystem partition.
    pub fn two(
        states: (&[usize], &[usize], &[usize]),
        controls: (&[usize], &[usize], &[usize]),
    ) -> Self {
        Self {
            owned_states: vec![states.0.to_vec(), states.1.to_vec()],
            shared_states: states.2.to_vec(),
            owned_controls: vec![controls.0.to_vec(), controls.1.to_vec()],
            shared_controls: controls.2.to_vec(),
        }
    }

    pub fn num_subsystems(&self) -> usize {
        self.owned_states.len()
    }

    pub fn has_shared_controls(&self) -> bool {
        !self.shared_controls.is_empty()
    }

    /// Full-state indices of subsystem `i`: owned first, then shared.
    pub fn subsystem_states(&self, i: usize) -> Vec<usize> {
        let mut v = self.owned_states[i].clone();
        v.extend_from_slice(&self.shared_states);
        v
    }

    pub fn subsystem_controls(&self, i: usize) -> Vec<usize> {
        let mut v = self.owned_controls[i].clone();
        v.extend_from_slice(&self.shared_controls);
        v
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let k = self.owned_states.len();
        if k < 2 {
            return Err(ClvfError::InvalidPartition(
                "need at least two subsystems".into(),
            ));
        }
        if self.owned_controls.len() != k {
            return Err(ClvfError::InvalidPartition(format!(
                "{k} state groups but {} control groups",
                self.owned_controls.len()
            )));
        }
        if let Some(i) = self.owned_states.iter().position(Vec::is_empty) {
            return Err(ClvfError::InvalidPartition(format!(
                "subsystem {i} owns no states"
            )));
        }
        let check = |groups: &[Vec<usize>], shared: &[usize], total: usize, what: &str| {
            let mut seen = vec![false; total];
            for &idx in groups.iter().flatten().chain(shared) {
                if idx >= total {
                    return Err(ClvfError::InvalidPartition(format!(
                        "{what} index {idx} out of range (dimension {total})"
                    )));
                }
                if seen[idx] {
                    return Err(ClvfError::InvalidPartition(format!(
                        "{what} index {idx} listed twice"
                    )));
                }
                seen[idx] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(ClvfError::InvalidPartition(format!(
                    "{what} index {missing} not assigned"
                )));
            }
            Ok(())
        };
        check(&self.owned_states, &self.shared_states, n, "state")?;
        check(&self.owned_controls, &self.shared_controls, m, "control")
    }

    pub fn project_state(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.owned_states[i]
            .iter()
            .chain(&self.shared_states)
            .map(|&k| x[k])
            .collect()
    }

    pub fn project_control(&self, i: usize, u: &[f64]) -> Vec<f64> {
        self.owned_controls[i]
            .iter()
            .chain(&self.shared_controls)
            .map(|&j| u[j])
            .collect()
    }

    /// Assembles the full control realising every subsystem control, or
    /// reports the first shared component on which they disagree.
    pub fn backproject_control(&self, parts: &[&[f64]]) -> Result<Vec<f64>> {
        let k = self.num_subsystems();
        if parts.len() != k {
            return Err(ClvfError::DimensionMismatch {
                what: "subsystem controls",
                expected: k,
                got: parts.len(),
            });
        }
        let m =
            self.owned_controls.iter().map(Vec::len).sum::<usize>() + self.shared_controls.len();
        let mut u = vec![0.0; m];
        for (i, v) in parts.iter().enumerate() {
            let expected = self.owned_controls[i].len() + self.shared_controls.len();
            if v.len() != expected {
                return Err(ClvfError::DimensionMismatch {
                    what: "subsystem control",
                    expected,
                    got: v.len(),
                });
            }
            for (c, &j) in self.owned_controls[i].iter().enumerate() {
                u[j] = v[c];
            }
        }
        let off0 = self.owned_controls[0].len();
        for (s, &j) in self.shared_controls.iter().enumerate() {
            let first = parts[0][off0 + s];
            for (i, v) in parts.iter().enumerate().skip(1) {
                let other = v[self.owned_controls[i].len() + s];
                if (other - first).abs() > SHARED_CONTROL_TOL {
                    return Err(ClvfError::ControlConflict {
                        index: j,
                        first,
                        second: other,
                    });
                }
            }
            u[j] = first;
        }
        Ok(u)
    }
}

/// A subsystem produced by [`decompose`].
#[derive(Clone, Debug)]
pub struct SubsystemDef {
    pub system: SystemDef,
    pub index: usize,
    pub state_indices: Vec<usize>,
    pub control_indices: Vec<usize>,
    pub n_shared_states: usize,
    pub n_shared_controls: usize,
}

impl SubsystemDef {
    pub fn n_owned_controls(&self) -> usize {
        self.control_indices.len() - self.n_shared_controls
    }
}

/// Splits `sys` along `part`, probing that each subsystem's derivative rows
/// are blind to every state and control outside the subsystem.
pub fn decompose(sys: &SystemDef, part: &Partition) -> Result<Vec<SubsystemDef>> {
    let (n, m) = (sys.state_dim(), sys.control_dim());
    part.validate(n, m)?;
    check_self_containment(sys, part)?;
    (0..part.num_subsystems())
        .map(|i| {
            let states = part.subsystem_states(i);
            let controls = part.subsystem_controls(i);
            let model = Arc::new(RestrictedModel {
                parent: sys.model().clone(),
                states: states.clone(),
                controls: controls.clone(),
            });
            let cbox = controls.iter().map(|&j| sys.control_box()[j]).collect();
            let system =
                SystemDef::new(format!("{}/sub{}", sys.name(), i), model, cbox, sys.loss())?;
            Ok(SubsystemDef {
                system,
                index: i,
                state_indices: states,
                control_indices: controls,
                n_shared_states: part.shared_states.len(),
                n_shared_controls: part.shared_controls.len(),
            })
        })
        .collect()
}

fn check_self_containment(sys: &SystemDef, part: &Partition) -> Result<()> {
    let (n, m) = (sys.state_dim(), sys.control_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..8 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let u: Vec<f64> = sys
            .control_box()
            .iter()
            .map(|iv| {
                if iv.lo < iv.hi {
                    rng.gen_range(iv.lo..iv.hi)
                } else {
                    iv.lo
                }
            })
            .collect();
        let base = sys.velocity(&x, &u);
        for i in 0..part.num_subsystems() {
            let states = part.subsystem_states(i);
            let controls = part.subsystem_controls(i);
            for k in (0..n).filter(|k| !states.contains(k)) {
                let mut xp = x.clone();
                xp[k] += 0.37;
                let moved = sys.velocity(&xp, &u);
                for &r in &states {
                    if (moved[r] - base[r]).abs() > SELF_CONTAINMENT_TOL {
                        return Err(ClvfError::SelfContainmentViolation {
                            subsystem: i,
                            state_row: r,
                            kind: "state",
                            perturbed: k,
                        });
                    }
                }
            }
            for j in (0..m).filter(|j| !controls.contains(j)) {
                let iv = sys.control_box()[j];
                for alt in [iv.lo, iv.hi] {
                    let mut up = u.clone();
                    up[j] = alt;
                    let moved = sys.velocity(&x, &up);
                    for &r in &states {
                        if (moved[r] - base[r]).abs() > SELF_CONTAINMENT_TOL {
                            return Err(ClvfError::SelfContainmentViolation {
                                subsystem: i,
                                state_row: r,
                                kind: "control",
                                perturbed: j,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Names accepted by [`catalog::system`].
pub mod catalog {
    use super::*;

    pub const NAMES: &[&str] = &[
        "integrator1d",
        "nonlinear2d",
        "coupled3d",
        "single3d",
        "quad10d",
        "pvtol6d",
        "exercise3d",
        "exercise2d",
        "double_integrator2d",
    ];

    fn build(name: &str, model: CatalogModel, bounds: &[f64]) -> SystemDef {
        let cbox = bounds.iter().map(|&r| Interval::symmetric(r)).collect();
        SystemDef::new(name, Arc::new(model), cbox, Loss::InfNorm).expect("catalog entry is valid")
    }

    pub fn system(name: &str) -> Result<SystemDef> {
        let quarter_pi = std::f64::consts::FRAC_PI_4;
        Ok(match name {
            "integrator1d" => build(name, CatalogModel::Integrator1d, &[1.0]),
            "nonlinear2d" => build(name, CatalogModel::Nonlinear2d, &[4.0, 1.0]),
            "coupled3d" => build(name, CatalogModel::Coupled3d, &[1.0, 1.0, 0.5]),
            "single3d" => build(name, CatalogModel::Single3d, &[1.0]),
            "quad10d" => build(
                name,
                CatalogModel::Quad10d(QuadrotorParams::default()),
                &[quarter_pi, quarter_pi, 1.0],
            ),
            "pvtol6d" => build(
                name,
                CatalogModel::Pvtol6d {
                    thrust: 9.81,
                    gravity: 9.81,
                },
                &[1.0],
            ),
            "exercise3d" => build(name, CatalogModel::Exercise3d, &[1.0]),
            "exercise2d" => build(name, CatalogModel::Exercise2d, &[1.0]),
            "double_integrator2d" => build(name, CatalogModel::DoubleIntegrator2d, &[1.0]),
            other => {
                return Err(ClvfError::InvalidSystem(format!(
                    "unknown system '{other}' (known: {})",
                    NAMES.join(", ")
                )))
            }
        })
    }

    /// The decomposition used for each catalog system, when it has one.
    pub fn partition(name: &str) -> Option<Partition> {
        Some(match name {
            "nonlinear2d" => Partition::two((&[0], &[1], &[]), (&[0], &[1], &[])),
            "coupled3d" => Partition::two((&[0], &[1], &[2]), (&[0], &[1], &[2])),
            "single3d" | "exercise3d" => Partition::two((&[0], &[1], &[2]), (&[], &[], &[0])),
            "pvtol6d" => Partition::two((&[0, 1], &[2, 3], &[4, 5]), (&[], &[], &[0])),
            "quad10d" => Partition {
                owned_states: vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]],
                shared_states: vec![],
                owned_controls: vec![vec![0], vec![1], vec![2]],
                shared_controls: vec![],
            },
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nonlinear2d_at_one_one() {
        let sys = catalog::system("nonlinear2d").unwrap();
        assert_eq!(
            sys.eval_dynamics(&[1.0, 1.0], &[0.0, 0.0]).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn coupled3d_substitution() {
        let sys = catalog::system("coupled3d").unwrap();
        let xdot = sys
            .eval_dynamics(&[0.0, 0.0, 1.0], &[1.0, -1.0, 0.5])
            .unwrap();
        assert_eq!(xdot, vec![2.0, 0.0, 0.5]);
    }

    #[test]
    fn origin_is_equilibrium_for_catalog() {
        for name in catalog::NAMES {
            let sys = catalog::system(name).unwrap();
            let x = vec![0.0; sys.state_dim()];
            let u = vec![0.0; sys.control_dim()];
            let xdot = sys.eval_dynamics(&x, &u).unwrap();
            assert!(xdot.iter().all(|&v| v == 0.0), "{name}: {xdot:?}");
        }
    }

    #[test]
    fn eval_rejects_bad_inputs() {
        let sys = catalog::system("coupled3d").unwrap();
        assert!(matches!(
            sys.eval_dynamics(&[0.0, 0.0], &[0.0; 3]),
            Err(ClvfError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            sys.eval_dynamics(&[0.0; 3], &[0.0, 0.0, 0.6]),
            Err(ClvfError::ControlOutOfBox { index: 2, .. })
        ));
    }

    #[test]
    fn quad_matches_model_equations() {
        let sys = catalog::system("quad10d").unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.05, 0.8, 0.9, 1.0];
        let u = [0.5, -0.5, 0.25];
        let xd = sys.eval_dynamics(&x, &u).unwrap();
        let g = 9.81;
        assert_abs_diff_eq!(xd[0], 0.2);
        assert_abs_diff_eq!(xd[1], g * 0.3f64.tan());
        assert_abs_diff_eq!(xd[2], -8.0 * 0.3 + 0.4);
        assert_abs_diff_eq!(xd[3], -10.0 * 0.3 + 10.0 * 0.5);
        assert_abs_diff_eq!(xd[5], g * 0.05f64.tan());
        assert_abs_diff_eq!(xd[7], -10.0 * 0.05 - 10.0 * 0.5);
        assert_abs_diff_eq!(xd[8], 1.0);
        assert_abs_diff_eq!(xd[9], 0.25);
    }

    #[test]
    fn decompose_coupled3d() {
        let sys = catalog::system("coupled3d").unwrap();
        let part = catalog::partition("coupled3d").unwrap();
        let subs = decompose(&sys, &part).unwrap();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].state_indices, vec![0, 2]);
        assert_eq!(subs[1].state_indices, vec![1, 2]);
        assert_eq!(subs[0].control_indices, vec![0, 2]);
        assert_eq!(subs[1].control_indices, vec![1, 2]);
        // z1 = (x1, x3), v1 = (u1, u3)
        let zdot = subs[0]
            .system
            .eval_dynamics(&[0.3, 0.7], &[-0.5, 0.25])
            .unwrap();
        assert_abs_diff_eq!(zdot[0], 0.2);
        assert_abs_diff_eq!(zdot[1], 0.25);
    }

    #[test]
    fn decompose_nonlinear2d_into_1d() {
        let sys = catalog::system("nonlinear2d").unwrap();
        let part = catalog::partition("nonlinear2d").unwrap();
        let subs = decompose(&sys, &part).unwrap();
        assert!(subs
            .iter()
            .all(|s| s.system.state_dim() == 1 && s.system.control_dim() == 1));
        assert_eq!(
            subs[0].system.eval_dynamics(&[2.0], &[-4.0]).unwrap(),
            vec![0.0]
        );
        assert_eq!(subs[1].system.control_box()[0], Interval::symmetric(1.0));
    }

    #[test]
    fn decompose_flags_coupling() {
        let sys = catalog::system("coupled3d").unwrap();
        let bad = Partition::two((&[0], &[1, 2], &[]), (&[0], &[1, 2], &[]));
        match decompose(&sys, &bad) {
            Err(ClvfError::SelfContainmentViolation {
                subsystem: 0,
                state_row: 0,
                kind: "state",
                perturbed: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_catalog_partition_decomposes() {
        for name in catalog::NAMES {
            if let Some(part) = catalog::partition(name) {
                let sys = catalog::system(name).unwrap();
                decompose(&sys, &part).unwrap_or_else(|e| panic!("{name}: {e}"));
            }
        }
    }

    #[test]
    fn projections() {
        let part = catalog::partition("coupled3d").unwrap();
        let x = [0.5, -0.3, 0.2];
        assert_eq!(part.project_state(0, &x), vec![0.5, 0.2]);
        assert_eq!(part.project_state(1, &x), vec![-0.3, 0.2]);

        let quad = catalog::partition("quad10d").unwrap();
        let mut xq = [0.0; 10];
        xq[8] = 1.0;
        xq[9] = -2.0;
        assert_eq!(quad.project_state(2, &xq), vec![1.0, -2.0]);
    }

    #[test]
    fn backprojection_cases() {
        let part = catalog::partition("coupled3d").unwrap();
        assert_eq!(
            part.backproject_control(&[&[1.0, 0.5], &[-1.0, 0.5]])
                .unwrap(),
            vec![1.0, -1.0, 0.5]
        );
        assert!(matches!(
            part.backproject_control(&[&[1.0, 0.5], &[-1.0, -0.5]]),
            Err(ClvfError::ControlConflict { index: 2, .. })
        ));
        let p2 = catalog::partition("nonlinear2d").unwrap();
        assert_eq!(
            p2.backproject_control(&[&[2.0], &[-1.0]]).unwrap(),
            vec![2.0, -1.0]
        );
    }

    #[test]
    fn partition_validation() {
        let p = Partition::two((&[0], &[0], &[2]), (&[0], &[1], &[2]));
        assert!(p.validate(3, 3).is_err());
        let p = Partition::two((&[0], &[1], &[]), (&[0], &[1], &[2]));
        assert!(p.validate(3, 3).is_err());
        let p = Partition::two((&[0], &[], &[1, 2]), (&[0], &[1], &[2]));
        assert!(p.validate(3, 3).is_err());
    }

    #[test]
    fn polynomial_model_reproduces_nonlinear2d() {
        let t = |coeff: f64, powers: Vec<u32>, control: Option<usize>| Term {
            coeff,
            powers,
            control,
        };
        let model = PolynomialModel::new(
            2,
            2,
            vec![
                vec![t(1.0, vec![2, 0], None), t(1.0, vec![], Some(0))],
                vec![t(1.0, vec![0, 1], None), t(1.0, vec![], Some(1))],
            ],
        )
        .unwrap();
        let poly = SystemDef::new(
            "custom",
            Arc::new(model),
            vec![Interval::symmetric(4.0), Interval::symmetric(1.0)],
            Loss::InfNorm,
        )
        .unwrap();
        let cat = catalog::system("nonlinear2d").unwrap();
        for (x, u) in [([1.0, 1.0], [0.0, 0.0]), ([-0.7, 2.5], [3.0, -1.0])] {
            assert_eq!(
                poly.eval_dynamics(&x, &u).unwrap(),
                cat.eval_dynamics(&x, &u).unwrap()
            );
        }
    }

    #[test]
    fn interval_linear_minimum() {
        let iv = Interval::new(-4.0, 4.0).unwrap();
        assert_eq!(iv.min_linear(1.0), -4.0);
        assert_eq!(iv.min_linear(-2.0), -8.0);
        assert_eq!(iv.argmin_linear(0.0), 0.0);
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(0.0, f64::INFINITY).is_err());
    }
}

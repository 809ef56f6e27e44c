//! Run configuration: one TOML file per run. Every numeric default lives in
//! this module and the resolved configuration is written next to the outputs.

use std::path::PathBuf;
use std::sync::Arc;

use clvf::control::GradientMode;
use clvf::dynamics::{catalog, Interval, Loss, Partition, PolynomialModel, SystemDef, Term};
use clvf::hjsolver::{Scheme, SolverConfig};
use clvf::Grid;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog name, or `custom` together with a `[custom]` table.
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSystem>,
    /// Defaults to the catalog partition of `system`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSpec>,
    /// Full-state grid. Subsystem grids are its restriction to their axes.
    pub grid: GridSpec,
    pub gammas: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default)]
    pub reconstruct: ReconstructSpec,
    #[serde(default)]
    pub sgamma: SGammaSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub acs: AcsSpec,
    #[serde(default)]
    pub export: ExportSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("clvf-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub bounds: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid, CliError> {
        let bounds: Vec<(f64, f64)> = self.bounds.iter().map(|b| (b[0], b[1])).collect();
        Grid::new(&bounds, &self.counts).map_err(|e| CliError::Config(format!("grid: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub owned_states: Vec<Vec<usize>>,
    #[serde(default)]
    pub shared_states: Vec<usize>,
    pub owned_controls: Vec<Vec<usize>>,
    #[serde(default)]
    pub shared_controls: Vec<usize>,
}

/// Control-affine polynomial system: each term adds
/// `coeff * prod x_k^powers[k]` (times `u[control]` when set) to `row`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    pub states: usize,
    pub control_bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub loss: LossName,
    pub terms: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub row: usize,
    pub coeff: f64,
    #[serde(default)]
    pub powers: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    #[default]
    InfNorm,
    TwoNorm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    #[default]
    Upwind,
    LaxFriedrichs,
    LocalLaxFriedrichs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub cfl: f64,
    pub eps_conv: f64,
    pub stable_steps: usize,
    pub t_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    pub scheme: SchemeName,
    /// Snapshot spacing kept by `solve --history` and needed by `sgamma`.
    pub history_dt: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            dt: d.dt,
            cfl: d.cfl,
            eps_conv: d.eps_conv,
            stable_steps: d.stable_steps,
            t_max: d.t_max,
            cap: d.cap,
            scheme: SchemeName::Upwind,
            history_dt: 0.1,
        }
    }
}

impl SolverSpec {
    pub fn to_solver(&self, gamma: f64, history: bool) -> SolverConfig {
        SolverConfig {
            gamma,
            dt: self.dt,
            cfl: self.cfl,
            eps_conv: self.eps_conv,
            stable_steps: self.stable_steps,
            t_max: self.t_max,
            cap: self.cap,
            scheme: match self.scheme {
                SchemeName::Upwind => Scheme::Upwind,
                SchemeName::LaxFriedrichs => Scheme::LaxFriedrichs,
                SchemeName::LocalLaxFriedrichs => Scheme::LocalLaxFriedrichs,
            },
            history_dt: history.then_some(self.history_dt),
            ..SolverConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSpec {
    pub direct: bool,
    pub subsystems: bool,
}

impl Default for SolveSpec {
    fn default() -> Self {
        Self {
            direct: true,
            subsystems: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineName {
    #[default]
    Max,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructSpec {
    pub mode: CombineName,
    /// Boundary cells excluded from the comparison against a direct solve.
    pub band: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
}

impl Default for ReconstructSpec {
    fn default() -> Self {
        Self {
            mode: CombineName::Max,
            band: 2,
            level: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SGammaSpec {
    /// Draw shared-control witnesses at random instead of nearest the box centre.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Also compute the domain on which the sum reconstruction is a CLF.
    pub sum_domain: bool,
    /// Interpolation slack factor of that domain.
    pub slack_factor: f64,
}

impl Default for SGammaSpec {
    fn default() -> Self {
        Self {
            seed: None,
            sum_domain: false,
            slack_factor: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceName {
    Direct,
    #[default]
    Max,
    Sum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientName {
    #[default]
    Smoothed,
    Cellwise,
}

impl From<GradientName> for GradientMode {
    fn from(g: GradientName) -> Self {
        match g {
            GradientName::Smoothed => GradientMode::Smoothed,
            GradientName::Cellwise => GradientMode::Cellwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub source: SourceName,
    pub x0: Vec<Vec<f64>>,
    pub t_final: f64,
    /// Defaults to a fifth of the solver step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub eps_origin: f64,
    /// Certification slack on the decay envelope.
    pub eta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relax_factor: Option<f64>,
    pub gradient: GradientName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_ref: Option<Vec<f64>>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            source: SourceName::Max,
            x0: Vec::new(),
            t_final: 30.0,
            dt: None,
            eps_origin: 1e-2,
            eta: 0.1,
            relax_factor: None,
            gradient: GradientName::Smoothed,
            u_ref: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcsSpec {
    pub points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSpec {
    /// Contour levels written for every 2D output (after slicing).
    pub levels: Vec<f64>,
    /// Fixed coordinates `(axis, value)` applied to full-grid outputs.
    pub slice: Vec<(usize, f64)>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn system_def(&self) -> Result<SystemDef, CliError> {
        match (&self.custom, self.system.as_str()) {
            (Some(c), "custom") => c.build(),
            (Some(_), name) => Err(CliError::Config(format!(
                "system: `{name}` given together with a [custom] table; use system = \"custom\""
            ))),
            (None, name) => {
                catalog::system(name).map_err(|e| CliError::Config(format!("system: {e}")))
            }
        }
    }

    pub fn partition_def(&self) -> Result<Partition, CliError> {
        match &self.partition {
            Some(p) => Ok(Partition {
                owned_states: p.owned_states.clone(),
                shared_states: p.shared_states.clone(),
                owned_controls: p.owned_controls.clone(),
                shared_controls: p.shared_controls.clone(),
            }),
            None => catalog::partition(&self.system).ok_or_else(|| {
                CliError::Config(format!(
                    "partition: `{}` has no catalog partition; add a [partition] table",
                    self.system
                ))
            }),
        }
    }

    /// Checks every field against the selected system before any work.
    pub fn validate(&self) -> Result<(), CliError> {
        let sys = self.system_def()?;
        let (n, m) = (sys.state_dim(), sys.control_dim());
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.grid.bounds.len() != n || self.grid.counts.len() != n {
            return bad(
                "grid",
                format!(
                    "{} bounds and {} counts for a {n}-state system",
                    self.grid.bounds.len(),
                    self.grid.counts.len()
                ),
            );
        }
        self.grid.build()?;
        if self.gammas.is_empty() {
            return bad("gammas", "at least one decay rate is required".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return bad("gammas", format!("{g} is not a finite non-negative rate"));
        }
        if let Some(p) = &self.partition {
            self.partition_def()?
                .validate(n, m)
                .map_err(|e| CliError::Config(format!("partition: {e}")))?;
            if p.owned_states.len() != p.owned_controls.len() {
                return bad(
                    "partition",
                    "owned_states and owned_controls differ in length".into(),
                );
            }
        }
        self.solver
            .to_solver(self.gammas[0], true)
            .validate()
            .map_err(|e| CliError::Config(format!("solver: {e}")))?;
        if !(self.solver.history_dt > 0.0) {
            return bad("solver.history_dt", "must be positive".into());
        }
        for (k, x) in self.simulate.x0.iter().enumerate() {
            if x.len() != n {
                return bad(
                    &format!("simulate.x0[{k}]"),
                    format!("{} entries for a {n}-state system", x.len()),
                );
            }
        }
        if let Some(u) = &self.simulate.u_ref {
            if u.len() != m {
                return bad(
                    "simulate.u_ref",
                    format!("{} entries for {m} controls", u.len()),
                );
            }
        }
        if !(self.simulate.t_final > 0.0)
            || !(self.simulate.eta >= 0.0)
            || !(self.simulate.eps_origin >= 0.0)
        {
            return bad(
                "simulate",
                "t_final must be positive, eta and eps_origin non-negative".into(),
            );
        }
        if self.simulate.dt.is_some_and(|d| !(d > 0.0)) {
            return bad("simulate.dt", "must be positive".into());
        }
        for (k, x) in self.acs.points.iter().enumerate() {
            if x.len() != n {
                return bad(
                    &format!("acs.points[{k}]"),
                    format!("{} entries for a {n}-state system", x.len()),
                );
            }
        }
        for &(d, _) in &self.export.slice {
            if d >= n {
                return bad(
                    "export.slice",
                    format!("axis {d} does not exist in a {n}-state system"),
                );
            }
        }
        Ok(())
    }
}

impl CustomSystem {
    fn build(&self) -> Result<SystemDef, CliError> {
        let err = |e: clvf::ClvfError| CliError::Config(format!("custom: {e}"));
        let mut equations = vec![Vec::new(); self.states];
        for (k, t) in self.terms.iter().enumerate() {
            let row = equations.get_mut(t.row).ok_or_else(|| {
                CliError::Config(format!(
                    "custom.terms[{k}].row: {} >= {} states",
                    t.row, self.states
                ))
            })?;
            row.push(Term {
                coeff: t.coeff,
                powers: t.powers.clone(),
                control: t.control,
            });
        }
        let model =
            PolynomialModel::new(self.states, self.control_bounds.len(), equations).map_err(err)?;
        let cbox = self
            .control_bounds
            .iter()
            .map(|b| Interval::new(b[0], b[1]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let loss = match self.loss {
            LossName::InfNorm => Loss::InfNorm,
            LossName::TwoNorm => Loss::TwoNorm,
        };
        SystemDef::new("custom", Arc::new(model), cbox, loss).map_err(err)
    }
}

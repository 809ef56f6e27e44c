//! Command-line workflows over the `clvf` library. Each subcommand reads a
//! [`RunConfig`], writes CLVF1 value files, CSV tables and text reports into
//! the configured output directory and echoes a short summary to stdout.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use clvf::acs::{
    acs_infinite, algorithm1_sgamma, reconstructed_acs_nonempty, sbar_gamma, RolloutConfig,
    SGammaResult, Slack,
};
use clvf::contour::{level_segments, segments_csv};
use clvf::control::{
    certify_decay, simulate, Controller, ControllerConfig, SimConfig, ValueSource,
};
use clvf::dynamics::{decompose, Partition, SubsystemDef, SystemDef};
use clvf::grid::{load_clvf1, save_clvf1, FileMeta};
use clvf::hjsolver::{solve_clvf, ClvfResult, Stepper};
use clvf::reconstruct::{
    broadcast_subsystem, compare, reconstruct_max, reconstruct_sum, Combine, Composite,
};
use clvf::{ClvfError, Execution, Grid, ValueArray};
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
use config::{CombineName, SourceName};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or input files (exit code 2).
    Config(String),
    /// A computation failed or was refused (exit code 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn numerical(e: ClvfError) -> CliError {
    match e {
        ClvfError::Io(_)
        | ClvfError::Format(_)
        | ClvfError::GridMismatch
        | ClvfError::MissingHistory(_) => CliError::Config(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "clvf",
    version,
    about = "Control Lyapunov-value functions on grids"
)]
pub struct Cli {
    /// Worker threads for node sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Contour levels exported for 2D outputs, e.g. `0.5,1`.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
    /// Fix full-state axis `d` at value `v` in exported slices; repeatable.
    #[arg(long, value_parser = parse_slice)]
    pub slice: Vec<(usize, f64)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the full system and/or its subsystems for every decay rate.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Keep time snapshots of subsystem solves (needed by `sgamma`).
        #[arg(long)]
        history: bool,
        /// Exit with code 3 when a solve does not converge.
        #[arg(long)]
        strict: bool,
    },
    /// Combine subsystem values on the full grid; compare against a direct solve when present.
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// Certify where the max reconstruction is exact by rolling out shared controls.
    Sgamma {
        #[command(flatten)]
        common: Common,
        /// Random shared-control witnesses with this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-loop runs of the QP controller from the configured initial states.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Dump admissible control sets at the configured query points.
    Acs {
        #[command(flatten)]
        common: Common,
    },
    /// Compare two value files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Boundary cells excluded from the comparison.
        #[arg(long, default_value_t = 2)]
        band: usize,
        /// Level whose sublevel sets are compared.
        #[arg(long)]
        level: Option<f64>,
    },
}

fn parse_slice(s: &str) -> Result<(usize, f64), String> {
    let (d, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected axis=value, got `{s}`"))?;
    let d = d.trim().parse().map_err(|_| format!("bad axis `{d}`"))?;
    let v = v.trim().parse().map_err(|_| format!("bad value `{v}`"))?;
    Ok((d, v))
}

/// Runs one parsed command line; returns the lines printed to stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Compare { a, b, band, level } => cmd_compare(&a, &b, band, level),
        Command::Solve {
            common,
            history,
            strict,
        } => Run::open(&common)?.solve(history, strict),
        Command::Reconstruct { common } => Run::open(&common)?.reconstruct(),
        Command::Sgamma { common, seed } => {
            let mut run = Run::open(&common)?;
            if seed.is_some() {
                run.cfg.sgamma.seed = seed;
            }
            run.sgamma()
        }
        Command::Simulate { common } => Run::open(&common)?.simulate(),
        Command::Acs { common } => Run::open(&common)?.acs(),
    }
}

fn cmd_compare(a: &Path, b: &Path, band: usize, level: Option<f64>) -> Result<String, CliError> {
    let (va, _) = load_clvf1(a).map_err(numerical)?;
    let (vb, _) = load_clvf1(b).map_err(numerical)?;
    let rep = compare(&va, &vb, band, level).map_err(numerical)?;
    Ok(rep.to_text())
}

/// Snapshot bookkeeping stored next to a solve so `sgamma` can rebuild it.
#[derive(Debug, Serialize, Deserialize)]
struct HistoryIndex {
    gamma: f64,
    cap: f64,
    converged: bool,
    t_conv: f64,
    steps: usize,
    dt: f64,
    history_dt: f64,
    snapshots: usize,
}

struct Run {
    cfg: RunConfig,
    sys: SystemDef,
    grid: Grid,
    out: PathBuf,
    stem: String,
    levels: Vec<f64>,
    slice: Vec<(usize, f64)>,
}

impl Run {
    fn open(common: &Common) -> Result<Self, CliError> {
        let text = fs::read_to_string(&common.config).map_err(|e| io_err(&common.config, e))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if !common.levels.is_empty() {
            cfg.export.levels = common.levels.clone();
        }
        if !common.slice.is_empty() {
            cfg.export.slice = common.slice.clone();
        }
        cfg.validate()?;
        // relative output paths are taken from the config file's directory
        let out = match common.config.parent() {
            Some(dir) if cfg.output_dir.is_relative() => dir.join(&cfg.output_dir),
            _ => cfg.output_dir.clone(),
        };
        fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
        fs::write(out.join("resolved_config.toml"), cfg.to_toml()).map_err(|e| io_err(&out, e))?;
        Ok(Self {
            sys: cfg.system_def()?,
            grid: cfg.grid.build()?,
            stem: cfg.system.clone(),
            levels: cfg.export.levels.clone(),
            slice: cfg.export.slice.clone(),
            out,
            cfg,
        })
    }

    fn path(&self, gamma: f64, tag: &str, ext: &str) -> PathBuf {
        self.out.join(format!("{}_g{gamma}_{tag}.{ext}", self.stem))
    }

    fn subsystems(&self) -> Result<(Partition, Vec<SubsystemDef>), CliError> {
        let part = self.cfg.partition_def()?;
        let subs =
            decompose(&self.sys, &part).map_err(|e| CliError::Config(format!("partition: {e}")))?;
        Ok((part, subs))
    }

    fn write_values(
        &self,
        path: &Path,
        v: &ValueArray,
        meta: &FileMeta,
        full_grid: bool,
    ) -> Result<(), CliError> {
        save_clvf1(path, v, meta).map_err(numerical)?;
        let exported = if full_grid && !self.slice.is_empty() {
            let s = v.slice(&self.slice).map_err(numerical)?;
            save_clvf1(&path.with_extension("slice.clvf"), &s, meta).map_err(numerical)?;
            Some(s)
        } else {
            None
        };
        let target = exported.as_ref().unwrap_or(v);
        if !self.levels.is_empty() && target.grid.dim() == 2 {
            let curves = self
                .levels
                .iter()
                .map(|&l| level_segments(target, l).map(|s| (l, s)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(numerical)?;
            let p = path.with_extension("contours.csv");
            fs::write(&p, segments_csv(&curves)).map_err(|e| io_err(&p, e))?;
        }
        Ok(())
    }

    fn solve(&self, history: bool, strict: bool) -> Result<String, CliError> {
        let mut report = String::new();
        let mut unconverged = Vec::new();
        let mut jobs: Vec<(String, SystemDef, Grid, bool)> = Vec::new();
        if self.cfg.solve.direct {
            jobs.push(("full".into(), self.sys.clone(), self.grid.clone(), true));
        }
        if self.cfg.solve.subsystems {
            let (_, subs) = self.subsystems()?;
            for s in subs {
                let g = self.grid.select(&s.state_indices).map_err(numerical)?;
                jobs.push((format!("sub{}", s.index), s.system, g, false));
            }
        }
        for &gamma in &self.cfg.gammas {
            for (tag, sys, grid, full) in &jobs {
                let keep = history && !full;
                let res = solve_clvf(sys, grid, &self.cfg.solver.to_solver(gamma, keep))
                    .map_err(numerical)?;
                self.write_values(
                    &self.path(gamma, tag, "clvf"),
                    &res.values,
                    &res.meta(),
                    *full,
                )?;
                self.write_log(gamma, tag, &res)?;
                if keep {
                    self.write_history(gamma, tag, &res)?;
                }
                if !res.converged {
                    unconverged.push(format!("{tag} gamma {gamma}"));
                }
                writeln!(
                    report,
                    "{tag} gamma {gamma}: {} after {} steps, t_conv {:.4}, {} of {} nodes outside the ROES",
                    if res.converged { "converged" } else { "not converged" },
                    res.steps,
                    res.t_conv,
                    res.values.masked_count(),
                    grid.len()
                )
                .unwrap();
            }
        }
        if strict && !unconverged.is_empty() {
            return Err(CliError::Numerical(format!(
                "no convergence: {}",
                unconverged.join(", ")
            )));
        }
        Ok(report)
    }

    fn write_log(&self, gamma: f64, tag: &str, res: &ClvfResult) -> Result<(), CliError> {
        let mut s = String::new();
        writeln!(s, "converged {}", res.converged).unwrap();
        writeln!(s, "t_conv {}", res.t_conv).unwrap();
        writeln!(s, "steps {}", res.steps).unwrap();
        writeln!(s, "dt {}", res.dt).unwrap();
        writeln!(s, "cap {}", res.cap).unwrap();
        writeln!(s, "# step sup_change").unwrap();
        for (k, c) in res.change_log.iter().enumerate() {
            writeln!(s, "{} {c:e}", k + 1).unwrap();
        }
        writeln!(s, "# resolved configuration").unwrap();
        for line in self.cfg.to_toml().lines() {
            writeln!(s, "# {line}").unwrap();
        }
        let p = self.path(gamma, tag, "log");
        fs::write(&p, s).map_err(|e| io_err(&p, e))
    }

    fn history_dir(&self, gamma: f64, tag: &str) -> PathBuf {
        self.out
            .join(format!("{}_g{gamma}_{tag}_history", self.stem))
    }

    fn write_history(&self, gamma: f64, tag: &str, res: &ClvfResult) -> Result<(), CliError> {
        let dir = self.history_dir(gamma, tag);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for (k, snap) in res.history.iter().enumerate() {
            save_clvf1(&dir.join(format!("{k:05}.clvf")), snap, &res.meta()).map_err(numerical)?;
        }
        let index = HistoryIndex {
            gamma,
            cap: res.cap,
            converged: res.converged,
            t_conv: res.t_conv,
            steps: res.steps,
            dt: res.dt,
            history_dt: res.history_dt,
            snapshots: res.history.len(),
        };
        let p = dir.join("index.toml");
        fs::write(&p, toml::to_string(&index).expect("index serialises")).map_err(|e| io_err(&p, e))
    }

    fn load_history(&self, gamma: f64, tag: &str) -> Result<ClvfResult, CliError> {
        let dir = self.history_dir(gamma, tag);
        let p = dir.join("index.toml");
        let text = fs::read_to_string(&p).map_err(|_| {
            CliError::Config(format!(
                "missing snapshot history {}; run `solve --history` first",
                dir.display()
            ))
        })?;
        let index: HistoryIndex =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        let history = (0..index.snapshots)
            .map(|k| load_clvf1(&dir.join(format!("{k:05}.clvf"))).map(|(v, _)| v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(numerical)?;
        let values = self.load(gamma, tag)?;
        Ok(ClvfResult {
            values,
            gamma,
            cap: index.cap,
            converged: index.converged,
            t_conv: index.t_conv,
            steps: index.steps,
            dt: index.dt,
            history,
            history_dt: index.history_dt,
            change_log: Vec::new(),
        })
    }

    fn load(&self, gamma: f64, tag: &str) -> Result<ValueArray, CliError> {
        self.load_with_meta(gamma, tag).map(|(v, _)| v)
    }

    fn load_with_meta(&self, gamma: f64, tag: &str) -> Result<(ValueArray, FileMeta), CliError> {
        let p = self.path(gamma, tag, "clvf");
        if !p.exists() {
            return Err(CliError::Config(format!(
                "missing input {}; run `solve` first",
                p.display()
            )));
        }
        load_clvf1(&p).map_err(numerical)
    }

    fn load_subsystems(&self, gamma: f64, n: usize) -> Result<Vec<ValueArray>, CliError> {
        (0..n)
            .map(|i| self.load(gamma, &format!("sub{i}")))
            .collect()
    }

    fn reconstruct(&self) -> Result<String, CliError> {
        let (part, _) = self.subsystems()?;
        let mode = self.cfg.reconstruct.mode;
        let tag = match mode {
            CombineName::Max => "max",
            CombineName::Sum => "sum",
        };
        let mut report = String::new();
        for &gamma in &self.cfg.gammas {
            let subs = (0..part.num_subsystems())
                .map(|i| self.load_with_meta(gamma, &format!("sub{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            let meta = FileMeta {
                gamma,
                converged: subs.iter().all(|(_, m)| m.converged),
                cap: match mode {
                    CombineName::Max => subs.iter().map(|(_, m)| m.cap).fold(0.0, f64::max),
                    CombineName::Sum => subs.iter().map(|(_, m)| m.cap).sum(),
                },
            };
            let mut acc: Option<ValueArray> = None;
            for (i, (v, _)) in subs.iter().enumerate() {
                let b = broadcast_subsystem(v, &self.grid, &part, i, Execution::default())
                    .map_err(numerical)?;
                acc = Some(match acc {
                    None => b,
                    Some(a) => match mode {
                        CombineName::Max => reconstruct_max(&a, &b),
                        CombineName::Sum => reconstruct_sum(&a, &b),
                    }
                    .map_err(numerical)?,
                });
            }
            let rec = acc.expect("a partition has subsystems");
            self.write_values(&self.path(gamma, tag, "clvf"), &rec, &meta, true)?;
            writeln!(
                report,
                "{tag} gamma {gamma}: {} of {} nodes masked",
                rec.masked_count(),
                self.grid.len()
            )
            .unwrap();
            let direct = self.path(gamma, "full", "clvf");
            if direct.exists() {
                let (d, _) = load_clvf1(&direct).map_err(numerical)?;
                let rep = compare(
                    &rec,
                    &d,
                    self.cfg.reconstruct.band,
                    self.cfg.reconstruct.level,
                )
                .map_err(numerical)?;
                let p = self.path(gamma, &format!("{tag}_compare"), "txt");
                fs::write(&p, rep.to_text()).map_err(|e| io_err(&p, e))?;
                writeln!(
                    report,
                    "  against direct: {} nodes compared, sup diff {:.4e}, mean diff {:.4e}",
                    rep.compared, rep.sup_diff, rep.mean_diff
                )
                .unwrap();
            }
        }
        Ok(report)
    }

    fn sgamma(&self) -> Result<String, CliError> {
        let (part, _) = self.subsystems()?;
        let rollout = RolloutConfig {
            seed: self.cfg.sgamma.seed,
            ..RolloutConfig::default()
        };
        let mask_meta = FileMeta::mask();
        let as_mask = |m: &[bool]| -> ValueArray {
            ValueArray::new(
                self.grid.clone(),
                m.iter().map(|&b| f64::from(u8::from(b))).collect(),
            )
            .expect("sizes agree")
        };
        let mut report = String::new();
        for &gamma in &self.cfg.gammas {
            let results = (0..part.num_subsystems())
                .map(|i| self.load_history(gamma, &format!("sub{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            let sg = algorithm1_sgamma(&self.sys, &part, &results, &self.grid, &rollout)
                .map_err(numerical)?;
            self.write_values(
                &self.path(gamma, "tgamma", "clvf"),
                &as_mask(&sg.t_gamma),
                &mask_meta,
                true,
            )?;
            self.write_values(
                &self.path(gamma, "sgamma", "clvf"),
                &as_mask(&sg.s_gamma),
                &mask_meta,
                true,
            )?;
            let p = self.path(gamma, "sgamma_diagnostics", "csv");
            fs::write(&p, sg.diagnostics_csv()).map_err(|e| io_err(&p, e))?;
            let mut causes = std::collections::BTreeMap::new();
            for o in &sg.outcomes {
                *causes.entry(o.cause.label()).or_insert(0usize) += 1;
            }
            let mut s = String::new();
            writeln!(s, "gamma {gamma}").unwrap();
            writeln!(s, "t_gamma_nodes {}", SGammaResult::count(&sg.t_gamma)).unwrap();
            writeln!(s, "s_gamma_nodes {}", SGammaResult::count(&sg.s_gamma)).unwrap();
            match sg.level {
                Some(l) => writeln!(s, "s_gamma_level {l}").unwrap(),
                None => writeln!(s, "s_gamma_level none").unwrap(),
            }
            writeln!(s, "rollout_steps {}", sg.horizon_steps).unwrap();
            for (c, k) in &causes {
                writeln!(s, "cause {c} {k}").unwrap();
            }
            if self.cfg.sgamma.sum_domain {
                let finals: Vec<&ValueArray> = results.iter().map(|r| &r.values).collect();
                let slack = Slack::Local {
                    factor: self.cfg.sgamma.slack_factor,
                };
                let sb = sbar_gamma(
                    &self.sys,
                    &part,
                    &finals,
                    &self.grid,
                    gamma,
                    &slack,
                    Execution::default(),
                )
                .map_err(numerical)?;
                self.write_values(
                    &self.path(gamma, "sbar", "clvf"),
                    &as_mask(&sb.s_bar),
                    &mask_meta,
                    true,
                )?;
                writeln!(s, "sum_domain_nodes {}", SGammaResult::count(&sb.s_bar)).unwrap();
                match sb.level {
                    Some(l) => writeln!(s, "sum_domain_level {l}").unwrap(),
                    None => writeln!(s, "sum_domain_level none").unwrap(),
                }
            }
            let p = self.path(gamma, "sgamma", "txt");
            fs::write(&p, &s).map_err(|e| io_err(&p, e))?;
            report.push_str(&s);
        }
        Ok(report)
    }

    fn simulate(&self) -> Result<String, CliError> {
        let spec = &self.cfg.simulate;
        if spec.x0.is_empty() {
            return Err(CliError::Config(
                "simulate.x0: no initial states given".into(),
            ));
        }
        let mut report = String::new();
        for &gamma in &self.cfg.gammas {
            let direct;
            let composite;
            let mut finals = Vec::new();
            let part = match spec.source {
                SourceName::Direct => None,
                _ => Some(self.subsystems()?),
            };
            let (source, solver_dt) = match (&part, spec.source) {
                (None, _) => {
                    direct = self.load(gamma, "full")?;
                    let dt = Stepper::new(
                        &self.sys,
                        &self.grid,
                        &self.cfg.solver.to_solver(gamma, false),
                    )
                    .map_err(numerical)?
                    .dt();
                    (ValueSource::Grid(&direct), dt)
                }
                (Some((p, subs)), mode) => {
                    finals = self.load_subsystems(gamma, p.num_subsystems())?;
                    let combine = if mode == SourceName::Sum {
                        Combine::Sum
                    } else {
                        Combine::Max
                    };
                    composite =
                        Composite::from_partition(finals.clone(), p, combine).map_err(numerical)?;
                    let dt = subs
                        .iter()
                        .map(|s| {
                            let g = self.grid.select(&s.state_indices)?;
                            Ok(Stepper::new(
                                &s.system,
                                &g,
                                &self.cfg.solver.to_solver(gamma, false),
                            )?
                            .dt())
                        })
                        .collect::<Result<Vec<f64>, ClvfError>>()
                        .map_err(numerical)?
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    (ValueSource::Composite(&composite), dt)
                }
            };
            let ctrl_cfg = ControllerConfig {
                u_ref: spec.u_ref.clone(),
                relax_factor: spec.relax_factor,
                gradient: spec.gradient.into(),
                ..ControllerConfig::new(gamma)
            };
            let ctrl = Controller::new(&self.sys, source, ctrl_cfg).map_err(numerical)?;
            let sim = SimConfig {
                dt: spec.dt.unwrap_or(solver_dt / 5.0),
                t_final: spec.t_final,
                eps_origin: spec.eps_origin,
            };
            for (k, x0) in spec.x0.iter().enumerate() {
                self.vet_x0(k, x0, gamma, source, &part, &finals)?;
            }
            for (k, x0) in spec.x0.iter().enumerate() {
                let tr = simulate(&self.sys, &ctrl, x0, &sim).map_err(numerical)?;
                let p = self.path(gamma, &format!("sim{k}"), "csv");
                fs::write(&p, tr.to_csv(gamma, spec.eta)).map_err(|e| io_err(&p, e))?;
                let mut s = String::new();
                writeln!(s, "x0 {x0:?}").unwrap();
                writeln!(s, "termination {}", tr.reason.label()).unwrap();
                writeln!(s, "t_end {}", tr.t.last().copied().unwrap_or(0.0)).unwrap();
                writeln!(s, "final_state {:?}", tr.final_state()).unwrap();
                match certify_decay(&tr, gamma, spec.eta) {
                    Ok(rep) => s.push_str(&rep.to_text()),
                    Err(e) => writeln!(s, "decay not certified: {e}").unwrap(),
                }
                let p = self.path(gamma, &format!("sim{k}"), "txt");
                fs::write(&p, &s).map_err(|e| io_err(&p, e))?;
                report.push_str(&s);
            }
        }
        Ok(report)
    }

    /// Refuses initial states where the chosen value function certifies nothing.
    fn vet_x0(
        &self,
        k: usize,
        x0: &[f64],
        gamma: f64,
        source: ValueSource,
        part: &Option<(Partition, Vec<SubsystemDef>)>,
        finals: &[ValueArray],
    ) -> Result<(), CliError> {
        let value = source
            .value(x0)
            .map_err(|e| CliError::Numerical(format!("x0[{k}] = {x0:?}: {e}")))?;
        let Some(v0) = value else {
            return Err(CliError::Numerical(format!(
                "x0[{k}] = {x0:?} lies outside the certified domain (no finite value there)"
            )));
        };
        if let (Some((p, _)), SourceName::Sum) = (part, self.cfg.simulate.source) {
            let refs: Vec<&ValueArray> = finals.iter().collect();
            let slack = Slack::Local {
                factor: self.cfg.sgamma.slack_factor,
            };
            let ok = reconstructed_acs_nonempty(&self.sys, p, &refs, x0, gamma, &slack)
                .map_err(numerical)?;
            if !ok {
                return Err(CliError::Numerical(format!(
                    "x0[{k}] = {x0:?} lies outside the certified domain: \
                     shared controls cannot decay every part (value {v0})"
                )));
            }
        }
        Ok(())
    }

    fn acs(&self) -> Result<String, CliError> {
        if self.cfg.acs.points.is_empty() {
            return Err(CliError::Config("acs.points: no query points given".into()));
        }
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        let mut csv = String::from("gamma,source,x,a,b,min_value,empty\n");
        let subs = if self.cfg.solve.subsystems {
            self.subsystems().ok()
        } else {
            None
        };
        for &gamma in &self.cfg.gammas {
            let mut sources: Vec<(String, ValueArray, SystemDef, Vec<usize>)> = Vec::new();
            if let Ok(v) = self.load(gamma, "full") {
                sources.push((
                    "full".into(),
                    v,
                    self.sys.clone(),
                    (0..self.sys.state_dim()).collect(),
                ));
            }
            if let Some((_, defs)) = &subs {
                for s in defs {
                    if let Ok(v) = self.load(gamma, &format!("sub{}", s.index)) {
                        sources.push((
                            format!("sub{}", s.index),
                            v,
                            s.system.clone(),
                            s.state_indices.clone(),
                        ));
                    }
                }
            }
            if sources.is_empty() {
                return Err(CliError::Config(format!(
                    "no value files for gamma {gamma}; run `solve` first"
                )));
            }
            for x in &self.cfg.acs.points {
                for (name, v, sys, dims) in &sources {
                    let z: Vec<f64> = dims.iter().map(|&k| x[k]).collect();
                    match acs_infinite(v, sys, &z, gamma) {
                        Ok(h) => writeln!(
                            csv,
                            "{gamma},{name},{},{},{},{},{}",
                            join(x),
                            join(&h.a),
                            h.b,
                            h.min_value(),
                            h.is_empty()
                        )
                        .unwrap(),
                        Err(e) => writeln!(csv, "{gamma},{name},{},,,,{e}", join(x)).unwrap(),
                    }
                }
            }
        }
        let p = self.out.join(format!("{}_acs.csv", self.stem));
        fs::write(&p, &csv).map_err(|e| io_err(&p, e))?;
        Ok(csv)
    }
}

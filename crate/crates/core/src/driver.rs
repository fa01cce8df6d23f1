//! Benchmark driver: a human-readable key=value configuration format, the
//! initial conditions of the benchmark suite, the adaptive time loop with
//! per-step conservation logging, and the uniform-vs-adaptive comparison.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::adapt::{adaptation_cycle, estimate_and_mark, smoothness_indicator, extend,
    Discretization, IndicatorConfig};
use crate::mesh::{CellId, Mark, MeshForest};
use crate::solver::{assemble_viscosity, compute_dt, ssp_step, DirichletSet};
use crate::state::{State, StateVector};
use crate::systems::System;
use crate::vtk::write_vtk;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    ShallowWater,
    Euler,
}

#[derive(Clone, Debug)]
pub enum InitialCondition {
    /// Uniform state everywhere.
    Constant { state: State },
    /// Water column: depth `h0` for x <= `x_step`, dry bed elsewhere.
    DamBreak { h0: f64, x_step: f64 },
    /// Ideal-gas blast: ambient gas at rest with a high-pressure disk of
    /// radius `radius` around the origin (periodic distance).
    Blast {
        rho: f64,
        p_ambient: f64,
        p_high: f64,
        radius: f64,
    },
    /// Ambient gas with a high-density inflow jet imposed on the left
    /// boundary over |y - y_mid| <= width/2.
    Jet {
        rho_ambient: f64,
        p_ambient: f64,
        rho_jet: f64,
        v_jet: f64,
        width: f64,
    },
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub system: SystemKind,
    pub gravity: f64,
    pub gamma: f64,
    pub h_cutoff_scale: f64,
    pub domain: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    pub degree: usize,
    pub periodic: bool,
    pub ic: InitialCondition,
    pub t_final: f64,
    pub cfl: f64,
    pub indicator: IndicatorConfig,
    /// Projection limiter (ablation switch). Never affects the solver.
    pub limiter: bool,
    /// Use the limited moment projection instead of nodal interpolation when
    /// refining cells.
    pub project_on_refine: bool,
    /// Steps between VTK snapshots; 0 writes only the final snapshot.
    pub output_every: usize,
    /// Run on a uniformly refined mesh at l_max with adaptation disabled.
    pub uniform: bool,
    /// Echoed into outputs; reruns with the same config and seed are
    /// bit-identical.
    pub seed: u64,
    /// Cap on total steps (safety valve for misconfigured runs).
    pub max_steps: usize,
}

impl RunConfig {
    pub fn system(&self) -> System {
        match self.system {
            SystemKind::ShallowWater => {
                // standard desingularization: dry cutoff tied to the finest
                // cell size so the regularized velocity stays bounded at
                // wetting fronts
                let dx = (self.domain[1] - self.domain[0]) / self.nx as f64;
                let dy = (self.domain[3] - self.domain[2]) / self.ny as f64;
                let finest = dx.min(dy) / (1u64 << self.indicator.l_max) as f64;
                System::ShallowWater {
                    gravity: self.gravity,
                    h_cutoff: self.h_cutoff_scale * finest,
                }
            }
            SystemKind::Euler => System::Euler { gamma: self.gamma },
        }
    }

    /// Water column collapse onto a dry bed.
    pub fn dam_break() -> Self {
        Self {
            system: SystemKind::ShallowWater,
            gravity: 9.81,
            gamma: 1.4,
            h_cutoff_scale: 1e-2,
            domain: [0.0, 75.0, 0.0, 30.0],
            nx: 10,
            ny: 4,
            degree: 1,
            periodic: true,
            ic: InitialCondition::DamBreak {
                h0: 1.875,
                x_step: 16.0,
            },
            t_final: 8.0,
            cfl: 0.9,
            indicator: IndicatorConfig {
                l_max: 5,
                // coarsen aggressively behind the moving front; the limited
                // transfer keeps the state admissible regardless
                alpha_coarsen: 0.1,
                ..IndicatorConfig::default()
            },
            limiter: true,
            project_on_refine: true,
            output_every: 0,
            uniform: false,
            seed: 0,
            max_steps: 200_000,
        }
    }

    /// Ideal-gas blast wave (point-symmetric strong shock).
    pub fn blast() -> Self {
        Self {
            system: SystemKind::Euler,
            gravity: 9.81,
            gamma: 1.4,
            h_cutoff_scale: 1e-2,
            domain: [0.0, 0.4, 0.0, 0.4],
            nx: 4,
            ny: 4,
            degree: 1,
            periodic: true,
            ic: InitialCondition::Blast {
                rho: 1.0,
                p_ambient: 0.1,
                p_high: 100.0,
                radius: 0.05,
            },
            t_final: 0.01,
            cfl: 0.9,
            indicator: IndicatorConfig {
                l_max: 6,
                // density starts uniform in a blast, so watch total energy
                // too; adapt every cycle to track the fast shock
                components: vec![0, 3],
                period: 1,
                ..IndicatorConfig::default()
            },
            limiter: true,
            project_on_refine: true,
            output_every: 0,
            uniform: false,
            seed: 0,
            max_steps: 200_000,
        }
    }

    /// High-velocity inflow jet (robustness stress test).
    pub fn jet() -> Self {
        Self {
            system: SystemKind::Euler,
            gravity: 9.81,
            gamma: 5.0 / 3.0,
            h_cutoff_scale: 1e-2,
            domain: [0.0, 1.0, 0.0, 1.0],
            nx: 4,
            ny: 4,
            degree: 1,
            periodic: false,
            ic: InitialCondition::Jet {
                rho_ambient: 0.5,
                p_ambient: 0.4127,
                rho_jet: 5.0,
                v_jet: 30.0,
                width: 0.1,
            },
            t_final: 0.02,
            cfl: 0.9,
            indicator: IndicatorConfig {
                l_max: 3,
                ..IndicatorConfig::default()
            },
            limiter: true,
            project_on_refine: true,
            output_every: 0,
            uniform: false,
            seed: 0,
            max_steps: 200_000,
        }
    }

    /// Parse the key=value text format (schema version required; unknown
    /// keys rejected; `#` starts a comment).
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv: HashMap<String, String> = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(ln + 1))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }

        let known = [
            "schema", "preset", "system", "gravity", "gamma", "h_cutoff_scale", "domain", "nx", "ny",
            "degree", "periodic", "ic", "constant_state", "h0", "x_step", "rho", "p_ambient",
            "p_high", "radius", "rho_jet", "v_jet", "jet_width", "t_final", "cfl",
            "indicator_kappa", "indicator_rounds", "alpha_refine", "alpha_coarsen",
            "adapt_period", "l_max", "limiter", "project_on_refine", "output_every", "uniform",
            "seed", "max_steps",
        ];
        for k in kv.keys() {
            if !known.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }

        let get = |k: &str| kv.get(k).map(|s| s.as_str());
        let bad = |k: &str| ConfigError::BadValue {
            key: k.to_string(),
            value: kv[k].clone(),
        };
        macro_rules! num {
            ($k:expr, $t:ty, $default:expr) => {
                match get($k) {
                    Some(v) => v.parse::<$t>().map_err(|_| bad($k))?,
                    None => $default,
                }
            };
        }
        let flag = |k: &str, default: bool| -> Result<bool, ConfigError> {
            match get(k) {
                Some("true") => Ok(true),
                Some("false") => Ok(false),
                Some(_) => Err(bad(k)),
                None => Ok(default),
            }
        };

        let schema = num!("schema", u32, 0);
        if schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema(schema));
        }

        let mut cfg = match get("preset") {
            Some("dam_break") => Self::dam_break(),
            Some("blast") => Self::blast(),
            Some("jet") => Self::jet(),
            Some(_) => return Err(bad("preset")),
            None => Self::dam_break(),
        };

        if let Some(v) = get("system") {
            cfg.system = match v {
                "shallow_water" => SystemKind::ShallowWater,
                "euler" => SystemKind::Euler,
                _ => return Err(bad("system")),
            };
        }
        cfg.gravity = num!("gravity", f64, cfg.gravity);
        cfg.gamma = num!("gamma", f64, cfg.gamma);
        cfg.h_cutoff_scale = num!("h_cutoff_scale", f64, cfg.h_cutoff_scale);
        if let Some(v) = get("domain") {
            let parts: Vec<f64> = v
                .split_whitespace()
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("domain"))?;
            if parts.len() != 4 {
                return Err(bad("domain"));
            }
            cfg.domain = [parts[0], parts[1], parts[2], parts[3]];
        }
        cfg.nx = num!("nx", usize, cfg.nx);
        cfg.ny = num!("ny", usize, cfg.ny);
        cfg.degree = num!("degree", usize, cfg.degree);
        cfg.periodic = flag("periodic", cfg.periodic)?;
        if let Some(v) = get("ic") {
            cfg.ic = match v {
                "constant" => {
                    let s = get("constant_state").ok_or(ConfigError::Missing("constant_state"))?;
                    let parts: Vec<f64> = s
                        .split_whitespace()
                        .map(|p| p.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("constant_state"))?;
                    if parts.len() != 4 {
                        return Err(bad("constant_state"));
                    }
                    InitialCondition::Constant {
                        state: [parts[0], parts[1], parts[2], parts[3]],
                    }
                }
                "dam_break" => InitialCondition::DamBreak {
                    h0: num!("h0", f64, 1.875),
                    x_step: num!("x_step", f64, 16.0),
                },
                "blast" => InitialCondition::Blast {
                    rho: num!("rho", f64, 1.0),
                    p_ambient: num!("p_ambient", f64, 0.1),
                    p_high: num!("p_high", f64, 100.0),
                    radius: num!("radius", f64, 0.05),
                },
                "jet" => InitialCondition::Jet {
                    rho_ambient: num!("rho", f64, 0.5),
                    p_ambient: num!("p_ambient", f64, 0.4127),
                    rho_jet: num!("rho_jet", f64, 5.0),
                    v_jet: num!("v_jet", f64, 30.0),
                    width: num!("jet_width", f64, 0.1),
                },
                _ => return Err(bad("ic")),
            };
        }
        cfg.t_final = num!("t_final", f64, cfg.t_final);
        cfg.cfl = num!("cfl", f64, cfg.cfl);
        cfg.indicator.kappa = num!("indicator_kappa", f64, cfg.indicator.kappa);
        cfg.indicator.rounds = num!("indicator_rounds", usize, cfg.indicator.rounds);
        cfg.indicator.alpha_refine = num!("alpha_refine", f64, cfg.indicator.alpha_refine);
        cfg.indicator.alpha_coarsen = num!("alpha_coarsen", f64, cfg.indicator.alpha_coarsen);
        cfg.indicator.period = num!("adapt_period", usize, cfg.indicator.period);
        cfg.indicator.l_max = num!("l_max", usize, cfg.indicator.l_max);
        cfg.limiter = flag("limiter", cfg.limiter)?;
        cfg.project_on_refine = flag("project_on_refine", cfg.project_on_refine)?;
        cfg.output_every = num!("output_every", usize, cfg.output_every);
        cfg.uniform = flag("uniform", cfg.uniform)?;
        cfg.seed = num!("seed", u64, cfg.seed);
        cfg.max_steps = num!("max_steps", usize, cfg.max_steps);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.domain[1] > self.domain[0] && self.domain[3] > self.domain[2]) {
            return err("domain extents must be positive");
        }
        if self.nx == 0 || self.ny == 0 {
            return err("coarse grid must be nonempty");
        }
        if !(self.degree == 1 || self.degree == 2) {
            return err("degree must be 1 or 2");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return err("cfl must be in (0, 1]");
        }
        if !(self.t_final > 0.0) {
            return err("t_final must be positive");
        }
        if self.indicator.alpha_coarsen > self.indicator.alpha_refine {
            return err("alpha_coarsen must not exceed alpha_refine");
        }
        if self.indicator.period == 0 {
            return err("adapt_period must be positive");
        }
        match (&self.ic, self.system) {
            (InitialCondition::DamBreak { .. }, SystemKind::Euler) => {
                err("dam_break requires the shallow water system")
            }
            (InitialCondition::Blast { .. } | InitialCondition::Jet { .. }, SystemKind::ShallowWater) => {
                err("blast/jet require the compressible gas system")
            }
            _ => Ok(()),
        }
    }

    fn ic_state(&self, x: f64, y: f64) -> State {
        match &self.ic {
            InitialCondition::Constant { state } => *state,
            InitialCondition::DamBreak { h0, x_step } => {
                if x <= *x_step {
                    [*h0, 0.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 0.0, 0.0]
                }
            }
            InitialCondition::Blast {
                rho,
                p_ambient,
                p_high,
                radius,
            } => {
                // periodic distance to the origin
                let [x0, x1, y0, y1] = self.domain;
                let (lx, ly) = (x1 - x0, y1 - y0);
                let dx = (x - x0).min(x1 - x).min((x - x0).rem_euclid(lx));
                let dy = (y - y0).min(y1 - y).min((y - y0).rem_euclid(ly));
                let r = (dx * dx + dy * dy).sqrt();
                let p = if r <= *radius { *p_high } else { *p_ambient };
                [*rho, 0.0, 0.0, p / (self.gamma - 1.0)]
            }
            InitialCondition::Jet {
                rho_ambient,
                p_ambient,
                ..
            } => [
                *rho_ambient,
                0.0,
                0.0,
                p_ambient / (self.gamma - 1.0),
            ],
        }
    }

    fn jet_inflow_state(&self) -> Option<State> {
        if let InitialCondition::Jet {
            p_ambient,
            rho_jet,
            v_jet,
            ..
        } = &self.ic
        {
            Some([
                *rho_jet,
                rho_jet * v_jet,
                0.0,
                p_ambient / (self.gamma - 1.0) + 0.5 * rho_jet * v_jet * v_jet,
            ])
        } else {
            None
        }
    }
}

/// Outcome of a time loop, including early-termination diagnostics.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: usize,
    pub final_time: f64,
    pub totals_initial: State,
    pub totals_final: State,
    /// Max over components of |drift| / (total of the first component).
    pub max_rel_drift: f64,
    /// Min over the whole run of each admissibility functional
    /// (shallow water: depth; gas: density and internal energy).
    pub min_psi: Vec<f64>,
    pub initial_dt: f64,
    pub min_dt: f64,
    pub final_dofs: usize,
    pub final_cells: usize,
    pub wall_seconds: f64,
    /// Set when the run aborted before t_final (ablation diagnostics).
    pub failure: Option<String>,
}

fn min_psi_of(sys: &System, u: &StateVector) -> Vec<f64> {
    let k = sys.constraint_values([1.0, 0.0, 0.0, 0.5]).len();
    let mut mins = vec![f64::INFINITY; k];
    for i in 0..u.n_dofs {
        for (s, v) in sys.constraint_values(u.get(i)).into_iter().enumerate() {
            mins[s] = mins[s].min(v);
        }
    }
    mins
}

fn sample_ic(cfg: &RunConfig, disc: &Discretization, nc: usize) -> StateVector {
    let mut u = StateVector::zeros(nc, disc.dofs.n_dofs);
    for i in 0..disc.dofs.n_dofs {
        let [x, y] = disc.dofs.positions[i];
        u.set(i, cfg.ic_state(x, y));
    }
    disc.cons.enforce(&mut u);
    u
}

fn build_dirichlet(cfg: &RunConfig, disc: &Discretization) -> DirichletSet {
    let mut set = DirichletSet::default();
    if let Some(state) = cfg.jet_inflow_state() {
        let [x0, _, y0, y1] = cfg.domain;
        let y_mid = 0.5 * (y0 + y1);
        let width = match &cfg.ic {
            InitialCondition::Jet { width, .. } => *width,
            _ => unreachable!(),
        };
        for i in 0..disc.dofs.n_dofs {
            let [x, y] = disc.dofs.positions[i];
            if (x - x0).abs() < 1e-12 && (y - y_mid).abs() <= 0.5 * width + 1e-12 {
                set.entries.push((i, state));
            }
        }
    }
    set
}

/// Cells whose left edge carries inflow DoFs are pinned at max refinement to
/// avoid an indicator blind spot at the inflow slot.
fn pinned_marks(cfg: &RunConfig, mesh: &MeshForest, disc: &Discretization) -> Vec<(CellId, Mark)> {
    if cfg.jet_inflow_state().is_none() {
        return Vec::new();
    }
    let [x0, _, y0, y1] = cfg.domain;
    let y_mid = 0.5 * (y0 + y1);
    let width = match &cfg.ic {
        InitialCondition::Jet { width, .. } => *width,
        _ => unreachable!(),
    };
    disc.dofs
        .active_cells
        .iter()
        .filter(|&&cell| {
            let v = mesh.geometry(cell).verts;
            (v[0][0] - x0).abs() < 1e-12
                && v[0][1] <= y_mid + 0.5 * width
                && v[3][1] >= y_mid - 0.5 * width
        })
        .map(|&cell| (cell, Mark::Refine))
        .collect()
}

/// Execute a configured run. When `output_dir` is given, writes
/// `conservation.csv`, `dofs.csv`, and legacy VTK snapshots there.
pub fn run(cfg: &RunConfig, output_dir: Option<&Path>) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let sys = cfg.system();
    let nc = sys.n_comp();
    let l_max = cfg.indicator.l_max;

    let mut mesh = if cfg.periodic {
        MeshForest::new_periodic(cfg.domain, cfg.nx, cfg.ny)
    } else {
        MeshForest::new(cfg.domain, cfg.nx, cfg.ny)
    };
    let mut disc = Discretization::build(&mesh, cfg.degree);
    let mut u = sample_ic(cfg, &disc, nc);

    // initial adaptation: refine into the initial data, re-sampling the
    // analytic initial condition after every round
    for _ in 0..l_max {
        let marks: Vec<(CellId, Mark)> = if cfg.uniform {
            disc.dofs
                .active_cells
                .iter()
                .map(|&c| (c, Mark::Refine))
                .collect()
        } else {
            let mut m = estimate_and_mark(&sys, &mesh, &disc, &u, &cfg.indicator);
            m.extend(pinned_marks(cfg, &mesh, &disc));
            m
        };
        let plan = mesh.plan_adaptation(&marks, l_max);
        mesh.commit(&plan);
        disc = Discretization::build(&mesh, cfg.degree);
        u = sample_ic(cfg, &disc, nc);
    }
    let mut dirichlet = build_dirichlet(cfg, &disc);
    dirichlet.apply(&mut u);
    disc.cons.enforce(&mut u);

    let totals_initial = crate::adapt::conserved_totals(&disc, &u);
    let mass_scale = totals_initial[0].abs().max(1e-300);
    let mut min_psi = min_psi_of(&sys, &u);

    let mut cons_csv = String::new();
    let mut dofs_csv = String::new();
    {
        let mut hdr = String::from("step,t,dt");
        for c in 0..nc {
            write!(hdr, ",total_{c}").unwrap();
        }
        for s in 0..min_psi.len() {
            write!(hdr, ",min_psi_{s}").unwrap();
        }
        cons_csv.push_str(&hdr);
        cons_csv.push('\n');
        dofs_csv.push_str("step,t,n_cells,n_dofs,n_constraints\n");
    }
    let log_dofs = |buf: &mut String, step: usize, t: f64, mesh: &MeshForest, disc: &Discretization| {
        writeln!(
            buf,
            "{step},{t:.17e},{},{},{}",
            mesh.n_active(),
            disc.dofs.n_dofs,
            disc.cons.len()
        )
        .unwrap();
    };
    log_dofs(&mut dofs_csv, 0, 0.0, &mesh, &disc);

    let mut t = 0.0;
    let mut step = 0usize;
    let mut initial_dt = f64::NAN;
    let mut min_dt = f64::INFINITY;
    let mut failure: Option<String> = None;

    while t < cfg.t_final && step < cfg.max_steps {
        if !cfg.uniform && step > 0 && step % cfg.indicator.period == 0 {
            let mut marks = estimate_and_mark(&sys, &mesh, &disc, &u, &cfg.indicator);
            marks.extend(pinned_marks(cfg, &mesh, &disc));
            let (nd, nu) = adaptation_cycle(
                &sys,
                &mut mesh,
                &disc,
                &u,
                &marks,
                l_max,
                cfg.project_on_refine,
                cfg.limiter,
            );
            disc = nd;
            u = nu;
            dirichlet = build_dirichlet(cfg, &disc);
            dirichlet.apply(&mut u);
            disc.cons.enforce(&mut u);
            log_dofs(&mut dofs_csv, step, t, &mesh, &disc);
            // admissibility with roundoff slack: the limited transfer keeps
            // exact zeros nonnegative only up to ulps
            let mut scale = [0.0f64; 4];
            for i in 0..disc.dofs.n_dofs {
                let ui = u.get(i);
                for c in 0..nc {
                    scale[c] = scale[c].max(ui[c].abs());
                }
            }
            if (0..disc.dofs.n_dofs)
                .any(|i| !crate::solver::admissible_with_slack(&sys, u.get(i), &scale))
            {
                failure = Some("inadmissible state after adaptation".to_string());
                break;
            }
        }

        let visc = assemble_viscosity(&sys, &disc.mass, &u);
        let dt_stable = compute_dt(&disc.mass, &disc.cons, &visc, cfg.cfl);
        if dt_stable.is_nan() {
            failure = Some("time step is NaN (inadmissible state)".to_string());
            break;
        }
        if dt_stable < 1e-8 {
            failure = Some(format!("time step collapse: dt = {dt_stable:.3e}"));
            break;
        }
        let mut dt = dt_stable.min(cfg.t_final - t);
        if initial_dt.is_nan() {
            initial_dt = dt_stable;
        }

        // The step-start CFL estimate can be slightly too large for the later
        // Runge-Kutta stages (the stage states may carry larger wave speeds,
        // e.g. at a wetting front). Halve the step and retry; a genuinely
        // corrupt state keeps failing and is reported.
        let mut stepped = None;
        let mut last_err = String::new();
        for _ in 0..50 {
            match ssp_step(&sys, &disc.mass, &disc.cons, &u, dt, &dirichlet) {
                Ok(next) => {
                    stepped = Some(next);
                    break;
                }
                Err(e) => {
                    last_err = e.to_string();
                    dt *= 0.5;
                    if dt < 1e-8 {
                        break;
                    }
                }
            }
        }
        match stepped {
            Some(next) => u = next,
            None => {
                failure = Some(format!("solver abort: {last_err}"));
                break;
            }
        }
        min_dt = min_dt.min(dt);
        t += dt;
        step += 1;

        let totals = crate::adapt::conserved_totals(&disc, &u);
        let psi = min_psi_of(&sys, &u);
        for (m, p) in min_psi.iter_mut().zip(&psi) {
            *m = m.min(*p);
        }
        write!(cons_csv, "{step},{t:.17e},{dt:.17e}").unwrap();
        for c in 0..nc {
            write!(cons_csv, ",{:.17e}", totals[c]).unwrap();
        }
        for p in &psi {
            write!(cons_csv, ",{p:.17e}").unwrap();
        }
        cons_csv.push('\n');

        if let (Some(dir), true) = (
            output_dir,
            cfg.output_every > 0 && step % cfg.output_every == 0,
        ) {
            snapshot(dir, step, &sys, &mesh, &disc, &u, &cfg.indicator)?;
        }
    }

    let totals_final = crate::adapt::conserved_totals(&disc, &u);
    // per-component scale, falling back to the mass scale for components
    // whose total is (near) zero, e.g. momentum in symmetric problems
    let max_rel_drift = (0..nc)
        .map(|c| {
            (totals_final[c] - totals_initial[c]).abs()
                / totals_initial[c].abs().max(mass_scale)
        })
        .fold(0.0f64, f64::max);
    {
        let psi = min_psi_of(&sys, &u);
        for (m, p) in min_psi.iter_mut().zip(&psi) {
            *m = m.min(*p);
        }
    }

    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("conservation.csv"), &cons_csv)?;
        std::fs::write(dir.join("dofs.csv"), &dofs_csv)?;
        snapshot(dir, step, &sys, &mesh, &disc, &u, &cfg.indicator)?;
    }

    Ok(RunSummary {
        steps: step,
        final_time: t,
        totals_initial,
        totals_final,
        max_rel_drift,
        min_psi,
        initial_dt,
        min_dt,
        final_dofs: disc.dofs.n_dofs,
        final_cells: mesh.n_active(),
        wall_seconds: start.elapsed().as_secs_f64(),
        failure,
    })
}

fn snapshot(
    dir: &Path,
    step: usize,
    sys: &System,
    mesh: &MeshForest,
    disc: &Discretization,
    u: &StateVector,
    ind: &IndicatorConfig,
) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let alpha = extend(disc, &smoothness_indicator(disc, u, ind.kappa, &ind.components), ind.rounds);
    let path: PathBuf = dir.join(format!("snapshot_{step:06}.vtk"));
    write_vtk(&path, mesh, disc, sys, u, &alpha)?;
    Ok(())
}

/// Comparison of the same physics on a uniform mesh at l_max vs. adaptive.
#[derive(Clone, Debug)]
pub struct CompareReport {
    pub adaptive: RunSummary,
    pub uniform: RunSummary,
    pub dof_ratio: f64,
    pub wall_ratio: f64,
}

pub fn compare_uniform_vs_amr(
    cfg: &RunConfig,
    output_dir: Option<&Path>,
) -> Result<CompareReport, RunError> {
    let mut adaptive_cfg = cfg.clone();
    adaptive_cfg.uniform = false;
    let mut uniform_cfg = cfg.clone();
    uniform_cfg.uniform = true;
    let adaptive = run(
        &adaptive_cfg,
        output_dir.map(|d| d.join("adaptive")).as_deref(),
    )?;
    let uniform = run(&uniform_cfg, output_dir.map(|d| d.join("uniform")).as_deref())?;
    let dof_ratio = adaptive.final_dofs as f64 / uniform.final_dofs as f64;
    let wall_ratio = adaptive.wall_seconds / uniform.wall_seconds;
    Ok(CompareReport {
        adaptive,
        uniform,
        dof_ratio,
        wall_ratio,
    })
}

/// Render a human-readable one-paragraph summary (used by the CLI).
pub fn format_summary(s: &RunSummary) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "steps: {}  t_final: {:.6}  wall: {:.2}s",
        s.steps, s.final_time, s.wall_seconds
    )
    .unwrap();
    writeln!(
        out,
        "max relative conservation drift: {:.3e}",
        s.max_rel_drift
    )
    .unwrap();
    writeln!(out, "min admissibility functionals over run: {:?}", s.min_psi).unwrap();
    writeln!(
        out,
        "dt: initial {:.3e}, min {:.3e}",
        s.initial_dt, s.min_dt
    )
    .unwrap();
    writeln!(out, "final cells: {}  final DoFs: {}", s.final_cells, s.final_dofs).unwrap();
    match &s.failure {
        Some(f) => writeln!(out, "FAILED: {f}").unwrap(),
        None => writeln!(out, "completed").unwrap(),
    }
    out
}

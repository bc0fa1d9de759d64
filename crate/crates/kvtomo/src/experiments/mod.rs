//! Phantoms, excitation catalogues, synthetic data and the reconstruction
//! study: one configuration per table cell.

pub mod data;
pub mod output;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{Bounds, CellField, ElectrodeLayout, Excitations, State};
use crate::error::{Error, Result};
use crate::fem::{build_disk_mesh, power_density, CemOperator, FemSpace, Mesh};
use crate::functionals::{
    reduced_forward, Application, CostFunctional, CostOptions, Formulation, ForwardSetup, IatVariant, ObservationData,
    Observations,
};
use crate::solvers::{
    newton_sqp, noise_budget_for, projected_gradient, AlphaRule, CostProblem, GradientConfig, InnerConfig,
    NewtonConfig, SolverReport, Stopping,
};
pub use data::{add_noise, generate_synthetic, mesh_checksum, DataFile, SyntheticData};

/// Constant inclusion in a disk on a constant background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phantom {
    pub background: f64,
    pub inclusion_value: f64,
    pub inclusion_center: [f64; 2],
    pub inclusion_radius: f64,
}

impl Default for Phantom {
    fn default() -> Self {
        Phantom { background: 2.0, inclusion_value: 5.0, inclusion_center: [-0.3, -0.1], inclusion_radius: 0.5 }
    }
}

impl Phantom {
    pub fn validate(&self, bounds: &Bounds) -> Result<()> {
        let inside = |v: f64| v > bounds.lower && v < bounds.upper;
        if !(inside(self.background) && inside(self.inclusion_value)) {
            return Err(Error::Config(format!(
                "phantom values must lie strictly between {} and {}",
                bounds.lower, bounds.upper
            )));
        }
        let c = self.inclusion_center;
        if !(self.inclusion_radius > 0.0) || c[0].hypot(c[1]) + self.inclusion_radius > 1.0 {
            return Err(Error::Config("the inclusion must be a disk of positive radius inside the unit disk".into()));
        }
        Ok(())
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        let c = self.inclusion_center;
        if (p[0] - c[0]).hypot(p[1] - c[1]) < self.inclusion_radius {
            self.inclusion_value
        } else {
            self.background
        }
    }

    /// Values at the element centroids.
    pub fn on(&self, space: &FemSpace) -> CellField {
        space.cell_interpolate(|p| self.value_at(p))
    }

    /// Indicator of the elements whose centroid lies in the inclusion.
    pub fn inclusion_mask(&self, mesh: &Mesh) -> Vec<bool> {
        (0..mesh.num_elements()).map(|e| self.value_at(mesh.centroid(e)) == self.inclusion_value).collect()
    }
}

/// Drive patterns: one of the named cases 1, 2, 4, 28 or explicit 1-based
/// electrode pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExcitationCase {
    Named(usize),
    Pairs(Vec<(usize, usize)>),
}

impl ExcitationCase {
    pub fn build(&self, electrodes: usize) -> Result<Excitations> {
        match self {
            ExcitationCase::Named(n) => excitation_case(*n, electrodes),
            ExcitationCase::Pairs(p) => Excitations::from_pairs(p, electrodes),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            ExcitationCase::Named(n) => *n,
            ExcitationCase::Pairs(p) => p.len(),
        }
    }
}

/// I = 1 drives (1,5); I = 2 adds (3,7); I = 4 adds (2,6), (4,8); I = 28 is
/// every pair k < l in lexicographic order.
pub fn excitation_case(count: usize, electrodes: usize) -> Result<Excitations> {
    Excitations::pattern(count, electrodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSettings {
    pub rings: usize,
    /// refinement level of the data mesh
    pub fine_level: usize,
    /// refinement level of the reconstruction mesh
    pub coarse_level: usize,
    pub electrodes: usize,
    pub coverage: f64,
    pub impedance: f64,
    /// generate the data on the reconstruction mesh itself
    pub inverse_crime: bool,
}

impl Default for MeshSettings {
    fn default() -> Self {
        MeshSettings {
            rings: 4,
            fine_level: 1,
            coarse_level: 0,
            electrodes: 8,
            coverage: 0.5,
            impedance: 0.1,
            inverse_crime: false,
        }
    }
}

impl MeshSettings {
    pub fn layout(&self) -> ElectrodeLayout {
        ElectrodeLayout::equidistant(self.electrodes, self.coverage, self.impedance)
    }
}

/// The Newton method's constants; eta comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSettings {
    pub rule: AlphaRule,
    pub reg_power: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub inner: InnerConfig,
    pub stopping: Stopping,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        let d = NewtonConfig::<State>::default();
        NewtonSettings {
            rule: d.rule,
            reg_power: d.reg_power,
            tau: d.tau,
            max_iters: d.max_iters,
            inner: d.inner,
            stopping: d.stopping,
        }
    }
}

impl NewtonSettings {
    pub fn config(&self, eta: f64) -> NewtonConfig<State> {
        NewtonConfig {
            rule: self.rule.clone(),
            reg_center: None,
            reg_power: self.reg_power,
            tau: self.tau,
            eta,
            max_iters: self.max_iters,
            inner: self.inner.clone(),
            stopping: self.stopping,
            store_iterates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum SolverSettings {
    Gradient(GradientConfig),
    Newton(NewtonSettings),
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings::Gradient(GradientConfig::default())
    }
}

/// One reconstruction: formulation, data case and solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub formulation: Formulation,
    pub excitations: ExcitationCase,
    pub delta: f64,
    pub seed: u64,
    pub mesh: MeshSettings,
    pub phantom: Phantom,
    pub bounds: Bounds,
    pub beta: f64,
    pub variant: IatVariant,
    pub solver: SolverSettings,
    /// timing columns are written as "-"
    pub deterministic: bool,
    pub output: Option<PathBuf>,
    pub emit_png: bool,
    /// observations to load instead of generating them
    pub data_file: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            formulation: Formulation::IatAao,
            excitations: ExcitationCase::Named(1),
            delta: 0.0,
            seed: 0,
            mesh: MeshSettings::default(),
            phantom: Phantom::default(),
            bounds: Bounds::default(),
            beta: 1.0,
            variant: IatVariant::Obs2,
            solver: SolverSettings::default(),
            deterministic: false,
            output: None,
            emit_png: false,
            data_file: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        Bounds::new(self.bounds.lower, self.bounds.upper).map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0, 1), got {}", self.delta)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        let m = &self.mesh;
        if !m.inverse_crime && m.fine_level <= m.coarse_level {
            return Err(Error::Config(format!(
                "fine_level ({}) must exceed coarse_level ({}) unless inverse_crime is set",
                m.fine_level, m.coarse_level
            )));
        }
        m.layout().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.excitations.build(m.electrodes).map_err(|e| Error::Config(e.to_string()))?;
        self.phantom.validate(&self.bounds)?;
        match &self.solver {
            SolverSettings::Gradient(g) => g.validate(),
            SolverSettings::Newton(n) => n.config(0.0).validate(),
        }
    }

    /// Base name of the per-run files.
    pub fn run_name(&self) -> String {
        format!("{}_I{}_delta{}_seed{}", self.formulation, self.excitations.count(), self.delta, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub sigma_final: CellField,
    /// phantom averaged onto the reconstruction mesh
    pub sigma_true: CellField,
    pub l2_error: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub time_per_iteration: f64,
    pub eta: f64,
    pub report: SolverReport<State>,
    pub files: Vec<PathBuf>,
}

/// Reconstruction mesh, data and cost of a configuration.
pub struct Prepared {
    pub mesh: Arc<Mesh>,
    pub setup: Arc<ForwardSetup>,
    pub cost: CostFunctional,
    pub sigma_true: CellField,
    pub eta: f64,
}

fn forward_setup(mesh: Mesh, layout: &ElectrodeLayout, ex: &Excitations) -> Result<Arc<ForwardSetup>> {
    let space = Arc::new(FemSpace::new(Arc::new(mesh))?);
    let cem = Arc::new(CemOperator::new(space, layout.clone())?);
    Ok(Arc::new(ForwardSetup::new(cem, ex.clone())?))
}

/// Red refinement without moving boundary vertices, so that every fine
/// element lies inside its coarse ancestor.
pub fn nested_refinement(coarse: &Mesh, levels: usize) -> Result<Mesh> {
    let mut m = coarse.clone();
    for _ in 0..levels {
        m = m.refine(None)?;
    }
    Ok(m)
}

/// Exact data on the reconstruction mesh itself.
fn same_mesh_data(setup: &ForwardSetup, sigma: &CellField) -> Result<SyntheticData> {
    let space = &setup.space;
    let forward = reduced_forward(setup, sigma)?;
    let power: Vec<CellField> = forward.phi.iter().map(|p| power_density(space, sigma, p)).collect();
    Ok(SyntheticData {
        fine_power: power.clone(),
        power,
        voltages: forward.volt.clone(),
        flux: forward.phi.iter().map(|p| space.gradient_field(p)).collect(),
        sigma_coarse: sigma.clone(),
        forward,
    })
}

/// Exact data of a configuration on its reconstruction mesh.
pub struct Dataset {
    pub setup: Arc<ForwardSetup>,
    pub exact: SyntheticData,
}

/// Builds both meshes and generates the exact data of `cfg` (its noise
/// level and seed are not used).
pub fn exact_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let m = &cfg.mesh;
    let layout = m.layout();
    let ex = cfg.excitations.build(m.electrodes)?;
    let coarse = build_disk_mesh(m.rings, m.coarse_level, &layout).map_err(Error::at_stage("mesh"))?;
    let setup = forward_setup(coarse, &layout, &ex).map_err(Error::at_stage("mesh"))?;
    let exact = if m.inverse_crime {
        same_mesh_data(&setup, &cfg.phantom.on(&setup.space))
    } else {
        let fine = nested_refinement(&setup.space.mesh, m.fine_level - m.coarse_level)
            .and_then(|f| forward_setup(f, &layout, &ex))
            .map_err(Error::at_stage("mesh"))?;
        generate_synthetic(&fine, &setup.space.mesh, &cfg.phantom.on(&fine.space))
    }
    .map_err(Error::at_stage("generate"))?;
    Ok(Dataset { setup, exact })
}

/// Name of the data kind an application observes.
pub fn data_kind(app: Application) -> &'static str {
    match app {
        Application::Iat => "iat-power",
        Application::Eit => "eit-voltage",
        Application::Gwf => "gwf-flux",
    }
}

impl Dataset {
    /// Observations of `app` with multiplicative noise from the stream `seed`.
    pub fn noisy(&self, app: Application, delta: f64, seed: u64) -> ObservationData {
        let mut rng = data::noise_rng(seed);
        match app {
            Application::Iat => {
                let mut h = self.exact.power.clone();
                h.iter_mut().for_each(|f| add_noise(&mut f.values, delta, &mut rng));
                ObservationData::Iat(h)
            }
            Application::Eit => {
                let mut v = self.exact.voltages.clone();
                v.iter_mut().for_each(|f| add_noise(f, delta, &mut rng));
                ObservationData::Eit(v)
            }
            Application::Gwf => {
                let mut g = self.exact.flux.clone();
                for f in g.iter_mut() {
                    for v in f.vectors.iter_mut() {
                        add_noise(v, delta, &mut rng);
                    }
                }
                ObservationData::GwfFlux(g)
            }
        }
    }

    /// The data file of `cfg`'s noisy observations.
    pub fn data_file(&self, cfg: &ExperimentConfig) -> DataFile {
        let app = cfg.formulation.application();
        DataFile {
            kind: data_kind(app).into(),
            mesh_checksum: mesh_checksum(&self.setup.space.mesh),
            delta: cfg.delta,
            seed: cfg.seed,
            rows: observation_rows(&self.noisy(app, cfg.delta, cfg.seed)),
        }
    }
}

pub fn observation_rows(d: &ObservationData) -> Vec<Vec<f64>> {
    match d {
        ObservationData::Iat(h) => h.iter().map(|f| f.values.clone()).collect(),
        ObservationData::Eit(v) => v.clone(),
        ObservationData::GwfFlux(g) => data::flux_rows(g),
        ObservationData::GwfHead { p, .. } => p.iter().map(|f| f.values.clone()).collect(),
    }
}

/// Observations stored in `file`, checked against the configuration and
/// the reconstruction mesh.
pub fn load_observations(file: &DataFile, cfg: &ExperimentConfig, mesh: &Mesh) -> Result<ObservationData> {
    let app = cfg.formulation.application();
    let bad = |m: String| Err(Error::InvalidInput(m));
    if file.kind != data_kind(app) {
        return bad(format!("data kind '{}' does not fit formulation {}", file.kind, cfg.formulation));
    }
    if file.mesh_checksum != mesh_checksum(mesh) {
        return bad("data file was written for a different reconstruction mesh".into());
    }
    if file.delta != cfg.delta || file.seed != cfg.seed {
        return bad(format!(
            "data file holds delta {} seed {}, configuration asks for delta {} seed {}",
            file.delta, file.seed, cfg.delta, cfg.seed
        ));
    }
    Ok(match app {
        Application::Iat => ObservationData::Iat(file.rows.iter().map(|r| CellField { values: r.clone() }).collect()),
        Application::Eit => ObservationData::Eit(file.rows.clone()),
        Application::Gwf => ObservationData::GwfFlux(data::flux_from_rows(&file.rows)),
    })
}

/// Builds meshes, generates (or loads) noisy data and the cost of `cfg`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let ds = exact_dataset(cfg)?;
    let app = cfg.formulation.application();
    let obs = match &cfg.data_file {
        Some(path) => DataFile::read(path)
            .and_then(|f| load_observations(&f, cfg, &ds.setup.space.mesh))
            .map_err(Error::at_stage("load"))?,
        None => ds.noisy(app, cfg.delta, cfg.seed),
    };
    let options = CostOptions { beta: cfg.beta, variant: cfg.variant, bounds: cfg.bounds };
    let setup = ds.setup.clone();
    let cost = CostFunctional::new(cfg.formulation, setup.clone(), Observations { data: obs, delta: cfg.delta }, options)
        .map_err(Error::at_stage("cost"))?;
    let eta = noise_budget_for(&cost, cfg.delta).map_err(Error::at_stage("cost"))?;
    Ok(Prepared { mesh: setup.space.mesh.clone(), setup, cost, sigma_true: ds.exact.sigma_coarse, eta })
}

/// Runs one configured reconstruction from the constant midpoint
/// conductivity and its CEM potentials.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReconstructionResult> {
    let p = prepare(cfg)?;
    let start = Instant::now();
    let problem = CostProblem::new(&p.cost, p.cost.constraints(p.eta));
    let x0 = p.cost.initial_state(cfg.bounds.midpoint()).map_err(Error::at_stage("initialize"))?;
    let report = match &cfg.solver {
        SolverSettings::Gradient(g) => {
            let g = GradientConfig { eta: p.eta, ..g.clone() };
            projected_gradient(&problem, &x0, &g, None)
        }
        SolverSettings::Newton(n) => newton_sqp(&problem, &x0, &n.config(p.eta), None),
    }
    .map_err(Error::at_stage("solve"))?;
    let wall_time = start.elapsed().as_secs_f64();
    let sigma_final = p.cost.sigma_of(&report.final_state).map_err(Error::at_stage("error"))?;
    let diff: Vec<f64> = sigma_final.values.iter().zip(&p.sigma_true.values).map(|(a, b)| a - b).collect();
    let l2_error = p.setup.space.cell_l2_norm(&diff);
    let mut files = Vec::new();
    if let Some(dir) = &cfg.output {
        let name = cfg.run_name();
        let snap = dir.join(format!("{name}.sigma.txt"));
        output::write_snapshot(&snap, &sigma_final).map_err(Error::at_stage("output"))?;
        files.push(snap);
        if cfg.emit_png {
            let png = dir.join(format!("{name}.png"));
            output::write_png(&png, &p.mesh, &sigma_final, &cfg.bounds).map_err(Error::at_stage("output"))?;
            files.push(png);
        }
    }
    let iterations = report.k_star;
    Ok(ReconstructionResult {
        sigma_final,
        sigma_true: p.sigma_true,
        l2_error,
        iterations,
        wall_time,
        time_per_iteration: wall_time / iterations.max(1) as f64,
        eta: p.eta,
        report,
        files,
    })
}

pub const CSV_HEADER: &str = "formulation,I,delta,seed,iterations,l2_error,wall_s,s_per_iter,stop_reason";

/// One table cell; failed runs keep their error in `stop_reason`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub formulation: Formulation,
    pub excitations: usize,
    pub delta: f64,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub l2_error: Option<f64>,
    pub wall_s: Option<f64>,
    pub s_per_iter: Option<f64>,
    pub stop_reason: String,
}

impl TableRow {
    pub fn new(cfg: &ExperimentConfig, outcome: &Result<ReconstructionResult>) -> TableRow {
        let (iterations, l2_error, wall_s, s_per_iter, stop_reason) = match outcome {
            Ok(r) => {
                let timing = !cfg.deterministic;
                (
                    Some(r.iterations),
                    Some(r.l2_error),
                    timing.then_some(r.wall_time),
                    timing.then_some(r.time_per_iteration),
                    r.report.stop_reason.tag().to_string(),
                )
            }
            Err(e) => {
                let stage = match e {
                    Error::Stage { stage, .. } => *stage,
                    _ => "config",
                };
                let msg = e.root().to_string().replace([',', '\n', '"'], ";");
                (None, None, None, None, format!("failed[{stage}]: {msg}"))
            }
        };
        TableRow {
            formulation: cfg.formulation,
            excitations: cfg.excitations.count(),
            delta: cfg.delta,
            seed: cfg.seed,
            iterations,
            l2_error,
            wall_s,
            s_per_iter,
            stop_reason,
        }
    }

    pub fn failed(&self) -> bool {
        self.iterations.is_none()
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.formulation,
            self.excitations,
            self.delta,
            self.seed,
            opt(self.iterations.map(|k| k.to_string())),
            opt(self.l2_error.map(|v| format!("{v:.6e}"))),
            opt(self.wall_s.map(|v| format!("{v:.3}"))),
            opt(self.s_per_iter.map(|v| format!("{v:.3e}"))),
            self.stop_reason
        )
    }

    /// Parses a line written by [`TableRow::csv_line`].
    pub fn parse_csv(line: &str) -> Result<TableRow> {
        let f: Vec<&str> = line.trim_end().splitn(9, ',').collect();
        if f.len() != 9 {
            return Err(Error::Parse(format!("expected 9 columns in '{line}'")));
        }
        let num = |s: &str, what: &str| -> Result<Option<f64>> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Parse(format!("bad {what} '{s}'")))
            }
        };
        let bad = |what: &str, s: &str| Error::Parse(format!("bad {what} '{s}'"));
        Ok(TableRow {
            formulation: f[0].parse()?,
            excitations: f[1].parse().map_err(|_| bad("I", f[1]))?,
            delta: f[2].parse().map_err(|_| bad("delta", f[2]))?,
            seed: f[3].parse().map_err(|_| bad("seed", f[3]))?,
            iterations: if f[4] == "-" { None } else { Some(f[4].parse().map_err(|_| bad("iterations", f[4]))?) },
            l2_error: num(f[5], "l2_error")?,
            wall_s: num(f[6], "wall_s")?,
            s_per_iter: num(f[7], "s_per_iter")?,
            stop_reason: f[8].to_string(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Table> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == CSV_HEADER => {}
            other => return Err(Error::Parse(format!("unexpected table header {other:?}"))),
        }
        Ok(Table { rows: lines.filter(|l| !l.trim().is_empty()).map(TableRow::parse_csv).collect::<Result<_>>()? })
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(TableRow::failed)
    }
}

/// Runs every cell with at most `jobs` cells at a time (0: rayon's default).
/// Failures are recorded in their row.
pub fn run_table(cfgs: &[ExperimentConfig], jobs: usize) -> Result<(Table, Vec<Result<ReconstructionResult>>)> {
    if let Some(first) = cfgs.first() {
        if let Some(c) = cfgs.iter().find(|c| c.formulation != first.formulation) {
            return Err(Error::Config(format!(
                "a table holds one formulation, found {} and {}",
                first.formulation, c.formulation
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<ReconstructionResult>> = pool.install(|| cfgs.par_iter().map(run_experiment).collect());
    let rows = cfgs.iter().zip(&results).map(|(c, r)| TableRow::new(c, r)).collect();
    Ok((Table { rows }, results))
}

/// The I x delta grid of one formulation, rows ordered by I then delta.
pub fn table_grid(base: &ExperimentConfig, cases: &[usize], deltas: &[f64]) -> Vec<ExperimentConfig> {
    cases
        .iter()
        .flat_map(|&i| {
            deltas.iter().map(move |&d| ExperimentConfig { excitations: ExcitationCase::Named(i), delta: d, ..base.clone() })
        })
        .collect()
}

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use kvtomo::conditions::{check_tcc, estimate_sup_norm, tcc_study, ConditionReport, LeastSquares, TccStudy};
use kvtomo::experiments::data::write_atomic;
use kvtomo::experiments::{data_kind, exact_dataset, mesh_checksum, prepare, run_table, Table, TableRow};
use kvtomo::fem::build_disk_mesh;
use kvtomo::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{CliConfig, VerifyProblem};
use crate::manifest::RunManifest;
use crate::Common;

pub const CONFIG_ERROR: u8 = 2;
pub const RUNTIME_FAILURE: u8 = 3;

pub fn exit_code(e: &Error) -> ExitCode {
    match e.root() {
        Error::Config(_) | Error::Parse(_) => ExitCode::from(CONFIG_ERROR),
        _ => ExitCode::from(RUNTIME_FAILURE),
    }
}

fn load(c: &Common) -> Result<CliConfig> {
    CliConfig::load(&c.config)
}

fn data_name(kind: &str, i: usize, delta: f64, seed: u64) -> String {
    format!("{kind}_I{i}_delta{delta}_seed{seed}.txt")
}

pub fn generate(c: &Common) -> Result<ExitCode> {
    let cfg = load(c)?;
    let mut manifest = RunManifest::new("generate", Some(&c.config))?;
    let dir = c.out.join("data");
    let cells = cfg.cells(c.seed);
    manifest.seeds = vec![cells[0].seed];
    let kind = data_kind(cfg.run.formulation.application());
    // one exact dataset per excitation case, shared by its noise levels
    for i in &cfg.run.excitations {
        let group: Vec<_> = cells.iter().filter(|x| x.excitations.count() == *i).collect();
        let ds = exact_dataset(group[0])?;
        manifest.add_mesh(mesh_checksum(&ds.setup.space.mesh));
        for cell in group {
            let path = dir.join(data_name(kind, *i, cell.delta, cell.seed));
            ds.data_file(cell).write(&path)?;
            eprintln!("wrote {}", path.display());
            manifest.add(&path)?;
        }
    }
    let m = manifest.finish(&c.out)?;
    eprintln!("manifest {}", m.display());
    Ok(ExitCode::SUCCESS)
}

pub fn reconstruct(c: &Common) -> Result<ExitCode> {
    let cfg = load(c)?;
    let mut manifest = RunManifest::new("reconstruct", Some(&c.config))?;
    let kind = data_kind(cfg.run.formulation.application());
    let mut cells = cfg.cells(c.seed);
    manifest.seeds = vec![cells[0].seed];
    for cell in cells.iter_mut() {
        cell.output = Some(c.out.join("snapshots"));
        cell.emit_png = c.emit_png;
        if let Some(d) = &cfg.run.data_dir {
            cell.data_file = Some(d.join(data_name(kind, cell.excitations.count(), cell.delta, cell.seed)));
        }
    }
    let (table, results) = run_table(&cells, c.jobs)?;
    let csv = c.out.join("results.csv");
    write_atomic(&csv, table.to_csv().as_bytes())?;
    manifest.add(&csv)?;
    for (row, r) in table.rows.iter().zip(&results) {
        eprintln!("{}", row.csv_line());
        if let Ok(r) = r {
            for f in &r.files {
                manifest.add(f)?;
            }
        }
    }
    let m = &cfg.mesh;
    manifest.add_mesh(mesh_checksum(&build_disk_mesh(m.rings, m.coarse_level, &m.layout())?));
    manifest.finish(&c.out)?;
    println!("{}", csv.display());
    Ok(if table.any_failed() { ExitCode::from(RUNTIME_FAILURE) } else { ExitCode::SUCCESS })
}

/// F(x) = A x - y.
struct Linear {
    a: DMatrix<f64>,
    y: DVector<f64>,
}

impl LeastSquares for Linear {
    type X = DVector<f64>;
    fn residual(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        Ok((&self.a * x - &self.y).as_slice().to_vec())
    }
    fn residual_and_jvp(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.residual(x)?, (&self.a * h).as_slice().to_vec()))
    }
    fn normal_apply(&self, _: &DVector<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.a.transpose() * (&self.a * h))
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.a.transpose() * (&self.a * x - &self.y))
    }
    fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(b)
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum VerifyOutput {
    Study(Box<TccStudy>),
    Linear { tcc: ConditionReport, sup_norm: f64 },
}

pub fn verify(c: &Common) -> Result<ExitCode> {
    let cfg = load(c)?;
    let v = &cfg.verify;
    let mut manifest = RunManifest::new("verify", Some(&c.config))?;
    let seed = c.seed.unwrap_or(v.sampling.seed);
    manifest.seeds = vec![seed];
    let settings = kvtomo::conditions::StudySettings { seed, ..v.sampling.clone() };
    let (out, pass) = match v.problem {
        VerifyProblem::Linear => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n) = (v.linear_rows, v.linear_cols);
            // small integer entries keep every product exact
            let mut int = move || rng.random_range(-4i32..=4) as f64;
            let a = DMatrix::from_fn(m, n, |_, _| int());
            let mut rv = |k: usize| DVector::from_fn(k, |_, _| int());
            let ls = Linear { a, y: rv(m) };
            let pairs: Vec<_> = (0..settings.pairs).map(|_| (rv(n), rv(n))).collect();
            let starts: Vec<_> = pairs.iter().take(settings.sup_restarts.max(1)).cloned().collect();
            let sup_norm = estimate_sup_norm(&ls, &starts, settings.sup_iterations)?;
            let tcc = check_tcc(&ls, &pairs, v.c_tc.unwrap_or(0.0))?;
            eprintln!("linear tcc: worst ratio {:.3e}, pass {}", tcc.worst_ratio, tcc.pass);
            let pass = tcc.pass;
            (VerifyOutput::Linear { tcc, sup_norm }, pass)
        }
        VerifyProblem::Cost => {
            let mut cell = cfg.cells(c.seed).remove(0);
            cell.formulation = v.formulation.unwrap_or(cell.formulation);
            cell.validate()?;
            let p = prepare(&cell)?;
            manifest.add_mesh(mesh_checksum(&p.mesh));
            let center = p.cost.state_from_sigma(&p.sigma_true)?;
            let study = tcc_study(&p.cost, &center, &settings, v.c_tc)?;
            eprintln!(
                "{} tcc: worst ratio {:.6e} vs c_tc {:.6e} ({} violations); chain: {} of {} samples, pass {}",
                cell.formulation,
                study.tcc.worst_ratio,
                study.tcc.claimed_constant,
                study.tcc.violations.len(),
                study.chain.abc1_held,
                study.chain.samples,
                study.chain.pass
            );
            let pass = study.tcc.pass && study.chain.pass;
            (VerifyOutput::Study(Box::new(study)), pass)
        }
    };
    let path = c.out.join("verify.json");
    write_atomic(&path, serde_json::to_string_pretty(&out).expect("reports serialize").as_bytes())?;
    manifest.add(&path)?;
    manifest.finish(&c.out)?;
    println!("{}", path.display());
    if !pass && !v.exploratory {
        eprintln!("condition violated (set verify.exploratory = true to report only)");
        return Ok(ExitCode::from(RUNTIME_FAILURE));
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "-".into())
}

/// One block per formulation with rows (I, delta) and the four result
/// columns.
pub fn format_report(tables: &[Table]) -> String {
    let mut groups: BTreeMap<String, Vec<&TableRow>> = BTreeMap::new();
    for r in tables.iter().flat_map(|t| &t.rows) {
        groups.entry(r.formulation.to_string()).or_default().push(r);
    }
    let mut s = String::new();
    for (f, rows) in groups {
        s.push_str(&format!("{f}\n"));
        s.push_str(&format!(
            "{:>4} {:>6} {:>6} | {:>12} {:>14} {:>10} {:>14} | {}\n",
            "I", "delta", "seed", "iterations", "L2 error", "time [s]", "time/iter [s]", "stop"
        ));
        for r in rows {
            s.push_str(&format!(
                "{:>4} {:>6} {:>6} | {:>12} {:>14} {:>10} {:>14} | {}\n",
                r.excitations,
                r.delta,
                r.seed,
                r.iterations.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                fmt_opt(r.l2_error, |v| format!("{v:.5e}")),
                fmt_opt(r.wall_s, |v| format!("{v:.2}")),
                fmt_opt(r.s_per_iter, |v| format!("{v:.3e}")),
                r.stop_reason
            ));
        }
        s.push('\n');
    }
    s
}

pub fn report(inputs: &[std::path::PathBuf], out: Option<&Path>) -> Result<ExitCode> {
    let tables = inputs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            Table::parse_csv(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let text = format_report(&tables);
    print!("{text}");
    if let Some(dir) = out {
        write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

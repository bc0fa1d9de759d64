//! Sampled checks of the nonlinearity and convexity conditions: the weak
//! tangential cone condition of a least squares forward map, its cost
//! level form, the gradient convexity condition and the two families of
//! (a, b, c) conditions on the quadratic model used by Newton's method.
//! A passing report is evidence on the samples only.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{Bounds, ConstraintSet, NodalField, State};
use crate::error::{Error, Result};
use crate::functionals::CostFunctional;
use crate::solvers::{CostProblem, Problem, SecondOrder, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// weak tangential cone condition of the forward map
    Tcc,
    /// its cost level form |J+ - J - G h - H h^2 / 2| <= c (J+ + J)
    TccCost,
    Convex2,
    WeakTccGrad,
    Abc1,
    Abc2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub sample: usize,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub samples: usize,
    /// largest finite per-sample ratio (tcc) or normalized defect (others)
    pub worst_ratio: f64,
    pub claimed_constant: f64,
    /// every constant of the condition in the order of its definition
    pub constants: Vec<f64>,
    pub violations: Vec<Violation>,
    pub pass: bool,
    /// per-sample ratio or normalized defect
    pub values: Vec<f64>,
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn build(condition: Condition, constants: Vec<f64>, values: Vec<f64>, violations: Vec<Violation>) -> Self {
        let worst_ratio = values.iter().filter(|v| v.is_finite()).fold(0.0_f64, |m, v| m.max(*v));
        ConditionReport {
            condition,
            samples: values.len(),
            worst_ratio,
            claimed_constant: constants.first().copied().unwrap_or(0.0),
            constants,
            pass: violations.is_empty(),
            violations,
            values,
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

fn flag(i: usize, v: f64, detail: impl Into<String>) -> Violation {
    Violation { sample: i, value: v, detail: detail.into() }
}

/// Forward map in least squares form J(x) = 1/2 |F(x) - y|^2.
pub trait LeastSquares: Sync {
    type X: Vector + Send + Sync;
    /// F(x) - y
    fn residual(&self, x: &Self::X) -> Result<Vec<f64>>;
    /// F(x) - y and F'(x) h
    fn residual_and_jvp(&self, x: &Self::X, h: &Self::X) -> Result<(Vec<f64>, Vec<f64>)>;
    /// Riesz representative of F'(x)* F'(x) h
    fn normal_apply(&self, x: &Self::X, h: &Self::X) -> Result<Self::X>;
    /// Riesz representative of F'(x)* (F(x) - y)
    fn gradient(&self, x: &Self::X) -> Result<Self::X>;
    fn inner(&self, a: &Self::X, b: &Self::X) -> f64;
}

impl LeastSquares for CostProblem<'_> {
    type X = State;

    fn residual(&self, x: &State) -> Result<Vec<f64>> {
        let ev = self.cost.evaluate(x)?;
        Ok(self.cost.residuals(&ev).concat())
    }

    fn residual_and_jvp(&self, x: &State, h: &State) -> Result<(Vec<f64>, Vec<f64>)> {
        let ev = self.cost.evaluate(x)?;
        let d = self.cost.jvp(x, &ev, h)?;
        Ok((self.cost.residuals(&ev).concat(), d.concat()))
    }

    fn normal_apply(&self, x: &State, h: &State) -> Result<State> {
        let ev = self.cost.evaluate(x)?;
        self.cost.gauss_newton(x, &ev, h)
    }

    fn gradient(&self, x: &State) -> Result<State> {
        let ev = self.cost.evaluate(x)?;
        self.cost.gradient(x, &ev)
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        Problem::inner(self, a, b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn minus<X: Vector>(a: &X, b: &X) -> X {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d
}

/// Per pair (x, x+): |<F(x+) - F(x) - F'(x)(x+ - x), F(x) - y>| divided by
/// |F(x+) - F(x)| |F(x) - y|, with 0/0 read as 0. Passes when every ratio
/// is at most `c_tc`.
pub fn check_tcc<L: LeastSquares>(ls: &L, pairs: &[(L::X, L::X)], c_tc: f64) -> Result<ConditionReport> {
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|(x, xp)| {
            let (r, d) = ls.residual_and_jvp(x, &minus(xp, x))?;
            let rp = ls.residual(xp)?;
            let diff: Vec<f64> = rp.iter().zip(&r).map(|(a, b)| a - b).collect();
            let rem: Vec<f64> = diff.iter().zip(&d).map(|(a, b)| a - b).collect();
            let num = dot(&rem, &r).abs();
            let den = norm(&diff) * norm(&r);
            Ok(if den == 0.0 { 0.0 } else { num / den })
        })
        .collect::<Result<_>>()?;
    let violations = ratios
        .iter()
        .enumerate()
        .filter(|(_, v)| !(**v <= c_tc))
        .map(|(i, v)| flag(i, *v, if v.is_finite() { "ratio above the constant" } else { "non-finite ratio" }))
        .collect();
    Ok(ConditionReport::build(Condition::Tcc, vec![c_tc], ratios, violations))
}

/// Largest |F'(x)| found by power iteration on F'(x)* F'(x) from the given
/// starting directions at the given points (a lower bound of the sup).
pub fn estimate_sup_norm<L: LeastSquares>(ls: &L, starts: &[(L::X, L::X)], iterations: usize) -> Result<f64> {
    let norms: Vec<f64> = starts
        .par_iter()
        .map(|(x, v0)| {
            let mut v = v0.clone();
            let n = ls.inner(&v, &v).sqrt();
            if n == 0.0 {
                return Ok(0.0);
            }
            v.scale(1.0 / n);
            let mut lam = 0.0;
            for _ in 0..iterations {
                let w = ls.normal_apply(x, &v)?;
                lam = ls.inner(&w, &v).max(0.0);
                let m = ls.inner(&w, &w).sqrt();
                if m == 0.0 {
                    break;
                }
                v = w;
                v.scale(1.0 / m);
            }
            Ok(lam.sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Tangential cone constants of the gradient-field forward map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TccConstant {
    /// (upper - lower) / sampled sup |F'|
    pub c_tc: f64,
    pub sup_norm: f64,
    /// (upper - lower) / sqrt(2 beta): what the remainder estimate itself gives
    pub from_estimate: f64,
}

/// c_tc = (upper - lower) / sup |F'| with the sampled sup.
pub fn gwf_tcc_constant(bounds: &Bounds, sup_norm: f64, beta: f64) -> Result<TccConstant> {
    if !(sup_norm > 0.0 && sup_norm.is_finite()) {
        return Err(Error::InvalidInput(format!("degenerate derivative norm estimate {sup_norm}")));
    }
    let width = bounds.upper - bounds.lower;
    Ok(TccConstant { c_tc: width / sup_norm, sup_norm, from_estimate: width / (2.0 * beta).sqrt() })
}

/// <grad J(x), x - x_true> >= gamma |grad J(x)|^2 - eta at every sample.
pub fn check_convex2<P>(problem: &P, x_true: &P::X, samples: &[P::X], gamma: f64, eta: f64) -> Result<ConditionReport>
where
    P: Problem + Sync,
    P::X: Send + Sync,
{
    let rows: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|x| {
            let (_, g) = problem.value_gradient(x)?;
            let lhs = problem.inner(&g, &minus(x, x_true));
            let rhs = gamma * problem.norm_sq(&g) - eta;
            Ok((lhs, rhs))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.iter().map(|(l, r)| (r - l) / (l.abs() + r.abs()).max(f64::MIN_POSITIVE)).collect();
    let violations = rows
        .iter()
        .enumerate()
        .filter(|(_, (l, r))| !(*l >= *r - 1e-12 * (l.abs() + r.abs())))
        .map(|(i, (l, r))| flag(i, l - r, format!("margin {:.3e}", l - r)))
        .collect();
    Ok(ConditionReport::build(Condition::Convex2, vec![gamma, eta], values, violations))
}

/// The gradient convexity condition for a least squares cost with
/// gamma = 1 - c_tc - kappa. Samples where the residual smallness proviso
/// (1 + c_tc)|F(x) - y| <= 2 sqrt(kappa eta) fails are listed in the notes.
pub fn check_weak_tcc_grad<L: LeastSquares>(
    ls: &L,
    x_true: &L::X,
    samples: &[L::X],
    c_tc: f64,
    kappa: f64,
    eta: f64,
) -> Result<ConditionReport> {
    let gamma = 1.0 - c_tc - kappa;
    let rows: Vec<(f64, f64, bool)> = samples
        .par_iter()
        .map(|x| {
            let (r, d) = ls.residual_and_jvp(x, &minus(x, x_true))?;
            let g = ls.gradient(x)?;
            let lhs = dot(&r, &d);
            let rhs = gamma * ls.inner(&g, &g) - eta;
            let proviso = (1.0 + c_tc) * norm(&r) <= 2.0 * (kappa * eta).sqrt();
            Ok((lhs, rhs, proviso))
        })
        .collect::<Result<_>>()?;
    let values = rows.iter().map(|(l, r, _)| (r - l) / (l.abs() + r.abs()).max(f64::MIN_POSITIVE)).collect();
    let violations = rows
        .iter()
        .enumerate()
        .filter(|(_, (l, r, _))| !(*l >= *r - 1e-12 * (l.abs() + r.abs())))
        .map(|(i, (l, r, p))| flag(i, l - r, format!("margin {:.3e}, proviso {}", l - r, if *p { "holds" } else { "fails" })))
        .collect();
    let mut rep = ConditionReport::build(Condition::WeakTccGrad, vec![gamma, c_tc, kappa, eta], values, violations);
    let off: Vec<String> = rows.iter().enumerate().filter(|(_, r)| !r.2).map(|(i, _)| i.to_string()).collect();
    if !off.is_empty() {
        rep.notes.push(format!("residual proviso fails at samples {}", off.join(",")));
    }
    Ok(rep)
}

/// Model quantities at one sample: J(x), J(x+), J(x_true) and
/// m(h) = G h + 1/2 H h^2 for h = x+ - x and h = x_true - x, plus the
/// directly evaluated left side of abc1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSample {
    pub j: f64,
    pub j_plus: f64,
    pub j_true: f64,
    pub m_plus: f64,
    pub m_true: f64,
    pub abc1_lhs: f64,
}

pub fn model_samples<P>(problem: &P, pairs: &[(P::X, P::X)], x_true: &P::X) -> Result<Vec<ModelSample>>
where
    P: SecondOrder + Sync,
    P::X: Send + Sync,
{
    let j_true = problem.value(x_true)?;
    pairs
        .par_iter()
        .map(|(x, xp)| {
            let model = problem.local_model(x)?;
            let hp = minus(xp, x);
            let ht = minus(x_true, x);
            let hhp = model.hessian_apply(&hp)?;
            let hht = model.hessian_apply(&ht)?;
            let g = model.gradient();
            let m_plus = problem.inner(g, &hp) + 0.5 * problem.inner(&hhp, &hp);
            let m_true = problem.inner(g, &ht) + 0.5 * problem.inner(&hht, &ht);
            let abc1_lhs =
                problem.inner(g, &minus(xp, x_true)) + 0.5 * (problem.inner(&hhp, &hp) - problem.inner(&hht, &ht));
            Ok(ModelSample { j: model.value(), j_plus: problem.value(xp)?, j_true, m_plus, m_true, abc1_lhs })
        })
        .collect()
}

const REL_TOL: f64 = 1e-10;

/// Lower and upper abc2 defects at (x, x+) for constants (la, lb, ua, ub).
fn abc2_defects(s: &ModelSample, c: [f64; 4], plus: bool) -> (f64, f64, f64) {
    let (jp, m) = if plus { (s.j_plus, s.m_plus) } else { (s.j_true, s.m_true) };
    let lower = c[0] * jp - c[1] * s.j - m;
    let upper = m - (c[2] * jp - c[3] * s.j);
    let scale = m.abs() + jp + s.j;
    (lower, upper, scale)
}

/// la J(x+) - lb J(x) <= G h + 1/2 H h^2 <= ua J(x+) - ub J(x) at every pair.
pub fn check_abc2(samples: &[ModelSample], c: [f64; 4]) -> ConditionReport {
    let mut values = Vec::new();
    let mut violations = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let (lo, up, scale) = abc2_defects(s, c, true);
        let worst = lo.max(up);
        values.push(worst / scale.max(f64::MIN_POSITIVE));
        if !(worst <= REL_TOL * scale) {
            violations.push(flag(i, worst, if lo > up { "lower bound fails" } else { "upper bound fails" }));
        }
    }
    ConditionReport::build(Condition::Abc2, c.to_vec(), values, violations)
}

/// G(x+ - x_true) + 1/2 H((x+ - x)^2 - (x - x_true)^2) >= a J(x+) - b J(x) - c J(x_true).
pub fn check_abc1(samples: &[ModelSample], a: f64, b: f64, c: f64) -> ConditionReport {
    let mut values = Vec::new();
    let mut violations = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let rhs = a * s.j_plus - b * s.j - c * s.j_true;
        let defect = rhs - s.abc1_lhs;
        let scale = s.abc1_lhs.abs() + rhs.abs() + s.j_plus + s.j + s.j_true;
        values.push(defect / scale.max(f64::MIN_POSITIVE));
        if !(defect <= REL_TOL * scale) {
            violations.push(flag(i, defect, format!("lhs {:.6e} < rhs {:.6e}", s.abc1_lhs, rhs)));
        }
    }
    ConditionReport::build(Condition::Abc1, vec![a, b, c], values, violations)
}

/// |J(x+) - J(x) - G h - 1/2 H h^2| <= c (J(x+) + J(x)) at every pair.
pub fn check_tcc_cost(samples: &[ModelSample], c: f64) -> ConditionReport {
    let mut values = Vec::new();
    let mut violations = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let rem = (s.j_plus - s.j - s.m_plus).abs();
        let den = s.j_plus + s.j;
        let ratio = if den == 0.0 { if rem == 0.0 { 0.0 } else { f64::INFINITY } } else { rem / den };
        values.push(ratio);
        if !(ratio <= c) {
            violations.push(flag(i, ratio, "remainder above the constant"));
        }
    }
    ConditionReport::build(Condition::TccCost, vec![c], values, violations)
}

/// Sample-by-sample check of tcc(c) => abc2(1-c, 1+c, 1+c, 1-c) =>
/// abc1(1-c, 2c, 1+c). A sample enters when the cost level tcc holds both
/// for (x, x+) and for (x, x_true).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub c: f64,
    pub samples: usize,
    pub tcc_held: usize,
    pub abc2_held: usize,
    pub abc1_held: usize,
    pub failures: Vec<Violation>,
    pub pass: bool,
}

pub fn check_chain(samples: &[ModelSample], c: f64) -> ChainReport {
    let consts = [1.0 - c, 1.0 + c, 1.0 + c, 1.0 - c];
    let holds = |rem: f64, den: f64| rem <= c * den * (1.0 + 1e-12);
    let (mut tcc_held, mut abc2_held, mut abc1_held) = (0, 0, 0);
    let mut failures = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let tp = holds((s.j_plus - s.j - s.m_plus).abs(), s.j_plus + s.j);
        let tt = holds((s.j_true - s.j - s.m_true).abs(), s.j_true + s.j);
        if !(tp && tt) {
            continue;
        }
        tcc_held += 1;
        let ok2 = [true, false].iter().all(|&plus| {
            let (lo, up, scale) = abc2_defects(s, consts, plus);
            lo.max(up) <= REL_TOL * scale
        });
        if ok2 {
            abc2_held += 1;
        } else {
            failures.push(flag(i, 0.0, "tcc holds but abc2 fails"));
            continue;
        }
        let r1 = check_abc1(std::slice::from_ref(s), consts[0], consts[1] - consts[3], consts[2]);
        if r1.pass {
            abc1_held += 1;
        } else {
            failures.push(flag(i, r1.violations[0].value, "abc2 holds but abc1 fails"));
        }
    }
    ChainReport { c, samples: samples.len(), tcc_held, abc2_held, abc1_held, pass: failures.is_empty(), failures }
}

/// Feasible states around `center`: sigma uniform in the box, potentials
/// perturbed by Gaussian nodal vectors rescaled to `radius` times the norm
/// of the corresponding center component (or `radius` when that is 0),
/// then projected.
pub fn sample_states<R: Rng>(
    cost: &CostFunctional,
    constraints: &ConstraintSet,
    center: &State,
    radius: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<State>> {
    let space = cost.space();
    let perturb = |f: &NodalField, rng: &mut R| {
        let mut z = NodalField { values: (0..f.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
        let zn = space.inner_nodal(&z, &z).sqrt();
        let fnorm = space.inner_nodal(f, f).sqrt();
        let s = radius * if fnorm > 0.0 { fnorm } else { 1.0 } / zn;
        z.values.iter_mut().zip(&f.values).for_each(|(v, c)| *v = c + s * *v);
        z
    };
    (0..count)
        .map(|_| {
            let sigma = center.sigma.as_ref().map(|s| crate::base::CellField {
                values: (0..s.len()).map(|_| rng.random_range(constraints.bounds.lower..=constraints.bounds.upper)).collect(),
            });
            let phi = center.phi.iter().map(|f| perturb(f, rng)).collect();
            let psi = center.psi.iter().map(|f| perturb(f, rng)).collect();
            space.project_state(&State { sigma, phi, psi }, constraints)
        })
        .collect()
}

/// Sampling parameters of [`tcc_study`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    pub pairs: usize,
    /// relative size of the potential perturbations
    pub radius: f64,
    pub sup_restarts: usize,
    pub sup_iterations: usize,
    pub seed: u64,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings { pairs: 1000, radius: 0.5, sup_restarts: 50, sup_iterations: 30, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TccStudy {
    pub constant: TccConstant,
    pub tcc: ConditionReport,
    /// cost level remainders of every pair
    pub tcc_cost: ConditionReport,
    pub chain: ChainReport,
}

/// Samples feasible pairs around `center`, estimates sup |F'| from
/// `sup_restarts` power iterations and checks the tangential cone
/// condition against `c_tc` (the gradient-field constant when `None`),
/// then the implication chain at the largest measured cost level constant.
pub fn tcc_study(cost: &CostFunctional, center: &State, settings: &StudySettings, c_tc: Option<f64>) -> Result<TccStudy> {
    use rand::SeedableRng;
    let cons = cost.constraints(0.0);
    let p = CostProblem::new(cost, cons.clone());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(settings.seed);
    let xs = sample_states(cost, &cons, center, settings.radius, 2 * settings.pairs, &mut rng)?;
    let pairs: Vec<(State, State)> = xs.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    let starts: Vec<(State, State)> = pairs.iter().take(settings.sup_restarts.max(1)).cloned().collect();
    let sup = estimate_sup_norm(&p, &starts, settings.sup_iterations)?;
    let constant = gwf_tcc_constant(&cons.bounds, sup, cost.options.beta)?;
    let mut tcc = check_tcc(&p, &pairs, c_tc.unwrap_or(constant.c_tc))?;
    tcc.notes.push(format!("sampled sup |F'| = {sup:.6e}; remainder estimate constant {:.6e}", constant.from_estimate));
    let samples = model_samples(&p, &pairs, center)?;
    let level = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a.abs() / b };
    let ct = samples
        .iter()
        .map(|m| level(m.j_plus - m.j - m.m_plus, m.j_plus + m.j).max(level(m.j_true - m.j - m.m_true, m.j_true + m.j)))
        .fold(0.0, f64::max);
    let tcc_cost = check_tcc_cost(&samples, ct);
    let chain = check_chain(&samples, ct);
    Ok(TccStudy { constant, tcc, tcc_cost, chain })
}

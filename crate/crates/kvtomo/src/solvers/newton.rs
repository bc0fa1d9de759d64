use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{at_iteration, check_finite, IterRecord, LocalModel, Problem, Progress, SecondOrder, SolverReport, StopReason, Stopping, Vector};
use crate::base::State;
use crate::error::{Error, Result};

/// Bracketing and bisection parameters of the a posteriori choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosterioriRule {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// first trial value; later iterations start from the previous alpha
    pub alpha_init: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub max_bisect: usize,
}

impl Default for PosterioriRule {
    fn default() -> Self {
        PosterioriRule { sigma_lo: 0.7, sigma_hi: 0.9, alpha_init: 1.0, alpha_min: 1e-12, alpha_max: 1e12, max_bisect: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaRule {
    APriori { alpha0: f64, theta: f64 },
    APosteriori(PosterioriRule),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    /// relative first-order tolerance
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig { tol: 1e-8, max_iters: 10_000 }
    }
}

/// Newton configuration. `reg_center` defaults to the starting point.
#[derive(Clone, Debug)]
pub struct NewtonConfig<X = State> {
    pub rule: AlphaRule,
    pub reg_center: Option<X>,
    /// R(x) = |x - x*|^p / p
    pub reg_power: f64,
    pub tau: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub inner: InnerConfig,
    pub stopping: Stopping,
    pub store_iterates: bool,
}

impl<X> Default for NewtonConfig<X> {
    fn default() -> Self {
        NewtonConfig {
            rule: AlphaRule::APriori { alpha0: 1.0, theta: 0.5 },
            reg_center: None,
            reg_power: 2.0,
            tau: 1.5,
            eta: 0.0,
            max_iters: 50,
            inner: InnerConfig::default(),
            stopping: Stopping::Cost,
            store_iterates: false,
        }
    }
}

impl<X> NewtonConfig<X> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("newton config: {m}")));
        match &self.rule {
            AlphaRule::APriori { alpha0, theta } => {
                if !(*alpha0 > 0.0 && alpha0.is_finite()) {
                    return bad("alpha0 must be positive");
                }
                if !(*theta > 0.0 && *theta < 1.0) {
                    return bad("theta must lie in (0,1)");
                }
            }
            AlphaRule::APosteriori(r) => {
                if !(0.0 < r.sigma_lo && r.sigma_lo < r.sigma_hi && r.sigma_hi < 1.0) {
                    return bad("need 0 < sigma_lo < sigma_hi < 1");
                }
                if !(0.0 < r.alpha_min && r.alpha_min <= r.alpha_init && r.alpha_init <= r.alpha_max && r.alpha_max.is_finite()) {
                    return bad("need 0 < alpha_min <= alpha_init <= alpha_max < inf");
                }
            }
        }
        if !(self.reg_power >= 1.0 && self.reg_power.is_finite()) {
            return bad("reg_power must be >= 1");
        }
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return bad("tau must be > 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and >= 0");
        }
        if !(self.inner.tol > 0.0 && self.inner.max_iters > 0) {
            return bad("inner tolerance and budget must be positive");
        }
        Ok(())
    }

    /// Constraints of the convergence results that this configuration
    /// violates, for costs whose model constants are (1, 1, 1).
    pub fn theorem_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let AlphaRule::APosteriori(r) = &self.rule {
            if r.sigma_lo <= 1.0 / self.tau {
                out.push(format!("sigma_lo = {} <= 1/tau = {}", r.sigma_lo, 1.0 / self.tau));
            }
        }
        if self.reg_power != 2.0 {
            out.push(format!("reg_power = {} (the rates assume p = 2)", self.reg_power));
        }
        out
    }
}

/// alpha_k = alpha0 theta^k
pub fn alpha_a_priori(k: usize, alpha0: f64, theta: f64) -> f64 {
    alpha0 * theta.powi(k as i32)
}

/// Finds alpha with sigma_lo <= sigma(alpha) <= sigma_hi for a
/// nondecreasing `sigma`: bracketing by factors of 10 from `alpha_start`,
/// then bisection in log alpha. Returns the first admissible sample.
pub fn alpha_a_posteriori<F>(mut sigma: F, rule: &PosterioriRule, alpha_start: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let inside = |s: f64| s >= rule.sigma_lo && s <= rule.sigma_hi;
    let fail = |samples: &[(f64, f64)], why: &str| {
        let list: Vec<String> = samples.iter().map(|(a, s)| format!("({a:.3e}, {s:.6})")).collect();
        Err(Error::Bracketing(format!(
            "{why}; target [{}, {}], samples (alpha, sigma): {}",
            rule.sigma_lo,
            rule.sigma_hi,
            list.join(" ")
        )))
    };
    let mut a = alpha_start.clamp(rule.alpha_min, rule.alpha_max);
    let mut s = sigma(a)?;
    samples.push((a, s));
    if !s.is_finite() {
        return fail(&samples, "non-finite sigma");
    }
    if inside(s) {
        return Ok((a, s));
    }
    let (mut lo, mut hi);
    if s > rule.sigma_hi {
        hi = a;
        loop {
            a /= 10.0;
            if a < rule.alpha_min {
                return fail(&samples, "no alpha above alpha_min reaches sigma_hi");
            }
            s = sigma(a)?;
            samples.push((a, s));
            if inside(s) {
                return Ok((a, s));
            }
            if s < rule.sigma_lo {
                lo = a;
                break;
            }
            hi = a;
        }
    } else {
        lo = a;
        loop {
            a *= 10.0;
            if a > rule.alpha_max {
                return fail(&samples, "no alpha below alpha_max reaches sigma_lo");
            }
            s = sigma(a)?;
            samples.push((a, s));
            if inside(s) {
                return Ok((a, s));
            }
            if s > rule.sigma_hi {
                hi = a;
                break;
            }
            lo = a;
        }
    }
    for _ in 0..rule.max_bisect {
        a = (lo * hi).sqrt();
        s = sigma(a)?;
        samples.push((a, s));
        if inside(s) {
            return Ok((a, s));
        }
        if s < rule.sigma_lo {
            lo = a;
        } else {
            hi = a;
        }
    }
    fail(&samples, "bisection budget exhausted")
}

/// min over the admissible set of Q_k(x) + alpha R(x), with
/// Q_k(x) = J_k + <g, x - x_k> + 1/2 <H (x - x_k), x - x_k> and
/// R(x) = |x - x*|^p / p.
pub struct Subproblem<'a, P: Problem> {
    pub problem: &'a P,
    pub model: &'a dyn LocalModel<P::X>,
    pub xk: &'a P::X,
    pub center: &'a P::X,
    pub power: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerInfo {
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
}

impl<P: Problem> Subproblem<'_, P> {
    fn diff(&self, x: &P::X, y: &P::X) -> P::X {
        let mut d = x.clone();
        d.axpy(-1.0, y);
        d
    }

    /// Q_k at x given hd = H (x - x_k).
    fn model_with(&self, x: &P::X, hd: &P::X) -> f64 {
        let d = self.diff(x, self.xk);
        self.model.value() + self.problem.inner(self.model.gradient(), &d) + 0.5 * self.problem.inner(hd, &d)
    }

    pub fn model_value(&self, x: &P::X) -> Result<f64> {
        let hd = self.model.hessian_apply(&self.diff(x, self.xk))?;
        Ok(self.model_with(x, &hd))
    }

    pub fn regularizer(&self, x: &P::X) -> f64 {
        self.problem.norm_sq(&self.diff(x, self.center)).sqrt().powf(self.power) / self.power
    }

    fn regularizer_gradient(&self, x: &P::X) -> P::X {
        let mut d = self.diff(x, self.center);
        let n = self.problem.norm_sq(&d).sqrt();
        let f = if n > 0.0 { n.powf(self.power - 2.0) } else { 0.0 };
        d.scale(f);
        d
    }

    /// R(z) - R(y) - <grad R(y), s> with s = z - y.
    fn bregman(&self, z: &P::X, y: &P::X, s: &P::X) -> f64 {
        if self.power == 2.0 {
            0.5 * self.problem.norm_sq(s)
        } else {
            self.regularizer(z) - self.regularizer(y) - self.problem.inner(&self.regularizer_gradient(y), s)
        }
    }

    fn objective_gradient(&self, alpha: f64, x: &P::X, hd: &P::X) -> P::X {
        let mut g = self.model.gradient().clone();
        g.axpy(1.0, hd);
        g.axpy(alpha, &self.regularizer_gradient(x));
        g
    }

    /// Power iteration estimate of |H|.
    fn hessian_norm(&self) -> Result<f64> {
        let mut v = self.model.gradient().clone();
        let mut n = self.problem.norm_sq(&v).sqrt();
        if n == 0.0 {
            v = self.diff(self.xk, self.center);
            n = self.problem.norm_sq(&v).sqrt();
        }
        if n == 0.0 {
            return Ok(1.0);
        }
        v.scale(1.0 / n);
        let mut lam = 0.0;
        for _ in 0..10 {
            let w = self.model.hessian_apply(&v)?;
            let m = self.problem.norm_sq(&w).sqrt();
            if m == 0.0 {
                return Ok(lam);
            }
            lam = m;
            v = w;
            v.scale(1.0 / m);
        }
        Ok(lam)
    }
}

/// Accelerated projected gradient (with adaptive restart and backtracking)
/// on the strongly convex subproblem, started at x_k.
pub fn solve_subproblem<P: Problem>(sub: &Subproblem<P>, alpha: f64, inner: &InnerConfig) -> Result<(P::X, InnerInfo)> {
    let p = sub.problem;
    let mut x = p.project(sub.xk)?;
    let mut hx = sub.model.hessian_apply(&sub.diff(&x, sub.xk))?;
    let g0 = sub.objective_gradient(alpha, sub.xk, &sub.model.hessian_apply(&sub.diff(sub.xk, sub.xk))?);
    let scale = p.norm_sq(&g0).sqrt().max(p.norm_sq(sub.model.gradient()).sqrt());
    let tolerance = inner.tol * scale.max(f64::MIN_POSITIVE);
    let mut lip = 1.1 * (sub.hessian_norm()? + alpha);
    if !(lip > 0.0) {
        lip = 1.0;
    }
    let (mut x_prev, mut hx_prev) = (x.clone(), hx.clone());
    let mut t = 1.0_f64;
    let mut beta = 0.0;
    let mut residual = f64::INFINITY;
    for it in 0..inner.max_iters {
        let mut y = x.clone();
        y.axpy(beta, &sub.diff(&x, &x_prev));
        let mut hy = hx.clone();
        hy.axpy(beta, &sub.diff(&hx, &hx_prev));
        let gy = sub.objective_gradient(alpha, &y, &hy);
        let (z, hz, step) = loop {
            let mut trial = y.clone();
            trial.axpy(-1.0 / lip, &gy);
            let z = p.project(&trial)?;
            let hz = sub.model.hessian_apply(&sub.diff(&z, sub.xk))?;
            let step = sub.diff(&z, &y);
            // Phi(z) - Phi(y) - <grad Phi(y), s> <= L/2 |s|^2 without forming Phi
            let s2 = p.norm_sq(&step);
            let curv = 0.5 * p.inner(&sub.diff(&hz, &hy), &step) + alpha * sub.bregman(&z, &y, &step);
            if curv <= 0.5 * lip * s2 * (1.0 + 1e-12) {
                break (z, hz, step);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::Solver("inner solver: step size underflow".into()));
            }
        };
        residual = lip * p.norm_sq(&step).sqrt();
        if !residual.is_finite() {
            return Err(Error::NonFinite("inner solver residual".into()));
        }
        if residual <= tolerance {
            return Ok((z, InnerInfo { iterations: it + 1, residual, tolerance }));
        }
        let restart = p.inner(&step, &sub.diff(&z, &x)) < 0.0;
        let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        beta = if restart { 0.0 } else { (t - 1.0) / t_next };
        t = t_next;
        x_prev = std::mem::replace(&mut x, z);
        hx_prev = std::mem::replace(&mut hx, hz);
    }
    Err(Error::Solver(format!(
        "inner solver did not converge in {} iterations (alpha = {alpha:.3e}, residual {residual:.3e} > {tolerance:.3e})",
        inner.max_iters
    )))
}

/// Newton type iteration x_{k+1} = argmin Q_k + alpha_k R over the
/// admissible set, stopped by the discrepancy principle.
pub fn newton_sqp<P: SecondOrder>(
    problem: &P,
    x0: &P::X,
    cfg: &NewtonConfig<P::X>,
    mut progress: Progress,
) -> Result<SolverReport<P::X>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut x = problem.project(x0).map_err(|e| at_iteration(0, e))?;
    let center = match &cfg.reg_center {
        Some(c) => problem.project(c).map_err(|e| at_iteration(0, e))?,
        None => x.clone(),
    };
    let mut report = SolverReport::new(&x, cfg.store_iterates);
    let mut alpha_prev = match &cfg.rule {
        AlphaRule::APosteriori(r) => r.alpha_init,
        AlphaRule::APriori { alpha0, .. } => *alpha0,
    };
    let mut last_fallback = false;
    let mut k = 0;
    loop {
        let model = problem.local_model(&x).map_err(|e| at_iteration(k, e))?;
        let value = model.value();
        check_finite(k, "cost", value)?;
        let grad_sq = problem.norm_sq(model.gradient());
        check_finite(k, "gradient norm", grad_sq)?;
        report.cost_history.push(value);
        report.gradnorm_history.push(grad_sq);
        if let Some(it) = report.iterates.as_mut() {
            it.push(x.clone());
        }
        let measured = match cfg.stopping {
            Stopping::Gradient => grad_sq,
            Stopping::Cost => value,
        };
        let mut reason = if measured <= cfg.tau * cfg.eta {
            Some(StopReason::Discrepancy)
        } else if k >= cfg.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        let mut next = None;
        if reason.is_none() {
            let sub = Subproblem { problem, model: model.as_ref(), xk: &x, center: &center, power: cfg.reg_power };
            match &cfg.rule {
                AlphaRule::APriori { alpha0, theta } => {
                    let alpha = alpha_a_priori(k, *alpha0, *theta);
                    let (xn, _) = solve_subproblem(&sub, alpha, &cfg.inner).map_err(|e| at_iteration(k, e))?;
                    next = Some((alpha, xn));
                    last_fallback = false;
                }
                AlphaRule::APosteriori(rule) => {
                    let q_center = sub.model_value(&center).map_err(|e| at_iteration(k, e))?;
                    if q_center / value > rule.sigma_lo {
                        let mut last: Option<(f64, P::X)> = None;
                        let (alpha, _) = alpha_a_posteriori(
                            |a| {
                                let (xa, _) = solve_subproblem(&sub, a, &cfg.inner)?;
                                let q = sub.model_value(&xa)?;
                                last = Some((a, xa));
                                Ok(q / value)
                            },
                            rule,
                            alpha_prev,
                        )
                        .map_err(|e| at_iteration(k, e))?;
                        let (a, xn) = last.expect("at least one sample");
                        debug_assert_eq!(a, alpha);
                        alpha_prev = alpha;
                        next = Some((alpha, xn));
                        last_fallback = false;
                    } else if last_fallback {
                        reason = Some(StopReason::FallbackToCenter);
                    } else {
                        report.fallbacks += 1;
                        last_fallback = true;
                        next = Some((f64::INFINITY, center.clone()));
                    }
                }
            }
        }
        let alpha = next.as_ref().map_or(0.0, |n| n.0);
        report.alpha_history.push(alpha);
        report.step_history.push(0.0);
        if let Some(sink) = progress.as_mut() {
            sink(&IterRecord { k, cost: value, grad_sq, step: alpha, elapsed_s: start.elapsed().as_secs_f64() });
        }
        drop(model);
        let Some((_, xn)) = next else {
            report.stop_reason = reason.unwrap_or(StopReason::MaxIters);
            break;
        };
        x = xn;
        k += 1;
    }
    report.k_star = k;
    report.final_state = x;
    Ok(report)
}

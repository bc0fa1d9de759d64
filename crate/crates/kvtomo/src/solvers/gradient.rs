use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{at_iteration, check_finite, IterRecord, Problem, Progress, SolverReport, StopReason, Stopping, Vector};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    pub armijo_shrink: f64,
    pub armijo_slope: f64,
    pub tau: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub eps_mu: f64,
    pub stopping: Stopping,
    pub store_iterates: bool,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            mu_min: 1e-10,
            mu_max: 1e4,
            armijo_shrink: 0.5,
            armijo_slope: 1e-4,
            tau: 1.5,
            eta: 0.0,
            max_iters: 1000,
            eps_mu: 1e-10,
            stopping: Stopping::Gradient,
            store_iterates: false,
        }
    }
}

impl GradientConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gradient config: {m}")));
        if !(self.mu_min > 0.0 && self.mu_min <= self.mu_max && self.mu_max.is_finite()) {
            return bad("need 0 < mu_min <= mu_max < inf");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("armijo_shrink must lie in (0,1)");
        }
        if !(self.armijo_slope > 0.0 && self.armijo_slope < 1.0) {
            return bad("armijo_slope must lie in (0,1)");
        }
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return bad("tau must be > 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and >= 0");
        }
        if !(self.eps_mu > 0.0) {
            return bad("eps_mu must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum ArmijoOutcome<X> {
    Accepted { mu: f64, x_next: X, value_next: f64 },
    Stagnation { last_mu: f64 },
}

/// Projected backtracking from the trial step `mu`: returns the first
/// x_next = P(x - mu g) with
/// J(x_next) <= J(x) - slope <g, x - x_next>.
pub fn armijo_step<P: Problem>(
    problem: &P,
    x: &P::X,
    value: f64,
    g: &P::X,
    mu: f64,
    cfg: &GradientConfig,
) -> Result<ArmijoOutcome<P::X>> {
    let floor = cfg.mu_min.max(cfg.eps_mu);
    let mut mu = mu.min(cfg.mu_max);
    let mut last_mu = mu;
    while mu >= floor {
        last_mu = mu;
        let mut trial = x.clone();
        trial.axpy(-mu, g);
        let x_next = problem.project(&trial)?;
        let mut step = x.clone();
        step.axpy(-1.0, &x_next);
        let descent = problem.inner(g, &step);
        if descent <= 0.0 {
            return Ok(ArmijoOutcome::Stagnation { last_mu: mu });
        }
        let value_next = problem.value(&x_next)?;
        if value_next.is_finite() && value_next <= value - cfg.armijo_slope * descent {
            return Ok(ArmijoOutcome::Accepted { mu, x_next, value_next });
        }
        mu *= cfg.armijo_shrink;
    }
    Ok(ArmijoOutcome::Stagnation { last_mu })
}

/// Projected gradient iteration x_{k+1} = P(x_k - mu_k grad J(x_k)) with
/// Armijo steps, stopped by the discrepancy principle.
pub fn projected_gradient<P: Problem>(
    problem: &P,
    x0: &P::X,
    cfg: &GradientConfig,
    mut progress: Progress,
) -> Result<SolverReport<P::X>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut x = problem.project(x0).map_err(|e| at_iteration(0, e))?;
    let mut report = SolverReport::new(&x, cfg.store_iterates);
    let (mut value, mut g) = problem.value_gradient(&x).map_err(|e| at_iteration(0, e))?;
    let mut mu_prev = 0.5 * cfg.mu_max;
    let mut k = 0;
    loop {
        check_finite(k, "cost", value)?;
        let grad_sq = problem.norm_sq(&g);
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
        let stop = if measured <= cfg.tau * cfg.eta {
            Some(StopReason::Discrepancy)
        } else if k >= cfg.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        let mut next = None;
        let reason = match stop {
            Some(r) => Some(r),
            None => {
                let trial = (2.0 * mu_prev).min(cfg.mu_max);
                match armijo_step(problem, &x, value, &g, trial, cfg).map_err(|e| at_iteration(k, e))? {
                    ArmijoOutcome::Accepted { mu, x_next, .. } => {
                        next = Some((mu, x_next));
                        None
                    }
                    ArmijoOutcome::Stagnation { .. } => Some(StopReason::Stagnation),
                }
            }
        };
        let mu = next.as_ref().map_or(0.0, |n| n.0);
        report.step_history.push(mu);
        report.alpha_history.push(0.0);
        if let Some(sink) = progress.as_mut() {
            sink(&IterRecord { k, cost: value, grad_sq, step: mu, elapsed_s: start.elapsed().as_secs_f64() });
        }
        let Some((mu, x_next)) = next else {
            report.stop_reason = reason.unwrap_or(StopReason::MaxIters);
            break;
        };
        x = x_next;
        k += 1;
        let (v, gr) = problem.value_gradient(&x).map_err(|e| at_iteration(k, e))?;
        value = v;
        g = gr;
        mu_prev = mu;
    }
    report.k_star = k;
    report.final_state = x;
    Ok(report)
}

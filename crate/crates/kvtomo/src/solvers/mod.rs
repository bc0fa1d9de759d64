//! Projected gradient method with Armijo backtracking and the SQP type
//! Newton method with a priori / a posteriori regularization parameters.
//! Both work on any [`Problem`]: the PDE costs through [`CostProblem`],
//! small dense test problems through [`QuadraticProblem`].

mod gradient;
mod newton;
mod problems;

use serde::{Deserialize, Serialize};

use crate::base::State;
use crate::error::{Error, Result};

pub use gradient::{armijo_step, projected_gradient, ArmijoOutcome, GradientConfig};
pub use newton::{
    alpha_a_posteriori, alpha_a_priori, newton_sqp, solve_subproblem, AlphaRule, InnerConfig, InnerInfo, NewtonConfig,
    PosterioriRule, Subproblem,
};
pub use problems::{noise_budget_for, CostProblem, QuadraticProblem};

/// Vector operations needed by the solvers.
pub trait Vector: Clone {
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);
}

impl Vector for State {
    fn axpy(&mut self, a: f64, x: &Self) {
        State::axpy(self, a, x)
    }
    fn scale(&mut self, a: f64) {
        State::scale(self, a)
    }
}

impl Vector for nalgebra::DVector<f64> {
    fn axpy(&mut self, a: f64, x: &Self) {
        nalgebra::DVector::axpy(self, a, x, 1.0)
    }
    fn scale(&mut self, a: f64) {
        *self *= a;
    }
}

/// A cost on a Hilbert space with a projection onto the admissible set.
pub trait Problem {
    type X: Vector;
    fn value(&self, x: &Self::X) -> Result<f64>;
    /// Value and Riesz gradient.
    fn value_gradient(&self, x: &Self::X) -> Result<(f64, Self::X)>;
    fn inner(&self, a: &Self::X, b: &Self::X) -> f64;
    fn project(&self, x: &Self::X) -> Result<Self::X>;

    fn norm_sq(&self, a: &Self::X) -> f64 {
        self.inner(a, a)
    }

    fn distance_sq(&self, a: &Self::X, b: &Self::X) -> f64 {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        self.norm_sq(&d)
    }
}

/// First and second order information at a point: J(x_k), the Riesz
/// gradient and the (symmetric, positive semidefinite) Hessian model.
pub trait LocalModel<X> {
    fn value(&self) -> f64;
    fn gradient(&self) -> &X;
    /// Riesz representative of H h.
    fn hessian_apply(&self, h: &X) -> Result<X>;
}

pub trait SecondOrder: Problem {
    fn local_model<'a>(&'a self, x: &Self::X) -> Result<Box<dyn LocalModel<Self::X> + 'a>>;
}

/// Which discrepancy principle stops the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stopping {
    /// |grad J(x_k)|^2 <= tau eta
    Gradient,
    /// J(x_k) <= tau eta
    Cost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Discrepancy,
    MaxIters,
    Stagnation,
    FallbackToCenter,
}

impl StopReason {
    pub fn tag(self) -> &'static str {
        match self {
            StopReason::Discrepancy => "discrepancy",
            StopReason::MaxIters => "max-iters",
            StopReason::Stagnation => "stagnation",
            StopReason::FallbackToCenter => "fallback-to-center",
        }
    }
}

/// One record per iterate, streamed to a caller supplied sink.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub cost: f64,
    pub grad_sq: f64,
    /// step size (gradient method) or regularization parameter (Newton)
    /// used to leave x_k; 0 for the final iterate
    pub step: f64,
    pub elapsed_s: f64,
}

/// Histories are indexed by k = 0..=k_star and share their length.
#[derive(Clone, Debug)]
pub struct SolverReport<X> {
    pub iterates: Option<Vec<X>>,
    pub cost_history: Vec<f64>,
    pub gradnorm_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub alpha_history: Vec<f64>,
    pub stop_reason: StopReason,
    pub k_star: usize,
    pub final_state: X,
    /// Newton steps that fell back to the regularization center
    pub fallbacks: usize,
}

impl<X> SolverReport<X> {
    fn new(x0: &X, store: bool) -> Self
    where
        X: Clone,
    {
        SolverReport {
            iterates: store.then(Vec::new),
            cost_history: Vec::new(),
            gradnorm_history: Vec::new(),
            step_history: Vec::new(),
            alpha_history: Vec::new(),
            stop_reason: StopReason::MaxIters,
            k_star: 0,
            final_state: x0.clone(),
            fallbacks: 0,
        }
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().unwrap_or(&f64::NAN)
    }
}

/// Sink for per-iteration records.
pub type Progress<'a> = Option<&'a mut dyn FnMut(&IterRecord)>;

fn at_iteration(k: usize, e: Error) -> Error {
    match e {
        Error::Bracketing(m) => Error::Bracketing(format!("iteration {k}: {m}")),
        other => Error::Solver(format!("iteration {k}: {other}")),
    }
}

fn check_finite(k: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at iteration {k} ({v})")))
    }
}

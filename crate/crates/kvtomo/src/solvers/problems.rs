use nalgebra::{DMatrix, DVector};

use super::{LocalModel, Problem, SecondOrder};
use crate::base::{noise_budget, ConstraintSet, State};
use crate::error::{Error, Result};
use crate::functionals::{quadratic_model_at, Application, CostFunctional, ObservationData, QuadraticModel, Shape};

/// A discretized cost with its admissible set.
pub struct CostProblem<'a> {
    pub cost: &'a CostFunctional,
    pub constraints: ConstraintSet,
}

impl<'a> CostProblem<'a> {
    pub fn new(cost: &'a CostFunctional, constraints: ConstraintSet) -> Self {
        CostProblem { cost, constraints }
    }
}

impl Problem for CostProblem<'_> {
    type X = State;

    fn value(&self, x: &State) -> Result<f64> {
        self.cost.value(x)
    }

    fn value_gradient(&self, x: &State) -> Result<(f64, State)> {
        let ev = self.cost.evaluate(x)?;
        let g = self.cost.gradient(x, &ev)?;
        Ok((ev.value, g))
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        self.cost.space().inner_state(a, b)
    }

    fn project(&self, x: &State) -> Result<State> {
        self.cost.space().project_state(x, &self.constraints)
    }
}

impl LocalModel<State> for QuadraticModel<'_> {
    fn value(&self) -> f64 {
        self.value
    }
    fn gradient(&self) -> &State {
        &self.gradient
    }
    fn hessian_apply(&self, h: &State) -> Result<State> {
        QuadraticModel::hessian_apply(self, h)
    }
}

impl SecondOrder for CostProblem<'_> {
    fn local_model<'b>(&'b self, x: &State) -> Result<Box<dyn LocalModel<State> + 'b>> {
        Ok(Box::new(quadratic_model_at(self.cost, x)?))
    }
}

/// Noise budget of a cost for relative noise level `delta`: the squared
/// data norm through [`noise_budget`], times the weight of the misfit term.
pub fn noise_budget_for(cost: &CostFunctional, delta: f64) -> Result<f64> {
    let beta = if cost.formulation.shape() == Shape::Reduced { 1.0 } else { cost.options.beta };
    let base = noise_budget(cost.data_sq_norm(), delta)?;
    let factor = match (&cost.observations.data, cost.formulation.application()) {
        // the flux misfit has no factor 1/2
        (ObservationData::GwfFlux(_), Application::Gwf) => 2.0,
        _ => 1.0,
    };
    Ok(beta * factor * base)
}

/// J(x) = f + g.x + 1/2 x.Hx on the box [lower, upper] with the Euclidean
/// inner product.
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub f: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QuadraticProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, f: f64, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n || lower.len() != n || upper.len() != n {
            return Err(Error::InvalidInput("quadratic problem dimensions do not match".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidInput("empty box".into()));
        }
        Ok(QuadraticProblem { h, g, f, lower, upper })
    }

    /// 1/2 |Ax - b|^2 on a box.
    pub fn from_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::InvalidInput("matrix and data sizes do not match".into()));
        }
        let h = a.transpose() * a;
        let g = -(a.transpose() * b);
        Self::new(h, g, 0.5 * b.norm_squared(), lower, upper)
    }

    pub fn unbounded(h: DMatrix<f64>, g: DVector<f64>, f: f64) -> Result<Self> {
        let n = g.len();
        Self::new(h, g, f, DVector::from_element(n, f64::NEG_INFINITY), DVector::from_element(n, f64::INFINITY))
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Spectral norm of H.
    pub fn hessian_norm(&self) -> f64 {
        let e = nalgebra::SymmetricEigen::new(self.h.clone());
        e.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Problem for QuadraticProblem {
    type X = DVector<f64>;

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.f + self.g.dot(x) + 0.5 * x.dot(&(&self.h * x)))
    }

    fn value_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let hx = &self.h * x;
        Ok((self.f + self.g.dot(x) + 0.5 * x.dot(&hx), hx + &self.g))
    }

    fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(b)
    }

    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().zip(self.lower.iter().zip(self.upper.iter())).map(|(v, (l, u))| v.max(*l).min(*u)),
        ))
    }
}

struct DenseModel<'a> {
    h: &'a DMatrix<f64>,
    value: f64,
    gradient: DVector<f64>,
}

impl LocalModel<DVector<f64>> for DenseModel<'_> {
    fn value(&self) -> f64 {
        self.value
    }
    fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }
    fn hessian_apply(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.h * h)
    }
}

impl SecondOrder for QuadraticProblem {
    fn local_model<'b>(&'b self, x: &DVector<f64>) -> Result<Box<dyn LocalModel<DVector<f64>> + 'b>> {
        let (value, gradient) = self.value_gradient(x)?;
        Ok(Box::new(DenseModel { h: &self.h, value, gradient }))
    }
}

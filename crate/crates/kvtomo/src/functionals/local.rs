//! Pointwise residuals at a quadrature point. Every cost in this crate is
//! a sum of squares 1/2 |r|^2 of residuals that depend on the local values
//! (sigma, E = grad phi, J = grad_perp psi, phi); each term returns its
//! residual components and their Jacobian with respect to those values.

use serde::{Deserialize, Serialize};

use crate::fem::space::Grad;

/// Local input slots: sigma, E_x, E_y, J_x, J_y, phi.
pub const NIN: usize = 6;
const MAXR: usize = 5;

#[derive(Clone, Copy, Debug, Default)]
pub struct LocalInput {
    pub sigma: f64,
    pub e: Grad,
    pub j: Grad,
    pub value: f64,
}

impl LocalInput {
    pub fn as_array(&self) -> [f64; NIN] {
        [self.sigma, self.e[0], self.e[1], self.j[0], self.j[1], self.value]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LocalResidual {
    pub n: usize,
    pub r: [f64; MAXR],
    pub jac: [[f64; NIN]; MAXR],
}

impl LocalResidual {
    fn new() -> Self {
        LocalResidual { n: 0, r: [0.0; MAXR], jac: [[0.0; NIN]; MAXR] }
    }

    fn push(&mut self, r: f64, jac: [f64; NIN]) {
        self.r[self.n] = r;
        self.jac[self.n] = jac;
        self.n += 1;
    }

    /// Jacobian times a local direction.
    pub fn apply(&self, d: &[f64; NIN]) -> [f64; MAXR] {
        let mut out = [0.0; MAXR];
        for c in 0..self.n {
            out[c] = (0..NIN).map(|k| self.jac[c][k] * d[k]).sum();
        }
        out
    }

    /// Transposed Jacobian times residual weights.
    pub fn apply_t(&self, rho: &[f64]) -> [f64; NIN] {
        let mut out = [0.0; NIN];
        for c in 0..self.n {
            for k in 0..NIN {
                out[k] += self.jac[c][k] * rho[c];
            }
        }
        out
    }
}

/// Model term coupling sigma and the two potentials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelTerm {
    /// Kohn-Vogelius: 1/2 |sqrt(sigma) E - J / sqrt(sigma)|^2.
    Kv,
    /// Least squares: 1/2 |sigma E - J|^2.
    Ls,
}

/// Power density observation variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IatVariant {
    /// (J . E - H)^2
    Obs1,
    /// (sigma |E|^2 - H)^2
    #[default]
    Obs2,
}

impl std::str::FromStr for IatVariant {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "obs1" => Ok(IatVariant::Obs1),
            "obs2" => Ok(IatVariant::Obs2),
            _ => Err(crate::Error::Config(format!("unknown observation variant '{s}' (allowed: obs1, obs2)"))),
        }
    }
}

/// Data entering a pointwise observation term at one quadrature point.
#[derive(Clone, Copy, Debug)]
pub enum PointDatum {
    None,
    Flux(Grad),
    /// head value and, for the H1 variant, its gradient
    Head(f64, Option<Grad>),
}

/// Residual components of `model` (unit weight) and `beta * obs` at one
/// point with quadrature weight `w`. Power density misfits are element
/// rows, see [`iat_integrand`].
pub fn local_residual(model: Option<ModelTerm>, datum: PointDatum, beta: f64, w: f64, x: &LocalInput) -> LocalResidual {
    let s = w.sqrt();
    let mut out = LocalResidual::new();
    let (sg, e, j) = (x.sigma, x.e, x.j);
    match model {
        Some(ModelTerm::Kv) => {
            let rs = sg.sqrt();
            for c in 0..2 {
                let mut jac = [0.0; NIN];
                jac[0] = s * (e[c] / (2.0 * rs) + j[c] / (2.0 * sg * rs));
                jac[1 + c] = s * rs;
                jac[3 + c] = -s / rs;
                out.push(s * (rs * e[c] - j[c] / rs), jac);
            }
        }
        Some(ModelTerm::Ls) => {
            for c in 0..2 {
                let mut jac = [0.0; NIN];
                jac[0] = s * e[c];
                jac[1 + c] = s * sg;
                jac[3 + c] = -s;
                out.push(s * (sg * e[c] - j[c]), jac);
            }
        }
        None => {}
    }
    let sb = s * beta.sqrt();
    match datum {
        PointDatum::None => {}
        PointDatum::Flux(g) => {
            // the flux misfit carries no factor 1/2, hence sqrt(2)
            let s2 = sb * std::f64::consts::SQRT_2;
            for c in 0..2 {
                let mut jac = [0.0; NIN];
                jac[1 + c] = s2;
                out.push(s2 * (e[c] - g[c]), jac);
            }
        }
        PointDatum::Head(p, gp) => {
            out.push(sb * (x.value - p), [0.0, 0.0, 0.0, 0.0, 0.0, sb]);
            if let Some(gp) = gp {
                for c in 0..2 {
                    let mut jac = [0.0; NIN];
                    jac[1 + c] = sb;
                    out.push(sb * (e[c] - gp[c]), jac);
                }
            }
        }
    }
    out
}

/// Integrand of the power density misfit and its derivative with respect
/// to the local input: sigma |E|^2 (obs2) or J . E (obs1).
pub fn iat_integrand(variant: IatVariant, x: &LocalInput) -> (f64, [f64; NIN]) {
    let (sg, e, j) = (x.sigma, x.e, x.j);
    match variant {
        IatVariant::Obs2 => {
            let e2 = e[0] * e[0] + e[1] * e[1];
            (sg * e2, [e2, 2.0 * sg * e[0], 2.0 * sg * e[1], 0.0, 0.0, 0.0])
        }
        IatVariant::Obs1 => (j[0] * e[0] + j[1] * e[1], [0.0, j[0], j[1], e[0], e[1], 0.0]),
    }
}

/// Number of residual components produced for the given term choice.
pub fn residual_width(model: Option<ModelTerm>, datum: PointDatum) -> usize {
    let m = if model.is_some() { 2 } else { 0 };
    m + match datum {
        PointDatum::None => 0,
        PointDatum::Flux(_) => 2,
        PointDatum::Head(_, None) => 1,
        PointDatum::Head(_, Some(_)) => 3,
    }
}

//! Cost functionals of the all-at-once, eliminated-sigma and reduced
//! formulations. Each cost is 1/2 |r(x)|^2 for a residual r built from
//! pointwise terms (see [`local`]) and, for EIT, boundary rows (see
//! [`eit`]); gradients are J^T r and the quadratic model uses the
//! Gauss-Newton operator J^T J.

pub mod eit;
pub mod local;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{Bounds, CellField, ConstraintSet, Excitations, NodalField, State, VectorQuadField};
use crate::error::{Error, Result};
use crate::fem::quadrature::NQ;
use crate::fem::space::{dot, rot, FemSpace};
use crate::fem::{stream_potential, CemOperator, CemSystem};
pub use eit::{consistent_trace, EitBoundary};
pub use local::{IatVariant, ModelTerm};
use local::{iat_integrand, local_residual, residual_width, LocalInput, PointDatum, NIN};

/// Formulation tags accepted in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Formulation {
    IatAao,
    IatElimSigma,
    IatReduced,
    EitAao,
    EitElimSigma,
    EitReduced,
    GwfAaoLs,
    GwfAaoKv,
    GwfReduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Application {
    Iat,
    Eit,
    Gwf,
}

/// Which unknowns a formulation keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    AllAtOnce,
    ElimSigma,
    Reduced,
}

impl Formulation {
    pub const ALL: [Formulation; 9] = [
        Formulation::IatAao,
        Formulation::IatElimSigma,
        Formulation::IatReduced,
        Formulation::EitAao,
        Formulation::EitElimSigma,
        Formulation::EitReduced,
        Formulation::GwfAaoLs,
        Formulation::GwfAaoKv,
        Formulation::GwfReduced,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Formulation::IatAao => "iat-aao",
            Formulation::IatElimSigma => "iat-elim-sigma",
            Formulation::IatReduced => "iat-reduced",
            Formulation::EitAao => "eit-aao",
            Formulation::EitElimSigma => "eit-elim-sigma",
            Formulation::EitReduced => "eit-reduced",
            Formulation::GwfAaoLs => "gwf-aao-ls",
            Formulation::GwfAaoKv => "gwf-aao-kv",
            Formulation::GwfReduced => "gwf-reduced",
        }
    }

    pub fn application(self) -> Application {
        use Formulation::*;
        match self {
            IatAao | IatElimSigma | IatReduced => Application::Iat,
            EitAao | EitElimSigma | EitReduced => Application::Eit,
            GwfAaoLs | GwfAaoKv | GwfReduced => Application::Gwf,
        }
    }

    pub fn shape(self) -> Shape {
        use Formulation::*;
        match self {
            IatAao | EitAao | GwfAaoLs | GwfAaoKv => Shape::AllAtOnce,
            IatElimSigma | EitElimSigma => Shape::ElimSigma,
            IatReduced | EitReduced | GwfReduced => Shape::Reduced,
        }
    }

    pub fn model(self) -> Option<ModelTerm> {
        match (self, self.shape()) {
            (_, Shape::Reduced) => None,
            (Formulation::GwfAaoLs, _) => Some(ModelTerm::Ls),
            _ => Some(ModelTerm::Kv),
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Formulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Formulation::ALL.into_iter().find(|f| f.tag() == s).ok_or_else(|| {
            let allowed: Vec<_> = Formulation::ALL.iter().map(|f| f.tag()).collect();
            Error::Config(format!("unknown formulation '{s}' (allowed: {})", allowed.join(", ")))
        })
    }
}

impl TryFrom<String> for Formulation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Formulation> for String {
    fn from(f: Formulation) -> String {
        f.tag().to_string()
    }
}

/// Measured data, one entry per excitation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObservationData {
    /// power densities per element
    Iat(Vec<CellField>),
    /// electrode voltages
    Eit(Vec<Vec<f64>>),
    /// potential gradients at quadrature points
    GwfFlux(Vec<VectorQuadField>),
    /// potential values; `h1` selects the H1 rather than the L2 misfit
    GwfHead { p: Vec<NodalField>, h1: bool },
}

impl ObservationData {
    pub fn len(&self) -> usize {
        match self {
            ObservationData::Iat(h) => h.len(),
            ObservationData::Eit(v) => v.len(),
            ObservationData::GwfFlux(g) => g.len(),
            ObservationData::GwfHead { p, .. } => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn application(&self) -> Application {
        match self {
            ObservationData::Iat(_) => Application::Iat,
            ObservationData::Eit(_) => Application::Eit,
            _ => Application::Gwf,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub data: ObservationData,
    pub delta: f64,
}

/// Discretization and excitation data shared by all costs on one mesh.
#[derive(Debug)]
pub struct ForwardSetup {
    pub space: Arc<FemSpace>,
    pub cem: Arc<CemOperator>,
    pub excitations: Excitations,
    /// stream potential traces at the boundary nodes, per excitation
    pub traces: Vec<Vec<f64>>,
}

impl ForwardSetup {
    pub fn new(cem: Arc<CemOperator>, excitations: Excitations) -> Result<Self> {
        if excitations.electrodes() != cem.num_electrodes() {
            return Err(Error::InvalidInput("excitations and electrode layout disagree".into()));
        }
        let space = cem.space.clone();
        let traces =
            (0..excitations.len()).map(|i| excitations.integrated_trace(i, &space.mesh)).collect::<Result<_>>()?;
        Ok(ForwardSetup { space, cem, excitations, traces })
    }

    pub fn num_excitations(&self) -> usize {
        self.excitations.len()
    }
}

/// Value with its Riesz gradient.
#[derive(Clone, Debug)]
pub struct TermValue {
    pub value: f64,
    pub gradient: State,
}

// ---------------------------------------------------------------------------
// residual machinery

struct Terms<'a> {
    space: &'a FemSpace,
    model: Option<ModelTerm>,
    beta: f64,
    variant: IatVariant,
    obs: Option<&'a ObservationData>,
    eit: Option<(&'a EitBoundary, &'a [Vec<f64>])>,
    use_psi: bool,
}

impl Terms<'_> {
    fn needs_value(&self) -> bool {
        matches!(self.obs, Some(ObservationData::GwfHead { .. }))
    }

    fn datum(&self, i: usize, e: usize, q: usize) -> PointDatum {
        match self.obs {
            Some(ObservationData::GwfFlux(g)) => PointDatum::Flux(g[i].vectors[e * NQ + q]),
            Some(ObservationData::GwfHead { p, h1 }) => PointDatum::Head(
                self.space.value_at(e, q, &p[i].values),
                h1.then(|| self.space.grad_at(e, q, &p[i].values)),
            ),
            _ => PointDatum::None,
        }
    }

    fn power_data(&self) -> Option<&[CellField]> {
        match self.obs {
            Some(ObservationData::Iat(h)) => Some(h),
            _ => None,
        }
    }

    /// Scale of element row `e`: residual = c (sum_q w_q f_q) - c |e| H_e.
    fn row_scale(&self, e: usize) -> f64 {
        (self.beta / self.space.mesh.area(e)).sqrt()
    }

    fn width(&self) -> usize {
        residual_width(self.model, self.datum(0, 0, 0))
    }

    fn input(&self, e: usize, q: usize, s: f64, phi: &[f64], psi: Option<&[f64]>) -> LocalInput {
        LocalInput {
            sigma: s,
            e: self.space.grad_at(e, q, phi),
            j: psi.map(|p| rot(self.space.grad_at(e, q, p))).unwrap_or_default(),
            value: if self.needs_value() { self.space.value_at(e, q, phi) } else { 0.0 },
        }
    }

    fn local(&self, i: usize, e: usize, q: usize, s: f64, phi: &[f64], psi: Option<&[f64]>) -> local::LocalResidual {
        let x = self.input(e, q, s, phi, psi);
        local_residual(self.model, self.datum(i, e, q), self.beta, self.space.weight(e, q), &x)
    }

    fn residual(&self, i: usize, sigma: &[f64], phi: &[f64], psi: Option<&[f64]>) -> Vec<f64> {
        let ne = self.space.num_elements();
        let mut r = Vec::with_capacity(ne * NQ * self.width());
        if self.width() > 0 {
            for e in 0..ne {
                for q in 0..NQ {
                    let lr = self.local(i, e, q, sigma[e], phi, psi);
                    r.extend_from_slice(&lr.r[..lr.n]);
                }
            }
        }
        if let Some(h) = self.power_data() {
            for e in 0..ne {
                let c = self.row_scale(e);
                let f: f64 = (0..NQ)
                    .map(|q| self.space.weight(e, q) * iat_integrand(self.variant, &self.input(e, q, sigma[e], phi, psi)).0)
                    .sum();
                r.push(c * (f - self.space.mesh.area(e) * h[i].values[e]));
            }
        }
        if let Some((b, data)) = self.eit {
            let sb = self.beta.sqrt();
            let psi = psi.expect("boundary term needs psi");
            r.extend(b.apply(phi, psi).iter().zip(&data[i]).map(|(a, d)| sb * (a - d)));
        }
        r
    }

    #[allow(clippy::too_many_arguments)]
    fn jvp(
        &self,
        i: usize,
        sigma: &[f64],
        phi: &[f64],
        psi: Option<&[f64]>,
        dsigma: &[f64],
        dphi: &[f64],
        dpsi: Option<&[f64]>,
    ) -> Vec<f64> {
        let ne = self.space.num_elements();
        let mut r = Vec::new();
        if self.width() > 0 {
            for e in 0..ne {
                for q in 0..NQ {
                    let lr = self.local(i, e, q, sigma[e], phi, psi);
                    let d = self.input(e, q, dsigma[e], dphi, dpsi).as_array();
                    r.extend_from_slice(&lr.apply(&d)[..lr.n]);
                }
            }
        }
        if self.power_data().is_some() {
            for e in 0..ne {
                let c = self.row_scale(e);
                let f: f64 = (0..NQ)
                    .map(|q| {
                        let df = iat_integrand(self.variant, &self.input(e, q, sigma[e], phi, psi)).1;
                        let d = self.input(e, q, dsigma[e], dphi, dpsi).as_array();
                        self.space.weight(e, q) * (0..NIN).map(|k| df[k] * d[k]).sum::<f64>()
                    })
                    .sum();
                r.push(c * f);
            }
        }
        if let Some((b, _)) = self.eit {
            let sb = self.beta.sqrt();
            r.extend(b.apply(dphi, dpsi.expect("boundary term needs psi")).iter().map(|a| sb * a));
        }
        r
    }

    /// Transposed Jacobian: dual coefficients for (sigma, phi, psi).
    fn vjp(
        &self,
        i: usize,
        sigma: &[f64],
        phi: &[f64],
        psi: Option<&[f64]>,
        rho: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let space = self.space;
        let ne = space.num_elements();
        let nn = space.num_nodes();
        let mut gs = vec![0.0; ne];
        let mut gphi = vec![0.0; nn];
        let mut gpsi = vec![0.0; if self.use_psi { nn } else { 0 }];
        let mut off = 0;
        if self.width() > 0 {
            for (e, el) in space.mesh.elements.iter().enumerate() {
                for q in 0..NQ {
                    let lr = self.local(i, e, q, sigma[e], phi, psi);
                    let g = lr.apply_t(&rho[off..off + lr.n]);
                    off += lr.n;
                    scatter(space, e, q, el, &g, &mut gs, &mut gphi, &mut gpsi);
                }
            }
        }
        if self.power_data().is_some() {
            for (e, el) in space.mesh.elements.iter().enumerate() {
                let c = self.row_scale(e) * rho[off];
                off += 1;
                for q in 0..NQ {
                    let df = iat_integrand(self.variant, &self.input(e, q, sigma[e], phi, psi)).1;
                    let w = c * space.weight(e, q);
                    scatter(space, e, q, el, &df.map(|v| w * v), &mut gs, &mut gphi, &mut gpsi);
                }
            }
        }
        if let Some((b, _)) = self.eit {
            let sb = self.beta.sqrt();
            let rest: Vec<f64> = rho[off..].iter().map(|p| sb * p).collect();
            b.apply_t(&rest, &mut gphi, &mut gpsi);
        }
        (gs, gphi, gpsi)
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter(
    space: &FemSpace,
    e: usize,
    q: usize,
    el: &[usize; 6],
    g: &[f64; NIN],
    gs: &mut [f64],
    gphi: &mut [f64],
    gpsi: &mut [f64],
) {
    gs[e] += g[0];
    let gr = space.grads(e, q);
    let sh = space.shape(q);
    for a in 0..6 {
        gphi[el[a]] += g[1] * gr[a][0] + g[2] * gr[a][1] + g[5] * sh[a];
        if !gpsi.is_empty() {
            let rg = rot(gr[a]);
            gpsi[el[a]] += g[3] * rg[0] + g[4] * rg[1];
        }
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

fn nodal(v: Vec<f64>) -> NodalField {
    NodalField { values: v }
}

/// Value and Riesz gradient of a point-term cost over a triple (sigma, phi, psi).
fn point_cost(terms: &Terms, sigma: Option<&CellField>, phi: &[NodalField], psi: &[NodalField]) -> Result<TermValue> {
    let space = terms.space;
    let ne = space.num_elements();
    let ones;
    let s = match sigma {
        Some(s) => {
            check_sigma(s, ne)?;
            &s.values
        }
        None => {
            ones = vec![1.0; ne];
            &ones
        }
    };
    let parts: Vec<_> = (0..phi.len())
        .into_par_iter()
        .map(|i| {
            let ps = terms.use_psi.then(|| psi[i].values.as_slice());
            let r = terms.residual(i, s, &phi[i].values, ps);
            let (gs, gp, gq) = terms.vjp(i, s, &phi[i].values, ps, &r);
            (half_sq(&r), gs, gp, gq)
        })
        .collect();
    let mut value = 0.0;
    let mut gsig = vec![0.0; ne];
    let mut dual = State { sigma: None, phi: Vec::new(), psi: Vec::new() };
    for (v, gs, gp, gq) in parts {
        value += v;
        gsig.iter_mut().zip(&gs).for_each(|(a, b)| *a += b);
        dual.phi.push(nodal(gp));
        if terms.use_psi {
            dual.psi.push(nodal(gq));
        }
    }
    if sigma.is_some() {
        dual.sigma = Some(CellField { values: gsig });
    }
    Ok(TermValue { value, gradient: space.riesz_state(&dual) })
}

fn check_sigma(s: &CellField, ne: usize) -> Result<()> {
    if s.len() != ne {
        return Err(Error::InvalidInput(format!("sigma has {} values for {ne} elements", s.len())));
    }
    if let Some((e, v)) = s.values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("conductivity {v} on element {e} is not positive")));
    }
    Ok(())
}

fn check_pairs(phi: &[NodalField], psi: &[NodalField]) -> Result<()> {
    if phi.len() != psi.len() || phi.is_empty() {
        return Err(Error::InvalidInput("need equally many (>= 1) potentials and stream potentials".into()));
    }
    Ok(())
}

/// Kohn-Vogelius model term 1/2 sum_i int |sqrt(sigma) grad phi_i - grad_perp psi_i / sqrt(sigma)|^2.
pub fn kv_model(space: &FemSpace, sigma: &CellField, phi: &[NodalField], psi: &[NodalField]) -> Result<TermValue> {
    check_pairs(phi, psi)?;
    let t = Terms {
        space,
        model: Some(ModelTerm::Kv),
        beta: 1.0,
        variant: IatVariant::Obs2,
        obs: None,
        eit: None,
        use_psi: true,
    };
    point_cost(&t, Some(sigma), phi, psi)
}

/// Least-squares model term 1/2 sum_i int |sigma grad phi_i - grad_perp psi_i|^2.
pub fn ls_model(space: &FemSpace, sigma: &CellField, phi: &[NodalField], psi: &[NodalField]) -> Result<TermValue> {
    check_pairs(phi, psi)?;
    let t =
        Terms { space, model: Some(ModelTerm::Ls), beta: 1.0, variant: IatVariant::Obs2, obs: None, eit: None, use_psi: true };
    point_cost(&t, Some(sigma), phi, psi)
}

/// Power density misfit. `psi` is required for [`IatVariant::Obs1`].
pub fn iat_obs(
    space: &FemSpace,
    sigma: &CellField,
    phi: &[NodalField],
    psi: Option<&[NodalField]>,
    h: &[CellField],
    variant: IatVariant,
) -> Result<TermValue> {
    if h.len() != phi.len() || h.iter().any(|x| x.len() != space.num_elements()) {
        return Err(Error::InvalidInput("power density data shape does not match (excitations x elements)".into()));
    }
    let use_psi = variant == IatVariant::Obs1;
    let psi = match (use_psi, psi) {
        (true, Some(p)) => p,
        (true, None) => return Err(Error::InvalidInput("obs1 variant needs stream potentials".into())),
        (false, _) => &[][..],
    };
    let data = ObservationData::Iat(h.to_vec());
    let t = Terms { space, model: None, beta: 1.0, variant, obs: Some(&data), eit: None, use_psi };
    point_cost(&t, Some(sigma), phi, psi)
}

/// Gradient-field or head misfit ||grad phi - g||^2 or 1/2 ||phi - p||^2_{H^s}.
pub fn gwf_obs(space: &FemSpace, phi: &[NodalField], data: &ObservationData) -> Result<TermValue> {
    if data.application() != Application::Gwf || data.len() != phi.len() {
        return Err(Error::InvalidInput("gradient-field data required, one per potential".into()));
    }
    let ok = match data {
        ObservationData::GwfFlux(g) => g.iter().all(|f| f.vectors.len() == space.num_elements() * NQ),
        ObservationData::GwfHead { p, .. } => p.iter().all(|f| f.len() == space.num_nodes()),
        _ => false,
    };
    if !ok {
        return Err(Error::InvalidInput("gradient-field data does not match the mesh".into()));
    }
    let t = Terms { space, model: None, beta: 1.0, variant: IatVariant::Obs2, obs: Some(data), eit: None, use_psi: false };
    point_cost(&t, None, phi, &[])
}

/// Electrode observation term for measured voltages `volt` (per excitation).
pub fn eit_obs(
    setup: &ForwardSetup,
    phi: &[NodalField],
    psi: &[NodalField],
    volt: &[Vec<f64>],
) -> Result<TermValue> {
    check_pairs(phi, psi)?;
    if volt.len() != phi.len() || phi.len() != setup.num_excitations() {
        return Err(Error::InvalidInput("voltage data and potentials must match the excitations".into()));
    }
    let b = EitBoundary::new(&setup.cem)?;
    let data: Vec<_> = (0..volt.len()).map(|i| b.data(&setup.excitations, i, &volt[i])).collect();
    let t = Terms {
        space: &setup.space,
        model: None,
        beta: 1.0,
        variant: IatVariant::Obs2,
        obs: None,
        eit: Some((&b, &data)),
        use_psi: true,
    };
    point_cost(&t, None, phi, psi)
}

// ---------------------------------------------------------------------------
// sigma elimination

/// Per-element energies A = sum_i int |grad phi_i|^2, B = sum_i int |grad_perp psi_i|^2.
fn energies(space: &FemSpace, phi: &[NodalField], psi: &[NodalField]) -> (Vec<f64>, Vec<f64>) {
    let ne = space.num_elements();
    let mut a = vec![0.0; ne];
    let mut b = vec![0.0; ne];
    for (p, s) in phi.iter().zip(psi) {
        for e in 0..ne {
            for q in 0..NQ {
                let w = space.weight(e, q);
                let ge = space.grad_at(e, q, &p.values);
                let gj = space.grad_at(e, q, &s.values);
                a[e] += w * dot(ge, ge);
                b[e] += w * dot(gj, gj);
            }
        }
    }
    (a, b)
}

fn eliminated(a: f64, b: f64, bounds: &Bounds) -> (f64, bool) {
    if a > 0.0 {
        let r = (b / a).sqrt();
        (bounds.clamp(r), r > bounds.lower && r < bounds.upper)
    } else {
        (bounds.upper, false)
    }
}

/// Pointwise minimiser over [lower, upper] of sum_i int sigma |grad phi_i|^2 + |grad_perp psi_i|^2 / sigma;
/// elements without potential gradient get the upper bound.
pub fn eliminate_sigma(space: &FemSpace, phi: &[NodalField], psi: &[NodalField], bounds: &Bounds) -> Result<CellField> {
    check_pairs(phi, psi)?;
    let (a, b) = energies(space, phi, psi);
    Ok(CellField { values: a.iter().zip(&b).map(|(a, b)| eliminated(*a, *b, bounds).0).collect() })
}

#[derive(Clone, Debug)]
struct Elim {
    a: Vec<f64>,
    b: Vec<f64>,
    active: Vec<bool>,
}

// ---------------------------------------------------------------------------
// reduced forward map

/// Potentials, stream potentials and electrode voltages of the CEM at sigma.
#[derive(Clone, Debug)]
pub struct ReducedForward {
    pub phi: Vec<NodalField>,
    pub psi: Vec<NodalField>,
    pub volt: Vec<Vec<f64>>,
}

/// Solves the CEM for every excitation and builds the stream potentials.
pub fn reduced_forward(setup: &ForwardSetup, sigma: &CellField) -> Result<ReducedForward> {
    let sys = setup.cem.assemble(sigma)?;
    let sols: Vec<_> =
        setup.excitations.currents.par_iter().map(|j| sys.solve(j)).collect::<Result<Vec<_>>>()?;
    let psi = sols
        .par_iter()
        .zip(&setup.traces)
        .map(|(s, t)| stream_potential(&setup.space, sigma, &s.phi, t).map(|p| p.0))
        .collect::<Result<Vec<_>>>()?;
    let (phi, volt) = sols.into_iter().map(|s| (s.phi, s.volt)).unzip();
    Ok(ReducedForward { phi, psi, volt })
}

struct Reduced {
    sys: CemSystem,
    phi: Vec<NodalField>,
    volt: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// cost functional

/// Options of a combined cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostOptions {
    pub beta: f64,
    pub variant: IatVariant,
    pub bounds: Bounds,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions { beta: 1.0, variant: IatVariant::Obs2, bounds: Bounds::default() }
    }
}

/// Cached quantities of one evaluation.
pub struct Evaluation {
    pub value: f64,
    /// conductivity in effect: the state's, the eliminated one or the reduced unknown
    pub sigma: CellField,
    residuals: Vec<Vec<f64>>,
    elim: Option<Elim>,
    reduced: Option<Reduced>,
}

impl Evaluation {
    /// Potentials of the reduced forward solve, if any.
    pub fn reduced_potentials(&self) -> Option<&[NodalField]> {
        self.reduced.as_ref().map(|r| r.phi.as_slice())
    }

    pub fn reduced_voltages(&self) -> Option<&[Vec<f64>]> {
        self.reduced.as_ref().map(|r| r.volt.as_slice())
    }
}

pub struct CostFunctional {
    pub formulation: Formulation,
    pub options: CostOptions,
    pub setup: Arc<ForwardSetup>,
    pub observations: Observations,
    boundary: Option<EitBoundary>,
    boundary_data: Vec<Vec<f64>>,
}

impl fmt::Debug for CostFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CostFunctional({}, beta={})", self.formulation, self.options.beta)
    }
}

/// Builds the cost of a formulation; fails on observation/formulation mismatch.
pub fn combined_cost(
    formulation: Formulation,
    setup: Arc<ForwardSetup>,
    observations: Observations,
    options: CostOptions,
) -> Result<CostFunctional> {
    CostFunctional::new(formulation, setup, observations, options)
}

impl CostFunctional {
    pub fn new(
        formulation: Formulation,
        setup: Arc<ForwardSetup>,
        observations: Observations,
        options: CostOptions,
    ) -> Result<Self> {
        if !(options.beta > 0.0 && options.beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {}", options.beta)));
        }
        let app = observations.data.application();
        if app != formulation.application() {
            return Err(Error::InvalidInput(format!(
                "{:?} observations cannot be used with formulation {formulation}",
                app
            )));
        }
        let ni = setup.num_excitations();
        if observations.data.len() != ni {
            return Err(Error::InvalidInput(format!(
                "{} observation sets for {ni} excitations",
                observations.data.len()
            )));
        }
        let ne = setup.space.num_elements();
        match &observations.data {
            ObservationData::Iat(h) if h.iter().any(|x| x.len() != ne) => {
                return Err(Error::InvalidInput("power density data does not match the mesh".into()))
            }
            ObservationData::Eit(v) if v.iter().any(|x| x.len() != setup.cem.num_electrodes()) => {
                return Err(Error::InvalidInput("voltage data does not match the electrode count".into()))
            }
            ObservationData::GwfFlux(g) if g.iter().any(|x| x.vectors.len() != ne * NQ) => {
                return Err(Error::InvalidInput("flux data does not match the quadrature layout".into()))
            }
            ObservationData::GwfHead { p, .. } if p.iter().any(|x| x.len() != setup.space.num_nodes()) => {
                return Err(Error::InvalidInput("head data does not match the mesh".into()))
            }
            ObservationData::GwfHead { .. } if formulation == Formulation::GwfReduced => {
                return Err(Error::InvalidInput("the reduced gradient-field formulation needs flux data".into()))
            }
            _ => {}
        }
        let (boundary, boundary_data) = match (&observations.data, formulation.shape()) {
            (ObservationData::Eit(volt), Shape::AllAtOnce | Shape::ElimSigma) => {
                let b = EitBoundary::new(&setup.cem)?;
                let d = (0..ni).map(|i| b.data(&setup.excitations, i, &volt[i])).collect();
                (Some(b), d)
            }
            _ => (None, Vec::new()),
        };
        Ok(CostFunctional { formulation, options, setup, observations, boundary, boundary_data })
    }

    pub fn space(&self) -> &FemSpace {
        &self.setup.space
    }

    fn terms(&self) -> Terms<'_> {
        let shape = self.formulation.shape();
        let obs = match (&self.observations.data, shape) {
            (ObservationData::Eit(_), _) => None,
            (d, _) => Some(d),
        };
        let variant = if shape == Shape::Reduced { IatVariant::Obs2 } else { self.options.variant };
        Terms {
            space: &self.setup.space,
            model: self.formulation.model(),
            beta: if shape == Shape::Reduced { 1.0 } else { self.options.beta },
            variant,
            obs,
            eit: self.boundary.as_ref().map(|b| (b, self.boundary_data.as_slice())),
            use_psi: shape != Shape::Reduced,
        }
    }

    /// Admissible set of this formulation for noise budget `eta`. The
    /// electrode formulations leave the stream potential trace free
    /// because their observation term acts on it.
    pub fn constraints(&self, eta: f64) -> ConstraintSet {
        let shape = self.formulation.shape();
        let psi_trace = match (self.formulation.application(), shape) {
            (_, Shape::Reduced) | (Application::Eit, _) => None,
            _ => Some(self.setup.traces.clone()),
        };
        ConstraintSet { bounds: self.options.bounds, mean_zero_phi: shape != Shape::Reduced, psi_trace, eta }
    }

    /// Starting state from the CEM solution at a constant conductivity.
    pub fn initial_state(&self, sigma0: f64) -> Result<State> {
        let ne = self.setup.space.num_elements();
        let sigma = CellField::constant(ne, sigma0);
        self.state_from_sigma(&sigma)
    }

    /// State of this formulation's shape built from the CEM fields at `sigma`.
    pub fn state_from_sigma(&self, sigma: &CellField) -> Result<State> {
        match self.formulation.shape() {
            Shape::Reduced => Ok(State { sigma: Some(sigma.clone()), phi: Vec::new(), psi: Vec::new() }),
            shape => {
                let f = reduced_forward(&self.setup, sigma)?;
                let s = (shape == Shape::AllAtOnce).then(|| sigma.clone());
                let psi = if self.formulation.application() == Application::Eit {
                    (0..f.phi.len())
                        .map(|i| {
                            let t = consistent_trace(&self.setup.cem, &self.setup.excitations, i, &f.phi[i].values, &f.volt[i]);
                            stream_potential(&self.setup.space, sigma, &f.phi[i], &t).map(|p| p.0)
                        })
                        .collect::<Result<Vec<_>>>()?
                } else {
                    f.psi
                };
                Ok(State { sigma: s, phi: f.phi, psi })
            }
        }
    }

    fn check_state(&self, x: &State) -> Result<()> {
        let ni = self.setup.num_excitations();
        let (ne, nn) = (self.setup.space.num_elements(), self.setup.space.num_nodes());
        let ok = match self.formulation.shape() {
            Shape::AllAtOnce => x.sigma.is_some() && x.phi.len() == ni && x.psi.len() == ni,
            Shape::ElimSigma => x.sigma.is_none() && x.phi.len() == ni && x.psi.len() == ni,
            Shape::Reduced => x.sigma.is_some() && x.phi.is_empty() && x.psi.is_empty(),
        };
        let sizes = x.sigma.as_ref().is_none_or(|s| s.len() == ne)
            && x.phi.iter().chain(&x.psi).all(|f| f.len() == nn);
        if !ok || !sizes {
            return Err(Error::InvalidInput(format!("state does not match the layout of formulation {}", self.formulation)));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("state".into()));
        }
        Ok(())
    }

    /// The conductivity represented by a state (eliminated for elim-sigma).
    pub fn sigma_of(&self, x: &State) -> Result<CellField> {
        match &x.sigma {
            Some(s) => Ok(s.clone()),
            None => eliminate_sigma(&self.setup.space, &x.phi, &x.psi, &self.options.bounds),
        }
    }

    pub fn evaluate(&self, x: &State) -> Result<Evaluation> {
        self.check_state(x)?;
        let terms = self.terms();
        let space = &self.setup.space;
        match self.formulation.shape() {
            Shape::AllAtOnce | Shape::ElimSigma => {
                let (sigma, elim) = match &x.sigma {
                    Some(s) => {
                        check_sigma(s, space.num_elements())?;
                        (s.clone(), None)
                    }
                    None => {
                        let (a, b) = energies(space, &x.phi, &x.psi);
                        let (vals, active) =
                            a.iter().zip(&b).map(|(a, b)| eliminated(*a, *b, &self.options.bounds)).unzip();
                        (CellField { values: vals }, Some(Elim { a, b, active }))
                    }
                };
                let residuals: Vec<Vec<f64>> = (0..x.phi.len())
                    .into_par_iter()
                    .map(|i| terms.residual(i, &sigma.values, &x.phi[i].values, Some(&x.psi[i].values)))
                    .collect();
                let value: f64 = residuals.iter().map(|r| half_sq(r)).sum();
                Ok(Evaluation { value, sigma, residuals, elim, reduced: None })
            }
            Shape::Reduced => {
                let sigma = x.sigma.clone().expect("checked");
                check_sigma(&sigma, space.num_elements())?;
                let sys = self.setup.cem.assemble(&sigma)?;
                let sols = self
                    .setup
                    .excitations
                    .currents
                    .par_iter()
                    .map(|j| sys.solve(j))
                    .collect::<Result<Vec<_>>>()?;
                let (phi, volt): (Vec<_>, Vec<_>) = sols.into_iter().map(|s| (s.phi, s.volt)).unzip();
                let residuals: Vec<Vec<f64>> = match &self.observations.data {
                    ObservationData::Eit(vd) => {
                        volt.iter().zip(vd).map(|(v, d)| v.iter().zip(d).map(|(a, b)| a - b).collect()).collect()
                    }
                    _ => (0..phi.len())
                        .into_par_iter()
                        .map(|i| terms.residual(i, &sigma.values, &phi[i].values, None))
                        .collect(),
                };
                let value: f64 = residuals.iter().map(|r| half_sq(r)).sum();
                if !value.is_finite() {
                    return Err(Error::NonFinite("cost value".into()));
                }
                Ok(Evaluation { value, sigma, residuals, elim: None, reduced: Some(Reduced { sys, phi, volt }) })
            }
        }
    }

    pub fn value(&self, x: &State) -> Result<f64> {
        Ok(self.evaluate(x)?.value)
    }

    /// Residual, one block per excitation.
    pub fn residuals<'a>(&self, ev: &'a Evaluation) -> &'a [Vec<f64>] {
        &ev.residuals
    }

    /// Linearized residual change along `h`.
    pub fn jvp(&self, x: &State, ev: &Evaluation, h: &State) -> Result<Vec<Vec<f64>>> {
        if !x.same_layout(h) {
            return Err(Error::InvalidInput("direction layout differs from the state".into()));
        }
        let terms = self.terms();
        let space = &self.setup.space;
        let ne = space.num_elements();
        let sigma = &ev.sigma.values;
        match self.formulation.shape() {
            Shape::AllAtOnce | Shape::ElimSigma => {
                let dsigma = match (&h.sigma, &ev.elim) {
                    (Some(d), _) => d.values.clone(),
                    (None, Some(el)) => self.elim_jvp(x, el, sigma, h),
                    (None, None) => vec![0.0; ne],
                };
                Ok((0..x.phi.len())
                    .into_par_iter()
                    .map(|i| {
                        terms.jvp(
                            i,
                            sigma,
                            &x.phi[i].values,
                            Some(&x.psi[i].values),
                            &dsigma,
                            &h.phi[i].values,
                            Some(&h.psi[i].values),
                        )
                    })
                    .collect())
            }
            Shape::Reduced => {
                let red = ev.reduced.as_ref().expect("reduced evaluation");
                let dsigma = &h.sigma.as_ref().expect("sigma direction").values;
                let eit = matches!(self.observations.data, ObservationData::Eit(_));
                Ok((0..red.phi.len())
                    .into_par_iter()
                    .map(|i| {
                        let rhs = red.sys.apply_dsigma(dsigma, &red.phi[i].values);
                        let rhs: Vec<f64> = rhs.iter().map(|v| -v).collect();
                        let nl = red.volt[i].len();
                        let (mut dphi, mut dv) = red.sys.solve_pinned(&rhs, &vec![0.0; nl]);
                        red.sys.ground(&mut dphi, &mut dv);
                        if eit {
                            dv
                        } else {
                            terms.jvp(i, sigma, &red.phi[i].values, None, dsigma, &dphi, None)
                        }
                    })
                    .collect())
            }
        }
    }

    fn elim_jvp(&self, x: &State, el: &Elim, sigma: &[f64], h: &State) -> Vec<f64> {
        let space = &self.setup.space;
        let ne = space.num_elements();
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..x.phi.len())
            .into_par_iter()
            .map(|i| {
                let mut da = vec![0.0; ne];
                let mut db = vec![0.0; ne];
                for e in (0..ne).filter(|&e| el.active[e]) {
                    for q in 0..NQ {
                        let w = space.weight(e, q);
                        let ge = space.grad_at(e, q, &x.phi[i].values);
                        let gj = space.grad_at(e, q, &x.psi[i].values);
                        da[e] += 2.0 * w * dot(ge, space.grad_at(e, q, &h.phi[i].values));
                        db[e] += 2.0 * w * dot(gj, space.grad_at(e, q, &h.psi[i].values));
                    }
                }
                (da, db)
            })
            .collect();
        let mut da = vec![0.0; ne];
        let mut db = vec![0.0; ne];
        for (a, b) in parts {
            da.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
            db.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        }
        (0..ne)
            .map(|e| if el.active[e] { 0.5 * sigma[e] * (db[e] / el.b[e] - da[e] / el.a[e]) } else { 0.0 })
            .collect()
    }

    /// Transposed linearization applied to residual weights: dual coefficients.
    pub fn vjp(&self, x: &State, ev: &Evaluation, rho: &[Vec<f64>]) -> Result<State> {
        let terms = self.terms();
        let space = &self.setup.space;
        let ne = space.num_elements();
        let sigma = &ev.sigma.values;
        match self.formulation.shape() {
            Shape::AllAtOnce | Shape::ElimSigma => {
                let parts: Vec<_> = (0..x.phi.len())
                    .into_par_iter()
                    .map(|i| terms.vjp(i, sigma, &x.phi[i].values, Some(&x.psi[i].values), &rho[i]))
                    .collect();
                let mut gs = vec![0.0; ne];
                let mut out = State { sigma: None, phi: Vec::new(), psi: Vec::new() };
                for (s, p, q) in parts {
                    gs.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                    out.phi.push(nodal(p));
                    out.psi.push(nodal(q));
                }
                match &ev.elim {
                    None => out.sigma = Some(CellField { values: gs }),
                    Some(el) => self.elim_vjp(x, el, sigma, &gs, &mut out),
                }
                Ok(out)
            }
            Shape::Reduced => {
                let red = ev.reduced.as_ref().expect("reduced evaluation");
                let eit = matches!(self.observations.data, ObservationData::Eit(_));
                let mass = space.mass_vector();
                let area = space.domain_area();
                let parts: Vec<Vec<f64>> = (0..red.phi.len())
                    .into_par_iter()
                    .map(|i| {
                        let phi = &red.phi[i].values;
                        let (mut gs, mut gphi, gv) = if eit {
                            (vec![0.0; ne], vec![0.0; phi.len()], rho[i].clone())
                        } else {
                            let (s, p, _) = terms.vjp(i, sigma, phi, None, &rho[i]);
                            (s, p, vec![0.0; red.volt[i].len()])
                        };
                        // transpose of the grounding shift
                        let total: f64 = gphi.iter().sum::<f64>() + gv.iter().sum::<f64>();
                        gphi.iter_mut().zip(mass).for_each(|(g, m)| *g -= m * total / area);
                        let (lam, _) = red.sys.solve_pinned(&gphi, &gv);
                        let prod = red.sys.element_products(&lam, phi);
                        gs.iter_mut().zip(&prod).for_each(|(g, p)| *g -= p);
                        gs
                    })
                    .collect();
                let mut gs = vec![0.0; ne];
                for p in parts {
                    gs.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
                }
                Ok(State { sigma: Some(CellField { values: gs }), phi: Vec::new(), psi: Vec::new() })
            }
        }
    }

    fn elim_vjp(&self, x: &State, el: &Elim, sigma: &[f64], gs: &[f64], out: &mut State) {
        let space = &self.setup.space;
        let ne = space.num_elements();
        let ca: Vec<f64> =
            (0..ne).map(|e| if el.active[e] { -gs[e] * sigma[e] / el.a[e] } else { 0.0 }).collect();
        let cb: Vec<f64> =
            (0..ne).map(|e| if el.active[e] { gs[e] * sigma[e] / el.b[e] } else { 0.0 }).collect();
        out.phi.par_iter_mut().zip(out.psi.par_iter_mut()).enumerate().for_each(|(i, (gp, gq))| {
            for (e, nodes) in space.mesh.elements.iter().enumerate() {
                if !el.active[e] {
                    continue;
                }
                for q in 0..NQ {
                    let w = space.weight(e, q);
                    let ge = space.grad_at(e, q, &x.phi[i].values);
                    let gj = space.grad_at(e, q, &x.psi[i].values);
                    let gr = space.grads(e, q);
                    for a in 0..6 {
                        gp.values[nodes[a]] += ca[e] * w * dot(ge, gr[a]);
                        gq.values[nodes[a]] += cb[e] * w * dot(gj, gr[a]);
                    }
                }
            }
        });
    }

    /// Derivative coefficients (dual vector) of the cost at `x`.
    pub fn dual_gradient(&self, x: &State, ev: &Evaluation) -> Result<State> {
        self.vjp(x, ev, &ev.residuals)
    }

    /// Riesz gradient in the product inner product.
    pub fn gradient(&self, x: &State, ev: &Evaluation) -> Result<State> {
        Ok(self.setup.space.riesz_state(&self.dual_gradient(x, ev)?))
    }

    /// Gauss-Newton operator applied to `h`, as dual coefficients.
    pub fn gauss_newton_dual(&self, x: &State, ev: &Evaluation, h: &State) -> Result<State> {
        let d = self.jvp(x, ev, h)?;
        self.vjp(x, ev, &d)
    }

    /// Riesz representative of the Gauss-Newton operator applied to `h`.
    pub fn gauss_newton(&self, x: &State, ev: &Evaluation, h: &State) -> Result<State> {
        Ok(self.setup.space.riesz_state(&self.gauss_newton_dual(x, ev, h)?))
    }

    /// Squared residual norm of the observation data, used for noise budgets.
    pub fn data_sq_norm(&self) -> f64 {
        let space = &self.setup.space;
        match &self.observations.data {
            ObservationData::Iat(h) => h.iter().map(|f| space.cell_l2_norm(&f.values).powi(2)).sum(),
            ObservationData::Eit(v) => v.iter().flatten().map(|x| x * x).sum(),
            ObservationData::GwfFlux(g) => g
                .iter()
                .map(|f| {
                    (0..space.num_elements())
                        .flat_map(|e| (0..NQ).map(move |q| (e, q)))
                        .map(|(e, q)| space.weight(e, q) * dot(f.vectors[e * NQ + q], f.vectors[e * NQ + q]))
                        .sum::<f64>()
                })
                .sum(),
            ObservationData::GwfHead { p, h1 } => p
                .iter()
                .map(|f| if *h1 { space.inner_nodal(f, f) } else { space.l2_norm(&f.values).powi(2) })
                .sum(),
        }
    }
}

/// Second-order model Q(x0 + h) = J(x0) + <g, h> + 1/2 <H h, h> with the
/// Gauss-Newton operator H.
pub struct QuadraticModel<'a> {
    pub cost: &'a CostFunctional,
    pub x0: State,
    pub value: f64,
    /// Riesz gradient at x0
    pub gradient: State,
    dual: State,
    eval: Evaluation,
}

/// First derivative and Gauss-Newton Hessian of `cost` at `x`.
pub fn quadratic_model_at<'a>(cost: &'a CostFunctional, x: &State) -> Result<QuadraticModel<'a>> {
    let eval = cost.evaluate(x)?;
    let dual = cost.dual_gradient(x, &eval)?;
    let gradient = cost.setup.space.riesz_state(&dual);
    Ok(QuadraticModel { cost, x0: x.clone(), value: eval.value, gradient, dual, eval })
}

impl QuadraticModel<'_> {
    /// G h
    pub fn first(&self, h: &State) -> f64 {
        self.dual.dot(h)
    }

    /// H(h, k)
    pub fn second(&self, h: &State, k: &State) -> Result<f64> {
        Ok(self.cost.gauss_newton_dual(&self.x0, &self.eval, h)?.dot(k))
    }

    /// Riesz representative of H h.
    pub fn hessian_apply(&self, h: &State) -> Result<State> {
        self.cost.gauss_newton(&self.x0, &self.eval, h)
    }

    /// Q at x.
    pub fn eval_at(&self, x: &State) -> Result<f64> {
        let mut h = x.clone();
        h.axpy(-1.0, &self.x0);
        let d = self.cost.jvp(&self.x0, &self.eval, &h)?;
        let lin: f64 = self.eval.residuals.iter().flatten().zip(d.iter().flatten()).map(|(r, s)| r * s).sum();
        let quad: f64 = d.iter().flatten().map(|s| s * s).sum();
        Ok(self.value + lin + 0.5 * quad)
    }

    pub fn evaluation(&self) -> &Evaluation {
        &self.eval
    }
}

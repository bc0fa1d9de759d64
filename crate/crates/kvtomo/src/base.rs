//! Domain types: fields, bounds, electrode layout, excitations, states and
//! constraint sets, plus the pointwise projections.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::mesh::{Mesh, SegmentTag};

/// Piecewise constant field, one value per element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellField {
    pub values: Vec<f64>,
}

/// P2 nodal field, one value per mesh node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    pub values: Vec<f64>,
}

/// One 2-vector per quadrature point, element-major (`e * NQ + q`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorQuadField {
    pub vectors: Vec<[f64; 2]>,
}

impl CellField {
    pub fn constant(n: usize, c: f64) -> Self {
        CellField { values: vec![c; n] }
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl NodalField {
    pub fn zeros(n: usize) -> Self {
        NodalField { values: vec![0.0; n] }
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower < upper && upper.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "conductivity bounds must satisfy 0 < lower < upper < inf, got [{lower}, {upper}]"
            )));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clamp(&self, s: f64) -> f64 {
        s.max(self.lower).min(self.upper)
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { lower: 1.0, upper: 6.0 }
    }
}

/// `count` electrodes of equal width starting at angle `offset`, electrode
/// `l` followed by gap `l`. Coverage is the electrode share of each period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub count: usize,
    pub coverage: f64,
    pub offset: f64,
    pub impedances: Vec<f64>,
}

impl ElectrodeLayout {
    pub fn equidistant(count: usize, coverage: f64, impedance: f64) -> Self {
        ElectrodeLayout { count, coverage, offset: 0.0, impedances: vec![impedance; count] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InvalidInput("at least two electrodes are required".into()));
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::InvalidInput(format!("coverage must lie in (0,1), got {}", self.coverage)));
        }
        if self.impedances.len() != self.count || self.impedances.iter().any(|&z| !(z > 0.0)) {
            return Err(Error::InvalidInput("one positive contact impedance per electrode required".into()));
        }
        Ok(())
    }

    /// Start angle and angular width of boundary segment `s` (even: electrode
    /// `s/2`, odd: gap `s/2`).
    pub fn segment_arc(&self, s: usize) -> (f64, f64) {
        let period = 2.0 * PI / self.count as f64;
        let we = self.coverage * period;
        let base = self.offset + (s / 2) as f64 * period;
        if s % 2 == 0 {
            (base, we)
        } else {
            (base + we, period - we)
        }
    }

    /// Segment containing the polar angle `a` in [offset, offset + 2pi).
    pub fn segment_at(&self, a: f64) -> SegmentTag {
        let period = 2.0 * PI / self.count as f64;
        let t = (a - self.offset).rem_euclid(2.0 * PI);
        let k = ((t / period).floor() as usize).min(self.count - 1);
        if t - k as f64 * period < self.coverage * period {
            SegmentTag::Electrode(k)
        } else {
            SegmentTag::Gap(k)
        }
    }
}

/// Current patterns: row `i` holds the currents of excitation `i` on every
/// electrode. Rows sum to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excitations {
    pub currents: Vec<Vec<f64>>,
}

impl Excitations {
    pub fn new(currents: Vec<Vec<f64>>) -> Result<Self> {
        if currents.is_empty() {
            return Err(Error::InvalidInput("at least one excitation is required".into()));
        }
        let l = currents[0].len();
        for (i, row) in currents.iter().enumerate() {
            if row.len() != l {
                return Err(Error::InvalidInput(format!("excitation {i} has {} entries, expected {l}", row.len())));
            }
            let scale = row.iter().map(|c| c.abs()).sum::<f64>().max(1.0);
            if row.iter().sum::<f64>().abs() > 1e-12 * scale {
                return Err(Error::InvalidInput(format!("currents of excitation {i} do not sum to zero")));
            }
        }
        Ok(Excitations { currents })
    }

    /// The paper's drive patterns for 8 electrodes: `count` in {1, 2, 4, 28}.
    /// Pairs are 1-based electrode numbers driven with +1 / -1.
    pub fn pattern(count: usize, electrodes: usize) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = match count {
            1 => vec![(1, 5)],
            2 => vec![(1, 5), (3, 7)],
            4 => vec![(1, 5), (3, 7), (2, 6), (4, 8)],
            28 => (1..=8).flat_map(|a| ((a + 1)..=8).map(move |b| (a, b))).collect(),
            _ => return Err(Error::InvalidInput(format!("no excitation pattern with {count} rows"))),
        };
        if electrodes != 8 {
            return Err(Error::InvalidInput("excitation patterns are defined for 8 electrodes".into()));
        }
        Self::from_pairs(&pairs, electrodes)
    }

    pub fn from_pairs(pairs: &[(usize, usize)], electrodes: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for &(a, b) in pairs {
            if a == b || a == 0 || b == 0 || a > electrodes || b > electrodes {
                return Err(Error::InvalidInput(format!("invalid electrode pair ({a}, {b})")));
            }
            let mut row = vec![0.0; electrodes];
            row[a - 1] = 1.0;
            row[b - 1] = -1.0;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn electrodes(&self) -> usize {
        self.currents[0].len()
    }

    /// Cumulative boundary values after electrode `l`: -sum_{k<=l} j_k.
    pub fn cumulative(&self, i: usize) -> Vec<f64> {
        let mut acc = 0.0;
        self.currents[i]
            .iter()
            .map(|j| {
                acc -= j;
                acc
            })
            .collect()
    }

    /// Stream potential boundary trace of excitation `i` at the boundary nodes
    /// of `mesh` (order of [`Mesh::boundary_nodes`]): zero at the start of the
    /// first electrode, affine ramps over electrodes, constants on gaps.
    pub fn integrated_trace(&self, i: usize, mesh: &Mesh) -> Result<Vec<f64>> {
        let cum = self.cumulative(i);
        let l = self.electrodes();
        let mut el_len = vec![0.0; l];
        let mut el_start = vec![f64::NAN; l];
        for e in &mesh.boundary {
            if let SegmentTag::Electrode(k) = e.tag {
                if k >= l {
                    return Err(Error::InvalidInput(format!("mesh has electrode {k} beyond the excitation size")));
                }
                el_len[k] += e.length;
                if el_start[k].is_nan() {
                    el_start[k] = e.s0;
                }
            }
        }
        let before = |k: usize| if k == 0 { 0.0 } else { cum[k - 1] };
        let mut out = Vec::with_capacity(2 * mesh.boundary.len());
        for e in &mesh.boundary {
            match e.tag {
                SegmentTag::Electrode(k) => {
                    for s in [e.s0, e.s0 + 0.5 * e.length] {
                        let f = (s - el_start[k]) / el_len[k];
                        out.push(before(k) + f * (cum[k] - before(k)));
                    }
                }
                SegmentTag::Gap(k) => out.extend([cum[k], cum[k]]),
                SegmentTag::Free => {
                    return Err(Error::InvalidInput("mesh boundary has untagged segments".into()));
                }
            }
        }
        Ok(out)
    }
}

/// Optimisation state. Components absent from a formulation are `None` /
/// empty: all-at-once states carry all three, eliminated-sigma states only
/// the potentials and reduced states only sigma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub sigma: Option<CellField>,
    pub phi: Vec<NodalField>,
    pub psi: Vec<NodalField>,
}

impl State {
    pub fn zeros_like(&self) -> State {
        State {
            sigma: self.sigma.as_ref().map(|s| CellField::constant(s.len(), 0.0)),
            phi: self.phi.iter().map(|f| NodalField::zeros(f.len())).collect(),
            psi: self.psi.iter().map(|f| NodalField::zeros(f.len())).collect(),
        }
    }

    fn slices(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.sigma
            .iter()
            .map(|s| &s.values)
            .chain(self.phi.iter().map(|f| &f.values))
            .chain(self.psi.iter().map(|f| &f.values))
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.sigma
            .iter_mut()
            .map(|s| &mut s.values)
            .chain(self.phi.iter_mut().map(|f| &mut f.values))
            .chain(self.psi.iter_mut().map(|f| &mut f.values))
    }

    pub fn same_layout(&self, other: &State) -> bool {
        self.sigma.as_ref().map(|s| s.len()) == other.sigma.as_ref().map(|s| s.len())
            && self.phi.len() == other.phi.len()
            && self.psi.len() == other.psi.len()
            && self.phi.iter().zip(&other.phi).all(|(a, b)| a.len() == b.len())
            && self.psi.iter().zip(&other.psi).all(|(a, b)| a.len() == b.len())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &State) {
        debug_assert!(self.same_layout(x));
        for (u, v) in self.slices_mut().zip(x.slices()) {
            for (p, q) in u.iter_mut().zip(v) {
                *p += a * q;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for u in self.slices_mut() {
            u.iter_mut().for_each(|p| *p *= a);
        }
    }

    /// Euclidean dot product of all coefficients.
    pub fn dot(&self, other: &State) -> f64 {
        self.slices().zip(other.slices()).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|u| u.iter().all(|p| p.is_finite()))
    }

    pub fn num_coefficients(&self) -> usize {
        self.slices().map(|u| u.len()).sum()
    }
}

/// Admissible set description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub bounds: Bounds,
    pub mean_zero_phi: bool,
    /// Dirichlet values of every stream potential at the boundary nodes
    /// ([`Mesh::boundary_nodes`] order); `None` leaves the trace free.
    pub psi_trace: Option<Vec<Vec<f64>>>,
    /// Noise budget entering the discrepancy principle.
    pub eta: f64,
}

/// Pointwise clamp of sigma into the bounds; the L2 projection for
/// piecewise constants.
pub fn project_box(field: &CellField, bounds: &Bounds) -> CellField {
    CellField { values: field.values.iter().map(|&s| bounds.clamp(s)).collect() }
}

/// Subtracts the L2 mean given the node weights `mass[a] = int N_a`.
pub fn project_mean_zero(field: &NodalField, mass: &[f64]) -> NodalField {
    let total: f64 = mass.iter().sum();
    let mean = field.values.iter().zip(mass).map(|(f, m)| f * m).sum::<f64>() / total;
    NodalField { values: field.values.iter().map(|f| f - mean).collect() }
}

/// Noise budget for multiplicative noise of relative level `delta`:
/// 1/2 delta^2 sum ||data||^2 / (1 - delta)^2, where `sq_norm` is the
/// (weighted) squared norm of the noisy data.
pub fn noise_budget(sq_norm: f64, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidInput(format!("noise level must lie in [0,1), got {delta}")));
    }
    Ok(0.5 * delta * delta * sq_norm / ((1.0 - delta) * (1.0 - delta)))
}

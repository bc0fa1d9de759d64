//! Complete electrode model: assembly, grounded solves, linearisation and
//! adjoint helpers, stream potentials and power densities.

use std::sync::Arc;

use super::mesh::SegmentTag;
use super::quadrature::{NQ, TRI_WEIGHTS};
use super::space::{dot, rot, FemSpace};
use super::sparse::{Cholesky, SymMatrix, SymPattern};
use crate::base::{CellField, ElectrodeLayout, NodalField};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Lower-triangular local index pairs of a P2 element.
const PAIRS: [(usize, usize); 21] = {
    let mut p = [(0, 0); 21];
    let mut k = 0;
    let mut a = 0;
    while a < 6 {
        let mut b = 0;
        while b <= a {
            p[k] = (a, b);
            k += 1;
            b += 1;
        }
        a += 1;
    }
    p
};

/// Sigma-independent part of the complete electrode model on a mesh.
///
/// Unknowns are the nodal potential and one voltage per electrode. The
/// system is singular on constants; it is solved with the first electrode
/// voltage pinned to zero and the solution is then shifted so that the
/// potential has zero mean, which yields the unique grounded solution.
#[derive(Debug)]
pub struct CemOperator {
    pub space: Arc<FemSpace>,
    pub layout: ElectrodeLayout,
    pattern: Arc<SymPattern>,
    fixed: Vec<f64>,
    elem_pos: Vec<[usize; 21]>,
    /// per electrode: (edge nodes, length) in loop order
    electrode_edges: Vec<Vec<([usize; 3], f64)>>,
    electrode_len: Vec<f64>,
}

/// Grounded CEM solution for one excitation.
#[derive(Clone, Debug, PartialEq)]
pub struct CemSolution {
    pub phi: NodalField,
    pub volt: Vec<f64>,
}

impl CemOperator {
    pub fn new(space: Arc<FemSpace>, layout: ElectrodeLayout) -> Result<Self> {
        layout.validate()?;
        let mesh = &space.mesh;
        let n = mesh.num_nodes();
        let l = layout.count;
        let mut electrode_edges = vec![Vec::new(); l];
        for e in &mesh.boundary {
            if let SegmentTag::Electrode(k) = e.tag {
                if k >= l {
                    return Err(Error::InvalidInput(format!("mesh electrode {k} outside layout of {l}")));
                }
                electrode_edges[k].push((e.nodes, e.length));
            }
        }
        if electrode_edges.iter().any(|v| v.is_empty()) {
            return Err(Error::Mesh("some electrode has no boundary edge".into()));
        }
        let electrode_len: Vec<f64> = electrode_edges.iter().map(|v| v.iter().map(|e| e.1).sum()).collect();
        let map = Self::dof_map(n, l);
        let mut entries = Vec::new();
        for el in &mesh.elements {
            for &(a, b) in &PAIRS {
                entries.push((el[a], el[b]));
            }
        }
        for (k, edges) in electrode_edges.iter().enumerate() {
            for (nodes, _) in edges {
                for &p in nodes {
                    for &q in nodes {
                        entries.push((p, q));
                    }
                    if map[n + k] != NONE {
                        entries.push((p, map[n + k]));
                    }
                }
            }
        }
        let pattern = Arc::new(SymPattern::new(n + l - 1, entries)?);
        let mut fixed = SymMatrix::zeros(pattern.clone());
        for (k, edges) in electrode_edges.iter().enumerate() {
            let zi = 1.0 / layout.impedances[k];
            let vk = map[n + k];
            for (nodes, h) in edges {
                let m1 = line_mass(*h);
                let b1 = [h / 6.0, 2.0 * h / 3.0, h / 6.0];
                for i in 0..3 {
                    for j in 0..3 {
                        if nodes[i] >= nodes[j] {
                            fixed.add(nodes[i], nodes[j], zi * m1[i][j]);
                        }
                    }
                    if vk != NONE {
                        fixed.add(vk, nodes[i], -zi * b1[i]);
                    }
                }
            }
            if vk != NONE {
                fixed.add(vk, vk, zi * electrode_len[k]);
            }
        }
        let elem_pos = mesh
            .elements
            .iter()
            .map(|el| {
                let mut pos = [0; 21];
                for (k, &(a, b)) in PAIRS.iter().enumerate() {
                    pos[k] = pattern.position(el[a], el[b]).expect("element entry in pattern");
                }
                pos
            })
            .collect();
        Ok(CemOperator { space, layout, pattern, fixed: fixed.values, elem_pos, electrode_edges, electrode_len })
    }

    fn dof_map(n: usize, l: usize) -> Vec<usize> {
        let mut map: Vec<usize> = (0..n).collect();
        map.push(NONE);
        map.extend((1..l).map(|k| n + k - 1));
        map
    }

    pub fn num_electrodes(&self) -> usize {
        self.layout.count
    }

    pub fn electrode_length(&self, k: usize) -> f64 {
        self.electrode_len[k]
    }

    pub fn electrode_edges(&self, k: usize) -> &[([usize; 3], f64)] {
        &self.electrode_edges[k]
    }

    /// Assembles and factorizes the pinned system for conductivity `sigma`.
    pub fn assemble(self: &Arc<Self>, sigma: &CellField) -> Result<CemSystem> {
        let ne = self.space.num_elements();
        if sigma.len() != ne {
            return Err(Error::InvalidInput(format!("sigma has {} values for {ne} elements", sigma.len())));
        }
        if let Some((e, s)) = sigma.values.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("conductivity {s} on element {e} is not positive")));
        }
        let mut values = self.fixed.clone();
        for (e, pos) in self.elem_pos.iter().enumerate() {
            let k = self.space.element_stiffness(e);
            let s = sigma.values[e];
            for (m, &(a, b)) in PAIRS.iter().enumerate() {
                values[pos[m]] += s * k[a][b];
            }
        }
        let matrix = SymMatrix { pattern: self.pattern.clone(), values };
        let chol = matrix.cholesky()?;
        Ok(CemSystem { op: self.clone(), sigma: sigma.clone(), matrix, chol })
    }

    /// The full (unpinned) system matrix as a dense array, assembled entry
    /// by entry from both triangles of every local matrix.
    pub fn dense_matrix(&self, sigma: &CellField) -> Vec<Vec<f64>> {
        let mesh = &self.space.mesh;
        let n = mesh.num_nodes();
        let l = self.layout.count;
        let mut a = vec![vec![0.0; n + l]; n + l];
        for (e, el) in mesh.elements.iter().enumerate() {
            let k = self.space.element_stiffness(e);
            for i in 0..6 {
                for j in 0..6 {
                    a[el[i]][el[j]] += sigma.values[e] * k[i][j];
                }
            }
        }
        for (k, edges) in self.electrode_edges.iter().enumerate() {
            let zi = 1.0 / self.layout.impedances[k];
            for (nodes, h) in edges {
                let m1 = line_mass(*h);
                let b1 = [h / 6.0, 2.0 * h / 3.0, h / 6.0];
                for i in 0..3 {
                    for j in 0..3 {
                        a[nodes[i]][nodes[j]] += zi * m1[i][j];
                    }
                    a[nodes[i]][n + k] -= zi * b1[i];
                    a[n + k][nodes[i]] -= zi * b1[i];
                }
            }
            a[n + k][n + k] += zi * self.electrode_len[k];
        }
        a
    }
}

fn line_mass(h: f64) -> [[f64; 3]; 3] {
    let c = h / 30.0;
    [[4.0 * c, 2.0 * c, -c], [2.0 * c, 16.0 * c, 2.0 * c], [-c, 2.0 * c, 4.0 * c]]
}

/// Factorized CEM system for one conductivity.
#[derive(Clone, Debug)]
pub struct CemSystem {
    pub op: Arc<CemOperator>,
    pub sigma: CellField,
    matrix: SymMatrix,
    chol: Cholesky,
}

impl CemSystem {
    fn n(&self) -> usize {
        self.op.space.num_nodes()
    }

    /// Solves the pinned system for a general right-hand side (potential
    /// part, voltage part). The right-hand side must annihilate constants.
    /// The returned pair has the first voltage equal to zero.
    pub fn solve_pinned(&self, rhs_phi: &[f64], rhs_volt: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let l = self.op.layout.count;
        let mut b = Vec::with_capacity(n + l - 1);
        b.extend_from_slice(rhs_phi);
        b.extend_from_slice(&rhs_volt[1..]);
        self.chol.solve_in_place(&mut b);
        let mut v = vec![0.0];
        v.extend_from_slice(&b[n..]);
        b.truncate(n);
        (b, v)
    }

    /// Shifts a (potential, voltage) pair by a constant so the potential has
    /// zero mean.
    pub fn ground(&self, phi: &mut [f64], volt: &mut [f64]) {
        let c = self.op.space.mean(phi);
        phi.iter_mut().for_each(|p| *p -= c);
        volt.iter_mut().for_each(|p| *p -= c);
    }

    /// Grounded solution for injected currents `currents`.
    pub fn solve(&self, currents: &[f64]) -> Result<CemSolution> {
        if currents.len() != self.op.layout.count {
            return Err(Error::InvalidInput("current vector length differs from electrode count".into()));
        }
        let (mut phi, mut volt) = self.solve_pinned(&vec![0.0; self.n()], currents);
        self.ground(&mut phi, &mut volt);
        if phi.iter().chain(&volt).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("CEM solve".into()));
        }
        Ok(CemSolution { phi: NodalField { values: phi }, volt })
    }

    /// (sum_e dsigma_e K_e) phi, the conductivity derivative of the system
    /// applied to a potential.
    pub fn apply_dsigma(&self, dsigma: &[f64], phi: &[f64]) -> Vec<f64> {
        let space = &self.op.space;
        let mut y = vec![0.0; phi.len()];
        for (e, el) in space.mesh.elements.iter().enumerate() {
            let k = space.element_stiffness(e);
            let d = dsigma[e];
            if d == 0.0 {
                continue;
            }
            for a in 0..6 {
                y[el[a]] += d * (0..6).map(|b| k[a][b] * phi[el[b]]).sum::<f64>();
            }
        }
        y
    }

    /// Per-element bilinear values lambda_e^T K_e phi_e.
    pub fn element_products(&self, lambda: &[f64], phi: &[f64]) -> Vec<f64> {
        let space = &self.op.space;
        space
            .mesh
            .elements
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let k = space.element_stiffness(e);
                let mut s = 0.0;
                for a in 0..6 {
                    s += lambda[el[a]] * (0..6).map(|b| k[a][b] * phi[el[b]]).sum::<f64>();
                }
                s
            })
            .collect()
    }

    /// Full unpinned matrix-vector product (for residual checks).
    pub fn apply_full(&self, phi: &[f64], volt: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut x = phi.to_vec();
        x.extend_from_slice(&volt[1..]);
        let mut y = self.matrix.matvec(&x);
        // restore the contribution of the pinned first voltage
        let l0 = self.op.layout.impedances[0];
        let mut y0 = self.op.electrode_len[0] / l0 * volt[0];
        for (nodes, h) in &self.op.electrode_edges[0] {
            let b1 = [h / 6.0, 2.0 * h / 3.0, h / 6.0];
            for i in 0..3 {
                y[nodes[i]] -= b1[i] / l0 * volt[0];
                y0 -= b1[i] / l0 * phi[nodes[i]];
            }
        }
        let mut yv = vec![y0];
        yv.extend_from_slice(&y[n..]);
        y.truncate(n);
        (y, yv)
    }
}

/// Stream potential: the H1 function with boundary values `trace` (at
/// [`FemSpace::boundary_nodes`]) minimising ||grad_perp psi - sigma grad phi||.
/// Returns the field and the relative residual of the linear solve.
pub fn stream_potential(
    space: &FemSpace,
    sigma: &CellField,
    phi: &NodalField,
    trace: &[f64],
) -> Result<(NodalField, f64)> {
    if trace.len() != space.boundary_nodes().len() {
        return Err(Error::InvalidInput("trace length differs from the number of boundary nodes".into()));
    }
    let mesh = &space.mesh;
    let mut rhs = vec![0.0; mesh.num_nodes()];
    for (e, el) in mesh.elements.iter().enumerate() {
        for q in 0..NQ {
            let w = space.weight(e, q) * sigma.values[e];
            let g = space.grad_at(e, q, &phi.values);
            let gr = space.grads(e, q);
            for a in 0..6 {
                rhs[el[a]] += w * dot(g, rot(gr[a]));
            }
        }
    }
    let mut lift = vec![0.0; mesh.num_nodes()];
    for (k, &n) in space.boundary_nodes().iter().enumerate() {
        lift[n] = trace[k];
    }
    let klift = space.stiffness_apply(&lift);
    let ni = space.num_interior();
    let mut b = vec![0.0; ni];
    for n in 0..mesh.num_nodes() {
        if let Some(i) = space.interior_index(n) {
            b[i] = rhs[n] - klift[n];
        }
    }
    let x = space.laplace_interior_factor().solve(&b);
    let r = space.laplace_interior().matvec(&x);
    let num: f64 = r.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|p| p * p).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut out = lift;
    for (n, o) in out.iter_mut().enumerate() {
        if let Some(i) = space.interior_index(n) {
            *o = x[i];
        }
    }
    Ok((NodalField { values: out }, num / den))
}

/// Element averages of sigma |grad phi|^2.
pub fn power_density(space: &FemSpace, sigma: &CellField, phi: &NodalField) -> CellField {
    let values = (0..space.num_elements())
        .map(|e| {
            let s: f64 = (0..NQ)
                .map(|q| {
                    let g = space.grad_at(e, q, &phi.values);
                    TRI_WEIGHTS[q] * dot(g, g)
                })
                .sum();
            sigma.values[e] * s
        })
        .collect();
    CellField { values }
}

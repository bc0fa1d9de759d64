//! P2 function space on a mesh: element tables, mass and stiffness matrices,
//! the product inner product (L2 on sigma, H1 on potentials), Riesz maps and
//! the projection onto the admissible set.

use std::sync::Arc;

use super::mesh::Mesh;
use super::quadrature::{p2_gradients, p2_values, NQ, TRI_POINTS, TRI_WEIGHTS};
use super::sparse::{Cholesky, SymMatrix, SymPattern};
use crate::base::{project_box, CellField, ConstraintSet, NodalField, State, VectorQuadField};
use crate::error::{Error, Result};

pub type Grad = [f64; 2];

/// Rotated gradient: grad_perp u = (-d_y u, d_x u).
#[inline]
pub fn rot(g: Grad) -> Grad {
    [-g[1], g[0]]
}

#[inline]
pub fn dot(a: Grad, b: Grad) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

const NONE: usize = usize::MAX;

#[derive(Debug)]
pub struct FemSpace {
    pub mesh: Arc<Mesh>,
    grads: Vec<[[Grad; 6]; NQ]>,
    shape: [[f64; 6]; NQ],
    stiff: Vec<[[f64; 6]; 6]>,
    mass_el: Vec<[[f64; 6]; 6]>,
    mass_vec: Vec<f64>,
    gram: SymMatrix,
    gram_chol: Cholesky,
    boundary_nodes: Vec<usize>,
    interior_index: Vec<usize>,
    num_interior: usize,
    laplace_ii: SymMatrix,
    laplace_ii_chol: Cholesky,
    gram_ii_chol: Cholesky,
}

impl FemSpace {
    pub fn new(mesh: Arc<Mesh>) -> Result<Self> {
        let ne = mesh.num_elements();
        let nn = mesh.num_nodes();
        let mut shape = [[0.0; 6]; NQ];
        for q in 0..NQ {
            shape[q] = p2_values(TRI_POINTS[q]);
        }
        let mut grads = Vec::with_capacity(ne);
        let mut stiff = Vec::with_capacity(ne);
        let mut mass_el = Vec::with_capacity(ne);
        for e in 0..ne {
            let gl = mesh.grad_lambda(e);
            let area = mesh.area(e);
            let mut g = [[[0.0; 2]; 6]; NQ];
            let mut k = [[0.0; 6]; 6];
            let mut m = [[0.0; 6]; 6];
            for q in 0..NQ {
                g[q] = p2_gradients(TRI_POINTS[q], gl);
                let w = area * TRI_WEIGHTS[q];
                for a in 0..6 {
                    for b in 0..6 {
                        k[a][b] += w * dot(g[q][a], g[q][b]);
                        m[a][b] += w * shape[q][a] * shape[q][b];
                    }
                }
            }
            grads.push(g);
            stiff.push(k);
            mass_el.push(m);
        }
        let mut mass_vec = vec![0.0; nn];
        for (e, el) in mesh.elements.iter().enumerate() {
            for a in 0..6 {
                mass_vec[el[a]] += mass_el[e][a].iter().sum::<f64>();
            }
        }
        let identity: Vec<usize> = (0..nn).collect();
        let pattern = Arc::new(element_pattern(&mesh, &identity, nn)?);
        let mut gram = SymMatrix::zeros(pattern);
        add_element_blocks(&mut gram, &mesh, &identity, |e, a, b| stiff[e][a][b] + mass_el[e][a][b]);
        let gram_chol = gram.cholesky()?;

        let boundary_nodes = mesh.boundary_nodes();
        let mut interior_index = vec![NONE; nn];
        let mut ni = 0;
        for (n, idx) in interior_index.iter_mut().enumerate() {
            if !mesh.is_boundary_node(n) {
                *idx = ni;
                ni += 1;
            }
        }
        if ni == 0 {
            return Err(Error::Mesh("mesh has no interior nodes".into()));
        }
        let pat_ii = Arc::new(element_pattern(&mesh, &interior_index, ni)?);
        let mut laplace_ii = SymMatrix::zeros(pat_ii.clone());
        add_element_blocks(&mut laplace_ii, &mesh, &interior_index, |e, a, b| stiff[e][a][b]);
        let laplace_ii_chol = laplace_ii.cholesky()?;
        let mut gram_ii = SymMatrix::zeros(pat_ii);
        add_element_blocks(&mut gram_ii, &mesh, &interior_index, |e, a, b| stiff[e][a][b] + mass_el[e][a][b]);
        let gram_ii_chol = gram_ii.cholesky()?;
        Ok(FemSpace {
            mesh,
            grads,
            shape,
            stiff,
            mass_el,
            mass_vec,
            gram,
            gram_chol,
            boundary_nodes,
            interior_index,
            num_interior: ni,
            laplace_ii,
            laplace_ii_chol,
            gram_ii_chol,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    /// Shape function gradients of element `e` at quadrature point `q`.
    #[inline]
    pub fn grads(&self, e: usize, q: usize) -> &[Grad; 6] {
        &self.grads[e][q]
    }

    #[inline]
    pub fn shape(&self, q: usize) -> &[f64; 6] {
        &self.shape[q]
    }

    /// Quadrature weight (including the element area) of point `q` in `e`.
    #[inline]
    pub fn weight(&self, e: usize, q: usize) -> f64 {
        self.mesh.area(e) * TRI_WEIGHTS[q]
    }

    #[inline]
    pub fn grad_at(&self, e: usize, q: usize, u: &[f64]) -> Grad {
        let el = &self.mesh.elements[e];
        let g = &self.grads[e][q];
        let mut out = [0.0; 2];
        for a in 0..6 {
            let c = u[el[a]];
            out[0] += c * g[a][0];
            out[1] += c * g[a][1];
        }
        out
    }

    #[inline]
    pub fn value_at(&self, e: usize, q: usize, u: &[f64]) -> f64 {
        let el = &self.mesh.elements[e];
        (0..6).map(|a| u[el[a]] * self.shape[q][a]).sum()
    }

    /// Unit-conductivity element stiffness matrix.
    pub fn element_stiffness(&self, e: usize) -> &[[f64; 6]; 6] {
        &self.stiff[e]
    }

    pub fn element_mass(&self, e: usize) -> &[[f64; 6]; 6] {
        &self.mass_el[e]
    }

    /// `int_Omega N_a` for every node.
    pub fn mass_vector(&self) -> &[f64] {
        &self.mass_vec
    }

    pub fn domain_area(&self) -> f64 {
        self.mesh.areas().iter().sum()
    }

    pub fn mean(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.mass_vec).map(|(a, b)| a * b).sum::<f64>() / self.domain_area()
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    /// Index of node `n` among the interior nodes.
    pub fn interior_index(&self, n: usize) -> Option<usize> {
        let i = self.interior_index[n];
        (i != NONE).then_some(i)
    }

    pub fn num_interior(&self) -> usize {
        self.num_interior
    }

    /// Mass + stiffness Gram matrix of the H1 inner product.
    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn laplace_interior(&self) -> &SymMatrix {
        &self.laplace_ii
    }

    pub(crate) fn laplace_interior_factor(&self) -> &Cholesky {
        &self.laplace_ii_chol
    }

    /// Unit-conductivity stiffness applied to `u` (all nodes).
    pub fn stiffness_apply(&self, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; u.len()];
        for (e, el) in self.mesh.elements.iter().enumerate() {
            let k = &self.stiff[e];
            for a in 0..6 {
                y[el[a]] += (0..6).map(|b| k[a][b] * u[el[b]]).sum::<f64>();
            }
        }
        y
    }

    pub fn inner_cell(&self, a: &CellField, b: &CellField) -> f64 {
        a.values.iter().zip(&b.values).zip(self.mesh.areas()).map(|((x, y), w)| x * y * w).sum()
    }

    pub fn inner_nodal(&self, a: &NodalField, b: &NodalField) -> f64 {
        self.gram.quad_form(&a.values, &b.values)
    }

    pub fn inner_state(&self, a: &State, b: &State) -> f64 {
        let mut s = match (&a.sigma, &b.sigma) {
            (Some(x), Some(y)) => self.inner_cell(x, y),
            _ => 0.0,
        };
        for (x, y) in a.phi.iter().zip(&b.phi).chain(a.psi.iter().zip(&b.psi)) {
            s += self.inner_nodal(x, y);
        }
        s
    }

    /// L2 Riesz representative of a dual vector on cells.
    pub fn riesz_cell(&self, dual: &[f64]) -> CellField {
        CellField { values: dual.iter().zip(self.mesh.areas()).map(|(d, a)| d / a).collect() }
    }

    /// H1 Riesz representative of a dual vector on nodes.
    pub fn riesz_nodal(&self, dual: &[f64]) -> NodalField {
        NodalField { values: self.gram_chol.solve(dual) }
    }

    /// Riesz representative of a state of dual (derivative) coefficients.
    pub fn riesz_state(&self, dual: &State) -> State {
        State {
            sigma: dual.sigma.as_ref().map(|s| self.riesz_cell(&s.values)),
            phi: dual.phi.iter().map(|f| self.riesz_nodal(&f.values)).collect(),
            psi: dual.psi.iter().map(|f| self.riesz_nodal(&f.values)).collect(),
        }
    }

    /// Dual coefficients of a primal state (inverse Riesz map).
    pub fn to_dual(&self, x: &State) -> State {
        State {
            sigma: x.sigma.as_ref().map(|s| CellField {
                values: s.values.iter().zip(self.mesh.areas()).map(|(v, a)| v * a).collect(),
            }),
            phi: x.phi.iter().map(|f| NodalField { values: self.gram.matvec(&f.values) }).collect(),
            psi: x.psi.iter().map(|f| NodalField { values: self.gram.matvec(&f.values) }).collect(),
        }
    }

    /// H1-orthogonal projection of `u` onto {v : v = g on boundary nodes}.
    pub fn project_dirichlet(&self, u: &NodalField, trace: &[f64]) -> NodalField {
        let mut d = vec![0.0; u.len()];
        for (k, &n) in self.boundary_nodes.iter().enumerate() {
            d[n] = trace[k] - u.values[n];
        }
        let r = self.gram.matvec(&d);
        let mut rhs = vec![0.0; self.num_interior];
        for (n, &i) in self.interior_index.iter().enumerate() {
            if i != NONE {
                rhs[i] = -r[n];
            }
        }
        self.gram_ii_chol.solve_in_place(&mut rhs);
        let mut out = u.values.clone();
        for (n, &i) in self.interior_index.iter().enumerate() {
            if i != NONE {
                out[n] += rhs[i];
            } else {
                out[n] += d[n];
            }
        }
        NodalField { values: out }
    }

    /// Metric projection onto the admissible set: box clamp on sigma, mean
    /// removal on each phi and the affine Dirichlet projection on each psi.
    pub fn project_state(&self, x: &State, c: &ConstraintSet) -> Result<State> {
        let sigma = x.sigma.as_ref().map(|s| project_box(s, &c.bounds));
        let phi = if c.mean_zero_phi {
            x.phi.iter().map(|f| crate::base::project_mean_zero(f, &self.mass_vec)).collect()
        } else {
            x.phi.clone()
        };
        let psi = match &c.psi_trace {
            Some(traces) => {
                if traces.len() != x.psi.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} stream potential traces for {} stream potentials",
                        traces.len(),
                        x.psi.len()
                    )));
                }
                x.psi.iter().zip(traces).map(|(f, t)| self.project_dirichlet(f, t)).collect()
            }
            None => x.psi.clone(),
        };
        Ok(State { sigma, phi, psi })
    }

    /// Nodal interpolant of a function.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> NodalField {
        NodalField { values: self.mesh.nodes.iter().map(|&p| f(p)).collect() }
    }

    /// Per-element values of a function at the element centroids.
    pub fn cell_interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> CellField {
        CellField { values: (0..self.num_elements()).map(|e| f(self.mesh.centroid(e))).collect() }
    }

    /// L2 norm of a P2 field.
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        let mut s = 0.0;
        for (e, el) in self.mesh.elements.iter().enumerate() {
            let m = &self.mass_el[e];
            for a in 0..6 {
                for b in 0..6 {
                    s += u[el[a]] * m[a][b] * u[el[b]];
                }
            }
        }
        s.max(0.0).sqrt()
    }

    /// Mean-zero solution of -Laplace u = 0 with Neumann data `flux(x, normal)`
    /// on the polygonal boundary.
    pub fn solve_neumann(&self, flux: impl Fn([f64; 2], [f64; 2]) -> f64) -> Result<NodalField> {
        use super::quadrature::{p2_line_values, LINE_POINTS, LINE_WEIGHTS};
        let mesh = &self.mesh;
        let mut rhs = vec![0.0; mesh.num_nodes()];
        for e in &mesh.boundary {
            let p = mesh.nodes[e.nodes[0]];
            let q = mesh.nodes[e.nodes[2]];
            let nu = [(q[1] - p[1]) / e.length, -(q[0] - p[0]) / e.length];
            for (t, w) in LINE_POINTS.iter().zip(LINE_WEIGHTS) {
                let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                let g = flux(x, nu) * w * e.length;
                for (k, v) in p2_line_values(*t).iter().enumerate() {
                    rhs[e.nodes[k]] += g * v;
                }
            }
        }
        let identity: Vec<usize> = (0..mesh.num_nodes()).collect();
        let mut k = SymMatrix::zeros(self.gram.pattern.clone());
        add_element_blocks(&mut k, mesh, &identity, |e, a, b| self.stiff[e][a][b]);
        for j in 0..mesh.num_nodes() {
            if let Some(p) = k.pattern.position(j, 0) {
                k.values[p] = 0.0;
            }
        }
        k.add(0, 0, 1.0);
        rhs[0] = 0.0;
        let mut u = k.cholesky()?.solve(&rhs);
        let m = self.mean(&u);
        u.iter_mut().for_each(|x| *x -= m);
        Ok(NodalField { values: u })
    }

    /// L2 distance between a P2 field and a function, both taken modulo
    /// constants (the mean of the difference is removed).
    pub fn l2_error_against(&self, u: &[f64], f: impl Fn([f64; 2]) -> f64) -> f64 {
        let mut d = Vec::with_capacity(self.num_elements() * NQ);
        let mut mean = 0.0;
        for e in 0..self.num_elements() {
            for q in 0..NQ {
                let x = self.mesh.map_point(e, TRI_POINTS[q]);
                let v = self.value_at(e, q, u) - f(x);
                let w = self.weight(e, q);
                mean += w * v;
                d.push((w, v));
            }
        }
        mean /= self.domain_area();
        d.iter().map(|(w, v)| w * (v - mean) * (v - mean)).sum::<f64>().sqrt()
    }

    /// Gradient of a P2 field at every quadrature point.
    pub fn gradient_field(&self, u: &NodalField) -> VectorQuadField {
        let vectors = (0..self.num_elements())
            .flat_map(|e| (0..NQ).map(move |q| (e, q)))
            .map(|(e, q)| self.grad_at(e, q, &u.values))
            .collect();
        VectorQuadField { vectors }
    }

    /// Rotated gradient (-d_y u, d_x u) at every quadrature point.
    pub fn perp_gradient_field(&self, u: &NodalField) -> VectorQuadField {
        let mut f = self.gradient_field(u);
        f.vectors.iter_mut().for_each(|g| *g = rot(*g));
        f
    }

    /// L2 norm of a cell field.
    pub fn cell_l2_norm(&self, u: &[f64]) -> f64 {
        u.iter().zip(self.mesh.areas()).map(|(v, a)| v * v * a).sum::<f64>().sqrt()
    }
}

/// Pattern of all element couplings between mapped degrees of freedom.
pub(crate) fn element_pattern(mesh: &Mesh, map: &[usize], n: usize) -> Result<SymPattern> {
    let mut entries = Vec::with_capacity(mesh.num_elements() * 21);
    for el in &mesh.elements {
        for a in 0..6 {
            for b in 0..=a {
                let (i, j) = (map[el[a]], map[el[b]]);
                if i != NONE && j != NONE {
                    entries.push((i, j));
                }
            }
        }
    }
    SymPattern::new(n, entries)
}

/// Adds element contributions `f(e, a, b)` to the lower triangle.
pub(crate) fn add_element_blocks(
    m: &mut SymMatrix,
    mesh: &Mesh,
    map: &[usize],
    f: impl Fn(usize, usize, usize) -> f64,
) {
    for (e, el) in mesh.elements.iter().enumerate() {
        for a in 0..6 {
            for b in 0..6 {
                let (i, j) = (map[el[a]], map[el[b]]);
                if i != NONE && j != NONE && i >= j {
                    m.add(i, j, f(e, a, b));
                }
            }
        }
    }
}

//! Boundary residuals of the electrode observation term. On gaps the
//! stream potential is compared with the cumulative currents; on
//! electrodes the running integral of the potential minus z times the
//! stream potential is compared with the voltage line
//! -z jbar_{l-1} + v_l d(x). Each row is a linear functional of
//! (phi, psi) evaluated at a 3-point Gauss node of a boundary edge.

use crate::base::Excitations;
use crate::error::{Error, Result};
use crate::fem::quadrature::{p2_line_integrals, p2_line_values, LINE_POINTS, LINE_WEIGHTS};
use crate::fem::{CemOperator, SegmentTag};

#[derive(Clone, Debug)]
enum RowKind {
    Gap(usize),
    /// electrode index and arc length from its start
    Electrode(usize, f64),
}

#[derive(Clone, Debug)]
struct Row {
    sqrt_w: f64,
    phi: Vec<(usize, f64)>,
    psi: Vec<(usize, f64)>,
    kind: RowKind,
}

/// Linear boundary operator of the electrode observation term.
#[derive(Clone, Debug)]
pub struct EitBoundary {
    rows: Vec<Row>,
    impedances: Vec<f64>,
}

impl EitBoundary {
    pub fn new(cem: &CemOperator) -> Result<Self> {
        let mesh = &cem.space.mesh;
        let l = cem.num_electrodes();
        let mut rows = Vec::new();
        for k in 0..l {
            let z = cem.layout.impedances[k];
            let mut acc: Vec<(usize, f64)> = Vec::new();
            let mut d0 = 0.0;
            for (nodes, h) in cem.electrode_edges(k) {
                for (t, w) in LINE_POINTS.iter().zip(LINE_WEIGHTS) {
                    let mut phi = acc.clone();
                    for (a, c) in p2_line_integrals(*t).iter().enumerate() {
                        phi.push((nodes[a], h * c));
                    }
                    let psi = p2_line_values(*t).iter().enumerate().map(|(a, v)| (nodes[a], -z * v)).collect();
                    rows.push(Row { sqrt_w: (w * h).sqrt(), phi, psi, kind: RowKind::Electrode(k, d0 + t * h) });
                }
                for (a, c) in [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0].iter().enumerate() {
                    acc.push((nodes[a], h * c));
                }
                d0 += h;
            }
        }
        for e in &mesh.boundary {
            match e.tag {
                SegmentTag::Gap(k) => {
                    for (t, w) in LINE_POINTS.iter().zip(LINE_WEIGHTS) {
                        let psi = p2_line_values(*t).iter().enumerate().map(|(a, v)| (e.nodes[a], *v)).collect();
                        rows.push(Row { sqrt_w: (w * e.length).sqrt(), phi: Vec::new(), psi, kind: RowKind::Gap(k) });
                    }
                }
                SegmentTag::Electrode(_) => {}
                SegmentTag::Free => return Err(Error::Mesh("boundary segment without electrode/gap tag".into())),
            }
        }
        Ok(EitBoundary { rows, impedances: cem.layout.impedances.clone() })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Weighted data of every row for excitation `i` with measured voltages `volt`.
    pub fn data(&self, excitations: &Excitations, i: usize, volt: &[f64]) -> Vec<f64> {
        let cum = excitations.cumulative(i);
        self.rows
            .iter()
            .map(|r| {
                let v = match r.kind {
                    RowKind::Gap(k) => cum[k],
                    RowKind::Electrode(k, d) => {
                        let before = if k == 0 { 0.0 } else { cum[k - 1] };
                        -self.impedances[k] * before + volt[k] * d
                    }
                };
                r.sqrt_w * v
            })
            .collect()
    }

    /// Weighted operator applied to (phi, psi).
    pub fn apply(&self, phi: &[f64], psi: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let a: f64 = r.phi.iter().map(|&(n, c)| c * phi[n]).sum();
                let b: f64 = r.psi.iter().map(|&(n, c)| c * psi[n]).sum();
                r.sqrt_w * (a + b)
            })
            .collect()
    }

    /// Transposed operator: accumulates into dual vectors for phi and psi.
    pub fn apply_t(&self, rho: &[f64], gphi: &mut [f64], gpsi: &mut [f64]) {
        for (r, &p) in self.rows.iter().zip(rho) {
            let s = r.sqrt_w * p;
            for &(n, c) in &r.phi {
                gphi[n] += s * c;
            }
            for &(n, c) in &r.psi {
                gpsi[n] += s * c;
            }
        }
    }
}

/// Stream potential trace (at the boundary nodes) of a CEM solution: the
/// cumulative currents on gaps and, on electrodes, the value that makes
/// every electrode row vanish at the nodes.
pub fn consistent_trace(cem: &CemOperator, excitations: &Excitations, i: usize, phi: &[f64], volt: &[f64]) -> Vec<f64> {
    let cum = excitations.cumulative(i);
    let mut running = vec![0.0; cem.num_electrodes()];
    let half = p2_line_integrals(0.5);
    let mut out = Vec::with_capacity(2 * cem.space.mesh.boundary.len());
    let mut d = vec![0.0; cem.num_electrodes()];
    for e in &cem.space.mesh.boundary {
        match e.tag {
            SegmentTag::Electrode(k) => {
                let z = cem.layout.impedances[k];
                let before = if k == 0 { 0.0 } else { cum[k - 1] };
                let at = |integral: f64, d: f64| (integral + z * before - volt[k] * d) / z;
                out.push(at(running[k], d[k]));
                let mid: f64 = (0..3).map(|a| e.length * half[a] * phi[e.nodes[a]]).sum();
                out.push(at(running[k] + mid, d[k] + 0.5 * e.length));
                running[k] += e.length * (phi[e.nodes[0]] + 4.0 * phi[e.nodes[1]] + phi[e.nodes[2]]) / 6.0;
                d[k] += e.length;
            }
            SegmentTag::Gap(k) => out.extend([cum[k], cum[k]]),
            SegmentTag::Free => out.extend([0.0, 0.0]),
        }
    }
    out
}

//! Triangular P2 meshes of polygonal domains and the ring-based disk generator.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::base::ElectrodeLayout;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentTag {
    Electrode(usize),
    Gap(usize),
    Free,
}

/// A straight boundary edge carrying a quadratic trace.
#[derive(Clone, Debug)]
pub struct BoundaryEdge {
    /// start vertex, midpoint node, end vertex (counterclockwise)
    pub nodes: [usize; 3],
    pub tag: SegmentTag,
    /// arc length of the start vertex measured from the first boundary vertex
    pub s0: f64,
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    /// P2 nodes: the `num_vertices` triangle vertices first, then edge midpoints
    pub nodes: Vec<[f64; 2]>,
    pub num_vertices: usize,
    /// local order: vertices 0,1,2 then midpoints of edges (0,1), (1,2), (2,0)
    pub elements: Vec<[usize; 6]>,
    /// closed counterclockwise loop
    pub boundary: Vec<BoundaryEdge>,
    /// `parents[k][e]` is the level-k parent of level-(k+1) element `e`
    pub parents: Vec<Vec<usize>>,
    areas: Vec<f64>,
    grad_lambda: Vec<[[f64; 2]; 3]>,
    boundary_flag: Vec<bool>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Builds the P2 mesh on a conforming triangulation. Triangles are
    /// reoriented counterclockwise. The boundary loop starts at
    /// `boundary_start` when given, else at the smallest boundary vertex.
    pub fn from_p1(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_start: Option<usize>,
    ) -> Result<Mesh> {
        let nv = vertices.len();
        let mut nodes = vertices;
        let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut elements = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let mut t = *t;
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::Mesh(format!("triangle {t:?} references a missing vertex")));
            }
            let a = signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if a.abs() < 1e-300 {
                return Err(Error::Mesh(format!("degenerate triangle {t:?}")));
            }
            if a < 0.0 {
                t.swap(1, 2);
            }
            let mut el = [t[0], t[1], t[2], 0, 0, 0];
            for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                let key = (t[i].min(t[j]), t[i].max(t[j]));
                *edge_count.entry(key).or_insert(0) += 1;
                let id = *edge_mid.entry(key).or_insert_with(|| {
                    let p = nodes[t[i]];
                    let q = nodes[t[j]];
                    nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                    nodes.len() - 1
                });
                el[3 + k] = id;
            }
            elements.push(el);
        }
        if let Some((k, c)) = edge_count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::Mesh(format!("edge {k:?} shared by {c} triangles")));
        }
        // boundary edges oriented as they appear in their (ccw) triangle
        let mut next: HashMap<usize, (usize, usize)> = HashMap::new();
        for el in &elements {
            for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                let key = (el[i].min(el[j]), el[i].max(el[j]));
                if edge_count[&key] == 1 && next.insert(el[i], (el[j], el[3 + k])).is_some() {
                    return Err(Error::Mesh("boundary is not a simple loop".into()));
                }
            }
        }
        if next.is_empty() {
            return Err(Error::Mesh("mesh has no boundary".into()));
        }
        let start = match boundary_start {
            Some(s) if next.contains_key(&s) => s,
            Some(s) => return Err(Error::Mesh(format!("vertex {s} is not on the boundary"))),
            None => *next.keys().min().unwrap(),
        };
        let mut boundary = Vec::with_capacity(next.len());
        let mut cur = start;
        loop {
            let (to, mid) = next[&cur];
            boundary.push(BoundaryEdge {
                nodes: [cur, mid, to],
                tag: SegmentTag::Free,
                s0: 0.0,
                length: 0.0,
            });
            cur = to;
            if cur == start {
                break;
            }
            if boundary.len() > next.len() {
                return Err(Error::Mesh("boundary loop does not close".into()));
            }
        }
        if boundary.len() != next.len() {
            return Err(Error::Mesh("boundary consists of several loops".into()));
        }
        let mut mesh = Mesh {
            nodes,
            num_vertices: nv,
            elements,
            boundary,
            parents: Vec::new(),
            areas: Vec::new(),
            grad_lambda: Vec::new(),
            boundary_flag: Vec::new(),
        };
        mesh.finish();
        Ok(mesh)
    }

    fn finish(&mut self) {
        self.areas.clear();
        self.grad_lambda.clear();
        for el in &self.elements {
            let [a, b, c] = [self.nodes[el[0]], self.nodes[el[1]], self.nodes[el[2]]];
            let area = signed_area(a, b, c);
            let d = 2.0 * area;
            // grad of barycentric coordinate i is rot(edge opposite i) / (2 area)
            let gl = [
                [(b[1] - c[1]) / d, (c[0] - b[0]) / d],
                [(c[1] - a[1]) / d, (a[0] - c[0]) / d],
                [(a[1] - b[1]) / d, (b[0] - a[0]) / d],
            ];
            self.areas.push(area);
            self.grad_lambda.push(gl);
        }
        let mut s = 0.0;
        for e in self.boundary.iter_mut() {
            let p = self.nodes[e.nodes[0]];
            let q = self.nodes[e.nodes[2]];
            e.s0 = s;
            e.length = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            s += e.length;
        }
        self.boundary_flag = vec![false; self.nodes.len()];
        for e in &self.boundary {
            for &n in &e.nodes {
                self.boundary_flag[n] = true;
            }
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn area(&self, e: usize) -> f64 {
        self.areas[e]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn grad_lambda(&self, e: usize) -> &[[f64; 2]; 3] {
        &self.grad_lambda[e]
    }

    pub fn level(&self) -> usize {
        self.parents.len()
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        self.boundary_flag[n]
    }

    /// Boundary nodes in loop order: start vertex and midpoint of each edge.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.boundary.iter().flat_map(|e| [e.nodes[0], e.nodes[1]]).collect()
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary.iter().map(|e| e.length).sum()
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let el = &self.elements[e];
        let mut c = [0.0; 2];
        for &v in &el[..3] {
            c[0] += self.nodes[v][0] / 3.0;
            c[1] += self.nodes[v][1] / 3.0;
        }
        c
    }

    /// Physical coordinates of barycentric point `l` in element `e`.
    pub fn map_point(&self, e: usize, l: [f64; 3]) -> [f64; 2] {
        let el = &self.elements[e];
        let mut x = [0.0; 2];
        for i in 0..3 {
            x[0] += l[i] * self.nodes[el[i]][0];
            x[1] += l[i] * self.nodes[el[i]][1];
        }
        x
    }

    /// Barycentric coordinates of `x` with respect to element `e`.
    pub fn barycentric(&self, e: usize, x: [f64; 2]) -> [f64; 3] {
        let el = &self.elements[e];
        let a = self.nodes[el[0]];
        let gl = &self.grad_lambda[e];
        let l1 = gl[1][0] * (x[0] - a[0]) + gl[1][1] * (x[1] - a[1]);
        let l2 = gl[2][0] * (x[0] - a[0]) + gl[2][1] * (x[1] - a[1]);
        [1.0 - l1 - l2, l1, l2]
    }

    /// Area of the boundary polygon by the shoelace formula.
    pub fn polygon_area(&self) -> f64 {
        let mut s = 0.0;
        for e in &self.boundary {
            let p = self.nodes[e.nodes[0]];
            let q = self.nodes[e.nodes[2]];
            s += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * s
    }

    /// Relabels boundary edges by the polar angle of their midpoints.
    pub fn tag_by_angle(&mut self, layout: &ElectrodeLayout) {
        for e in self.boundary.iter_mut() {
            let p = self.nodes[e.nodes[0]];
            let q = self.nodes[e.nodes[2]];
            let ang = (0.5 * (p[1] + q[1])).atan2(0.5 * (p[0] + q[0]));
            e.tag = layout.segment_at(ang.rem_euclid(2.0 * PI));
        }
    }

    /// Red refinement: every triangle is split into four. New boundary
    /// vertices are passed through `boundary_map` (e.g. radial projection).
    pub fn refine(&self, boundary_map: Option<&dyn Fn([f64; 2]) -> [f64; 2]>) -> Result<Mesh> {
        let mut verts = self.nodes.clone();
        if let Some(f) = boundary_map {
            for e in &self.boundary {
                verts[e.nodes[1]] = f(verts[e.nodes[1]]);
            }
        }
        let mut tris = Vec::with_capacity(4 * self.elements.len());
        let mut parent = Vec::with_capacity(4 * self.elements.len());
        for (k, el) in self.elements.iter().enumerate() {
            let [v0, v1, v2, m01, m12, m20] = *el;
            tris.push([v0, m01, m20]);
            tris.push([m01, v1, m12]);
            tris.push([m20, m12, v2]);
            tris.push([m01, m12, m20]);
            parent.extend([k; 4]);
        }
        let start = self.boundary[0].nodes[0];
        let mut fine = Mesh::from_p1(verts, tris, Some(start))?;
        let tag_of_mid: HashMap<usize, SegmentTag> =
            self.boundary.iter().map(|e| (e.nodes[1], e.tag)).collect();
        for e in fine.boundary.iter_mut() {
            let old_mid = if tag_of_mid.contains_key(&e.nodes[0]) { e.nodes[0] } else { e.nodes[2] };
            e.tag = tag_of_mid[&old_mid];
        }
        fine.parents = self.parents.clone();
        fine.parents.push(parent);
        Ok(fine)
    }

    /// Ancestor of every element at the coarser `level`.
    pub fn ancestors(&self, level: usize) -> Result<Vec<usize>> {
        if level > self.level() {
            return Err(Error::InvalidInput(format!(
                "level {level} is finer than the mesh level {}",
                self.level()
            )));
        }
        let mut map: Vec<usize> = (0..self.num_elements()).collect();
        for k in (level..self.level()).rev() {
            for m in map.iter_mut() {
                *m = self.parents[k][*m];
            }
        }
        Ok(map)
    }

    /// Edges of a given tag in loop order.
    pub fn edges_with_tag(&self, tag: SegmentTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary.iter().filter(move |e| e.tag == tag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ring {
    /// one point per segment, at its centre
    One,
    /// two points per segment at 1/4 and 3/4
    Two,
    /// three points per segment at 1/6, 1/2, 5/6
    Staggered,
    /// three points per segment at 0, 1/3, 2/3
    Aligned,
}

impl Ring {
    fn fractions(self) -> &'static [f64] {
        match self {
            Ring::One => &[0.5],
            Ring::Two => &[0.25, 0.75],
            Ring::Staggered => &[1.0 / 6.0, 0.5, 5.0 / 6.0],
            Ring::Aligned => &[0.0, 1.0 / 3.0, 2.0 / 3.0],
        }
    }
}

/// Ring types from the centre outwards. Consecutive rings are chosen so that
/// every electrode and gap centre line carries a vertex of each strip, which
/// keeps the mesh mirror symmetric about those lines.
fn ring_sequence(rings: usize) -> Result<Vec<Ring>> {
    match rings {
        2 => Ok(vec![Ring::One, Ring::Aligned]),
        r if r >= 4 && r % 2 == 0 => {
            let mut seq = vec![Ring::One, Ring::Two];
            for k in 2..r {
                seq.push(if k % 2 == 0 { Ring::Staggered } else { Ring::Aligned });
            }
            Ok(seq)
        }
        r => Err(Error::InvalidInput(format!("ring count must be 2 or an even number >= 4, got {r}"))),
    }
}

/// Positive when `d` lies inside the circumcircle of `a, b, c` (either orientation).
fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let r = |p: [f64; 2]| {
        let (x, y) = (p[0] - d[0], p[1] - d[1]);
        [x, y, x * x + y * y]
    };
    let orient = signed_area(a, b, c).signum();
    let (a, b, c) = (r(a), r(b), r(c));
    orient * (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0]))
}

/// Triangulates the annulus between two rings of points (angles sorted in
/// [0, 2pi)). A strip triangulation is a cyclic word over {advance inner,
/// advance outer}; the angular zipper gives the initial word, then adjacent
/// letters are swapped (edge flips) until every cross edge is locally
/// Delaunay. The result is the strip's constrained Delaunay triangulation,
/// which is unique for non-cocircular input and therefore inherits the
/// symmetries of the point set.
fn zip_rings(
    inner: &[usize],
    inner_ang: &[f64],
    outer: &[usize],
    outer_ang: &[f64],
    pts: &[[f64; 2]],
) -> Vec<[usize; 3]> {
    let (m, n) = (inner.len(), outer.len());
    let a0 = inner_ang[0];
    let mut j0 = n - 1;
    for (j, &b) in outer_ang.iter().enumerate() {
        if b <= a0 {
            j0 = j;
        }
    }
    // merged order after inner point 0, cyclically
    let mut seq: Vec<(f64, bool)> = inner_ang[1..]
        .iter()
        .map(|&a| (a, true))
        .chain(outer_ang.iter().map(|&b| (if b <= a0 { b + 2.0 * PI } else { b }, false)))
        .chain(std::iter::once((a0 + 2.0 * PI, true)))
        .collect();
    seq.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut word: Vec<bool> = seq.iter().map(|s| s.1).collect();
    let (mut i0, mut j0) = (0usize, j0);
    let ip = |i: usize| pts[inner[i % m]];
    let op = |j: usize| pts[outer[j % n]];
    let len = word.len();
    let mut quiet = 0;
    let mut guard = 0;
    while quiet < len && guard < 100 * len * len {
        guard += 1;
        let mut flipped = false;
        let (mut i, mut j) = (i0, j0);
        for k in 0..len - 1 {
            if word[k] != word[k + 1] {
                // quad a_i, a_{i+1}, b_{j+1}, b_j in both cases; strip triangles are clockwise
                let (ai, ai1, bj, bj1) = (ip(i), ip(i + 1), op(j), op(j + 1));
                let bad = if word[k] {
                    // triangles (a_i, a_{i+1}, b_j), (a_{i+1}, b_{j+1}, b_j)
                    incircle(ai, ai1, bj, bj1) > 1e-12
                        && signed_area(ai, bj1, bj) < 0.0
                        && signed_area(ai, ai1, bj1) < 0.0
                } else {
                    // triangles (a_i, b_{j+1}, b_j), (a_i, a_{i+1}, b_{j+1})
                    incircle(ai, bj1, bj, ai1) > 1e-12
                        && signed_area(ai, ai1, bj) < 0.0
                        && signed_area(ai1, bj1, bj) < 0.0
                };
                if bad {
                    word.swap(k, k + 1);
                    flipped = true;
                }
            }
            if word[k] {
                i += 1;
            } else {
                j += 1;
            }
        }
        quiet = if flipped { 0 } else { quiet + 1 };
        // rotate so that the wrap-around pair is examined on later passes
        let first = word.remove(0);
        word.push(first);
        if first {
            i0 += 1;
        } else {
            j0 += 1;
        }
    }
    let (mut i, mut j) = (i0, j0);
    let mut tris = Vec::with_capacity(len);
    for &adv_inner in &word {
        if adv_inner {
            tris.push([inner[i % m], inner[(i + 1) % m], outer[j % n]]);
            i += 1;
        } else {
            tris.push([inner[i % m], outer[(j + 1) % n], outer[j % n]]);
            j += 1;
        }
    }
    tris
}

/// Disk mesh with `rings` concentric rings of vertices, refined `level` times
/// by red refinement with new boundary vertices projected to the unit circle.
/// Electrode and gap endpoints are vertices at every level.
///
/// `rings = 6, level = 0` gives 432 triangles and 913 P2 nodes.
pub fn build_disk_mesh(rings: usize, level: usize, layout: &ElectrodeLayout) -> Result<Mesh> {
    layout.validate()?;
    let seq = ring_sequence(rings)?;
    let nseg = 2 * layout.count;
    let mut verts = vec![[0.0, 0.0]];
    let mut ring_ids: Vec<Vec<usize>> = Vec::new();
    let mut ring_ang: Vec<Vec<f64>> = Vec::new();
    for (k, ring) in seq.iter().enumerate() {
        let r = (k + 1) as f64 / rings as f64;
        let mut ids = Vec::new();
        let mut angs = Vec::new();
        for s in 0..nseg {
            let (a0, w) = layout.segment_arc(s);
            for &f in ring.fractions() {
                let a = a0 + f * w;
                // interior gap points sit slightly inside their ring so that the
                // point set is not also symmetric about electrode/gap junctions
                let r = if k + 1 < rings && s % 2 == 1 && f > 0.0 { r - 0.1 / rings as f64 } else { r };
                ids.push(verts.len());
                angs.push(a);
                verts.push([r * a.cos(), r * a.sin()]);
            }
        }
        ring_ids.push(ids);
        ring_ang.push(angs);
    }
    let mut tris = Vec::new();
    let first = &ring_ids[0];
    for i in 0..first.len() {
        tris.push([0, first[i], first[(i + 1) % first.len()]]);
    }
    for k in 0..seq.len() - 1 {
        tris.extend(zip_rings(&ring_ids[k], &ring_ang[k], &ring_ids[k + 1], &ring_ang[k + 1], &verts));
    }
    let start = *ring_ids.last().unwrap().first().unwrap();
    let mut mesh = Mesh::from_p1(verts, tris, Some(start))?;
    mesh.tag_by_angle(layout);
    let project = |p: [f64; 2]| {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        [p[0] / r, p[1] / r]
    };
    for _ in 0..level {
        mesh = mesh.refine(Some(&project))?;
    }
    Ok(mesh)
}

/// Uniform right-triangle mesh of the square [x0, x0 + h n] x [y0, y0 + h n].
pub fn square_mesh(n: usize, x0: f64, y0: f64, h: f64) -> Result<Mesh> {
    let mut verts = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            verts.push([x0 + h * i as f64, y0 + h * j as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut tris = Vec::new();
    for j in 0..n {
        for i in 0..n {
            tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::from_p1(verts, tris, Some(0))
}

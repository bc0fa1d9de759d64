//! Synthetic data on a fine mesh, transfer to the reconstruction mesh, the
//! multiplicative noise model and the plain-text data files.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::base::{CellField, VectorQuadField};
use crate::error::{Error, Result};
use crate::fem::quadrature::{p2_gradients, NQ, TRI_POINTS};
use crate::fem::{power_density, FemSpace, Mesh};
use crate::functionals::{reduced_forward, ForwardSetup, ReducedForward};

/// Exact data of one phantom, on the mesh it was generated on and transferred
/// to the reconstruction mesh.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    /// power densities on the generating mesh
    pub fine_power: Vec<CellField>,
    /// power densities aggregated to the reconstruction mesh
    pub power: Vec<CellField>,
    /// electrode voltages, per excitation
    pub voltages: Vec<Vec<f64>>,
    /// potential gradients at the quadrature points of the reconstruction mesh
    pub flux: Vec<VectorQuadField>,
    /// conductivity averaged onto the reconstruction mesh
    pub sigma_coarse: CellField,
    pub forward: ReducedForward,
}

/// Element of `fine` (a refinement of `coarse`) to coarse element map.
pub fn coarse_parents(fine: &Mesh, coarse: &Mesh) -> Result<Vec<usize>> {
    let level = coarse.level();
    let map = fine.ancestors(level)?;
    if map.iter().any(|&p| p >= coarse.num_elements()) || fine.level() <= level {
        return Err(Error::InvalidInput("the generating mesh is not a refinement of the reconstruction mesh".into()));
    }
    Ok(map)
}

/// Area weighted average of a fine cell field over the children of every
/// coarse element.
pub fn aggregate(fine: &Mesh, parents: &[usize], ncoarse: usize, f: &CellField) -> CellField {
    let mut num = vec![0.0; ncoarse];
    let mut den = vec![0.0; ncoarse];
    for (e, &p) in parents.iter().enumerate() {
        num[p] += fine.area(e) * f.values[e];
        den[p] += fine.area(e);
    }
    CellField { values: num.iter().zip(&den).map(|(n, d)| n / d).collect() }
}

/// Gradient of a P2 field on `fine` sampled at the quadrature points of
/// `coarse`. Each point is located among the children of its element.
pub fn sample_gradients(fine: &FemSpace, coarse: &Mesh, parents: &[usize], u: &[f64]) -> VectorQuadField {
    let mesh = &fine.mesh;
    let mut children = vec![Vec::new(); coarse.num_elements()];
    for (e, &p) in parents.iter().enumerate() {
        children[p].push(e);
    }
    let mut vectors = Vec::with_capacity(coarse.num_elements() * NQ);
    for (ec, kids) in children.iter().enumerate() {
        for l in TRI_POINTS.iter() {
            let x = coarse.map_point(ec, *l);
            let (child, bary) = kids
                .iter()
                .map(|&c| (c, mesh.barycentric(c, x)))
                .max_by(|a, b| min3(a.1).total_cmp(&min3(b.1)))
                .expect("every coarse element has children");
            let g = p2_gradients(bary, mesh.grad_lambda(child));
            let el = &mesh.elements[child];
            let mut v = [0.0; 2];
            for a in 0..6 {
                v[0] += u[el[a]] * g[a][0];
                v[1] += u[el[a]] * g[a][1];
            }
            vectors.push(v);
        }
    }
    VectorQuadField { vectors }
}

fn min3(l: [f64; 3]) -> f64 {
    l[0].min(l[1]).min(l[2])
}

/// Solves the forward problem for `sigma_fine` on the generating mesh and
/// transfers power densities, voltages and fluxes to `coarse`.
pub fn generate_synthetic(fine: &ForwardSetup, coarse: &Mesh, sigma_fine: &CellField) -> Result<SyntheticData> {
    let space = &fine.space;
    let parents = coarse_parents(&space.mesh, coarse)?;
    let forward = reduced_forward(fine, sigma_fine)?;
    let fine_power: Vec<CellField> = forward.phi.iter().map(|p| power_density(space, sigma_fine, p)).collect();
    let nc = coarse.num_elements();
    let power = fine_power.iter().map(|h| aggregate(&space.mesh, &parents, nc, h)).collect();
    let flux = forward.phi.iter().map(|p| sample_gradients(space, coarse, &parents, &p.values)).collect();
    Ok(SyntheticData {
        fine_power,
        power,
        voltages: forward.volt.clone(),
        flux,
        sigma_coarse: aggregate(&space.mesh, &parents, nc, sigma_fine),
        forward,
    })
}

/// Multiplies every sample by 1 + delta u with u uniform on [-1, 1].
pub fn add_noise(data: &mut [f64], delta: f64, rng: &mut ChaCha8Rng) {
    if delta == 0.0 {
        return;
    }
    for s in data {
        *s *= 1.0 + delta * rng.random_range(-1.0..=1.0);
    }
}

/// Noise stream of one dataset.
pub fn noise_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SHA-256 of node coordinates and element connectivity.
pub fn mesh_checksum(mesh: &Mesh) -> String {
    let mut h = Sha256::new();
    for p in &mesh.nodes {
        h.update(p[0].to_le_bytes());
        h.update(p[1].to_le_bytes());
    }
    for el in &mesh.elements {
        for n in el {
            h.update((*n as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// A matrix of samples, one row per excitation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub kind: String,
    pub mesh_checksum: String,
    pub delta: f64,
    pub seed: u64,
    pub rows: Vec<Vec<f64>>,
}

impl DataFile {
    /// Three header lines, then whitespace separated rows.
    pub fn to_text(&self) -> String {
        let mut s = format!("kind {}\nmesh {}\ndelta {} seed {}\n", self.kind, self.mesh_checksum, self.delta, self.seed);
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<DataFile> {
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let l = lines.next().ok_or_else(|| Error::Parse(format!("missing header line '{key}'")))?;
            l.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected header '{key}', found '{l}'")))
        };
        let kind = header("kind")?;
        let mesh_checksum = header("mesh")?;
        let ds = header("delta")?;
        let (d, s) = ds.split_once(" seed ").ok_or_else(|| Error::Parse(format!("bad noise header '{ds}'")))?;
        let delta = d.trim().parse().map_err(|_| Error::Parse(format!("bad delta '{d}'")))?;
        let seed = s.trim().parse().map_err(|_| Error::Parse(format!("bad seed '{s}'")))?;
        let rows = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("data line {}: bad number '{t}'", i + 4))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(DataFile { kind, mesh_checksum, delta, seed, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<DataFile> {
        DataFile::parse(&std::fs::read_to_string(path)?)
    }
}

/// Flattens vector samples to rows of interleaved components.
pub fn flux_rows(flux: &[VectorQuadField]) -> Vec<Vec<f64>> {
    flux.iter().map(|f| f.vectors.iter().flat_map(|v| [v[0], v[1]]).collect()).collect()
}

pub fn flux_from_rows(rows: &[Vec<f64>]) -> Vec<VectorQuadField> {
    rows.iter().map(|r| VectorQuadField { vectors: r.chunks(2).map(|c| [c[0], c[1]]).collect() }).collect()
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

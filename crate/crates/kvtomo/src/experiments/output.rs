//! Field snapshots and grayscale rasters.

use std::path::Path;

use super::data::write_atomic;
use crate::base::{Bounds, CellField};
use crate::error::{Error, Result};
use crate::fem::Mesh;

/// One value per line in element order.
pub fn snapshot_text(sigma: &CellField) -> String {
    let mut s = String::with_capacity(24 * sigma.len());
    for v in &sigma.values {
        s.push_str(&format!("{v:e}\n"));
    }
    s
}

pub fn write_snapshot(path: &Path, sigma: &CellField) -> Result<()> {
    write_atomic(path, snapshot_text(sigma).as_bytes())
}

/// Samples a cell field on an `n x n` grid over [-1, 1]^2, rows from top to
/// bottom. Pixels outside the mesh are `None`.
pub fn raster(mesh: &Mesh, sigma: &CellField, n: usize) -> Vec<Option<f64>> {
    let boxes: Vec<[f64; 4]> = mesh
        .elements
        .iter()
        .map(|el| {
            let p = [mesh.nodes[el[0]], mesh.nodes[el[1]], mesh.nodes[el[2]]];
            [
                p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min),
                p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max),
                p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min),
                p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max),
            ]
        })
        .collect();
    let h = 2.0 / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        let y = 1.0 - (row as f64 + 0.5) * h;
        for col in 0..n {
            let x = -1.0 + (col as f64 + 0.5) * h;
            let hit = boxes.iter().enumerate().find(|(e, b)| {
                x >= b[0] && x <= b[1] && y >= b[2] && y <= b[3] && {
                    let l = mesh.barycentric(*e, [x, y]);
                    l.iter().all(|&v| v >= -1e-12)
                }
            });
            out.push(hit.map(|(e, _)| sigma.values[e]));
        }
    }
    out
}

/// 8-bit grayscale PNG of `sigma` scaled from `bounds.lower` (1) to
/// `bounds.upper` (255); 0 marks pixels outside the disk.
pub fn png_bytes(mesh: &Mesh, sigma: &CellField, bounds: &Bounds, n: usize) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = raster(mesh, sigma, n)
        .into_iter()
        .map(|v| match v {
            None => 0,
            Some(s) => (1.0 + 254.0 * ((s - bounds.lower) / bounds.width()).clamp(0.0, 1.0)).round() as u8,
        })
        .collect();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, n as u32, n as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_image_data(&pixels).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(buf)
}

pub fn write_png(path: &Path, mesh: &Mesh, sigma: &CellField, bounds: &Bounds) -> Result<()> {
    write_atomic(path, &png_bytes(mesh, sigma, bounds, 256)?)
}

//! Density-map ground truth: one unit of mass per annotated head, spread by
//! a Gaussian stamp. Stamps are renormalized after boundary truncation, so
//! the map total equals the point count regardless of where points sit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major single-channel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(h: usize, w: usize) -> Self {
        DensityMap { h, w, data: vec![0.0; h * w] }
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }
}

/// Fixed-bandwidth stamp: every head gets the same window and sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedKernel {
    pub window: usize,
    pub sigma: f64,
}

impl Default for FixedKernel {
    fn default() -> Self {
        FixedKernel { window: 15, sigma: 4.0 }
    }
}

/// Geometry-adaptive stamp: sigma_i = beta * mean distance to the k nearest
/// other heads; the window grows with sigma (smallest odd integer >= 6*sigma+1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveKernel {
    pub beta: f64,
    pub k: usize,
    /// Fallback for single-point images, where no neighbor distance exists.
    pub fallback: FixedKernel,
}

impl Default for AdaptiveKernel {
    fn default() -> Self {
        AdaptiveKernel { beta: 0.3, k: 3, fallback: FixedKernel::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KernelRecipe {
    Fixed(FixedKernel),
    Adaptive(AdaptiveKernel),
}

impl KernelRecipe {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelRecipe::Fixed(f) => validate_fixed(f),
            KernelRecipe::Adaptive(a) => {
                if !(a.beta > 0.0) {
                    return Err(Error::Config(format!("adaptive kernel beta {} must be > 0", a.beta)));
                }
                if a.k == 0 {
                    return Err(Error::Config("adaptive kernel k must be >= 1".into()));
                }
                validate_fixed(&a.fallback)
            }
        }
    }
}

fn validate_fixed(f: &FixedKernel) -> Result<()> {
    if f.window == 0 || f.window % 2 == 0 {
        return Err(Error::Config(format!("kernel window {} must be odd and >= 1", f.window)));
    }
    if !(f.sigma > 0.0) {
        return Err(Error::Config(format!("kernel sigma {} must be > 0", f.sigma)));
    }
    Ok(())
}

/// Adds one unit of mass centered at the rounded point location. The raw
/// Gaussian weights are clipped to the map and renormalized over the visible
/// cells, so the stamp always sums to 1 (up to rounding).
fn stamp(map: &mut DensityMap, x: f64, y: f64, window: usize, sigma: f64) {
    let cx = (x.round() as isize).clamp(0, map.w as isize - 1);
    let cy = (y.round() as isize).clamp(0, map.h as isize - 1);
    if window == 1 || sigma <= 0.0 {
        map.data[cy as usize * map.w + cx as usize] += 1.0;
        return;
    }
    let half = (window / 2) as isize;
    let y0 = (cy - half).max(0);
    let y1 = (cy + half).min(map.h as isize - 1);
    let x0 = (cx - half).max(0);
    let x1 = (cx + half).min(map.w as isize - 1);
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);

    let mut total = 0.0;
    for yy in y0..=y1 {
        let dy = (yy - cy) as f64;
        for xx in x0..=x1 {
            let dx = (xx - cx) as f64;
            total += (-(dx * dx + dy * dy) * inv2s2).exp();
        }
    }
    for yy in y0..=y1 {
        let dy = (yy - cy) as f64;
        let row = yy as usize * map.w;
        for xx in x0..=x1 {
            let dx = (xx - cx) as f64;
            map.data[row + xx as usize] += (-(dx * dx + dy * dy) * inv2s2).exp() / total;
        }
    }
}

fn check_bounds(w: usize, h: usize, points: &[(f64, f64)]) -> Result<()> {
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return Err(Error::invalid(
                "ground_truth",
                format!("point {i} at ({x}, {y}) outside {w}x{h} image bounds"),
            ));
        }
    }
    Ok(())
}

pub fn render_fixed(w: usize, h: usize, points: &[(f64, f64)], kern: &FixedKernel) -> Result<DensityMap> {
    validate_fixed(kern)?;
    check_bounds(w, h, points)?;
    let mut map = DensityMap::zeros(h, w);
    for &(x, y) in points {
        stamp(&mut map, x, y, kern.window, kern.sigma);
    }
    Ok(map)
}

/// Smallest odd window covering +-3 sigma.
pub fn adaptive_window(sigma: f64) -> usize {
    let m = (6.0 * sigma + 1.0).ceil() as usize;
    let m = m.max(1);
    if m % 2 == 0 {
        m + 1
    } else {
        m
    }
}

/// Per-point sigma: beta times the mean distance to the k nearest other
/// points (k capped at n-1).
pub fn adaptive_sigmas(points: &[(f64, f64)], beta: f64, k: usize) -> Vec<f64> {
    let n = points.len();
    let keff = k.min(n.saturating_sub(1));
    let mut sigmas = Vec::with_capacity(n);
    for (i, &(x, y)) in points.iter().enumerate() {
        let mut dists: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &(ox, oy))| ((x - ox).powi(2) + (y - oy).powi(2)).sqrt())
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let mean = dists[..keff].iter().sum::<f64>() / keff as f64;
        sigmas.push(beta * mean);
    }
    sigmas
}

pub fn render_adaptive(
    w: usize,
    h: usize,
    points: &[(f64, f64)],
    kern: &AdaptiveKernel,
) -> Result<DensityMap> {
    KernelRecipe::Adaptive(*kern).validate()?;
    check_bounds(w, h, points)?;
    let mut map = DensityMap::zeros(h, w);
    match points.len() {
        0 => Ok(map),
        1 => {
            // No neighbors to adapt to; fall back to the fixed recipe.
            log::debug!("adaptive ground truth with a single point: using fixed fallback kernel");
            stamp(&mut map, points[0].0, points[0].1, kern.fallback.window, kern.fallback.sigma);
            Ok(map)
        }
        _ => {
            let sigmas = adaptive_sigmas(points, kern.beta, kern.k);
            for (&(x, y), &sigma) in points.iter().zip(&sigmas) {
                stamp(&mut map, x, y, adaptive_window(sigma), sigma);
            }
            Ok(map)
        }
    }
}

pub fn render(w: usize, h: usize, points: &[(f64, f64)], recipe: &KernelRecipe) -> Result<DensityMap> {
    match recipe {
        KernelRecipe::Fixed(f) => render_fixed(w, h, points, f),
        KernelRecipe::Adaptive(a) => render_adaptive(w, h, points, a),
    }
}

/// Sum-pools `factor` x `factor` blocks (row-major within each block), so the
/// map total carries over to the reduced resolution.
pub fn downsample_sum(map: &DensityMap, factor: usize) -> Result<DensityMap> {
    if factor == 0 {
        return Err(Error::invalid("downsample_sum", "factor must be >= 1"));
    }
    if map.h % factor != 0 || map.w % factor != 0 {
        return Err(Error::invalid(
            "downsample_sum",
            format!("map {}x{} not divisible by factor {}", map.h, map.w, factor),
        ));
    }
    let (oh, ow) = (map.h / factor, map.w / factor);
    let mut out = DensityMap::zeros(oh, ow);
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                let row = (i * factor + dy) * map.w + j * factor;
                for dx in 0..factor {
                    acc += map.data[row + dx];
                }
            }
            out.data[i * ow + j] = acc;
        }
    }
    Ok(out)
}

// ------------------------------------------------------------- file formats

const DMAP_MAGIC: &[u8; 4] = b"DMAP";

/// Binary layout: "DMAP" | u32 h | u32 w | u32 reserved(0) | h*w f64, all
/// little-endian, row-major.
pub fn write_dmap(path: &Path, map: &DensityMap) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + map.data.len() * 8);
    buf.extend_from_slice(DMAP_MAGIC);
    buf.extend_from_slice(&(map.h as u32).to_le_bytes());
    buf.extend_from_slice(&(map.w as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &map.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dmap(path: &Path) -> Result<DensityMap> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != DMAP_MAGIC {
        return Err(Error::invalid("dmap", format!("{}: bad magic", path.display())));
    }
    let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != h * w * 8 {
        return Err(Error::invalid(
            "dmap",
            format!("{}: payload {} bytes, expected {}", path.display(), payload.len(), h * w * 8),
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DensityMap { h, w, data })
}

/// 8-bit binary PGM preview, linearly scaled so the map maximum maps to 255.
pub fn write_pgm_preview(path: &Path, map: &DensityMap) -> Result<()> {
    let max = map.data.iter().copied().fold(0.0f64, f64::max);
    let mut buf = Vec::with_capacity(32 + map.data.len());
    write!(&mut buf, "P5\n{} {}\n255\n", map.w, map.h).expect("in-memory write");
    for &v in &map.data {
        let px = if max > 0.0 { (v / max * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 };
        buf.push(px);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

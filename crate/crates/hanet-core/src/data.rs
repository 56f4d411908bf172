//! Dataset plumbing: manifest parsing, eager image/annotation loading,
//! random patch sampling, photometric/geometric augmentation, and the
//! synthetic corpus generator used for desk-scale runs.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::tensor::{Shape, Tensor};

// ---------------------------------------------------------------- manifest

/// How many patches to draw per image (M) and their side length (m).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPolicy {
    #[serde(rename = "M")]
    pub per_image: usize,
    #[serde(rename = "m")]
    pub size: usize,
}

impl Default for PatchPolicy {
    fn default() -> Self {
        PatchPolicy { per_image: 4, size: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub points: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    #[serde(default)]
    pub policy: PatchPolicy,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

// ----------------------------------------------------------------- dataset

#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    /// Manifest-relative image path; doubles as the report row id.
    pub id: String,
    pub w: usize,
    pub h: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug)]
pub struct Dataset {
    pub images: Vec<AnnotatedImage>,
    pub policy: PatchPolicy,
}

/// Loads one record's image and annotations, validating that every point
/// lands inside the image.
pub fn load_record(base: &Path, rec: &ManifestRecord) -> Result<AnnotatedImage> {
    let id = rec.image.to_string_lossy().into_owned();
    let img_path = base.join(&rec.image);
    let pts_path = base.join(&rec.points);
    let img = image::open(&img_path)
        .map_err(|e| Error::Image { path: img_path.clone(), source: e })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let text = fs::read_to_string(&pts_path).map_err(|e| Error::io(&pts_path, e))?;
    let raw: Vec<[f64; 2]> = serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: pts_path.clone(), source: e })?;
    let points: Vec<(f64, f64)> = raw.iter().map(|p| (p[0], p[1])).collect();
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return Err(Error::Record {
                id,
                detail: format!("point {i} at ({x}, {y}) outside the {w}x{h} image"),
            });
        }
    }
    Ok(AnnotatedImage { id, w, h, rgb: img.into_raw(), points })
}

/// Loads every record up front (images are desk-scale) and validates that
/// all annotations land inside their image.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.records.is_empty() {
        return Err(Error::Config(format!(
            "{}: manifest has no records",
            manifest_path.display()
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut images = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        images.push(load_record(base, rec)?);
    }
    Ok(Dataset { images, policy: manifest.policy })
}

// ------------------------------------------------------------ patch crops

#[derive(Debug, Clone)]
pub struct Patch {
    pub size: usize,
    pub rgb: Vec<u8>,
    /// Patch-local coordinates.
    pub points: Vec<(f64, f64)>,
    pub origin: (usize, usize),
    pub source: String,
    pub hflip: bool,
    pub gray: bool,
}

fn crop(img: &AnnotatedImage, ox: usize, oy: usize, m: usize) -> Patch {
    let mut rgb = vec![0u8; m * m * 3];
    for y in 0..m {
        let src = ((oy + y) * img.w + ox) * 3;
        let dst = y * m * 3;
        rgb[dst..dst + m * 3].copy_from_slice(&img.rgb[src..src + m * 3]);
    }
    let points = img
        .points
        .iter()
        .filter(|&&(x, y)| {
            x >= ox as f64 && x < (ox + m) as f64 && y >= oy as f64 && y < (oy + m) as f64
        })
        .map(|&(x, y)| (x - ox as f64, y - oy as f64))
        .collect();
    Patch { size: m, rgb, points, origin: (ox, oy), source: img.id.clone(), hflip: false, gray: false }
}

/// Zero-pads an undersized image on the bottom/right to m x m; annotations
/// keep their coordinates.
fn padded_single(img: &AnnotatedImage, m: usize) -> Patch {
    log::debug!(
        "image '{}' ({}x{}) smaller than patch size {}; zero-padding and taking a single crop",
        img.id, img.w, img.h, m
    );
    let mut rgb = vec![0u8; m * m * 3];
    for y in 0..img.h.min(m) {
        let src = (y * img.w) * 3;
        let n = img.w.min(m) * 3;
        rgb[y * m * 3..y * m * 3 + n].copy_from_slice(&img.rgb[src..src + n]);
    }
    let points = img
        .points
        .iter()
        .filter(|&&(x, y)| x < m as f64 && y < m as f64)
        .copied()
        .collect();
    Patch { size: m, rgb, points, origin: (0, 0), source: img.id.clone(), hflip: false, gray: false }
}

/// Draws up to `policy.per_image` patches with distinct origins. When the
/// image admits fewer distinct origins than requested, all of them are used.
pub fn sample_patches(img: &AnnotatedImage, policy: PatchPolicy, rng: &mut ChaCha8Rng) -> Vec<Patch> {
    let m = policy.size;
    if img.w < m || img.h < m {
        return vec![padded_single(img, m)];
    }
    let (max_ox, max_oy) = (img.w - m, img.h - m);
    let available = (max_ox + 1) * (max_oy + 1);
    let want = policy.per_image.min(available);
    if want < policy.per_image {
        log::debug!(
            "image '{}' admits only {} distinct {}x{} origins; requested {}",
            img.id, available, m, m, policy.per_image
        );
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let ox = rng.random_range(0..=max_ox);
        let oy = rng.random_range(0..=max_oy);
        if seen.insert((ox, oy)) {
            out.push(crop(img, ox, oy, m));
        }
    }
    out
}

/// Images that cannot supply `policy.per_image` distinct patches: undersized
/// ones (which yield a single zero-padded crop) and ones with fewer origins
/// than requested. Lets callers warn once instead of on every draw.
pub fn patch_constrained(images: &[AnnotatedImage], policy: PatchPolicy) -> usize {
    images
        .iter()
        .filter(|img| {
            if img.w < policy.size || img.h < policy.size {
                return true;
            }
            (img.w - policy.size + 1) * (img.h - policy.size + 1) < policy.per_image
        })
        .count()
}

// ------------------------------------------------------------ augmentation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub gray_prob: f64,
    pub hflip_prob: f64,
    /// Overrides the manifest patch policy when set.
    pub patches_per_image: Option<usize>,
    pub patch_size: Option<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { gray_prob: 0.2, hflip_prob: 0.5, patches_per_image: None, patch_size: None }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("gray_prob", self.gray_prob), ("hflip_prob", self.hflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.patch_size == Some(0) || self.patches_per_image == Some(0) {
            return Err(Error::Config("patch overrides must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_policy(&self, base: PatchPolicy) -> PatchPolicy {
        PatchPolicy {
            per_image: self.patches_per_image.unwrap_or(base.per_image),
            size: self.patch_size.unwrap_or(base.size),
        }
    }
}

/// Integer-luma grayscale; rounding makes it idempotent.
pub fn to_gray(rgb: &mut [u8]) {
    for px in rgb.chunks_exact_mut(3) {
        let y = (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64).round() as u8;
        px.fill(y);
    }
}

/// Mirrors pixel columns and point x-coordinates about the patch center.
pub fn hflip(patch: &mut Patch) {
    let m = patch.size;
    for y in 0..m {
        let row = &mut patch.rgb[y * m * 3..(y + 1) * m * 3];
        for x in 0..m / 2 {
            for ch in 0..3 {
                row.swap(x * 3 + ch, (m - 1 - x) * 3 + ch);
            }
        }
    }
    for p in &mut patch.points {
        // Pixel-grid mirror; coordinates in the last fractional column clamp to 0.
        p.0 = ((m - 1) as f64 - p.0).max(0.0);
    }
    patch.hflip = !patch.hflip;
}

/// Applies grayscale and horizontal flip by their configured probabilities.
/// Both coins are always drawn so the RNG stream does not depend on outcomes.
pub fn augment(patch: &mut Patch, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) {
    let gray_roll = rng.random::<f64>();
    let flip_roll = rng.random::<f64>();
    if gray_roll < cfg.gray_prob {
        to_gray(&mut patch.rgb);
        patch.gray = true;
    }
    if flip_roll < cfg.hflip_prob {
        hflip(patch);
    }
}

// ------------------------------------------------------------ tensor views

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormConfig {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormConfig {
    fn default() -> Self {
        // ImageNet channel statistics.
        NormConfig { mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] }
    }
}

/// Interleaved RGB bytes -> (1, 3, h, w), scaled to [0,1] then standardized.
pub fn image_to_tensor(rgb: &[u8], w: usize, h: usize, norm: &NormConfig) -> Tensor {
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for c in 0..3 {
        let plane = &mut t.data[c * h * w..(c + 1) * h * w];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            plane[i] = (px[c] as f64 / 255.0 - norm.mean[c]) / norm.std[c];
        }
    }
    t
}

/// Stacks same-sized patches into one (N, 3, m, m) batch.
pub fn patches_to_batch(patches: &[Patch], norm: &NormConfig) -> Result<Tensor> {
    let Some(first) = patches.first() else {
        return Err(Error::invalid("batch", "no patches to stack"));
    };
    let m = first.size;
    let mut out = Tensor::zeros(Shape::new(patches.len(), 3, m, m));
    let per = 3 * m * m;
    for (n, p) in patches.iter().enumerate() {
        if p.size != m {
            return Err(Error::invalid("batch", format!("mixed patch sizes {} and {}", m, p.size)));
        }
        let t = image_to_tensor(&p.rgb, m, m, norm);
        out.data[n * per..(n + 1) * per].copy_from_slice(&t.data);
    }
    Ok(out)
}

// ------------------------------------------------------- synthetic corpus

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub heads_min: usize,
    pub heads_max: usize,
    pub seed: u64,
}

/// Renders `spec.images` crowd-like images (noisy background, one dark
/// Gaussian blob per head) plus point annotations, and writes a manifest
/// next to them. Per-image RNG streams derive from (seed, index), so the
/// corpus is byte-stable for a given spec.
pub fn generate_synthetic(out_dir: &Path, spec: &SynthSpec, policy: PatchPolicy) -> Result<PathBuf> {
    if spec.images == 0 {
        return Err(Error::Config("synthetic corpus needs at least one image".into()));
    }
    if spec.width < 8 || spec.height < 8 {
        return Err(Error::Config("synthetic images must be at least 8x8".into()));
    }
    if spec.heads_min > spec.heads_max {
        return Err(Error::Config(format!(
            "head range {}..{} is empty",
            spec.heads_min, spec.heads_max
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (w, h) = (spec.width, spec.height);
    let mut records = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let mut rng = stream_rng(spec.seed, &format!("synth-img-{i}"));
        let n_heads = rng.random_range(spec.heads_min..=spec.heads_max);

        let base = rng.random_range(120.0..170.0);
        let tint: [f64; 3] = [
            rng.random_range(-8.0..8.0),
            rng.random_range(-8.0..8.0),
            rng.random_range(-8.0..8.0),
        ];
        let mut lum = vec![0.0f64; w * h];
        for v in lum.iter_mut() {
            *v = base + rng.random_range(-10.0..10.0);
        }

        let mut points = Vec::with_capacity(n_heads);
        for _ in 0..n_heads {
            let margin = 2.0;
            let x = rng.random_range(margin..(w as f64 - 1.0 - margin));
            let y = rng.random_range(margin..(h as f64 - 1.0 - margin));
            let depth: f64 = rng.random_range(60.0..110.0);
            let radius: f64 = rng.random_range(1.5..3.5);
            let reach = (3.0 * radius).ceil() as isize;
            let (cx, cy) = (x.round() as isize, y.round() as isize);
            for yy in (cy - reach).max(0)..=(cy + reach).min(h as isize - 1) {
                for xx in (cx - reach).max(0)..=(cx + reach).min(w as isize - 1) {
                    let d2 = (xx as f64 - x).powi(2) + (yy as f64 - y).powi(2);
                    lum[yy as usize * w + xx as usize] -=
                        depth * (-d2 / (2.0 * radius * radius)).exp();
                }
            }
            points.push([x, y]);
        }

        let mut rgb = vec![0u8; w * h * 3];
        for (pi, &v) in lum.iter().enumerate() {
            for c in 0..3 {
                rgb[pi * 3 + c] = (v + tint[c]).clamp(0.0, 255.0) as u8;
            }
        }

        let img_name = format!("img_{i:03}.png");
        let pts_name = format!("img_{i:03}.json");
        let img_path = out_dir.join(&img_name);
        image::RgbImage::from_raw(w as u32, h as u32, rgb)
            .expect("buffer sized to w*h*3")
            .save(&img_path)
            .map_err(|e| Error::Image { path: img_path.clone(), source: e })?;
        let pts_path = out_dir.join(&pts_name);
        fs::write(&pts_path, serde_json::to_string(&points).expect("points serialize"))
            .map_err(|e| Error::io(&pts_path, e))?;
        records.push(ManifestRecord { image: img_name.into(), points: pts_name.into() });
    }
    let manifest = Manifest { records, policy };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundtruth::{render_fixed, FixedKernel};

    fn checker_image(w: usize, h: usize, points: Vec<(f64, f64)>) -> AnnotatedImage {
        let mut rgb = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let v = (((x / 4 + y / 4) % 2) * 200 + 20) as u8;
                let i = (y * w + x) * 3;
                rgb[i] = v;
                rgb[i + 1] = v.wrapping_add(30);
                rgb[i + 2] = v.wrapping_add(60);
            }
        }
        AnnotatedImage { id: "test".into(), w, h, rgb, points }
    }

    #[test]
    fn crop_translates_points_and_drops_outsiders() {
        let img = checker_image(32, 32, vec![(10.0, 12.0), (3.0, 3.0), (25.9, 25.9)]);
        let p = crop(&img, 8, 8, 16);
        assert_eq!(p.points, vec![(2.0, 4.0)]);
        assert_eq!(p.origin, (8, 8));
        // Pixel (0,0) of the patch is pixel (8,8) of the image.
        assert_eq!(p.rgb[0], img.rgb[(8 * 32 + 8) * 3]);
    }

    #[test]
    fn sample_patches_gives_distinct_origins() {
        let img = checker_image(40, 40, vec![]);
        let mut rng = stream_rng(1, "patch-test");
        let patches = sample_patches(&img, PatchPolicy { per_image: 6, size: 32 }, &mut rng);
        assert_eq!(patches.len(), 6);
        let origins: HashSet<_> = patches.iter().map(|p| p.origin).collect();
        assert_eq!(origins.len(), 6);
    }

    #[test]
    fn exact_size_image_has_one_origin() {
        let img = checker_image(16, 16, vec![(5.0, 5.0)]);
        let mut rng = stream_rng(2, "patch-test");
        let patches = sample_patches(&img, PatchPolicy { per_image: 4, size: 16 }, &mut rng);
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].origin, (0, 0));
    }

    #[test]
    fn patch_constrained_counts_undersized_and_origin_starved_images() {
        let images = vec![
            checker_image(40, 40, vec![]), // plenty of origins
            checker_image(16, 16, vec![]), // exactly one origin
            checker_image(10, 12, vec![]), // undersized, padded
        ];
        assert_eq!(patch_constrained(&images, PatchPolicy { per_image: 4, size: 16 }), 2);
        assert_eq!(patch_constrained(&images, PatchPolicy { per_image: 1, size: 16 }), 1);
        assert_eq!(patch_constrained(&images, PatchPolicy { per_image: 1, size: 8 }), 0);
    }

    #[test]
    fn undersized_image_zero_pads() {
        let img = checker_image(10, 12, vec![(9.0, 11.0)]);
        let mut rng = stream_rng(3, "patch-test");
        let patches = sample_patches(&img, PatchPolicy { per_image: 4, size: 16 }, &mut rng);
        assert_eq!(patches.len(), 1);
        let p = &patches[0];
        assert_eq!(p.points, vec![(9.0, 11.0)]);
        // Padded region is zero.
        assert_eq!(p.rgb[(0 * 16 + 15) * 3], 0);
        assert_eq!(p.rgb[(15 * 16 + 0) * 3], 0);
        // Original content survives.
        assert_eq!(p.rgb[0], img.rgb[0]);
    }

    #[test]
    fn hflip_is_an_involution() {
        let img = checker_image(16, 16, vec![(3.0, 5.0), (10.5, 2.0)]);
        let mut p = crop(&img, 0, 0, 16);
        let orig = p.clone();
        hflip(&mut p);
        assert_ne!(p.rgb, orig.rgb);
        assert!((p.points[0].0 - 12.0).abs() < 1e-12);
        hflip(&mut p);
        assert_eq!(p.rgb, orig.rgb);
        for (a, b) in p.points.iter().zip(&orig.points) {
            assert!((a.0 - b.0).abs() < 1e-12 && a.1 == b.1);
        }
    }

    #[test]
    fn gray_is_idempotent() {
        let img = checker_image(8, 8, vec![]);
        let mut once = img.rgb.clone();
        to_gray(&mut once);
        let mut twice = once.clone();
        to_gray(&mut twice);
        assert_eq!(once, twice);
        for px in once.chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
    }

    #[test]
    fn flip_commutes_with_ground_truth_rendering() {
        // Points chosen away from exact half-pixel boundaries, where the
        // round-then-mirror and mirror-then-round orders disagree.
        let kern = FixedKernel::default();
        let pts = vec![(3.2, 5.0), (10.8, 12.4), (15.0, 1.1)];
        let m = 16usize;
        let flipped: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| ((m - 1) as f64 - x, y)).collect();
        let gt_then_flip = {
            let map = render_fixed(m, m, &pts, &kern).unwrap();
            let mut out = map.clone();
            for y in 0..m {
                for x in 0..m {
                    out.data[y * m + x] = map.at(y, m - 1 - x);
                }
            }
            out
        };
        let flip_then_gt = render_fixed(m, m, &flipped, &kern).unwrap();
        let max_diff = gt_then_flip
            .data
            .iter()
            .zip(&flip_then_gt.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-9, "max diff {max_diff}");
    }

    #[test]
    fn augment_draws_both_coins_regardless_of_outcome() {
        let img = checker_image(16, 16, vec![]);
        let cfg_none = AugmentConfig { gray_prob: 0.0, hflip_prob: 0.0, ..Default::default() };
        let cfg_all = AugmentConfig { gray_prob: 1.0, hflip_prob: 1.0, ..Default::default() };
        let mut rng_a = stream_rng(9, "aug");
        let mut rng_b = stream_rng(9, "aug");
        let mut pa = crop(&img, 0, 0, 16);
        let mut pb = crop(&img, 0, 0, 16);
        augment(&mut pa, &cfg_none, &mut rng_a);
        augment(&mut pb, &cfg_all, &mut rng_b);
        // Streams stay aligned after diverging outcomes.
        use rand::Rng as _;
        assert_eq!(rng_a.random::<u64>(), rng_b.random::<u64>());
        assert!(pb.gray && pb.hflip && !pa.gray && !pa.hflip);
    }

    #[test]
    fn normalization_standardizes_channels() {
        let norm = NormConfig::default();
        let rgb = vec![255u8, 0, 128];
        let t = image_to_tensor(&rgb, 1, 1, &norm);
        assert!((t.data[0] - (1.0 - 0.485) / 0.229).abs() < 1e-12);
        assert!((t.data[1] - (0.0 - 0.456) / 0.224).abs() < 1e-12);
        assert!((t.data[2] - (128.0 / 255.0 - 0.406) / 0.225).abs() < 1e-12);
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_loadable() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = SynthSpec { images: 3, width: 64, height: 64, heads_min: 2, heads_max: 6, seed: 7 };
        let policy = PatchPolicy { per_image: 2, size: 32 };
        let ma = generate_synthetic(dir_a.path(), &spec, policy).unwrap();
        let mb = generate_synthetic(dir_b.path(), &spec, policy).unwrap();
        for name in ["img_000.png", "img_001.json", "manifest.json"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let ds = load_dataset(&ma).unwrap();
        assert_eq!(ds.images.len(), 3);
        assert_eq!(ds.policy, policy);
        for img in &ds.images {
            assert!(!img.points.is_empty());
            assert!(img.points.len() <= 6);
        }
        drop(mb);
    }

    #[test]
    fn load_dataset_names_offending_record() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { images: 1, width: 32, height: 32, heads_min: 1, heads_max: 1, seed: 1 };
        let manifest = generate_synthetic(dir.path(), &spec, PatchPolicy::default()).unwrap();
        // Corrupt the annotation with an out-of-bounds point.
        fs::write(dir.path().join("img_000.json"), "[[99.0, 5.0]]").unwrap();
        let err = load_dataset(&manifest).unwrap_err().to_string();
        assert!(err.contains("img_000.png"), "error should name the record: {err}");
        assert!(err.contains("outside"), "{err}");
    }
}

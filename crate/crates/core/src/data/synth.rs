//! Deterministic ray-cast RGB-D scenes with eight parametric layouts.
//!
//! The camera sits at the origin looking down +Z with Y up; the floor, when
//! present, is the plane `Y = −camera_height`. Depth is the Z coordinate of
//! the first hit, so it matches the pinhole model used by the HHA encoder.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rayon::prelude::*;

use super::dataset::{normalize, ImageSet};
use super::hha::{encode_hha, DEFAULT_GRAVITY};
use super::manifest::{Manifest, Record, Split};
use super::netpbm::{save_depth, save_rgb, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    FlatWall,
    Corridor,
    FloorBox,
    Staircase,
    FloorTwoBoxes,
    SlantedCeiling,
    Alcove,
    ClutteredShelf,
}

impl Layout {
    pub const ALL: [Layout; 8] = [
        Layout::FlatWall,
        Layout::Corridor,
        Layout::FloorBox,
        Layout::Staircase,
        Layout::FloorTwoBoxes,
        Layout::SlantedCeiling,
        Layout::Alcove,
        Layout::ClutteredShelf,
    ];

    pub fn from_category(category: usize) -> Result<Self> {
        Layout::ALL.get(category).copied().ok_or_else(|| {
            Error::param(
                "generate_synthetic_scene",
                format!("category {category} outside the {} built-in layouts", Layout::ALL.len()),
            )
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::FlatWall => "flat_wall",
            Layout::Corridor => "corridor",
            Layout::FloorBox => "floor_box",
            Layout::Staircase => "staircase",
            Layout::FloorTwoBoxes => "floor_two_boxes",
            Layout::SlantedCeiling => "slanted_ceiling",
            Layout::Alcove => "alcove",
            Layout::ClutteredShelf => "cluttered_shelf",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Base albedo per category. Neighbouring categories share similar hues so
/// colour alone is only partly informative.
const TINTS: [[f64; 3]; 8] = [
    [0.80, 0.70, 0.55],
    [0.70, 0.72, 0.60],
    [0.55, 0.65, 0.80],
    [0.62, 0.62, 0.75],
    [0.60, 0.78, 0.58],
    [0.68, 0.75, 0.62],
    [0.82, 0.58, 0.55],
    [0.78, 0.64, 0.60],
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Square image side in pixels.
    pub size: usize,
    /// Std of the per-image tint jitter, per channel.
    pub tint_jitter: f64,
    /// Std of the per-pixel albedo noise.
    pub albedo_noise: f64,
    /// Relative depth noise (std as a fraction of depth).
    pub depth_noise: f64,
    /// Fraction of depth pixels dropped to invalid (zero).
    pub hole_fraction: f64,
    /// Largest random camera pitch and roll, in radians.
    pub max_tilt: f64,
    /// Largest number of distractor boxes placed on the floor.
    pub clutter: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            tint_jitter: 0.08,
            albedo_noise: 0.06,
            depth_noise: 0.03,
            hole_fraction: 0.02,
            max_tilt: 0.12,
            clutter: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// 3×H×W in [0, 255].
    pub rgb: Tensor,
    pub depth: DepthMap,
    pub label: usize,
}

type V3 = [f64; 3];

#[derive(Clone, Copy, Debug)]
enum Surface {
    /// Points with `n·p = c`.
    Plane { n: V3, c: f64 },
    Aabb { min: V3, max: V3 },
}

impl Surface {
    /// Ray parameter and normal of the nearest hit along `d` from the origin.
    fn hit(&self, d: V3) -> Option<(f64, V3)> {
        match *self {
            Surface::Plane { n, c } => {
                let nd = n[0] * d[0] + n[1] * d[1] + n[2] * d[2];
                if nd.abs() < 1e-12 {
                    return None;
                }
                let t = c / nd;
                (t > 1e-6).then_some((t, n))
            }
            Surface::Aabb { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut axis = 0;
                for a in 0..3 {
                    if d[a].abs() < 1e-12 {
                        if 0.0 < min[a] || 0.0 > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = ((min[a]) / d[a], (max[a]) / d[a]);
                    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                    if lo > t_near {
                        t_near = lo;
                        axis = a;
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_near <= 1e-6 {
                    return None;
                }
                let mut n = [0.0; 3];
                n[axis] = -d[axis].signum();
                Some((t_near, n))
            }
        }
    }
}

fn plane(n: V3, c: f64) -> Surface {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    Surface::Plane {
        n: [n[0] / len, n[1] / len, n[2] / len],
        c: c / len,
    }
}

fn aabb(min: V3, max: V3) -> Surface {
    Surface::Aabb { min, max }
}

/// Random geometry for one layout. Layouts come in look-alike pairs
/// (wall/alcove, one/two boxes, corridor/slanted ceiling, stairs/shelf) whose
/// parameter ranges overlap, so depth alone does not separate every class.
fn build_scene(layout: Layout, clutter: usize, rng: &mut ChaCha8Rng) -> Vec<Surface> {
    let cam_h: f64 = rng.gen_range(1.2..1.6);
    let floor = plane([0.0, 1.0, 0.0], -cam_h);
    let mut s = vec![floor];
    let back: f64;
    match layout {
        Layout::FlatWall => {
            back = rng.gen_range(2.5..4.0);
            let yaw: f64 = rng.gen_range(-0.15..0.15);
            s.push(plane([yaw.sin(), 0.0, yaw.cos()], back));
        }
        Layout::Alcove => {
            back = rng.gen_range(2.8..4.0);
            let depth = rng.gen_range(0.15..0.8);
            let half = rng.gen_range(0.6..1.6);
            s.push(plane([0.0, 0.0, 1.0], back));
            s.push(aabb([-10.0, -cam_h, back - depth], [-half, 10.0, back]));
            s.push(aabb([half, -cam_h, back - depth], [10.0, 10.0, back]));
        }
        Layout::Corridor => {
            let half = rng.gen_range(0.9..1.6);
            let toe: f64 = rng.gen_range(0.03..0.1);
            // walls lean inward with distance
            s.push(plane([toe.cos(), 0.0, toe.sin()], half));
            s.push(plane([-toe.cos(), 0.0, toe.sin()], half));
            back = rng.gen_range(6.0..12.0);
            s.push(plane([0.0, 0.0, 1.0], back));
        }
        Layout::SlantedCeiling => {
            back = rng.gen_range(4.0..7.0);
            s.push(plane([0.0, 0.0, 1.0], back));
            let slope: f64 = rng.gen_range(0.15..0.45);
            let c0 = rng.gen_range(0.6..1.2);
            // ceiling Y = c0 − slope·Z
            s.push(plane([0.0, 1.0, slope], c0));
            // a side wall on a random side
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            s.push(plane([side, 0.0, 0.0], rng.gen_range(1.2..2.2)));
        }
        Layout::FloorBox | Layout::FloorTwoBoxes => {
            back = rng.gen_range(3.5..6.0);
            s.push(plane([0.0, 0.0, 1.0], back));
            let n = if layout == Layout::FloorBox { 1 } else { 2 };
            for i in 0..n {
                let x = if n == 1 {
                    rng.gen_range(-0.6..0.6)
                } else {
                    [-0.8, 0.5][i] + rng.gen_range(-0.3..0.3)
                };
                let z = rng.gen_range(2.0..3.2);
                let w = rng.gen_range(0.3..0.7);
                let hgt = rng.gen_range(0.3..0.9);
                s.push(aabb([x - w / 2.0, -cam_h, z], [x + w / 2.0, -cam_h + hgt, z + w]));
            }
        }
        Layout::Staircase => {
            let z0 = rng.gen_range(1.6..2.4);
            let run = rng.gen_range(0.25..0.4);
            let rise = rng.gen_range(0.12..0.22);
            back = rng.gen_range(5.0..8.0);
            for i in 0..8 {
                let top = -cam_h + rise * (i + 1) as f64;
                s.push(aabb([-3.0, -cam_h, z0 + run * i as f64], [3.0, top, 20.0]));
            }
            s.push(plane([0.0, 0.0, 1.0], back));
        }
        Layout::ClutteredShelf => {
            back = rng.gen_range(1.8..2.6);
            s.push(plane([0.0, 0.0, 1.0], back));
            let gap = rng.gen_range(0.35..0.55);
            for k in 0..3 {
                let y = -0.6 + gap * k as f64 + rng.gen_range(-0.05..0.05);
                s.push(aabb([-3.0, y - 0.03, back - 0.35], [3.0, y, back]));
                for _ in 0..rng.gen_range(1..=3) {
                    let x = rng.gen_range(-0.9..0.9);
                    let w = rng.gen_range(0.1..0.25);
                    let hgt = rng.gen_range(0.1..0.3);
                    let dz = rng.gen_range(0.1..0.3);
                    s.push(aabb([x, y, back - dz - 0.02], [x + w, y + hgt, back - 0.02]));
                }
            }
        }
    }
    // small distractors on the floor, in front of the back wall
    for _ in 0..rng.gen_range(0..=clutter) {
        let x = rng.gen_range(-1.5..1.5);
        let z = rng.gen_range(1.5..(back - 0.3).max(1.6));
        let w = rng.gen_range(0.1..0.3);
        let hgt = rng.gen_range(0.1..0.35);
        s.push(aabb([x - w / 2.0, -cam_h, z], [x + w / 2.0, -cam_h + hgt, z + w]));
    }
    s
}

/// Mixes category and seed so each pair gets an independent stream.
fn scene_seed(category: usize, seed: u64) -> u64 {
    let mut z = seed ^ (category as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_synthetic_scene(category: usize, seed: u64, cfg: &SynthConfig) -> Result<SyntheticScene> {
    let layout = Layout::from_category(category)?;
    if cfg.size < 3 {
        return Err(Error::param("generate_synthetic_scene", "image size must be at least 3"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(category, seed));
    let surfaces = build_scene(layout, cfg.clutter, &mut rng);
    let size = cfg.size;
    let k = Intrinsics::default_for(size, size);
    let pitch = rng.gen_range(-1.0..=1.0) * cfg.max_tilt;
    let roll = rng.gen_range(-1.0..=1.0) * cfg.max_tilt;
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let tint: Vec<f64> = TINTS[category]
        .iter()
        .map(|&t| (t + cfg.tint_jitter * unit.sample(&mut rng)).clamp(0.05, 1.0))
        .collect();
    let light = {
        let l: V3 = [rng.gen_range(-0.6..0.6), rng.gen_range(0.2..0.8), -1.0];
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        [l[0] / n, l[1] / n, l[2] / n]
    };

    let plane_len = size * size;
    let mut depth = vec![0.0f32; plane_len];
    let mut rgb = vec![0.0f32; 3 * plane_len];
    for v in 0..size {
        for u in 0..size {
            let x = (u as f64 - k.cx as f64) / k.focal as f64;
            let y = (k.cy as f64 - v as f64) / k.focal as f64;
            // roll about Z, then pitch about X; the camera-frame Z of the
            // hit equals the ray parameter because the ray has unit Z there
            let (x, y) = (cr * x - sr * y, sr * x + cr * y);
            let d = [x, cp * y + sp, -sp * y + cp];
            let hit = surfaces
                .iter()
                .filter_map(|s| s.hit(d))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let i = v * size + u;
            let (z, n) = hit.unwrap_or((15.0, [0.0, 0.0, -1.0]));
            let z = (z.min(15.0) * (1.0 + cfg.depth_noise * unit.sample(&mut rng))).max(0.05);
            let hole = rng.gen_bool(cfg.hole_fraction.clamp(0.0, 1.0));
            depth[i] = if hole { 0.0 } else { z as f32 };
            let shade = 0.35 + 0.65 * (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).max(0.0);
            for c in 0..3 {
                let albedo = (tint[c] + cfg.albedo_noise * unit.sample(&mut rng)).clamp(0.0, 1.0);
                rgb[c * plane_len + i] = (255.0 * shade * albedo).clamp(0.0, 255.0) as f32;
            }
        }
    }
    Ok(SyntheticScene {
        rgb: Tensor::new(vec![3, size, size], rgb)?,
        depth: DepthMap::new(size, size, depth, k)?,
        label: category,
    })
}

/// Seed of the `index`-th scene of a category in a dataset built from `seed`.
pub fn dataset_scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Renders scenes `first..first + per_class` of every category in memory
/// and returns normalised RGB and HHA sets with matching order.
pub fn render_split(
    categories: usize,
    per_class: usize,
    first: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<(ImageSet, ImageSet)> {
    let jobs: Vec<(usize, usize)> = (0..categories)
        .flat_map(|c| (first..first + per_class).map(move |i| (c, i)))
        .collect();
    let rendered = jobs
        .par_iter()
        .map(|&(c, i)| {
            let scene = generate_synthetic_scene(c, dataset_scene_seed(seed, i), cfg)?;
            let mut rgb = scene.rgb;
            let mut hha = encode_hha(&scene.depth, DEFAULT_GRAVITY)?;
            normalize(&mut rgb);
            normalize(&mut hha);
            Ok((rgb, hha))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = jobs.iter().map(|&(c, _)| c).collect();
    let (rgb, hha): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    Ok((
        ImageSet::new(rgb, labels.clone(), categories)?,
        ImageSet::new(hha, labels, categories)?,
    ))
}

/// Renders a balanced dataset into `dir` as `NNNNN_rgb.ppm` / `NNNNN_depth.pgm`
/// files plus `manifest.csv`, and returns the manifest.
///
/// Train scenes are indices `0..train_per_class`, test scenes continue the
/// sequence, so the two splits never share a scene.
pub fn write_synthetic_dataset(
    dir: &Path,
    categories: usize,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Manifest> {
    if categories < 2 || categories > Layout::ALL.len() {
        return Err(Error::Config(format!("categories must be in 2..=8, got {categories}")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    let mut id = 0usize;
    for (split, per_class, offset) in [
        (Split::Train, train_per_class, 0),
        (Split::Test, test_per_class, train_per_class),
    ] {
        for category in 0..categories {
            for i in 0..per_class {
                let scene_seed = dataset_scene_seed(seed, offset + i);
                let scene = generate_synthetic_scene(category, scene_seed, cfg)?;
                let rgb = dir.join(format!("{id:05}_rgb.ppm"));
                let depth = dir.join(format!("{id:05}_depth.pgm"));
                save_rgb(&scene.rgb, &rgb)?;
                save_depth(&scene.depth, &depth)?;
                records.push(Record {
                    rgb: Some(rgb),
                    depth: Some(depth),
                    label: category,
                    split,
                });
                id += 1;
            }
        }
    }
    let manifest = Manifest {
        records,
        num_classes: categories,
    };
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest.to_csv(dir)).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            size: 24,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_scene(3, 11, &small()).unwrap();
        let b = generate_synthetic_scene(3, 11, &small()).unwrap();
        assert!(a.rgb.bitwise_eq(&b.rgb));
        assert_eq!(
            a.depth.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.depth.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn unknown_category() {
        assert!(matches!(
            generate_synthetic_scene(8, 0, &small()),
            Err(Error::Param { .. })
        ));
    }

    #[test]
    fn all_layouts_render_valid_images() {
        for c in 0..8 {
            let s = generate_synthetic_scene(c, 5, &small()).unwrap();
            assert!(s.depth.values.iter().all(|&v| v == 0.0 || (0.05..=16.0).contains(&v)), "{c}");
            let valid = s.depth.values.iter().filter(|&&v| v > 0.0).count();
            assert!(valid > s.depth.values.len() * 9 / 10, "{c}");
            assert!(s.rgb.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn box_hit_from_the_front() {
        let b = aabb([-1.0, -1.0, 2.0], [1.0, 1.0, 3.0]);
        let (t, n) = b.hit([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(t, 2.0);
        assert_eq!(n, [0.0, 0.0, -1.0]);
        assert!(b.hit([5.0, 0.0, 1.0]).is_none());
    }
}

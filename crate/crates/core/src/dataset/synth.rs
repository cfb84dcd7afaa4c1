//! Deterministic synthetic sequence pairs.
//!
//! A seeded "world strip" of textured background plus flat shaded objects is
//! rendered through a camera window that advances a fixed number of pixels
//! per frame. The database sequence is the clean rendering; the query
//! sequence re-renders the same trajectory with optional viewpoint shift,
//! exposure change, per-frame occluders, and GNSS noise. Ground truth is the
//! identity map by construction.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::{
    io_err, DatasetError, DepthImage, GnssFix, GroundTruth, MultimodalFrame, Role, Sequence,
    EARTH_RADIUS_M,
};

/// Query-side degradations. All-zero means the query renders byte-identical
/// to the database.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perturbation {
    /// Horizontal camera offset in pixels applied to every query frame.
    pub viewpoint_px: i32,
    /// Exposure change: color and infrared intensities scale by `1 + gain`.
    pub brightness_gain: f64,
    /// Per-frame probability of a synthetic occluding block.
    pub occlusion_rate: f64,
    /// Sigma of the GNSS offset in meters; offsets are truncated at 3 sigma.
    pub gnss_noise_m: f64,
}

impl Perturbation {
    pub fn is_zero(&self) -> bool {
        self.viewpoint_px == 0
            && self.brightness_gain == 0.0
            && self.occlusion_rate == 0.0
            && self.gnss_noise_m == 0.0
    }
}

/// Geometry of the synthetic world and camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub width: u32,
    pub height: u32,
    /// Camera advance along the strip per frame, pixels.
    pub step_px: u32,
    /// Northward GNSS advance per frame, meters.
    pub track_step_m: f64,
    /// Scene objects created per frame of sequence length.
    pub objects_per_frame: f64,
}

impl Default for SynthParams {
    fn default() -> SynthParams {
        SynthParams {
            width: 320,
            height: 240,
            step_px: 16,
            track_step_m: 1.3,
            objects_per_frame: 3.0,
        }
    }
}

const TRACK_ORIGIN_LAT: f64 = 30.25;
const TRACK_ORIGIN_LON: f64 = 120.12;

struct WorldObject {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    ellipse: bool,
    color: [u8; 3],
    ir: u8,
    depth_mm: u16,
}

struct World {
    strip_w: i64,
    height: i64,
    objects: Vec<WorldObject>,
    col_rgb: [Vec<f64>; 3],
    row_rgb: [Vec<f64>; 3],
    col_ir: Vec<f64>,
    row_ir: Vec<f64>,
    col_depth: Vec<f64>,
    row_depth: Vec<f64>,
}

impl World {
    fn build(seed: u64, length: usize, params: &SynthParams, margin: i64) -> World {
        let strip_w = 2 * margin + length as i64 * params.step_px as i64 + params.width as i64;
        let height = params.height as i64;

        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let count = ((length as f64 * params.objects_per_frame).ceil() as usize).max(8);
        let mut objects = Vec::with_capacity(count);
        for _ in 0..count {
            let x = rng.random_range(0..strip_w - 10);
            let y = rng.random_range(0..height - 10);
            let w = rng.random_range(12..=64).min(strip_w - x);
            let h = rng.random_range(12..=64).min(height - y);
            let ellipse = rng.random_bool(0.35);
            let color = [
                rng.random_range(30..=245u16) as u8,
                rng.random_range(30..=245u16) as u8,
                rng.random_range(30..=245u16) as u8,
            ];
            let ir = rng.random_range(30..=245u16) as u8;
            let depth_mm = rng.random_range(600..=9400u16);
            objects.push(WorldObject {
                x,
                y,
                w,
                h,
                ellipse,
                color,
                ir,
                depth_mm,
            });
        }
        // Far objects first so nearer ones overdraw them.
        objects.sort_by(|a, b| b.depth_mm.cmp(&a.depth_mm));

        // Background is separable into column and row profiles; incommensurate
        // frequencies keep the strip aperiodic so positions stay distinct.
        let col = |amps: [(f64, f64, f64); 2], base: f64| -> Vec<f64> {
            (0..strip_w)
                .map(|x| {
                    let x = x as f64;
                    base + amps
                        .iter()
                        .map(|(a, f, p)| a * (x * f + p).sin())
                        .sum::<f64>()
                })
                .collect()
        };
        let row = |amp: f64, freq: f64, phase: f64| -> Vec<f64> {
            (0..height)
                .map(|y| amp * (y as f64 * freq + phase).sin())
                .collect()
        };

        World {
            strip_w,
            height,
            objects,
            col_rgb: [
                col([(55.0, 0.011, 0.0), (18.0, 0.037, 2.1)], 95.0),
                col([(50.0, 0.010, 0.9), (15.0, 0.041, 0.0)], 105.0),
                col([(45.0, 0.012, 1.8), (12.0, 0.033, 0.6)], 115.0),
            ],
            row_rgb: [row(28.0, 0.017, 1.3), row(25.0, 0.019, 0.4), row(30.0, 0.015, 2.2)],
            col_ir: col([(58.0, 0.009, 0.7), (12.0, 0.050, 1.1)], 112.0),
            row_ir: row(22.0, 0.023, 0.0),
            col_depth: (0..strip_w)
                .map(|x| 7200.0 + 1400.0 * (x as f64 * 0.004 + 0.5).sin())
                .collect(),
            row_depth: (0..height).map(|y| -3.0 * y as f64).collect(),
        }
    }
}

struct Occluder {
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
    shade: u8,
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn render(world: &World, params: &SynthParams, wx0: i64, occluder: Option<&Occluder>, gain: f64)
    -> (RgbImage, DepthImage, GrayImage)
{
    let (w, h) = (params.width, params.height);
    let mut color = RgbImage::new(w, h);
    let mut depth = DepthImage::new(w, h);
    let mut ir = GrayImage::new(w, h);

    for y in 0..h {
        let yy = y as usize;
        for x in 0..w {
            let wx = (wx0 + x as i64).clamp(0, world.strip_w - 1) as usize;
            let px = [
                clamp_u8(world.col_rgb[0][wx] + world.row_rgb[0][yy]),
                clamp_u8(world.col_rgb[1][wx] + world.row_rgb[1][yy]),
                clamp_u8(world.col_rgb[2][wx] + world.row_rgb[2][yy]),
            ];
            color.put_pixel(x, y, Rgb(px));
            ir.put_pixel(x, y, Luma([clamp_u8(world.col_ir[wx] + world.row_ir[yy])]));
            let d = (world.col_depth[wx] + world.row_depth[yy]).clamp(600.0, 9800.0);
            depth.put_pixel(x, y, Luma([d as u16]));
        }
    }

    for obj in &world.objects {
        // Visible x-range of the object in viewport coordinates.
        let vx0 = (obj.x - wx0).max(0);
        let vx1 = (obj.x + obj.w - wx0).min(w as i64);
        if vx0 >= vx1 {
            continue;
        }
        let (cx, cy) = (obj.x as f64 + obj.w as f64 / 2.0, obj.y as f64 + obj.h as f64 / 2.0);
        let (rx, ry) = (obj.w as f64 / 2.0, obj.h as f64 / 2.0);
        for vy in obj.y.max(0)..(obj.y + obj.h).min(world.height) {
            for vx in vx0..vx1 {
                let wx = wx0 + vx;
                if obj.ellipse {
                    let ex = (wx as f64 + 0.5 - cx) / rx;
                    let ey = (vy as f64 + 0.5 - cy) / ry;
                    if ex * ex + ey * ey > 1.0 {
                        continue;
                    }
                }
                let on_border = !obj.ellipse
                    && (wx == obj.x || wx == obj.x + obj.w - 1 || vy == obj.y || vy == obj.y + obj.h - 1);
                let dim = if on_border { 0.55 } else { 1.0 };
                let (px, py) = (vx as u32, vy as u32);
                color.put_pixel(
                    px,
                    py,
                    Rgb([
                        clamp_u8(f64::from(obj.color[0]) * dim),
                        clamp_u8(f64::from(obj.color[1]) * dim),
                        clamp_u8(f64::from(obj.color[2]) * dim),
                    ]),
                );
                ir.put_pixel(px, py, Luma([clamp_u8(f64::from(obj.ir) * dim)]));
                depth.put_pixel(px, py, Luma([obj.depth_mm]));
            }
        }
    }

    if let Some(o) = occluder {
        for y in o.y0..(o.y0 + o.h).min(h) {
            for x in o.x0..(o.x0 + o.w).min(w) {
                color.put_pixel(x, y, Rgb([o.shade, o.shade, o.shade.saturating_add(4)]));
                ir.put_pixel(x, y, Luma([o.shade.saturating_add(10)]));
                depth.put_pixel(x, y, Luma([600]));
            }
        }
    }

    if gain != 0.0 {
        let scale = 1.0 + gain;
        for p in color.pixels_mut() {
            for c in &mut p.0 {
                *c = clamp_u8(f64::from(*c) * scale);
            }
        }
        for p in ir.pixels_mut() {
            p.0[0] = clamp_u8(f64::from(p.0[0]) * scale);
        }
    }

    (color, depth, ir)
}

fn track_fix(t: usize, params: &SynthParams) -> GnssFix {
    let north_m = t as f64 * params.track_step_m;
    GnssFix::new(TRACK_ORIGIN_LAT + (north_m / EARTH_RADIUS_M).to_degrees(), TRACK_ORIGIN_LON)
}

/// Generates a (database, query, ground truth) triple with default geometry.
pub fn generate_synthetic_pair(
    seed: u64,
    length: usize,
    pert: &Perturbation,
) -> (Sequence, Sequence, GroundTruth) {
    generate_synthetic_pair_with(&SynthParams::default(), seed, length, pert)
}

/// Generates a synthetic pair with explicit geometry.
///
/// Deterministic for a fixed `(params, seed, length, pert)` tuple.
pub fn generate_synthetic_pair_with(
    params: &SynthParams,
    seed: u64,
    length: usize,
    pert: &Perturbation,
) -> (Sequence, Sequence, GroundTruth) {
    assert!(length >= 1, "length must be >= 1");
    assert!(
        pert.brightness_gain.is_finite()
            && pert.occlusion_rate.is_finite()
            && pert.gnss_noise_m.is_finite(),
        "perturbation magnitudes must be finite"
    );

    let margin = 80 + i64::from(pert.viewpoint_px.unsigned_abs());
    let world = World::build(seed, length, params, margin);

    let mut db_frames = Vec::with_capacity(length);
    for t in 0..length {
        let wx0 = margin + t as i64 * params.step_px as i64;
        let (color, depth, ir) = render(&world, params, wx0, None, 0.0);
        db_frames.push(MultimodalFrame {
            index: t,
            color: Some(color),
            depth: Some(depth),
            infrared: Some(ir),
            gnss: track_fix(t, params),
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let noise = (pert.gnss_noise_m > 0.0)
        .then(|| Normal::new(0.0, pert.gnss_noise_m).expect("finite sigma"));

    let mut q_frames = Vec::with_capacity(length);
    for t in 0..length {
        let wx0 = margin + t as i64 * params.step_px as i64 + i64::from(pert.viewpoint_px);
        let occluder = if rng.random::<f64>() < pert.occlusion_rate {
            let ow = rng.random_range(params.width / 5..=(2 * params.width) / 5);
            let oh = rng.random_range(params.height / 5..=(2 * params.height) / 5);
            Some(Occluder {
                x0: rng.random_range(0..=params.width - ow),
                y0: rng.random_range(0..=params.height - oh),
                w: ow,
                h: oh,
                shade: rng.random_range(15..=60u16) as u8,
            })
        } else {
            None
        };
        let (color, depth, ir) = render(&world, params, wx0, occluder.as_ref(), pert.brightness_gain);

        let base = track_fix(t, params);
        let gnss = match &noise {
            None => base,
            Some(n) => {
                let r = n.sample(&mut rng).abs().min(3.0 * pert.gnss_noise_m);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let dlat = (r * theta.cos() / EARTH_RADIUS_M).to_degrees();
                let dlon = (r * theta.sin()
                    / (EARTH_RADIUS_M * base.latitude.to_radians().cos()))
                .to_degrees();
                GnssFix::new(base.latitude + dlat, base.longitude + dlon)
            }
        };

        q_frames.push(MultimodalFrame {
            index: t,
            color: Some(color),
            depth: Some(depth),
            infrared: Some(ir),
            gnss,
        });
    }

    (
        Sequence { role: Role::Database, frames: db_frames },
        Sequence { role: Role::Query, frames: q_frames },
        GroundTruth::identity(length),
    )
}

fn fnv1a64<I: IntoIterator<Item = u8>>(bytes: I) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic stand-in for an externally computed embedding vector.
///
/// The vector is a unit-norm Gaussian sample keyed on the frame's image
/// bytes, so identical frames always produce identical embeddings.
pub fn synthesize_embedding(frame: &MultimodalFrame, dim: usize) -> Vec<f32> {
    assert!(dim >= 1);
    let h = if let Some(im) = &frame.color {
        fnv1a64(im.as_raw().iter().copied())
    } else if let Some(im) = &frame.infrared {
        fnv1a64(im.as_raw().iter().copied())
    } else if let Some(im) = &frame.depth {
        fnv1a64(im.as_raw().iter().flat_map(|v| v.to_le_bytes()))
    } else {
        fnv1a64((frame.index as u64).to_le_bytes())
    };
    let mut rng = ChaCha20Rng::seed_from_u64(h);
    let normal = Normal::new(0.0f64, 1.0).expect("unit sigma");
    let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    } else {
        v[0] = 1.0;
    }
    v.into_iter().map(|x| x as f32).collect()
}

/// Writes one `.f32` embedding file per frame under `<root>/<dir_name>/`.
pub fn write_embeddings(
    root: &Path,
    seq: &Sequence,
    dim: usize,
    dir_name: &str,
) -> Result<(), DatasetError> {
    let dir = root.join(dir_name);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for frame in &seq.frames {
        let v = synthesize_embedding(frame, dim);
        let mut bytes = Vec::with_capacity(v.len() * 4);
        for x in &v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let p = dir.join(format!("{:06}.f32", frame.index));
        std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

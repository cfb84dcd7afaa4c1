//! Oriented binary local features: FAST segment-test corners with a
//! non-maximum suppressed response map, intensity-centroid orientation, and
//! a rotation-steered 256-bit sampling pattern on a box-smoothed image.

use std::sync::OnceLock;

use image::GrayImage;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Keypoints this close to the border are discarded so the smoothing
/// window, the orientation disc, and the rotated sampling pattern all stay
/// inside the image.
pub const FEATURE_MARGIN: u32 = 15;

/// Contiguous circle pixels required by the segment test.
const SEGMENT_ARC: usize = 9;

/// Radius of the intensity-centroid disc.
const CENTROID_RADIUS: i32 = 7;

/// Sampling coordinates are clamped to this radius.
const PATTERN_CLAMP: i32 = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct OrbParams {
    /// Segment test threshold on absolute intensity difference.
    pub threshold: u8,
    /// Strongest-first cap on the number of returned features.
    pub max_keypoints: usize,
}

impl Default for OrbParams {
    fn default() -> OrbParams {
        OrbParams {
            threshold: 20,
            max_keypoints: 500,
        }
    }
}

/// One detected and described keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeature {
    pub x: u32,
    pub y: u32,
    pub response: f32,
    /// Orientation in radians from the intensity centroid.
    pub angle: f32,
    pub descriptor: [u8; 32],
}

/// Radius-3 discretized circle, clockwise from the top.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// The 256 sampling pairs, drawn once from a fixed-seed Gaussian so every
/// build and process produces the same pattern.
fn sampling_pattern() -> &'static [(i32, i32, i32, i32); 256] {
    static PATTERN: OnceLock<[(i32, i32, i32, i32); 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha20Rng::seed_from_u64(0x4c44_4250_4154_3235);
        let sigma = 31.0 / 5.0;
        let normal = Normal::new(0.0f64, sigma).expect("valid sigma");
        let draw = |rng: &mut ChaCha20Rng| {
            (normal.sample(rng).round() as i32).clamp(-PATTERN_CLAMP, PATTERN_CLAMP)
        };
        let mut out = [(0, 0, 0, 0); 256];
        for slot in &mut out {
            *slot = (draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng));
        }
        out
    })
}

/// 5x5 box smoothing with a border-clamped window, computed through an
/// integral image.
fn box_smooth(img: &GrayImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut integral = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += u64::from(raw[y * w + x]);
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(2);
        let y1 = (y + 3).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(2);
            let x1 = (x + 3).min(w);
            let sum = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0];
            out[y * w + x] = sum as f32 / ((y1 - y0) * (x1 - x0)) as f32;
        }
    }
    out
}

/// Longest circular run of set flags among the 16 circle positions.
fn longest_run(flags: u16) -> usize {
    if flags == 0xffff {
        return 16;
    }
    let doubled = (u32::from(flags) << 16) | u32::from(flags);
    let mut best = 0;
    let mut run = 0;
    for i in 0..32 {
        if doubled >> i & 1 == 1 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best.min(16)
}

/// Detects corners and describes them, strongest first.
pub fn detect_and_describe(img: &GrayImage, params: &OrbParams) -> Vec<LocalFeature> {
    let (w, h) = (img.width(), img.height());
    if params.max_keypoints == 0 || w < 2 * FEATURE_MARGIN + 1 || h < 2 * FEATURE_MARGIN + 1 {
        return Vec::new();
    }
    let (wi, hi) = (w as usize, h as usize);
    let raw = img.as_raw();
    let t = i32::from(params.threshold);

    let mut response = vec![0f32; wi * hi];
    let mut candidates: Vec<usize> = Vec::new();
    for y in FEATURE_MARGIN..h - FEATURE_MARGIN {
        for x in FEATURE_MARGIN..w - FEATURE_MARGIN {
            let idx = y as usize * wi + x as usize;
            let c = i32::from(raw[idx]);
            let at = |k: usize| {
                let (dx, dy) = CIRCLE[k];
                i32::from(raw[(y as i32 + dy) as usize * wi + (x as i32 + dx) as usize])
            };

            // Compass shortcut: a 9-long arc always covers two of the four
            // cardinal circle pixels.
            let mut quick_bright = 0;
            let mut quick_dark = 0;
            for k in [0, 4, 8, 12] {
                let v = at(k);
                if v > c + t {
                    quick_bright += 1;
                } else if v < c - t {
                    quick_dark += 1;
                }
            }
            if quick_bright < 2 && quick_dark < 2 {
                continue;
            }

            let mut bright: u16 = 0;
            let mut dark: u16 = 0;
            let mut score = 0i32;
            for k in 0..16 {
                let v = at(k);
                if v > c + t {
                    bright |= 1 << k;
                    score += v - c - t;
                } else if v < c - t {
                    dark |= 1 << k;
                    score += c - v - t;
                }
            }
            if longest_run(bright) >= SEGMENT_ARC || longest_run(dark) >= SEGMENT_ARC {
                response[idx] = score as f32;
                candidates.push(idx);
            }
        }
    }

    // 3x3 non-maximum suppression; equal responses resolve in favor of the
    // earlier pixel in raster order.
    let smooth = box_smooth(img);
    let pattern = sampling_pattern();
    let mut features: Vec<LocalFeature> = Vec::new();
    'cand: for &idx in &candidates {
        let r = response[idx];
        let (x, y) = ((idx % wi) as i64, (idx / wi) as i64);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nidx = ((y + dy) * wi as i64 + x + dx) as usize;
                let rn = response[nidx];
                if rn > r || (rn == r && nidx < idx) {
                    continue 'cand;
                }
            }
        }

        let (xu, yu) = (x as usize, y as usize);
        let mut m10 = 0f64;
        let mut m01 = 0f64;
        for dy in -CENTROID_RADIUS..=CENTROID_RADIUS {
            for dx in -CENTROID_RADIUS..=CENTROID_RADIUS {
                if dx * dx + dy * dy > CENTROID_RADIUS * CENTROID_RADIUS {
                    continue;
                }
                let v = f64::from(
                    smooth[(yu as i64 + dy as i64) as usize * wi + (xu as i64 + dx as i64) as usize],
                );
                m10 += f64::from(dx) * v;
                m01 += f64::from(dy) * v;
            }
        }
        let angle = (m01 as f32).atan2(m10 as f32);

        let (cos, sin) = (angle.cos(), angle.sin());
        let mut descriptor = [0u8; 32];
        for (k, &(ax, ay, bx, by)) in pattern.iter().enumerate() {
            let rot = |px: i32, py: i32| {
                let rx = (cos * px as f32 - sin * py as f32).round() as i64;
                let ry = (sin * px as f32 + cos * py as f32).round() as i64;
                ((xu as i64 + rx) as usize, (yu as i64 + ry) as usize)
            };
            let (sax, say) = rot(ax, ay);
            let (sbx, sby) = rot(bx, by);
            if smooth[say * wi + sax] < smooth[sby * wi + sbx] {
                descriptor[k / 8] |= 1 << (k % 8);
            }
        }
        features.push(LocalFeature {
            x: xu as u32,
            y: yu as u32,
            response: r,
            angle,
            descriptor,
        });
    }

    features.sort_by(|a, b| {
        b.response
            .partial_cmp(&a.response)
            .expect("responses are finite")
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    features.truncate(params.max_keypoints);
    features
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Checkerboard whose same-colored squares carry per-square intensity
    /// jitter: diagonal neighbors then differ enough for the segment test
    /// arcs to join across the junction.
    fn jittered_checkerboard(w: u32, h: u32, square: u32, seed: u64) -> GrayImage {
        let jitter = |sx: u32, sy: u32| {
            let mut v = seed ^ (u64::from(sx) << 32) ^ u64::from(sy);
            v ^= v << 13;
            v ^= v >> 7;
            v ^= v << 17;
            (v % 81) as u8
        };
        GrayImage::from_fn(w, h, |x, y| {
            let (sx, sy) = (x / square, y / square);
            let base = if (sx + sy) % 2 == 0 { 30 } else { 150 };
            image::Luma([base + jitter(sx, sy)])
        })
    }

    #[test]
    fn flat_image_has_no_features() {
        let img = GrayImage::from_pixel(100, 100, image::Luma([128]));
        assert!(detect_and_describe(&img, &OrbParams::default()).is_empty());
    }

    #[test]
    fn tiny_image_has_no_features() {
        let img = jittered_checkerboard(24, 24, 8, 5);
        assert!(detect_and_describe(&img, &OrbParams::default()).is_empty());
    }

    #[test]
    fn checkerboard_junctions_are_detected() {
        let img = jittered_checkerboard(320, 240, 8, 99);
        let feats = detect_and_describe(&img, &OrbParams::default());
        assert!(feats.len() >= 20, "got {} features", feats.len());
        assert!(feats.len() <= 500);
        for f in &feats {
            assert!(f.x >= FEATURE_MARGIN && f.x < 320 - FEATURE_MARGIN);
            assert!(f.y >= FEATURE_MARGIN && f.y < 240 - FEATURE_MARGIN);
            assert!(f.response > 0.0);
        }
        // Strongest first.
        for pair in feats.windows(2) {
            assert!(pair[0].response >= pair[1].response);
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let img = jittered_checkerboard(160, 120, 8, 7);
        let a = detect_and_describe(&img, &OrbParams::default());
        let b = detect_and_describe(&img, &OrbParams::default());
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn max_keypoints_keeps_the_strongest() {
        let img = jittered_checkerboard(320, 240, 8, 3);
        let all = detect_and_describe(&img, &OrbParams::default());
        let capped = detect_and_describe(
            &img,
            &OrbParams {
                max_keypoints: 10,
                ..OrbParams::default()
            },
        );
        assert_eq!(capped.len(), 10);
        assert_eq!(&all[..10], &capped[..]);
    }

    #[test]
    fn synthetic_frames_yield_features() {
        let pert = crate::dataset::Perturbation::default();
        let (_, db, _) = crate::dataset::generate_synthetic_pair(11, 3, &pert);
        let gray = db.frames[0].gray(crate::dataset::Modality::Color).unwrap();
        let feats = detect_and_describe(&gray, &OrbParams::default());
        assert!(feats.len() >= 5, "got {} features", feats.len());
    }

    #[test]
    fn descriptors_vary_across_keypoints() {
        let img = jittered_checkerboard(320, 240, 8, 21);
        let feats = detect_and_describe(&img, &OrbParams::default());
        assert!(feats.len() > 10);
        let distinct: std::collections::BTreeSet<[u8; 32]> =
            feats.iter().map(|f| f.descriptor).collect();
        assert!(distinct.len() > feats.len() / 4, "descriptors collapsed");
    }
}

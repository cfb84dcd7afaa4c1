//! Holistic scene descriptor: a bank of log-polar frequency-domain filters
//! applied to a whitened, contrast-normalized 128x128 image, pooled over a
//! 4x4 spatial grid.

use std::sync::Arc;

use image::GrayImage;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{resized_gray, Channel, DescriptorError, DescriptorVector, Payload};

#[derive(Debug, Clone, PartialEq)]
pub struct GistParams {
    /// Number of filter scales (frequency rings).
    pub scales: usize,
    /// Orientations per scale.
    pub orientations: usize,
    /// Pooling grid side; the descriptor has `scales * orientations * grid^2`
    /// components.
    pub grid: usize,
    /// Working image side in pixels.
    pub size: usize,
    /// Cutoff of the whitening lowpass, in frequency-plane index units.
    pub prefilt_fc: f64,
}

impl Default for GistParams {
    fn default() -> GistParams {
        GistParams {
            scales: 4,
            orientations: 8,
            grid: 4,
            size: 128,
            prefilt_fc: 4.0,
        }
    }
}

impl GistParams {
    pub fn descriptor_len(&self) -> usize {
        self.scales * self.orientations * self.grid * self.grid
    }
}

/// Padding added on each side before whitening, to soften wrap-around.
const PREFILT_PAD: usize = 5;

/// In-place 2D FFT over a row-major square buffer.
struct Fft2d {
    n: usize,
    fwd: Arc<dyn Fft<f32>>,
    inv: Arc<dyn Fft<f32>>,
    scratch_len: usize,
}

impl Fft2d {
    fn new(planner: &mut FftPlanner<f32>, n: usize) -> Fft2d {
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Fft2d {
            n,
            fwd,
            inv,
            scratch_len,
        }
    }

    fn run(
        &self,
        fft: &Arc<dyn Fft<f32>>,
        buf: &mut [Complex<f32>],
        scratch: &mut Scratch,
    ) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n * n);
        scratch.fft.resize(self.scratch_len, Complex::ZERO);
        scratch.transpose.resize(n * n, Complex::ZERO);
        // Rows: one call processes all n consecutive transforms.
        fft.process_with_scratch(buf, &mut scratch.fft);
        // Columns: transpose, transform rows, transpose back.
        for r in 0..n {
            for c in 0..n {
                scratch.transpose[c * n + r] = buf[r * n + c];
            }
        }
        fft.process_with_scratch(&mut scratch.transpose, &mut scratch.fft);
        for r in 0..n {
            for c in 0..n {
                buf[r * n + c] = scratch.transpose[c * n + r];
            }
        }
    }

    fn forward(&self, buf: &mut [Complex<f32>], scratch: &mut Scratch) {
        self.run(&self.fwd, buf, scratch);
    }

    fn inverse(&self, buf: &mut [Complex<f32>], scratch: &mut Scratch) {
        self.run(&self.inv, buf, scratch);
        let scale = 1.0 / (self.n * self.n) as f32;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

#[derive(Default)]
struct Scratch {
    fft: Vec<Complex<f32>>,
    transpose: Vec<Complex<f32>>,
}

/// Signed frequency index for bin `i` of an `n`-point transform.
fn signed_freq(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Reusable extractor holding the FFT plans, the whitening transfer
/// function, and the filter bank. Building one is moderately expensive;
/// extraction reuses it across frames and channels.
pub struct GistExtractor {
    params: GistParams,
    main: Fft2d,
    padded: Fft2d,
    /// Lowpass transfer function at the padded size.
    whiten: Vec<f32>,
    /// `scales * orientations` transfer functions at the working size,
    /// scale-major.
    filters: Vec<Vec<f32>>,
}

impl GistExtractor {
    pub fn new(params: GistParams) -> GistExtractor {
        assert!(params.scales >= 1 && params.orientations >= 1);
        assert!(params.grid >= 1 && params.size >= params.grid);
        let n = params.size;
        let np = n + 2 * PREFILT_PAD;
        let mut planner = FftPlanner::new();
        let main = Fft2d::new(&mut planner, n);
        let padded = Fft2d::new(&mut planner, np);

        // Gaussian lowpass with cutoff fc, defined on index-unit frequencies.
        let s1 = params.prefilt_fc / (2f64.ln()).sqrt();
        let mut whiten = vec![0f32; np * np];
        for y in 0..np {
            let fy = signed_freq(y, np);
            for x in 0..np {
                let fx = signed_freq(x, np);
                whiten[y * np + x] = (-(fx * fx + fy * fy) / (s1 * s1)).exp() as f32;
            }
        }

        let filters = build_filter_bank(&params);
        GistExtractor {
            params,
            main,
            padded,
            whiten,
            filters,
        }
    }

    pub fn params(&self) -> &GistParams {
        &self.params
    }

    pub fn descriptor_len(&self) -> usize {
        self.params.descriptor_len()
    }

    pub fn extract(
        &self,
        img: &GrayImage,
        channel: Channel,
    ) -> Result<DescriptorVector, DescriptorError> {
        if img.width() == 0 || img.height() == 0 {
            return Err(DescriptorError::EmptyImage);
        }
        let n = self.params.size;
        let work = resized_gray(img, n as u32, n as u32);
        let plane: Vec<f32> = work.as_raw().iter().map(|&v| f32::from(v)).collect();

        let mut scratch = Scratch::default();
        let pre = self.prefilter(&plane, &mut scratch);

        // Frequency-domain responses of the filter bank.
        let mut spectrum: Vec<Complex<f32>> =
            pre.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.main.forward(&mut spectrum, &mut scratch);

        let grid = self.params.grid;
        let mut out = Vec::with_capacity(self.descriptor_len());
        let mut resp = vec![Complex::<f32>::ZERO; n * n];
        for filt in &self.filters {
            for (r, (&s, &g)) in resp.iter_mut().zip(spectrum.iter().zip(filt)) {
                *r = s * g;
            }
            self.main.inverse(&mut resp, &mut scratch);
            // Mean magnitude over each grid cell, row-major cells.
            for gy in 0..grid {
                let y0 = gy * n / grid;
                let y1 = (gy + 1) * n / grid;
                for gx in 0..grid {
                    let x0 = gx * n / grid;
                    let x1 = (gx + 1) * n / grid;
                    let mut acc = 0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += f64::from(resp[y * n + x].norm());
                        }
                    }
                    let count = ((y1 - y0) * (x1 - x0)) as f64;
                    out.push((acc / count) as f32);
                }
            }
        }
        Ok(DescriptorVector::new(channel, Payload::Dense(out)))
    }

    /// Whitening and local contrast normalization.
    ///
    /// The image is log-compressed, symmetrically padded, highpassed by
    /// subtracting a Gaussian-lowpassed copy, then divided by a local
    /// standard deviation estimate obtained by lowpassing the squared
    /// highpass output.
    fn prefilter(&self, plane: &[f32], scratch: &mut Scratch) -> Vec<f32> {
        let n = self.params.size;
        let np = n + 2 * PREFILT_PAD;

        let mut padded = vec![Complex::<f32>::ZERO; np * np];
        for y in 0..np {
            let sy = reflect_index(y, n);
            for x in 0..np {
                let sx = reflect_index(x, n);
                let v = plane[sy * n + sx];
                padded[y * np + x] = Complex::new((1.0 + v).ln(), 0.0);
            }
        }

        // Highpass: subtract the lowpass response.
        let mut low = padded.clone();
        self.padded.forward(&mut low, scratch);
        for (l, &w) in low.iter_mut().zip(&self.whiten) {
            *l *= w;
        }
        self.padded.inverse(&mut low, scratch);
        let mut hi = vec![0f32; np * np];
        for i in 0..np * np {
            hi[i] = padded[i].re - low[i].re;
        }

        // Local energy through the same lowpass gives the normalizer.
        let mut sq: Vec<Complex<f32>> =
            hi.iter().map(|&v| Complex::new(v * v, 0.0)).collect();
        self.padded.forward(&mut sq, scratch);
        for (s, &w) in sq.iter_mut().zip(&self.whiten) {
            *s *= w;
        }
        self.padded.inverse(&mut sq, scratch);

        let mut out = vec![0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let i = (y + PREFILT_PAD) * np + (x + PREFILT_PAD);
                let localstd = sq[i].norm().sqrt();
                out[y * n + x] = hi[i] / (0.2 + localstd);
            }
        }
        out
    }
}

/// Mirror `i` into `[0, n)` for symmetric padding of width `PREFILT_PAD`.
fn reflect_index(i: usize, n: usize) -> usize {
    let off = i as isize - PREFILT_PAD as isize;
    if off < 0 {
        (-off - 1) as usize
    } else if off as usize >= n {
        2 * n - 1 - off as usize
    } else {
        off as usize
    }
}

/// Log-Gabor-style transfer functions on the unpadded frequency plane,
/// scale-major then orientation.
fn build_filter_bank(params: &GistParams) -> Vec<Vec<f32>> {
    let n = params.size;
    let or = params.orientations as f64;
    // Angular concentration chosen so neighboring orientations overlap at
    // equal response regardless of the orientation count.
    let c = 16.0 * or * or / 1024.0;
    let mut bank = Vec::with_capacity(params.scales * params.orientations);
    for s in 0..params.scales {
        let band = 0.3 / 1.85f64.powi(s as i32);
        for o in 0..params.orientations {
            let shift = o as f64 * std::f64::consts::PI / or;
            let mut filt = vec![0f32; n * n];
            for y in 0..n {
                let fy = signed_freq(y, n);
                for x in 0..n {
                    let fx = signed_freq(x, n);
                    let fr = (fx * fx + fy * fy).sqrt();
                    let mut t = fy.atan2(fx) + shift;
                    if t > std::f64::consts::PI {
                        t -= 2.0 * std::f64::consts::PI;
                    }
                    let radial = fr / n as f64 / band - 1.0;
                    let g = (-10.0 * 0.35 * radial * radial
                        - 2.0 * c * std::f64::consts::PI * t * t)
                        .exp();
                    filt[y * n + x] = g as f32;
                }
            }
            bank.push(filt);
        }
    }
    bank
}

/// One-shot extraction; prefer [`GistExtractor`] when processing sequences.
pub fn extract_gist(
    img: &GrayImage,
    params: &GistParams,
    channel: Channel,
) -> Result<DescriptorVector, DescriptorError> {
    GistExtractor::new(params.clone()).extract(img, channel)
}

//! Salient-object mask extraction for crop images.
//!
//! A spectral-residual saliency map is computed on the grayscale crop,
//! binarized with Otsu's threshold, reduced to its largest 4-connected
//! component, and cleaned with a 3x3 morphological closing. When the
//! result is not a single component covering between 1% and 99% of the
//! crop, a central-rectangle fallback mask is returned and flagged as
//! degraded so callers can exclude it from augmentation.

use crate::error::CoreError;
use crate::imaging::raster::{axis_pos, split_pos, BinaryMask, RasterImage};
use crate::Result;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Extraction result: the binary object mask plus a flag marking
/// fallback masks of degraded quality.
#[derive(Debug, Clone)]
pub struct SaliencyMask {
    pub mask: BinaryMask,
    pub degraded: bool,
}

/// Spectral-residual working resolution: the longest crop side is
/// scaled down to this many samples before the transform.
const WORK_SIZE: u32 = 64;
/// Coverage bounds (fractions of crop area) outside which the
/// extracted component is rejected in favor of the fallback mask.
const MIN_COVERAGE: f64 = 0.01;
const MAX_COVERAGE: f64 = 0.99;
/// Fallback rectangle size as a fraction of each crop dimension.
const FALLBACK_FRACTION: f64 = 0.8;
/// Smallest crop side the extractor accepts.
pub(crate) const MIN_CROP_SIDE: u32 = 8;

/// Extracts the salient-object mask of a crop.
///
/// Deterministic: equal inputs produce equal masks. Crops smaller than
/// 8x8 on either side are rejected.
pub fn saliency_mask(crop: &RasterImage) -> Result<SaliencyMask> {
    if crop.width < MIN_CROP_SIDE || crop.height < MIN_CROP_SIDE {
        return Err(CoreError::InvalidParameter {
            message: format!(
                "crop {}x{} is smaller than the {}x{} minimum",
                crop.width, crop.height, MIN_CROP_SIDE, MIN_CROP_SIDE
            ),
        });
    }
    let gray = crop.to_grayscale();

    let (ww, wh) = working_dims(crop.width, crop.height);
    let working = gray
        .resize_bilinear(ww, wh)
        .expect("working dims are nonzero");
    let sigma = (ww.max(wh) as f64 / 32.0).max(1.5);
    let saliency = spectral_residual(&working.channel_plane(0), ww as usize, wh as usize, sigma);
    let full = upsample_plane(&saliency, ww, wh, crop.width, crop.height);

    let mask = binarize_and_clean(&full, crop.width, crop.height);
    let area = (crop.width as f64) * (crop.height as f64);
    if let Some(mask) = mask {
        let coverage = mask.count_on() as f64 / area;
        if coverage >= MIN_COVERAGE && coverage <= MAX_COVERAGE {
            return Ok(SaliencyMask {
                mask,
                degraded: false,
            });
        }
    }
    Ok(SaliencyMask {
        mask: fallback_mask(crop.width, crop.height),
        degraded: true,
    })
}

fn working_dims(w: u32, h: u32) -> (u32, u32) {
    let longest = w.max(h);
    if longest <= WORK_SIZE {
        return (w, h);
    }
    let scale = WORK_SIZE as f64 / longest as f64;
    let ww = ((w as f64 * scale).round() as u32).max(MIN_CROP_SIDE);
    let wh = ((h as f64 * scale).round() as u32).max(MIN_CROP_SIDE);
    (ww, wh)
}

/// Central rectangle covering 80% of each dimension.
fn fallback_mask(w: u32, h: u32) -> BinaryMask {
    let fw = ((w as f64 * FALLBACK_FRACTION).round() as u32).clamp(1, w);
    let fh = ((h as f64 * FALLBACK_FRACTION).round() as u32).clamp(1, h);
    let x0 = (w - fw) / 2;
    let y0 = (h - fh) / 2;
    let mut m = BinaryMask::new(w, h, false);
    for y in y0..y0 + fh {
        for x in x0..x0 + fw {
            m.set(x, y, true);
        }
    }
    m
}

/// Spectral-residual saliency on a grayscale plane, min-max normalized
/// to [0, 1]. A flat input yields an all-zero map.
fn spectral_residual(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    // A constant plane carries no structure; without this guard its
    // residual spectrum is all-ones with zero phase, whose inverse
    // transform is a spurious corner spike.
    let flat = plane
        .iter()
        .all(|&v| (v - plane[0]).abs() < f64::EPSILON);
    if flat {
        return vec![0.0; plane.len()];
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut spectrum: Vec<Complex<f64>> =
        plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2d(&mut spectrum, w, h, &mut planner, false);

    let log_amp: Vec<f64> = spectrum
        .iter()
        .map(|c| (c.norm() + 1e-8).ln())
        .collect();
    let smoothed = box3_filter(&log_amp, w, h);

    for (i, c) in spectrum.iter_mut().enumerate() {
        let residual = log_amp[i] - smoothed[i];
        let phase = c.arg();
        *c = Complex::from_polar(residual.exp(), phase);
    }
    fft2d(&mut spectrum, w, h, &mut planner, true);

    let raw: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
    let blurred = gaussian_blur(&raw, w, h, sigma);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &blurred {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi - lo).is_finite() || hi - lo < 1e-12 {
        return vec![0.0; blurred.len()];
    }
    blurred.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// In-place 2D FFT as rows then columns of 1D transforms.
fn fft2d(
    data: &mut [Complex<f64>],
    w: usize,
    h: usize,
    planner: &mut FftPlanner<f64>,
    inverse: bool,
) {
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
}

/// 3x3 mean filter with edge replication.
fn box3_filter(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    sum += plane[sy * w + sx];
                }
            }
            out[y * w + x] = sum / 9.0;
        }
    }
    out
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }

    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = (x as i64 + k as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += plane[y * w + sx] * kv;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = (y as i64 + k as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += tmp[sy * w + x] * kv;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Align-corners bilinear upsampling of an f64 plane.
fn upsample_plane(plane: &[f64], src_w: u32, src_h: u32, dst_w: u32, dst_h: u32) -> Vec<f64> {
    if src_w == dst_w && src_h == dst_h {
        return plane.to_vec();
    }
    let mut out = vec![0.0; dst_w as usize * dst_h as usize];
    for oy in 0..dst_h {
        let (y0, y1, fy) = split_pos(axis_pos(oy, dst_h, src_h), src_h);
        for ox in 0..dst_w {
            let (x0, x1, fx) = split_pos(axis_pos(ox, dst_w, src_w), src_w);
            let p00 = plane[y0 as usize * src_w as usize + x0 as usize];
            let p10 = plane[y0 as usize * src_w as usize + x1 as usize];
            let p01 = plane[y1 as usize * src_w as usize + x0 as usize];
            let p11 = plane[y1 as usize * src_w as usize + x1 as usize];
            let top = p00 + (p10 - p00) * fx;
            let bot = p01 + (p11 - p01) * fx;
            out[oy as usize * dst_w as usize + ox as usize] = top + (bot - top) * fy;
        }
    }
    out
}

/// Otsu threshold -> largest 4-connected component -> 3x3 closing,
/// re-enforcing single-componentness after the closing. `None` when no
/// foreground survives.
fn binarize_and_clean(plane: &[f64], w: u32, h: u32) -> Option<BinaryMask> {
    let threshold = otsu_threshold(plane)?;
    let mut mask = BinaryMask::new(w, h, false);
    for (i, &v) in plane.iter().enumerate() {
        mask.bits[i] = quantize(v) > threshold;
    }
    let mask = largest_component(&mask)?;
    let closed = erode3(&dilate3(&mask));
    largest_component(&closed)
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Otsu's threshold over a 256-bin histogram of the quantized plane.
/// `None` when the histogram has a single occupied bin.
fn otsu_threshold(plane: &[f64]) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &v in plane {
        hist[quantize(v) as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total = plane.len() as f64;
    let total_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut best_t = 0u8;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..255usize {
        w0 += hist[t] as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let m0 = sum0 / w0;
        let m1 = (total_sum - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best_var {
            best_var = between;
            best_t = t as u8;
        }
    }
    Some(best_t)
}

/// Largest 4-connected foreground component; first-encountered wins
/// size ties (row-major scan order, so the result is deterministic).
fn largest_component(mask: &BinaryMask) -> Option<BinaryMask> {
    let w = mask.width as usize;
    let h = mask.height as usize;
    let mut label = vec![0u32; w * h];
    let mut next = 0u32;
    let mut best_label = 0u32;
    let mut best_size = 0usize;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        let mut size = 0usize;
        stack.push(start);
        label[start] = next;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.bits[j] && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best_size {
            best_size = size;
            best_label = next;
        }
    }
    if best_label == 0 {
        return None;
    }
    let mut out = BinaryMask::new(mask.width, mask.height, false);
    for i in 0..w * h {
        out.bits[i] = label[i] == best_label;
    }
    Some(out)
}

fn dilate3(mask: &BinaryMask) -> BinaryMask {
    let w = mask.width as i64;
    let h = mask.height as i64;
    let mut out = BinaryMask::new(mask.width, mask.height, false);
    for y in 0..h {
        for x in 0..w {
            'win: for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let sx = x + dx;
                    let sy = y + dy;
                    if sx >= 0 && sx < w && sy >= 0 && sy < h && mask.get(sx as u32, sy as u32) {
                        out.set(x as u32, y as u32, true);
                        break 'win;
                    }
                }
            }
        }
    }
    out
}

fn erode3(mask: &BinaryMask) -> BinaryMask {
    let w = mask.width as i64;
    let h = mask.height as i64;
    let mut out = BinaryMask::new(mask.width, mask.height, false);
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            'win: for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let sx = x + dx;
                    let sy = y + dy;
                    let inside =
                        sx >= 0 && sx < w && sy >= 0 && sy < h && mask.get(sx as u32, sy as u32);
                    if !inside {
                        all = false;
                        break 'win;
                    }
                }
            }
            out.set(x as u32, y as u32, all);
        }
    }
    out
}

//! In-memory raster images and binary masks with deterministic
//! grayscale conversion and align-corners bilinear resampling.

use crate::error::CoreError;
use crate::util::round_half_up;
use crate::Result;
use image::ImageReader;
use std::path::Path;

/// Interleaved 8-bit raster with 1 (grayscale) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

/// Binary mask stored one flag per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, fill: u8) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels only");
        RasterImage {
            width,
            height,
            channels,
            data: vec![fill; width as usize * height as usize * channels as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(CoreError::InvalidParameter {
                message: format!("unsupported channel count {channels}"),
            });
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(CoreError::InvalidParameter {
                message: format!(
                    "pixel buffer length {} does not match {}x{}x{}",
                    data.len(),
                    width,
                    height,
                    channels
                ),
            });
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// Channel value at a pixel.
    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.idx(x, y) + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let i = self.idx(x, y) + c as usize;
        self.data[i] = v;
    }

    /// Converts to single-channel luma with the 0.299/0.587/0.114
    /// weights, rounding half-up. Grayscale input is returned as-is.
    pub fn to_grayscale(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width as usize * self.height as usize);
        for px in self.data.chunks_exact(3) {
            let luma =
                0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            data.push(round_half_up(luma).clamp(0.0, 255.0) as u8);
        }
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Expands single-channel data to three identical channels. RGB
    /// input is returned as-is.
    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Align-corners bilinear resize. Each output pixel samples the
    /// source at `dst * (src_len - 1) / (dst_len - 1)` per axis, so the
    /// four corners map exactly and identity dimensions reproduce the
    /// input bit-for-bit.
    pub fn resize_bilinear(&self, new_w: u32, new_h: u32) -> Result<RasterImage> {
        if new_w == 0 || new_h == 0 {
            return Err(CoreError::InvalidParameter {
                message: "resize target must be at least 1x1".into(),
            });
        }
        if new_w == self.width && new_h == self.height {
            return Ok(self.clone());
        }
        let ch = self.channels as usize;
        let mut data = vec![0u8; new_w as usize * new_h as usize * ch];
        for oy in 0..new_h {
            let sy = axis_pos(oy, new_h, self.height);
            let (y0, y1, fy) = split_pos(sy, self.height);
            for ox in 0..new_w {
                let sx = axis_pos(ox, new_w, self.width);
                let (x0, x1, fx) = split_pos(sx, self.width);
                for c in 0..ch {
                    let p00 = self.get(x0, y0, c as u8) as f64;
                    let p10 = self.get(x1, y0, c as u8) as f64;
                    let p01 = self.get(x0, y1, c as u8) as f64;
                    let p11 = self.get(x1, y1, c as u8) as f64;
                    let top = p00 + (p10 - p00) * fx;
                    let bot = p01 + (p11 - p01) * fx;
                    let v = top + (bot - top) * fy;
                    data[(oy as usize * new_w as usize + ox as usize) * ch + c] =
                        round_half_up(v).clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(RasterImage {
            width: new_w,
            height: new_h,
            channels: self.channels,
            data,
        })
    }

    /// Copies a rectangle out of the image.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<RasterImage> {
        if x + w > self.width || y + h > self.height || w == 0 || h == 0 {
            return Err(CoreError::InvalidParameter {
                message: format!(
                    "crop {x},{y} {w}x{h} outside {}x{} image",
                    self.width, self.height
                ),
            });
        }
        let ch = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * ch);
        for yy in y..y + h {
            let start = self.idx(x, yy);
            data.extend_from_slice(&self.data[start..start + w as usize * ch]);
        }
        Ok(RasterImage {
            width: w,
            height: h,
            channels: self.channels,
            data,
        })
    }

    /// Single channel as f64 plane for numeric work.
    pub fn channel_plane(&self, c: u8) -> Vec<f64> {
        let ch = self.channels as usize;
        self.data
            .iter()
            .skip(c as usize)
            .step_by(ch)
            .map(|&v| v as f64)
            .collect()
    }

    /// Writes PNG (always) based on channel count.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let res = match self.channels {
            1 => image::GrayImage::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer length checked by construction")
                .save_with_format(path, image::ImageFormat::Png),
            _ => image::RgbImage::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer length checked by construction")
                .save_with_format(path, image::ImageFormat::Png),
        };
        res.map_err(|e| CoreError::InvalidImage {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Source sampling position for align-corners mapping.
pub(crate) fn axis_pos(dst: u32, dst_len: u32, src_len: u32) -> f64 {
    if dst_len <= 1 {
        // Single output sample reads the source midpoint.
        (src_len as f64 - 1.0) / 2.0
    } else {
        dst as f64 * (src_len as f64 - 1.0) / (dst_len as f64 - 1.0)
    }
}

/// Splits a continuous source position into floor/ceil indices and the
/// interpolation fraction, clamped to the valid range.
pub(crate) fn split_pos(pos: f64, len: u32) -> (u32, u32, f64) {
    let max = (len - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor();
    let i1 = (i0 + 1.0).min(max);
    (i0 as u32, i1 as u32, p - i0)
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, fill: bool) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![fill; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count_on(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tight bounding rectangle of the on pixels: `(x, y, w, h)`.
    pub fn tight_box(&self) -> Option<(u32, u32, u32, u32)> {
        let mut min_x = u32::MAX;
        let mut min_y = u32::MAX;
        let mut max_x = 0u32;
        let mut max_y = 0u32;
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    min_x = min_x.min(x);
                    min_y = min_y.min(y);
                    max_x = max_x.max(x);
                    max_y = max_y.max(y);
                }
            }
        }
        any.then(|| (min_x, min_y, max_x - min_x + 1, max_y - min_y + 1))
    }

    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<BinaryMask> {
        if x + w > self.width || y + h > self.height || w == 0 || h == 0 {
            return Err(CoreError::InvalidParameter {
                message: format!(
                    "crop {x},{y} {w}x{h} outside {}x{} mask",
                    self.width, self.height
                ),
            });
        }
        let mut bits = Vec::with_capacity(w as usize * h as usize);
        for yy in y..y + h {
            let start = yy as usize * self.width as usize + x as usize;
            bits.extend_from_slice(&self.bits[start..start + w as usize]);
        }
        Ok(BinaryMask {
            width: w,
            height: h,
            bits,
        })
    }

    /// Bilinear resize of the {0, 1} field, re-binarized at 0.5
    /// (values of exactly 0.5 count as on). Output is always binary.
    pub fn resize_bilinear(&self, new_w: u32, new_h: u32) -> Result<BinaryMask> {
        if new_w == 0 || new_h == 0 {
            return Err(CoreError::InvalidParameter {
                message: "resize target must be at least 1x1".into(),
            });
        }
        if new_w == self.width && new_h == self.height {
            return Ok(self.clone());
        }
        let mut bits = vec![false; new_w as usize * new_h as usize];
        for oy in 0..new_h {
            let sy = axis_pos(oy, new_h, self.height);
            let (y0, y1, fy) = split_pos(sy, self.height);
            for ox in 0..new_w {
                let sx = axis_pos(ox, new_w, self.width);
                let (x0, x1, fx) = split_pos(sx, self.width);
                let p00 = self.get(x0, y0) as u8 as f64;
                let p10 = self.get(x1, y0) as u8 as f64;
                let p01 = self.get(x0, y1) as u8 as f64;
                let p11 = self.get(x1, y1) as u8 as f64;
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                let v = top + (bot - top) * fy;
                bits[oy as usize * new_w as usize + ox as usize] = v >= 0.5;
            }
        }
        Ok(BinaryMask {
            width: new_w,
            height: new_h,
            bits,
        })
    }

    /// Writes the mask as a single-channel PNG with values {0, 255}.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
        .save_png(path)
    }
}

/// Reads just the pixel dimensions from an image header.
pub fn image_dims(path: impl AsRef<Path>) -> Result<(u32, u32)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CoreError::FileNotFound {
            path: path.to_path_buf(),
        });
    }
    image::image_dimensions(path).map_err(|e| CoreError::InvalidImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Decodes a PNG or JPEG into 1 or 3 channel form (RGBA is flattened
/// to RGB by dropping alpha; 16-bit inputs are rejected).
pub fn load_image(path: &Path) -> Result<RasterImage> {
    if !path.exists() {
        return Err(CoreError::FileNotFound {
            path: path.to_path_buf(),
        });
    }
    let reader = ImageReader::open(path).map_err(|e| CoreError::io(path, e))?;
    let img = reader.decode().map_err(|e| CoreError::InvalidImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let out = match img {
        image::DynamicImage::ImageLuma8(g) => RasterImage {
            width: g.width(),
            height: g.height(),
            channels: 1,
            data: g.into_raw(),
        },
        other => {
            let rgb = other.to_rgb8();
            RasterImage {
                width: rgb.width(),
                height: rgb.height(),
                channels: 3,
                data: rgb.into_raw(),
            }
        }
    };
    Ok(out)
}

/// Loads a mask PNG, requiring strictly binary {0, 255} samples.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let gray = img.to_grayscale();
    let mut bits = Vec::with_capacity(gray.data.len());
    for (i, &v) in gray.data.iter().enumerate() {
        match v {
            0 => bits.push(false),
            255 => bits.push(true),
            other => {
                return Err(CoreError::InvalidMask {
                    message: format!(
                        "{}: pixel {} has value {}, masks must be strictly 0 or 255",
                        path.display(),
                        i,
                        other
                    ),
                })
            }
        }
    }
    Ok(BinaryMask {
        width: gray.width,
        height: gray.height,
        bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_white_is_255_red_is_76() {
        let mut img = RasterImage::new(2, 1, 3, 0);
        for c in 0..3 {
            img.set(0, 0, c, 255);
        }
        img.set(1, 0, 0, 255);
        let g = img.to_grayscale();
        assert_eq!(g.get(0, 0, 0), 255);
        assert_eq!(g.get(1, 0, 0), 76);
    }

    #[test]
    fn grayscale_preserves_equal_channels() {
        for v in [0u8, 1, 17, 127, 128, 200, 254, 255] {
            let mut img = RasterImage::new(1, 1, 3, v);
            img.data = vec![v, v, v];
            assert_eq!(img.to_grayscale().get(0, 0, 0), v, "value {v}");
        }
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let mut img = RasterImage::new(5, 4, 3, 0);
        for (i, b) in img.data.iter_mut().enumerate() {
            *b = (i * 37 % 256) as u8;
        }
        let same = img.resize_bilinear(5, 4).expect("resize");
        assert_eq!(same, img);
    }

    #[test]
    fn resize_two_to_three_interpolates_midpoint() {
        let img = RasterImage::from_data(2, 1, 1, vec![0, 255]).expect("image");
        let out = img.resize_bilinear(3, 1).expect("resize");
        assert_eq!(out.data, vec![0, 128, 255]);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RasterImage::new(7, 3, 3, 143);
        let out = img.resize_bilinear(13, 9).expect("resize");
        assert!(out.data.iter().all(|&v| v == 143));
    }

    #[test]
    fn mask_resize_is_binary() {
        let mut m = BinaryMask::new(4, 4, false);
        for y in 1..3 {
            for x in 1..3 {
                m.set(x, y, true);
            }
        }
        let r = m.resize_bilinear(9, 9).expect("resize");
        assert!(r.bits.iter().all(|&b| b == true || b == false));
        assert!(r.count_on() > 0);
        let back = r.resize_bilinear(4, 4).expect("resize");
        assert_eq!(back.width, 4);
    }

    #[test]
    fn tight_box_finds_extent() {
        let mut m = BinaryMask::new(10, 8, false);
        m.set(2, 3, true);
        m.set(7, 5, true);
        assert_eq!(m.tight_box(), Some((2, 3, 6, 3)));
        let empty = BinaryMask::new(4, 4, false);
        assert_eq!(empty.tight_box(), None);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::TempDir::new().expect("tempdir");
        let mut img = RasterImage::new(6, 5, 3, 9);
        img.set(2, 2, 1, 201);
        let p = dir.path().join("x.png");
        img.save_png(&p).expect("save");
        let back = load_image(&p).expect("load");
        assert_eq!(back, img);
    }

    #[test]
    fn mask_png_round_trip_and_strictness() {
        let dir = tempfile::TempDir::new().expect("tempdir");
        let mut m = BinaryMask::new(4, 4, false);
        m.set(1, 1, true);
        let p = dir.path().join("m.png");
        m.save_png(&p).expect("save");
        let back = load_mask(&p).expect("load");
        assert_eq!(back, m);

        let gray = RasterImage::new(2, 2, 1, 128);
        let p2 = dir.path().join("bad.png");
        gray.save_png(&p2).expect("save");
        let err = load_mask(&p2).unwrap_err();
        assert!(matches!(err, CoreError::InvalidMask { .. }), "{err}");
    }
}

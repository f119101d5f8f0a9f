//! Full-range BT.601 (JPEG) YCbCr conversion, PNG I/O and the luminance-swap
//! experiment.
//!
//! ```text
//! Y  =  0.299    R + 0.587    G + 0.114    B
//! Cb = -0.168736 R - 0.331264 G + 0.5      B + 0.5
//! Cr =  0.5      R - 0.418688 G - 0.081312 B + 0.5
//! ```
//!
//! The inverse is computed once from the forward matrix so that the round trip
//! is exact up to floating point rounding.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Forward RGB → YCbCr matrix (offsets of 0.5 on Cb and Cr are applied separately).
pub const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
];

/// Chroma offset so that achromatic pixels sit at 0.5.
pub const CHROMA_OFFSET: f64 = 0.5;

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            // adjugate: cofactor of (c, r)
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}

/// YCbCr → RGB matrix, the exact inverse of [`RGB_TO_YCBCR`].
pub fn ycbcr_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_YCBCR))
}

#[inline]
pub fn rgb_to_ycbcr_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let m = &RGB_TO_YCBCR;
    let dot = |row: &[f64; 3]| row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
    // chroma rows sum to zero, so differences keep R = G = B at exactly 0.5
    let [r, g, b] = rgb;
    let cb = m[1][0] * (r - b) + m[1][1] * (g - b);
    let cr = m[2][1] * (g - r) + m[2][2] * (b - r);
    [dot(&m[0]), cb + CHROMA_OFFSET, cr + CHROMA_OFFSET]
}

#[inline]
pub fn ycbcr_to_rgb_pixel(ycc: [f64; 3]) -> [f64; 3] {
    let m = ycbcr_to_rgb_matrix();
    let v = [ycc[0], ycc[1] - CHROMA_OFFSET, ycc[2] - CHROMA_OFFSET];
    let dot = |row: &[f64; 3]| row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    [dot(&m[0]), dot(&m[1]), dot(&m[2])]
}

/// RGB image with interleaved `f64` samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved RGB samples. Dimensions must be even
    /// and at least 8; samples must be finite.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        ensure!(
            pixels.len() == height * width * 3,
            Shape,
            "{} samples for a {height}x{width}x3 image",
            pixels.len()
        );
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sample {} (pixel {}, channel {})",
                pixels[i],
                i / 3,
                i % 3
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// `[1, 3, H, W]` planar tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut data = vec![T::ZERO; 3 * plane];
        for (p, px) in self.pixels.chunks(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = T::from_f64(px[c]);
            }
        }
        Tensor::new(&[1, 3, self.height, self.width], data)
    }

    /// Reads a `[1, 3, H, W]` (or `[3, H, W]`) tensor back into an image
    /// without clamping.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = planar_dims(t)?;
        ensure!(c == 3, Shape, "expected 3 channels, got {c}");
        let plane = h * w;
        let mut pixels = vec![0.0; 3 * plane];
        for p in 0..plane {
            for ch in 0..3 {
                pixels[p * 3 + ch] = t.data()[ch * plane + p].to_f64();
            }
        }
        Self::new(h, w, pixels)
    }

    /// Decodes an 8-bit PNG (gray, gray+alpha, RGB or RGBA); samples map to
    /// `v / 255`.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let mut pixels = Vec::with_capacity(w * h * 3);
        for px in buf[..info.buffer_size()].chunks(channels) {
            let rgb = match channels {
                1 | 2 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            };
            pixels.extend(rgb.iter().map(|&v| v as f64 / 255.0));
        }
        Self::new(h, w, pixels)
    }

    /// Encodes as 8-bit RGB PNG; samples are clamped and rounded half-up.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        writer
            .write_image_data(&self.to_bytes())
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        writer.finish().map_err(|e| Error::Png(format!("{}: {e}", path.display())))
    }

    /// 8-bit quantisation used by [`Image::write_png`].
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }
}

/// `[0,1]` → `0..=255`, clamped, rounding half-up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    ensure!(
        height >= 8 && width >= 8 && height % 2 == 0 && width % 2 == 0,
        Shape,
        "image dimensions must be even and at least 8, got {height}x{width}"
    );
    Ok(())
}

fn planar_dims<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [1, c, h, w] | [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("expected [1,C,H,W], got {:?}", t.shape()))),
    }
}

/// Planar luminance (`H×W`) and chrominance (`2×H×W`, Cb then Cr) maps.
#[derive(Clone, Debug, PartialEq)]
pub struct YCbCrImage {
    height: usize,
    width: usize,
    lum: Vec<f64>,
    chrom: Vec<f64>,
}

impl YCbCrImage {
    pub fn new(height: usize, width: usize, lum: Vec<f64>, chrom: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        let plane = height * width;
        ensure!(
            lum.len() == plane && chrom.len() == 2 * plane,
            Shape,
            "lum has {} and chrom {} samples, expected {plane} and {}",
            lum.len(),
            chrom.len(),
            2 * plane
        );
        ensure!(
            lum.iter().chain(&chrom).all(|v| v.is_finite()),
            NonFinite,
            "YCbCr planes contain NaN or infinity"
        );
        Ok(Self {
            height,
            width,
            lum,
            chrom,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lum(&self) -> &[f64] {
        &self.lum
    }

    pub fn chrom(&self) -> &[f64] {
        &self.chrom
    }

    pub fn cb(&self) -> &[f64] {
        &self.chrom[..self.height * self.width]
    }

    pub fn cr(&self) -> &[f64] {
        &self.chrom[self.height * self.width..]
    }

    /// `[1, 3, H, W]` tensor with channels (Y, Cb, Cr).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.lum.iter().chain(&self.chrom).map(|&v| T::from_f64(v)).collect();
        Tensor::new(&[1, 3, self.height, self.width], data)
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = planar_dims(t)?;
        ensure!(c == 3, Shape, "expected (Y, Cb, Cr) channels, got {c}");
        let plane = h * w;
        let all: Vec<f64> = t.data().iter().map(|v| v.to_f64()).collect();
        Self::new(h, w, all[..plane].to_vec(), all[plane..].to_vec())
    }
}

/// Pixelwise full-range BT.601 conversion; no clamping.
pub fn rgb_to_ycbcr(img: &Image) -> Result<YCbCrImage> {
    let plane = img.height * img.width;
    let mut lum = vec![0.0; plane];
    let mut chrom = vec![0.0; 2 * plane];
    for (p, px) in img.pixels.chunks(3).enumerate() {
        if let Some(c) = px.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel {p} channel {c} = {}", px[c])));
        }
        let [y, cb, cr] = rgb_to_ycbcr_pixel([px[0], px[1], px[2]]);
        lum[p] = y;
        chrom[p] = cb;
        chrom[plane + p] = cr;
    }
    YCbCrImage::new(img.height, img.width, lum, chrom)
}

/// Inverse conversion followed by a clamp to `[0, 1]`.
pub fn ycbcr_to_rgb(ycc: &YCbCrImage) -> Result<Image> {
    let plane = ycc.height * ycc.width;
    ensure!(
        ycc.lum.len() == plane && ycc.chrom.len() == 2 * plane,
        Shape,
        "lum/chrom planes disagree with {}x{}",
        ycc.height,
        ycc.width
    );
    let mut pixels = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        let rgb = ycbcr_to_rgb_pixel([ycc.lum[p], ycc.chrom[p], ycc.chrom[plane + p]]);
        pixels.extend(rgb.iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Image::new(ycc.height, ycc.width, pixels)
}

/// Returns `(a.chrom + b.lum, b.chrom + a.lum)`.
pub fn swap_luminance(a: &YCbCrImage, b: &YCbCrImage) -> Result<(YCbCrImage, YCbCrImage)> {
    ensure!(
        a.height == b.height && a.width == b.width,
        Shape,
        "cannot swap luminance between {}x{} and {}x{}",
        a.height,
        a.width,
        b.height,
        b.width
    );
    let first = YCbCrImage {
        lum: b.lum.clone(),
        ..a.clone()
    };
    let second = YCbCrImage {
        lum: a.lum.clone(),
        ..b.clone()
    };
    Ok((first, second))
}

/// Batched planar conversion on `[N, 3, H, W]` tensors (training path).
pub fn rgb_to_ycbcr_tensor<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    map_pixels(t, rgb_to_ycbcr_pixel)
}

/// Batched inverse conversion, unclamped.
pub fn ycbcr_to_rgb_tensor<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    map_pixels(t, ycbcr_to_rgb_pixel)
}

fn map_pixels<T: Scalar>(t: &Tensor<T>, f: fn([f64; 3]) -> [f64; 3]) -> Tensor<T> {
    let [n, c, h, w] = t.dims4();
    assert_eq!(c, 3, "color conversion needs 3 channels");
    let plane = h * w;
    let mut out = vec![T::ZERO; t.len()];
    for b in 0..n {
        let base = b * 3 * plane;
        for p in 0..plane {
            let v = f(std::array::from_fn(|ch| t.data()[base + ch * plane + p].to_f64()));
            for (ch, x) in v.into_iter().enumerate() {
                out[base + ch * plane + p] = T::from_f64(x);
            }
        }
    }
    Tensor::new(t.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn reference_pixels() {
        assert!(close(rgb_to_ycbcr_pixel([1.0, 1.0, 1.0]), [1.0, 0.5, 0.5], 1e-12));
        assert!(close(rgb_to_ycbcr_pixel([0.0, 0.0, 0.0]), [0.0, 0.5, 0.5], 1e-12));
        // red: Y = 0.299, Cb = 0.5 - 0.168736, Cr = 0.5 + 0.5
        assert!(close(rgb_to_ycbcr_pixel([1.0, 0.0, 0.0]), [0.299, 0.331264, 1.0], 1e-12));
        assert!(close(ycbcr_to_rgb_pixel([1.0, 0.5, 0.5]), [1.0, 1.0, 1.0], 1e-12));
        assert!(close(ycbcr_to_rgb_pixel([0.299, 0.331264, 1.0]), [1.0, 0.0, 0.0], 1e-9));
    }

    #[test]
    fn inverse_matrix_is_inverse() {
        let inv = ycbcr_to_rgb_matrix();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| inv[i][k] * RGB_TO_YCBCR[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        // the familiar JPEG coefficients
        assert!((inv[0][2] - 1.402).abs() < 1e-4);
        assert!((inv[2][1] - 1.772).abs() < 1e-4);
    }

    #[test]
    fn achromatic_is_exactly_half() {
        for g in [0.0, 0.1, 0.25, 0.5, 0.77, 1.0] {
            let [_, cb, cr] = rgb_to_ycbcr_pixel([g, g, g]);
            assert_eq!(cb, 0.5, "gray {g}");
            assert_eq!(cr, 0.5, "gray {g}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Image::new(7, 8, vec![0.0; 168]), Err(Error::Shape(_))));
        let mut px = vec![0.5; 8 * 8 * 3];
        px[5] = f64::NAN;
        assert!(matches!(Image::new(8, 8, px), Err(Error::NonFinite(_))));
        assert!(YCbCrImage::new(8, 8, vec![0.0; 64], vec![0.5; 64]).is_err());
    }

    #[test]
    fn swap_is_an_involution_and_keeps_chroma() {
        let a = rgb_to_ycbcr(&Image::filled(8, 8, [0.9, 0.2, 0.1]).unwrap()).unwrap();
        let b = rgb_to_ycbcr(&Image::filled(8, 8, [0.1, 0.3, 0.8]).unwrap()).unwrap();
        let (ab, ba) = swap_luminance(&a, &b).unwrap();
        assert_eq!(ab.chrom(), a.chrom());
        assert_eq!(ba.chrom(), b.chrom());
        assert_eq!(ab.lum(), b.lum());
        let (a2, b2) = swap_luminance(&ab, &ba).unwrap();
        assert_eq!((a2, b2), (a.clone(), b));
        let (x, y) = swap_luminance(&a, &a).unwrap();
        assert_eq!((x, y), (a.clone(), a.clone()));
        let small = rgb_to_ycbcr(&Image::filled(8, 10, [0.0; 3]).unwrap()).unwrap();
        assert!(swap_luminance(&a, &small).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = std::env::temp_dir().join(format!("lcdiff-png-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut px = Vec::new();
        for i in 0..8 * 8 * 3 {
            px.push((i % 256) as f64 / 255.0);
        }
        let img = Image::new(8, 8, px).unwrap();
        let path = dir.join("a.png");
        img.write_png(&path).unwrap();
        let back = Image::read_png(&path).unwrap();
        assert_eq!(back, img);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(1.5), 255);
        assert_eq!(quantize(-0.2), 0);
    }

    #[test]
    fn tensor_path_matches_pixel_path() {
        let img = Image::new(8, 8, (0..192).map(|i| (i as f64 * 0.37) % 1.0).collect()).unwrap();
        let t = rgb_to_ycbcr_tensor(&img.to_tensor::<f64>());
        assert_eq!(YCbCrImage::from_tensor(&t).unwrap(), rgb_to_ycbcr(&img).unwrap());
        let back = ycbcr_to_rgb_tensor(&t);
        assert!(back.zip_map(&img.to_tensor(), |a, b| a - b).max_abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip_within_tolerance(px in prop::collection::vec(0.0f64..=1.0, 8 * 8 * 3)) {
            let img = Image::new(8, 8, px).unwrap();
            let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
            for (a, b) in back.pixels().iter().zip(img.pixels()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}

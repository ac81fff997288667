use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit RGB image, row-major `H×W×3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape(vec![height, width, 3]));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::ShapeMismatch { expected: vec![height, width, 3], got: vec![pixels.len()] });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.iter().copied().cycle().take(width * height * 3).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

/// Decodes binary PPM (P6, maxval 255) or 8-bit RGB PNG, chosen by content.
pub fn decode_image(path: &Path) -> Result<RgbImage> {
    decode_bytes(&fs::read(path)?)
}

pub fn decode_bytes(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else {
        Err(Error::UnsupportedFormat("unrecognized image signature".into()))
    }
}

/// Encodes by file extension (`.ppm` or `.png`).
pub fn encode_image(img: &RgbImage, path: &Path) -> Result<()> {
    let format = ImageFormat::from_path(path).ok_or_else(|| Error::UnsupportedFormat(path.display().to_string()))?;
    fs::write(path, encode_bytes(img, format)?)?;
    Ok(())
}

pub fn encode_bytes(img: &RgbImage, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Ppm => {
            let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend_from_slice(&img.pixels);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(BufWriter::new(&mut out), img.width as u32, img.height as u32);
                enc.set_color(png::ColorType::Rgb);
                enc.set_depth(png::BitDepth::Eight);
                let mut writer = enc.write_header().map_err(|e| Error::CorruptFile(e.to_string()))?;
                writer.write_image_data(&img.pixels).map_err(|e| Error::CorruptFile(e.to_string()))?;
            }
            Ok(out)
        }
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let corrupt = |what: &str| Error::CorruptFile(format!("ppm: {what}"));
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each header number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(corrupt("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("expected a number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos]).ok().and_then(|s| s.parse().ok()).ok_or_else(|| corrupt("bad number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(corrupt("missing separator after header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("ppm maxval {maxval}")));
    }
    let n = w.checked_mul(h).and_then(|v| v.checked_mul(3)).ok_or_else(|| corrupt("size overflow"))?;
    let data = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated pixel data"))?;
    RgbImage::new(w, h, data.to_vec()).map_err(|_| corrupt("empty image"))
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::CorruptFile(format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!("png {:?} {:?}; only 8-bit RGB is supported", info.color_type, info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::CorruptFile("png: size overflow".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::CorruptFile(format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    RgbImage::new(w, h, buf)
}

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear resampling with half-pixel-centred coordinates and edge clamping.
pub fn resize_bilinear(img: &RgbImage, width: usize, height: usize) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidShape(vec![height, width, 3]));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let axis = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = vec![0u8; width * height * 3];
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, sx, img.width);
            let (p00, p01, p10, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                out[(y * width + x) * 3 + c] = round_half_up(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    RgbImage::new(width, height, out)
}

/// Pixel value ranges for network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelRange {
    /// `[-1, 1]`, matching a tanh generator output.
    Symmetric,
    /// `[0, 1]`, for the classifier.
    Unit,
}

impl PixelRange {
    pub fn to_value(self, p: u8) -> f64 {
        match self {
            PixelRange::Symmetric => p as f64 / 127.5 - 1.0,
            PixelRange::Unit => p as f64 / 255.0,
        }
    }

    /// Inverse of [`PixelRange::to_value`], rounding half up and clamping.
    pub fn to_pixel(self, v: f64) -> u8 {
        match self {
            PixelRange::Symmetric => round_half_up((v + 1.0) * 127.5),
            PixelRange::Unit => round_half_up(v * 255.0),
        }
    }
}

/// Stacks equally sized images into an `[N,3,H,W]` tensor.
pub fn normalize<T: Scalar>(images: &[RgbImage], range: PixelRange) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(Error::DimensionMismatch { lhs: (w, h), rhs: (img.width, img.height) });
        }
        for c in 0..3 {
            data.extend(img.pixels[c..].iter().step_by(3).map(|&p| T::lit(range.to_value(p))));
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Converts an `[N,C,H,W]` tensor (C = 1 or 3) back to images.
pub fn denormalize<T: Scalar>(batch: &Tensor<T>, range: PixelRange) -> Result<Vec<RgbImage>> {
    let &[n, c, h, w] = batch.shape() else {
        return Err(Error::ShapeMismatch { expected: vec![0, 3, 0, 0], got: batch.shape().to_vec() });
    };
    if c != 1 && c != 3 {
        return Err(Error::ChannelMismatch { expected: 3, got: c });
    }
    let data = batch.data();
    (0..n)
        .map(|b| {
            let mut px = vec![0u8; h * w * 3];
            for i in 0..h * w {
                for ch in 0..3 {
                    let src = if c == 1 { 0 } else { ch };
                    px[i * 3 + ch] = range.to_pixel(data[((b * c + src) * h * w) + i].as_f64());
                }
            }
            RgbImage::new(w, h, px)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_single_red_pixel() {
        let img = RgbImage::new(1, 1, vec![255, 0, 0]).unwrap();
        let bytes = encode_bytes(&img, ImageFormat::Ppm).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\x00\x00");
        assert_eq!(decode_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_header_comments() {
        let bytes = b"P6 # comment\n2 1\n# another\n255\n\x01\x02\x03\x04\x05\x06";
        let img = decode_bytes(bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixels(), &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn ppm_errors() {
        assert!(matches!(decode_bytes(b"P6\n2 2\n255\n\x00"), Err(Error::CorruptFile(_))));
        assert!(matches!(decode_bytes(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_bytes(b"GIF89a"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn png_round_trip() {
        let px: Vec<u8> = (0..5 * 4 * 3).map(|v| (v * 7 % 256) as u8).collect();
        let img = RgbImage::new(5, 4, px).unwrap();
        let bytes = encode_bytes(&img, ImageFormat::Png).unwrap();
        let back = decode_bytes(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_bytes(&back, ImageFormat::Png).unwrap(), bytes);
    }

    #[test]
    fn resize_identity_and_average() {
        let img = RgbImage::new(3, 2, (0..18).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 2).unwrap(), img);
        let mut board = RgbImage::filled(2, 2, [0, 0, 0]).unwrap();
        board.put(1, 0, [255, 255, 255]);
        board.put(0, 1, [255, 255, 255]);
        let one = resize_bilinear(&board, 1, 1).unwrap();
        assert_eq!(one.pixels(), &[128, 128, 128]);
    }

    #[test]
    fn normalize_endpoints_and_exact_inverse() {
        for range in [PixelRange::Symmetric, PixelRange::Unit] {
            for p in 0..=255u8 {
                let v32 = range.to_value(p) as f32;
                assert_eq!(range.to_pixel(v32 as f64), p);
            }
        }
        assert_eq!(PixelRange::Symmetric.to_value(0), -1.0);
        assert_eq!(PixelRange::Unit.to_value(0), 0.0);
        assert_eq!(PixelRange::Symmetric.to_value(255), 1.0);
        assert_eq!(PixelRange::Unit.to_value(255), 1.0);
    }

    #[test]
    fn tensor_round_trip_is_planar() {
        let img = RgbImage::new(2, 1, vec![10, 20, 30, 40, 50, 60]).unwrap();
        let t: Tensor<f32> = normalize(std::slice::from_ref(&img), PixelRange::Unit).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data()[0] * 255.0, 10.0);
        assert_eq!(t.data()[1] * 255.0, 40.0);
        assert_eq!(denormalize(&t, PixelRange::Unit).unwrap(), vec![img]);
    }
}

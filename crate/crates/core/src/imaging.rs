//! Raster types, color conversion, resampling and the PPM/PGM codecs.
//!
//! Pixels are held as normalized `f32` channels in `[0, 1]`; 8-bit values only
//! exist at the file boundary.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("image dimensions must be at least 1x1")]
    ZeroDimension,
    #[error("buffer length {found} does not match {width}x{height}x{channels}")]
    BadBufferLength {
        width: usize,
        height: usize,
        channels: usize,
        found: usize,
    },
    #[error("channel value {0} outside [0, 1]")]
    OutOfRange(f32),
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        if data.len() != width * height * 3 {
            return Err(ImageError::BadBufferLength {
                width,
                height,
                channels: 3,
                found: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(ImageError::OutOfRange(bad));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self, ImageError> {
        let rgb = rgb.map(|c| c.clamp(0.0, 1.0));
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    /// Builds an image from a per-pixel function; outputs are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(clamp_unit));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel, clamping each channel into `[0, 1]`.
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb.map(clamp_unit));
    }

    /// Rows `top..height`, full width.
    pub fn crop_rows(&self, top: usize) -> Result<Self, ImageError> {
        if top >= self.height {
            return Err(ImageError::ZeroDimension);
        }
        Ok(Self {
            width: self.width,
            height: self.height - top,
            data: self.data[top * self.width * 3..].to_vec(),
        })
    }

    /// Luminance plane, `0.299 r + 0.587 g + 0.114 b`.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| clamp_unit(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]))
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Multiplies every channel by `k`, clamping to `[0, 1]`.
    pub fn scale_brightness(&self, k: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&c| clamp_unit(c * k)).collect(),
        }
    }

    /// Bilinear sample at continuous pixel-center coordinates with edge clamping.
    fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
        let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = clamp_unit((top * (1.0 - fy) + bottom * fy) as f32);
        }
        out
    }
}

/// Row-major luminance plane with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(ImageError::BadBufferLength {
                width,
                height,
                channels: 1,
                found: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(ImageError::OutOfRange(bad));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

/// Row-major boolean map; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(ImageError::BadBufferLength {
                width,
                height,
                channels: 1,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// All-background mask. Panics on a zero dimension.
    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be non-zero");
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.data[y * width + x] = f(x, y);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Bounds-checked lookup; anything outside the raster is background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_size(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel-wise conjunction. Panics if sizes differ.
    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        assert!(self.same_size(other), "mask size mismatch");
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_size(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// `(x, y)` of every foreground pixel in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Hexcone HSV triple: hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> Hsv {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    if max <= 0.0 || delta <= 0.0 {
        return Hsv { h: 0.0, s: 0.0, v };
    }
    let s = delta / max;
    let mut h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv { h, s, v }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [f64; 3] {
    let Hsv { h, s, v } = hsv;
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Bilinear resize using the half-pixel-center mapping
/// `src = (dst + 0.5) * in / out - 0.5`, clamped to the source raster.
pub fn resize_bilinear(
    img: &RgbImage,
    out_w: usize,
    out_h: usize,
) -> Result<RgbImage, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::ZeroDimension);
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    RgbImage::from_fn(out_w, out_h, |x, y| {
        img.sample((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
    })
}

/// Rotates counter-clockwise (as displayed) by `rotation_deg` about the image
/// center, sampling bilinearly with edge-clamped fill, then scales every
/// channel by `brightness`.
pub fn augment(img: &RgbImage, rotation_deg: f64, brightness: f64) -> RgbImage {
    let rotated = if rotation_deg == 0.0 {
        img.clone()
    } else {
        let (sin, cos) = rotation_deg.to_radians().sin_cos();
        let cx = (img.width as f64 - 1.0) / 2.0;
        let cy = (img.height as f64 - 1.0) / 2.0;
        RgbImage::from_fn(img.width, img.height, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            img.sample(cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
        })
        .expect("source dimensions are non-zero")
    };
    if brightness == 1.0 {
        rotated
    } else {
        rotated.scale_brightness(brightness as f32)
    }
}

fn clamp_unit(c: f32) -> f32 {
    if c.is_nan() {
        0.0
    } else {
        c.clamp(0.0, 1.0)
    }
}

fn quantize(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header {
    width: usize,
    height: usize,
    payload_offset: usize,
}

/// Parses a binary netpbm header: magic, width, height, maxval (must be 255),
/// then exactly one whitespace byte. `#` comments run to end of line.
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(ImageError::MalformedHeader(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // At least one whitespace (or comment) must separate tokens.
        let start = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if pos == start {
            return Err(ImageError::MalformedHeader(
                "missing whitespace between header fields".into(),
            ));
        }
        let digits_start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == digits_start {
            return Err(ImageError::MalformedHeader(format!(
                "header field {i} is not a number"
            )));
        }
        let text = std::str::from_utf8(&bytes[digits_start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| ImageError::MalformedHeader(format!("header field {i} overflows")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(ImageError::MalformedHeader(format!(
            "maxval {maxval} (only 255 is supported)"
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(ImageError::MalformedHeader(
                "maxval must be followed by a single whitespace byte".into(),
            ))
        }
    }
    Ok(Header {
        width,
        height,
        payload_offset: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8], ImageError> {
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::MalformedHeader("dimensions overflow".into()))?;
    let available = bytes.len() - header.payload_offset;
    if available < expected {
        return Err(ImageError::TruncatedPayload {
            expected,
            found: available,
        });
    }
    Ok(&bytes[header.payload_offset..header.payload_offset + expected])
}

/// Decodes a binary P6 PPM with maxval 255. Bytes past the payload are ignored.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let header = parse_header(bytes, b"P6")?;
    let body = payload(bytes, &header, 3)?;
    Ok(RgbImage {
        width: header.width,
        height: header.height,
        data: body.iter().map(|&b| b as f32 / 255.0).collect(),
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&c| quantize(c)));
    out
}

/// Writes a mask as binary P5: foreground 255, background 0.
pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Reads a binary P5 mask; samples ≥ 128 are foreground.
pub fn decode_pgm(bytes: &[u8]) -> Result<BinaryMask, ImageError> {
    let header = parse_header(bytes, b"P5")?;
    let body = payload(bytes, &header, 1)?;
    Ok(BinaryMask {
        width: header.width,
        height: header.height,
        data: body.iter().map(|&b| b >= 128).collect(),
    })
}

/// Encodes a luminance plane as P5 (used for debugging dumps).
pub fn encode_gray_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&c| quantize(c)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, data: &[f32]) -> RgbImage {
        RgbImage::new(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn decode_small_ppm() {
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        bytes.extend(0u8..18);
        let im = decode_ppm(&bytes).unwrap();
        assert_eq!((im.width(), im.height()), (3, 2));
        assert_eq!(im.pixel(1, 0), [3.0 / 255.0, 4.0 / 255.0, 5.0 / 255.0]);
        assert_eq!(encode_ppm(&im), bytes);
    }

    #[test]
    fn decode_ppm_with_comments() {
        let mut bytes = b"P6 # comment\n# another\n1\t1 255\n".to_vec();
        bytes.extend([10, 20, 30]);
        let im = decode_ppm(&bytes).unwrap();
        assert_eq!(im.pixel(0, 0), [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    }

    #[test]
    fn decode_ppm_errors() {
        assert!(matches!(
            decode_ppm(b"P6\n3 2\n255\n"),
            Err(ImageError::TruncatedPayload {
                expected: 18,
                found: 0
            })
        ));
        assert!(matches!(
            decode_ppm(b"P5\n1 1\n255\n\0"),
            Err(ImageError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\nx 1\n255\n\0\0\0"),
            Err(ImageError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
            Err(ImageError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n0 1\n255\n"),
            Err(ImageError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n99999999999999999999999 1\n255\n"),
            Err(ImageError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n4294967296 4294967296\n255\n"),
            Err(ImageError::MalformedHeader(_)) | Err(ImageError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn encode_ppm_extremes() {
        let white = encode_ppm(&img(1, 1, &[1.0, 1.0, 1.0]));
        assert_eq!(&white[white.len() - 3..], &[255, 255, 255]);
        let black = encode_ppm(&img(1, 1, &[0.0, 0.0, 0.0]));
        assert_eq!(black, b"P6\n1 1\n255\n\0\0\0");
    }

    #[test]
    fn pgm_masks() {
        let bg = BinaryMask::empty(2, 2);
        assert_eq!(&encode_pgm(&bg)[11..], &[0, 0, 0, 0]);
        let fg = BinaryMask::from_fn(2, 2, |_, _| true);
        assert_eq!(&encode_pgm(&fg)[11..], &[255, 255, 255, 255]);
        assert_eq!(decode_pgm(&encode_pgm(&fg)).unwrap(), fg);
    }

    #[test]
    fn hsv_reference_values() {
        let red = rgb_to_hsv(1.0, 0.0, 0.0);
        assert_eq!((red.h, red.s, red.v), (0.0, 1.0, 1.0));
        let yellow = rgb_to_hsv(1.0, 1.0, 0.0);
        assert_eq!((yellow.h, yellow.s, yellow.v), (60.0, 1.0, 1.0));
        let gray = rgb_to_hsv(0.5, 0.5, 0.5);
        assert_eq!((gray.h, gray.s, gray.v), (0.0, 0.0, 0.5));
        let blue = rgb_to_hsv(0.0, 0.0, 1.0);
        assert_eq!(blue.h, 240.0);
        let magenta = rgb_to_hsv(1.0, 0.0, 0.5);
        assert!((magenta.h - 330.0).abs() < 1e-12);
    }

    #[test]
    fn resize_identity_and_hand_weights() {
        let src = img(2, 1, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(resize_bilinear(&src, 2, 1).unwrap(), src);
        // Hand evaluation: source x = (i + 0.5) * 0.5 - 0.5 → -0.25, 0.25, 0.75, 1.25,
        // clamped to [0, 1], so weights on the white pixel are 0, 0.25, 0.75, 1.
        let out = resize_bilinear(&src, 4, 1).unwrap();
        let reds: Vec<f32> = (0..4).map(|x| out.pixel(x, 0)[0]).collect();
        assert_eq!(reds, vec![0.0, 0.25, 0.75, 1.0]);
        assert_eq!(resize_bilinear(&src, 0, 3), Err(ImageError::ZeroDimension));
    }

    #[test]
    fn augment_identity_and_clamp() {
        let src = img(2, 1, &[0.9, 0.1, 0.5, 0.2, 0.3, 0.4]);
        assert_eq!(augment(&src, 0.0, 1.0), src);
        let bright = augment(&src, 0.0, 2.0);
        assert_eq!(bright.pixel(0, 0)[0], 1.0);
        assert!((bright.pixel(1, 0)[2] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn augment_quarter_turn_is_index_permutation() {
        let n = 7;
        let src = RgbImage::from_fn(n, n, |x, y| {
            [x as f32 / n as f32, y as f32 / n as f32, ((x * 3 + y * 5) % 11) as f32 / 11.0]
        })
        .unwrap();
        let out = augment(&src, 90.0, 1.0);
        for y in 0..n {
            for x in 0..n {
                // Counter-clockwise quarter turn: output (x, y) reads input column n-1-y, row x.
                let want = src.pixel(n - 1 - y, x);
                let got = out.pixel(x, y);
                for c in 0..3 {
                    assert!((want[c] - got[c]).abs() <= 1e-6, "({x},{y}) c{c}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn outputs_stay_in_unit_range(
            w in 1usize..9, h in 1usize..9,
            seed in proptest::collection::vec(0.0f32..=1.0, 243),
            ow in 1usize..12, oh in 1usize..12,
            rot in -180.0f64..180.0, bright in 0.05f64..4.0,
        ) {
            let im = RgbImage::new(w, h, seed[..w * h * 3].to_vec()).unwrap();
            let r = resize_bilinear(&im, ow, oh).unwrap();
            prop_assert!(r.data().iter().all(|c| (0.0..=1.0).contains(c)));
            let a = augment(&im, rot, bright);
            prop_assert!(a.data().iter().all(|c| (0.0..=1.0).contains(c)));
            prop_assert!(im.to_gray().data().iter().all(|c| (0.0..=1.0).contains(c)));
        }

        #[test]
        fn resize_exact_on_constant(c in proptest::array::uniform3(0.0f32..=1.0),
                                    w in 1usize..20, h in 1usize..20,
                                    ow in 1usize..40, oh in 1usize..40) {
            let im = RgbImage::filled(w, h, c).unwrap();
            let out = resize_bilinear(&im, ow, oh).unwrap();
            for p in out.data().chunks_exact(3) {
                prop_assert_eq!(p, &c[..]);
            }
        }

        #[test]
        fn hsv_inverse_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let hsv = rgb_to_hsv(r, g, b);
            prop_assert!((0.0..360.0).contains(&hsv.h));
            prop_assert!((0.0..=1.0).contains(&hsv.s) && (0.0..=1.0).contains(&hsv.v));
            if hsv.s == 0.0 {
                prop_assert_eq!(hsv.h, 0.0);
            }
            let back = hsv_to_rgb(hsv);
            prop_assert!((back[0] - r).abs() < 1e-9);
            prop_assert!((back[1] - g).abs() < 1e-9);
            prop_assert!((back[2] - b).abs() < 1e-9);
        }

        #[test]
        fn ppm_round_trips(w in 1usize..6, h in 1usize..6, bytes in proptest::collection::vec(any::<u8>(), 108)) {
            let mut file = format!("P6\n{w} {h}\n255\n").into_bytes();
            file.extend(&bytes[..w * h * 3]);
            let im = decode_ppm(&file).unwrap();
            prop_assert_eq!(encode_ppm(&im), file.clone());
            // Quantization bound on the opposite composition.
            let again = decode_ppm(&encode_ppm(&im)).unwrap();
            for (a, b) in again.data().iter().zip(im.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0);
            }
        }

        #[test]
        fn pgm_round_trips(w in 1usize..10, h in 1usize..10, bits in proptest::collection::vec(any::<bool>(), 100)) {
            let m = BinaryMask::new(w, h, bits[..w * h].to_vec()).unwrap();
            prop_assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
        }

        #[test]
        fn ppm_quantization_bound(vals in proptest::collection::vec(0.0f32..=1.0, 12)) {
            let im = RgbImage::new(2, 2, vals).unwrap();
            let back = decode_ppm(&encode_ppm(&im)).unwrap();
            for (a, b) in back.data().iter().zip(im.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
            }
        }
    }
}

//! Region-of-interest reduction: horizon detection, cropping below the
//! horizon, and the trapezoidal pavement mask.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{BinaryMask, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoiError {
    #[error("image too short for horizon search ({0} rows, need 20)")]
    TooShort(usize),
    #[error("no horizon: region means differ by at most {0:.4}")]
    NoHorizon(f64),
    #[error("crop below row {horizon_row} leaves {rows} rows")]
    DegenerateCrop { horizon_row: usize, rows: usize },
    #[error("invalid trapezoid: {0}")]
    InvalidTrapezoid(String),
}

/// Minimum spread between the above/below luminance means for a horizon.
pub const MIN_HORIZON_CONTRAST: f64 = 0.05;
/// Rows kept below the detected horizon, as a fraction of image height.
pub const CROP_MARGIN_FRAC: f64 = 0.02;
/// Smallest crop accepted by [`crop_below_horizon`].
pub const MIN_CROP_ROWS: usize = 8;

/// Row that best separates a bright upper region from a darker lower one.
///
/// Candidate rows `r` in `[0.1 H, 0.9 H]` are scored by the absolute
/// difference of the luminance means above and below `r`, divided by the
/// pooled standard deviation. The smallest row wins exact ties.
pub fn detect_horizon(img: &RgbImage) -> Result<usize, RoiError> {
    let h = img.height();
    if h < 20 {
        return Err(RoiError::TooShort(h));
    }
    let gray = img.to_gray();
    let w = img.width() as f64;
    // Prefix sums over rows of luminance and squared luminance.
    let mut sum = vec![0.0f64; h + 1];
    let mut sq = vec![0.0f64; h + 1];
    for y in 0..h {
        let (s, q) = gray
            .row(y)
            .iter()
            .fold((0.0f64, 0.0f64), |(s, q), &v| (s + v as f64, q + (v as f64) * (v as f64)));
        sum[y + 1] = sum[y] + s;
        sq[y + 1] = sq[y] + q;
    }
    let total_n = h as f64 * w;
    let lo = (0.1 * h as f64).ceil() as usize;
    let hi = (0.9 * h as f64).floor() as usize;
    let mut best: Option<(usize, f64)> = None;
    let mut max_sep = 0.0f64;
    for r in lo.max(1)..=hi.min(h - 1) {
        let n1 = r as f64 * w;
        let n2 = (h - r) as f64 * w;
        let m1 = sum[r] / n1;
        let m2 = (sum[h] - sum[r]) / n2;
        let ss1 = (sq[r] - n1 * m1 * m1).max(0.0);
        let ss2 = (sq[h] - sq[r] - n2 * m2 * m2).max(0.0);
        let pooled = ((ss1 + ss2) / total_n).sqrt();
        let sep = (m1 - m2).abs();
        max_sep = max_sep.max(sep);
        let score = sep / (pooled + 1e-6);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((r, score));
        }
    }
    match best {
        Some((r, _)) if max_sep >= MIN_HORIZON_CONTRAST => Ok(r),
        _ => Err(RoiError::NoHorizon(max_sep)),
    }
}

pub fn crop_margin(height: usize) -> usize {
    (CROP_MARGIN_FRAC * height as f64).round() as usize
}

/// Keeps rows at or below `horizon_row + margin`. Returns the crop and the
/// index of its first row in the source frame.
pub fn crop_below_horizon(
    img: &RgbImage,
    horizon_row: usize,
) -> Result<(RgbImage, usize), RoiError> {
    let h = img.height();
    let top = horizon_row.saturating_add(crop_margin(h));
    let rows = h.saturating_sub(top);
    if horizon_row >= h || rows < MIN_CROP_ROWS {
        return Err(RoiError::DegenerateCrop { horizon_row, rows });
    }
    let crop = img.crop_rows(top).expect("top < height");
    Ok((crop, top))
}

/// Four vertices in pixel-center coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid {
    pub bottom_left: [f64; 2],
    pub bottom_right: [f64; 2],
    pub top_right: [f64; 2],
    pub top_left: [f64; 2],
}

/// Trapezoid given as fractions of `(width - 1, height - 1)`, in the order
/// bottom-left, bottom-right, top-right, top-left (x then y for each).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrapezoidFractions(pub [f64; 8]);

impl Default for TrapezoidFractions {
    /// Full width along the bottom row, central 40% of the width at 55% of
    /// the height.
    fn default() -> Self {
        Self([0.0, 1.0, 1.0, 1.0, 0.7, 0.55, 0.3, 0.55])
    }
}

impl TrapezoidFractions {
    pub fn to_pixels(&self, width: usize, height: usize) -> Trapezoid {
        let sx = (width.max(1) - 1) as f64;
        let sy = (height.max(1) - 1) as f64;
        let f = self.0;
        Trapezoid {
            bottom_left: [f[0] * sx, f[1] * sy],
            bottom_right: [f[2] * sx, f[3] * sy],
            top_right: [f[4] * sx, f[5] * sy],
            top_left: [f[6] * sx, f[7] * sy],
        }
        .snapped()
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0
}

impl Trapezoid {
    pub fn vertices(&self) -> [[f64; 2]; 4] {
        [self.bottom_left, self.bottom_right, self.top_right, self.top_left]
    }

    pub fn area(&self) -> f64 {
        let v = self.vertices();
        let mut s = 0.0;
        for i in 0..4 {
            let (a, b) = (v[i], v[(i + 1) % 4]);
            s += a[0] * b[1] - b[0] * a[1];
        }
        (s / 2.0).abs()
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), RoiError> {
        let v = self.vertices();
        let (mx, my) = ((width as f64) - 1.0, (height as f64) - 1.0);
        if v
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite() || p[0] < 0.0 || p[1] < 0.0 || p[0] > mx || p[1] > my)
        {
            return Err(RoiError::InvalidTrapezoid(format!(
                "vertex outside {width}x{height} frame"
            )));
        }
        if self.top_left[1].max(self.top_right[1])
            >= self.bottom_left[1].min(self.bottom_right[1])
        {
            return Err(RoiError::InvalidTrapezoid(
                "top edge must lie above the bottom edge".into(),
            ));
        }
        if segments_cross(self.bottom_right, self.top_right, self.top_left, self.bottom_left)
            || segments_cross(self.bottom_left, self.bottom_right, self.top_right, self.top_left)
        {
            return Err(RoiError::InvalidTrapezoid("self-intersecting".into()));
        }
        if self.area() <= 0.0 {
            return Err(RoiError::InvalidTrapezoid("zero area".into()));
        }
        Ok(())
    }
}

/// Sub-pixel grid that vertices are snapped to before rasterizing.
pub const VERTEX_GRID: i64 = 256;

fn snap(v: f64) -> i64 {
    (v * VERTEX_GRID as f64).round() as i64
}

impl Trapezoid {
    /// Same trapezoid with every coordinate rounded to the `1 / VERTEX_GRID`
    /// pixel grid.
    pub fn snapped(&self) -> Trapezoid {
        let s = |p: [f64; 2]| p.map(|c| snap(c) as f64 / VERTEX_GRID as f64);
        Trapezoid {
            bottom_left: s(self.bottom_left),
            bottom_right: s(self.bottom_right),
            top_right: s(self.top_right),
            top_left: s(self.top_left),
        }
    }
}

/// Exact rational `num / den` with `den > 0`.
#[derive(Clone, Copy)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn ceil(self) -> i128 {
        -((-self.num).div_euclid(self.den))
    }

    fn floor(self) -> i128 {
        self.num.div_euclid(self.den)
    }

    fn cmp(&self, other: &Ratio) -> std::cmp::Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Pixels whose centers lie inside or on the trapezoid (even-odd rule),
/// rasterized one scanline at a time. Vertices are snapped to the
/// [`VERTEX_GRID`] and all crossings are computed exactly.
pub fn trapezoid_mask(width: usize, height: usize, trap: &Trapezoid) -> Result<BinaryMask, RoiError> {
    trap.validate(width, height)?;
    let v = trap.vertices().map(|p| [snap(p[0]) as i128, snap(p[1]) as i128]);
    let g = VERTEX_GRID as i128;
    let mut mask = BinaryMask::empty(width, height);
    let mut xs: Vec<Ratio> = Vec::with_capacity(4);
    for y in 0..height {
        let yg = y as i128 * g;
        xs.clear();
        for i in 0..4 {
            let (a, b) = (v[i], v[(i + 1) % 4]);
            let (lo, hi) = if a[1] <= b[1] { (a, b) } else { (b, a) };
            if yg < lo[1] || yg > hi[1] {
                continue;
            }
            if lo[1] == hi[1] {
                // Horizontal edge: only contributes boundary pixels.
                let x0 = Ratio { num: lo[0].min(hi[0]), den: g };
                let x1 = Ratio { num: lo[0].max(hi[0]), den: g };
                fill_span(&mut mask, y, x0, x1);
                continue;
            }
            let dy = hi[1] - lo[1];
            let x = Ratio {
                num: lo[0] * dy + (yg - lo[1]) * (hi[0] - lo[0]),
                den: dy * g,
            };
            if x.num.rem_euclid(x.den) == 0 {
                fill_span(&mut mask, y, x, x);
            }
            // Half-open rule so a vertex shared by two edges counts once.
            if yg < hi[1] {
                xs.push(x);
            }
        }
        xs.sort_by(Ratio::cmp);
        for pair in xs.chunks_exact(2) {
            fill_span(&mut mask, y, pair[0], pair[1]);
        }
    }
    Ok(mask)
}

fn fill_span(mask: &mut BinaryMask, y: usize, x0: Ratio, x1: Ratio) {
    let start = x0.ceil().max(0);
    let end = x1.floor().min(mask.width() as i128 - 1);
    for x in start..=end {
        mask.set(x as usize, y, true);
    }
}

/// Output of [`reduce_roi`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoiResult {
    pub horizon_row: Option<usize>,
    pub crop_top_row: usize,
    pub trapezoid: Trapezoid,
    /// Full-frame mask of pixels eligible for labeling.
    pub roi_mask: BinaryMask,
}

/// [`reduce_roi_with`] using the default trapezoid.
pub fn reduce_roi(img: &RgbImage) -> RoiResult {
    reduce_roi_with(img, &TrapezoidFractions::default())
        .expect("default trapezoid is valid for any frame of two or more rows")
}

/// Horizon detection and crop offset combined with the trapezoid mask. A
/// missing horizon or degenerate crop falls back to no crop.
pub fn reduce_roi_with(img: &RgbImage, trap: &TrapezoidFractions) -> Result<RoiResult, RoiError> {
    let (w, h) = (img.width(), img.height());
    let trapezoid = trap.to_pixels(w, h);
    let trap_mask = trapezoid_mask(w, h, &trapezoid)?;
    let (horizon_row, crop_top_row) = match detect_horizon(img) {
        Ok(row) => match crop_below_horizon(img, row) {
            Ok((_, top)) => (Some(row), top),
            Err(_) => (None, 0),
        },
        Err(_) => (None, 0),
    };
    let roi_mask = BinaryMask::from_fn(w, h, |x, y| y >= crop_top_row && trap_mask.get(x, y));
    Ok(RoiResult {
        horizon_row,
        crop_top_row,
        trapezoid,
        roi_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_band(w: usize, h: usize, split: usize, top: f32, bottom: f32) -> RgbImage {
        RgbImage::from_fn(w, h, |_, y| if y < split { [top; 3] } else { [bottom; 3] }).unwrap()
    }

    // Brute-force point-in-polygon: on-edge test, then even-odd ray casting.
    fn oracle_mask(w: usize, h: usize, t: &Trapezoid) -> BinaryMask {
        let v = t.vertices();
        BinaryMask::from_fn(w, h, |x, y| {
            let p = [x as f64, y as f64];
            for i in 0..4 {
                let (a, b) = (v[i], v[(i + 1) % 4]);
                let on_line = (b[0] - a[0]) * (p[1] - a[1]) == (b[1] - a[1]) * (p[0] - a[0]);
                let in_box = p[0] >= a[0].min(b[0])
                    && p[0] <= a[0].max(b[0])
                    && p[1] >= a[1].min(b[1])
                    && p[1] <= a[1].max(b[1]);
                if on_line && in_box {
                    return true;
                }
            }
            let mut inside = false;
            let mut j = 3;
            for i in 0..4 {
                let (a, b) = (v[i], v[j]);
                if (a[1] > p[1]) != (b[1] > p[1])
                    && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
                {
                    inside = !inside;
                }
                j = i;
            }
            inside
        })
    }

    #[test]
    fn horizon_on_two_bands() {
        for h in [20usize, 51, 100] {
            let img = two_band(30, h, h / 2, 0.9, 0.2);
            let r = detect_horizon(&img).unwrap();
            assert!(r.abs_diff(h / 2) <= 1, "h={h} r={r}");
        }
    }

    #[test]
    fn uniform_has_no_horizon() {
        let img = RgbImage::filled(40, 40, [0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(detect_horizon(&img), Err(RoiError::NoHorizon(_))));
        let short = RgbImage::filled(40, 10, [0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(detect_horizon(&short), Err(RoiError::TooShort(10))));
    }

    #[test]
    fn horizon_invariant_to_brightness_scale() {
        let img = RgbImage::from_fn(40, 60, |x, y| {
            let v = if y < 23 { 0.8 + 0.002 * x as f32 } else { 0.3 + 0.001 * ((x * y) % 17) as f32 };
            [v, v * 0.95, v * 0.9]
        })
        .unwrap();
        let r = detect_horizon(&img).unwrap();
        for k in [1.0f32, 0.5, 0.25] {
            assert_eq!(detect_horizon(&img.scale_brightness(k)).unwrap(), r);
        }
    }

    #[test]
    fn crop_arithmetic() {
        let img = RgbImage::filled(5, 100, [0.1, 0.2, 0.3]).unwrap();
        let (crop, top) = crop_below_horizon(&img, 0).unwrap();
        assert_eq!(top, 2);
        assert_eq!(crop.height(), 98);
        assert!(matches!(
            crop_below_horizon(&img, 99),
            Err(RoiError::DegenerateCrop { .. })
        ));
        assert!(crop_below_horizon(&img, 150).is_err());
    }

    #[test]
    fn full_rectangle_and_zero_area() {
        let full = TrapezoidFractions([0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).to_pixels(17, 9);
        assert_eq!(trapezoid_mask(17, 9, &full).unwrap().count(), 17 * 9);
        let flat = Trapezoid {
            bottom_left: [3.0, 5.0],
            bottom_right: [3.0, 5.0],
            top_right: [3.0, 2.0],
            top_left: [3.0, 2.0],
        };
        assert!(matches!(
            trapezoid_mask(10, 10, &flat),
            Err(RoiError::InvalidTrapezoid(_))
        ));
        let outside = TrapezoidFractions([0.0, 1.0, 1.2, 1.0, 0.7, 0.5, 0.3, 0.5]).to_pixels(10, 10);
        assert!(trapezoid_mask(10, 10, &outside).is_err());
        let bowtie = Trapezoid {
            bottom_left: [8.0, 9.0],
            bottom_right: [1.0, 9.0],
            top_right: [8.0, 2.0],
            top_left: [1.0, 2.0],
        };
        assert!(trapezoid_mask(10, 10, &bowtie).is_err());
    }

    #[test]
    fn default_trapezoid_matches_oracle() {
        for (w, h) in [(400, 225), (96, 54), (64, 36), (150, 150)] {
            let t = TrapezoidFractions::default().to_pixels(w, h);
            let got = trapezoid_mask(w, h, &t).unwrap();
            let want = oracle_mask(w, h, &t);
            assert_eq!(got.count(), want.count(), "{w}x{h}");
            assert_eq!(got, want, "{w}x{h}");
        }
    }

    #[test]
    fn skewed_trapezoids_match_oracle() {
        let cases = [
            [2.0, 30.0, 37.0, 28.0, 25.0, 4.0, 9.0, 6.0],
            [0.0, 39.0, 39.0, 39.0, 30.0, 10.0, 10.0, 10.0],
            [5.5, 33.25, 20.0, 35.0, 31.0, 3.5, 1.0, 12.0],
        ];
        for c in cases {
            let t = Trapezoid {
                bottom_left: [c[0], c[1]],
                bottom_right: [c[2], c[3]],
                top_right: [c[4], c[5]],
                top_left: [c[6], c[7]],
            };
            assert_eq!(trapezoid_mask(40, 40, &t).unwrap(), oracle_mask(40, 40, &t), "{c:?}");
        }
    }

    #[test]
    fn uniform_image_roi_is_trapezoid() {
        let img = RgbImage::filled(64, 36, [0.4; 3]).unwrap();
        let roi = reduce_roi(&img);
        assert_eq!(roi.horizon_row, None);
        assert_eq!(roi.crop_top_row, 0);
        let t = TrapezoidFractions::default().to_pixels(64, 36);
        assert_eq!(roi.roi_mask, trapezoid_mask(64, 36, &t).unwrap());
    }

    #[test]
    fn roi_respects_crop_and_trapezoid() {
        let img = two_band(80, 60, 40, 0.9, 0.25);
        let roi = reduce_roi(&img);
        assert_eq!(roi.horizon_row, Some(40));
        assert_eq!(roi.crop_top_row, 41);
        let t = trapezoid_mask(80, 60, &roi.trapezoid).unwrap();
        assert!(roi.roi_mask.is_subset_of(&t));
        assert!(roi.roi_mask.foreground().all(|(_, y)| y >= roi.crop_top_row));
    }
}

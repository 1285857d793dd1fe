//! Line-marking extraction.
//!
//! A frame is thresholded into a binary map with the color band that matches
//! its category, connected components supply seed points, and each seed is
//! followed by a circular probe: the ring of pixels at a fixed radius around
//! the current point is scanned for foreground, grouped into angular clusters,
//! and the traversal steps to the centroid of the cluster closest to the
//! current heading.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{rgb_to_hsv, BinaryMask, RgbImage};
use crate::roi::{self, RoiError, TrapezoidFractions};
use crate::Category;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("dimension mismatch: image {image:?}, mask {mask:?}")]
    DimensionMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("seed ({0}, {1}) is not a foreground pixel")]
    SeedNotForeground(i32, i32),
    #[error("polyline point ({0}, {1}) lies outside the frame")]
    OutOfBounds(i32, i32),
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandName {
    Yellow,
    White,
}

impl BandName {
    pub fn for_category(category: Category) -> Self {
        match category {
            Category::Runway => BandName::White,
            Category::Taxiway => BandName::Yellow,
        }
    }

    pub fn category(self) -> Category {
        match self {
            BandName::White => Category::Runway,
            BandName::Yellow => Category::Taxiway,
        }
    }
}

/// HSV acceptance box. Hue is ignored when `hue` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorBand {
    pub name: BandName,
    pub hue: Option<[f64; 2]>,
    pub saturation: [f64; 2],
    pub value: [f64; 2],
}

impl ColorBand {
    pub fn yellow() -> Self {
        Self {
            name: BandName::Yellow,
            hue: Some([40.0, 70.0]),
            saturation: [0.35, 1.0],
            value: [0.35, 1.0],
        }
    }

    pub fn white() -> Self {
        Self {
            name: BandName::White,
            hue: None,
            saturation: [0.0, 0.20],
            value: [0.70, 1.0],
        }
    }

    pub fn default_for(name: BandName) -> Self {
        match name {
            BandName::Yellow => Self::yellow(),
            BandName::White => Self::white(),
        }
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        let ordered = |r: [f64; 2], lo: f64, hi: f64| lo <= r[0] && r[0] <= r[1] && r[1] <= hi;
        if !ordered(self.saturation, 0.0, 1.0)
            || !ordered(self.value, 0.0, 1.0)
            || self.hue.is_some_and(|h| !ordered(h, 0.0, 360.0))
        {
            return Err(LabelError::InvalidParams(format!("band ranges {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, rgb: [f32; 3]) -> bool {
        let hsv = rgb_to_hsv(rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
        let within = |r: [f64; 2], v: f64| r[0] <= v && v <= r[1];
        within(self.saturation, hsv.s)
            && within(self.value, hsv.v)
            && self.hue.is_none_or(|h| within(h, hsv.h))
    }
}

/// Ordered pixel coordinates, serialized as an array of `[x, y]` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline(pub Vec<[i32; 2]>);

impl Polyline {
    pub fn points(&self) -> &[[i32; 2]] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Euclidean distance from `p` to the nearest point of the polyline,
    /// treating consecutive points as connected segments.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        match self.0.as_slice() {
            [] => f64::INFINITY,
            [only] => dist(p, to_f(*only)),
            pts => pts
                .windows(2)
                .map(|w| segment_distance(p, to_f(w[0]), to_f(w[1])))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn to_f(p: [i32; 2]) -> [f64; 2] {
    [p[0] as f64, p[1] as f64]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversalParams {
    /// Probe circle radius in pixels.
    pub radius: u32,
    /// Half-angle of the forward cone, in degrees.
    pub cone_half_angle: f64,
    pub max_steps: u32,
    /// Components smaller than this many pixels do not receive seeds.
    pub min_seed_area: usize,
    /// Angular gap (degrees) that splits ring pixels into separate clusters.
    pub cluster_gap: f64,
    /// Traversal stops when a new point lands this close to an earlier one.
    /// Defaults to half the radius when absent.
    pub revisit_radius: Option<f64>,
}

impl Default for TraversalParams {
    fn default() -> Self {
        Self {
            radius: 10,
            cone_half_angle: 100.0,
            max_steps: 500,
            min_seed_area: 30,
            cluster_gap: 30.0,
            revisit_radius: None,
        }
    }
}

impl TraversalParams {
    pub fn revisit(&self) -> f64 {
        self.revisit_radius.unwrap_or(self.radius as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if self.radius < 2
            || !(self.cone_half_angle > 0.0 && self.cone_half_angle < 180.0)
            || self.max_steps < 1
            || !(self.cluster_gap.is_finite() && self.cluster_gap > 0.0)
            || self.revisit() < 0.0
        {
            return Err(LabelError::InvalidParams(format!("traversal {self:?}")));
        }
        Ok(())
    }
}

/// Foreground = pixels inside `roi_mask` whose HSV falls in `band`.
pub fn threshold_color(
    img: &RgbImage,
    roi_mask: &BinaryMask,
    band: &ColorBand,
) -> Result<BinaryMask, LabelError> {
    if img.width() != roi_mask.width() || img.height() != roi_mask.height() {
        return Err(LabelError::DimensionMismatch {
            image: (img.width(), img.height()),
            mask: (roi_mask.width(), roi_mask.height()),
        });
    }
    Ok(BinaryMask::from_fn(img.width(), img.height(), |x, y| {
        roi_mask.get(x, y) && band.contains(img.pixel(x, y))
    }))
}

/// 4-connected components as lists of `(x, y)`, in row-major order of their
/// first pixel.
pub fn components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            let mut visit = |j: usize| {
                if !seen[j] && mask.data()[j] {
                    seen[j] = true;
                    queue.push_back(j);
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
        out.push(comp);
    }
    out
}

/// One seed per sufficiently large component: its lowest pixel, leftmost on
/// ties. Seeds are returned left to right.
pub fn find_seeds(mask: &BinaryMask, params: &TraversalParams) -> Vec<[i32; 2]> {
    let mut seeds: Vec<[i32; 2]> = components(mask)
        .into_iter()
        .filter(|c| c.len() >= params.min_seed_area)
        .map(|c| {
            let &(x, y) = c
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .expect("components are non-empty");
            [x as i32, y as i32]
        })
        .collect();
    seeds.sort_by_key(|s| (s[0], s[1]));
    seeds
}

/// Offsets of the discrete midpoint circle of radius `r`, sorted by angle.
pub fn circle_offsets(r: i32) -> Vec<[i32; 2]> {
    let mut pts = Vec::new();
    let (mut x, mut y, mut err) = (r, 0, 1 - r);
    while x >= y {
        for (a, b) in [(x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)] {
            pts.push([a, b]);
        }
        y += 1;
        if err < 0 {
            err += 2 * y + 1;
        } else {
            x -= 1;
            err += 2 * (y - x) + 1;
        }
    }
    pts.sort_by(|a, b| {
        angle_of(*a)
            .total_cmp(&angle_of(*b))
            .then(a.cmp(b))
    });
    pts.dedup();
    pts
}

fn angle_of(p: [i32; 2]) -> f64 {
    (p[1] as f64).atan2(p[0] as f64)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d < -PI {
        d += 2.0 * PI;
    }
    d.abs()
}

/// Angular clusters of foreground ring pixels: consecutive pixels (in angle
/// order, wrapping around) separated by more than `gap` start a new cluster.
fn ring_clusters(offsets: &[[i32; 2]], hits: &[bool], gap: f64) -> Vec<Vec<[i32; 2]>> {
    let lit: Vec<[i32; 2]> = offsets
        .iter()
        .zip(hits)
        .filter(|(_, &h)| h)
        .map(|(&o, _)| o)
        .collect();
    if lit.is_empty() {
        return Vec::new();
    }
    let n = lit.len();
    let breaks: Vec<usize> = (0..n)
        .filter(|&i| angle_diff(angle_of(lit[(i + 1) % n]), angle_of(lit[i])) > gap || n == 1)
        .collect();
    if breaks.is_empty() {
        return vec![lit];
    }
    // Each cluster starts right after a break and runs to the next break.
    breaks
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let end = breaks[(k + 1) % breaks.len()];
            let mut c = Vec::new();
            let mut i = (b + 1) % n;
            loop {
                c.push(lit[i]);
                if i == end {
                    break;
                }
                i = (i + 1) % n;
            }
            c
        })
        .collect()
}

fn circular_mean(cluster: &[[i32; 2]]) -> f64 {
    let (s, c) = cluster.iter().fold((0.0, 0.0), |(s, c), &p| {
        let a = angle_of(p);
        (s + a.sin(), c + a.cos())
    });
    s.atan2(c)
}

/// Follows a marking from `seed`, returning the visited points in order.
///
/// The initial heading is straight up. Each step probes the ring of radius
/// `params.radius`, keeps clusters whose mean angle lies within the forward
/// cone, and advances to the rounded centroid of the cluster closest to the
/// heading. When the base ring finds nothing, wider and then narrower rings
/// (between R/2 and 1.5R) are tried so that gaps between dashes are crossed.
/// Traversal ends when no cluster qualifies, the next point leaves the frame
/// or revisits an earlier point, or `max_steps` is reached.
pub fn circledat_traverse(
    mask: &BinaryMask,
    seed: [i32; 2],
    params: &TraversalParams,
) -> Result<Polyline, LabelError> {
    params.validate()?;
    if !mask.get_signed(seed[0] as i64, seed[1] as i64) {
        return Err(LabelError::SeedNotForeground(seed[0], seed[1]));
    }
    let r = params.radius as i32;
    // Probe order: the base ring, then wider rings up to 1.5R to cross a gap
    // just ahead, then narrower rings down to R/2 to reach the end of the
    // current segment first.
    let radii: Vec<i32> = std::iter::once(r)
        .chain(r + 1..=(3 * r) / 2)
        .chain((r / 2 + 1..r).rev())
        .collect();
    let rings: Vec<Vec<[i32; 2]>> = radii.iter().map(|&k| circle_offsets(k)).collect();
    let max_step = 1.5 * r as f64;
    let cone = params.cone_half_angle.to_radians();
    let gap = params.cluster_gap.to_radians();
    let revisit = params.revisit();
    let mut heading = -PI / 2.0;
    let mut points = vec![seed];
    let mut cur = seed;
    let mut hits = Vec::new();
    for _ in 0..params.max_steps {
        let mut next = None;
        for (k, offsets) in rings.iter().enumerate() {
            // Only the base ring may turn through the full cone.
            let limit = if k == 0 { cone } else { cone / 2.0 };
            hits.clear();
            hits.extend(
                offsets
                    .iter()
                    .map(|o| mask.get_signed((cur[0] + o[0]) as i64, (cur[1] + o[1]) as i64)),
            );
            let best = ring_clusters(offsets, &hits, gap)
                .into_iter()
                .map(|c| (angle_diff(circular_mean(&c), heading), c))
                .filter(|(dev, _)| *dev <= limit)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, cluster)) = best {
                let n = cluster.len() as f64;
                let (sx, sy) = cluster
                    .iter()
                    .fold((0.0, 0.0), |(sx, sy), o| (sx + o[0] as f64, sy + o[1] as f64));
                let mut step = [(sx / n).round(), (sy / n).round()];
                let len = step[0].hypot(step[1]);
                if len > max_step {
                    // Rounding on the widest ring can overshoot; pull back.
                    step = step.map(|c| (c * max_step / len).trunc());
                }
                if step[0].hypot(step[1]) >= 1.0 {
                    next = Some([cur[0] + step[0] as i32, cur[1] + step[1] as i32]);
                    break;
                }
            }
        }
        let Some(next) = next else { break };
        if next[0] < 0
            || next[1] < 0
            || next[0] as usize >= mask.width()
            || next[1] as usize >= mask.height()
        {
            break;
        }
        let np = to_f(next);
        if points.iter().any(|&p| dist(np, to_f(p)) <= revisit) {
            break;
        }
        heading = ((next[1] - cur[1]) as f64).atan2((next[0] - cur[0]) as f64);
        points.push(next);
        cur = next;
    }
    Ok(Polyline(points))
}

/// Region-of-interest part of an annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub horizon_row: Option<usize>,
    pub crop_top_row: usize,
    /// Pixel vertices: bottom-left, bottom-right, top-right, top-left.
    pub trapezoid: [[f64; 2]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub frame: String,
    pub category: Category,
    /// Classifier runway probability; absent when the category was forced.
    pub probability: Option<f64>,
    pub band: BandName,
    pub polylines: Vec<Polyline>,
    pub roi: RoiSummary,
    pub mask_foreground: usize,
    pub width: usize,
    pub height: usize,
}

/// Thresholds and traversal settings used by [`label_frame`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub trapezoid: TrapezoidFractions,
    pub traversal: TraversalParams,
    pub yellow: ColorBand,
    pub white: ColorBand,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            trapezoid: TrapezoidFractions::default(),
            traversal: TraversalParams::default(),
            yellow: ColorBand::yellow(),
            white: ColorBand::white(),
        }
    }
}

impl LabelConfig {
    pub fn band(&self, name: BandName) -> &ColorBand {
        match name {
            BandName::Yellow => &self.yellow,
            BandName::White => &self.white,
        }
    }
}

/// A labeled frame: the exported record plus the thresholded pixel map it
/// was traced from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub record: AnnotationRecord,
    pub mask: BinaryMask,
}

/// ROI reduction, color thresholding with the category's band, seeding and
/// traversal. Seeds are traced from the bottom of the frame upward; seeds
/// already lying on an earlier polyline are skipped, and
/// polylines shorter than two points are dropped.
pub fn label_frame(
    img: &RgbImage,
    category: Category,
    frame: &str,
    config: &LabelConfig,
) -> Result<LabeledFrame, LabelError> {
    config.traversal.validate()?;
    let band_name = BandName::for_category(category);
    let band = config.band(band_name);
    band.validate()?;
    let roi = roi::reduce_roi_with(img, &config.trapezoid)?;
    let mask = threshold_color(img, &roi.roi_mask, band)?;
    let mut polylines: Vec<Polyline> = Vec::new();
    let revisit = config.traversal.revisit();
    // Nearest markings first so each polyline starts at the bottom of its line.
    let mut seeds = find_seeds(&mask, &config.traversal);
    seeds.sort_by_key(|s| std::cmp::Reverse(s[1]));
    for seed in seeds {
        let sp = to_f(seed);
        if polylines.iter().any(|p| p.distance_to(sp) <= revisit) {
            continue;
        }
        let line = circledat_traverse(&mask, seed, &config.traversal)?;
        if line.len() >= 2 {
            polylines.push(line);
        }
    }
    let record = AnnotationRecord {
        frame: frame.to_string(),
        category,
        probability: None,
        band: band_name,
        polylines,
        roi: RoiSummary {
            horizon_row: roi.horizon_row,
            crop_top_row: roi.crop_top_row,
            trapezoid: roi.trapezoid.vertices(),
        },
        mask_foreground: mask.count(),
        width: img.width(),
        height: img.height(),
    };
    Ok(LabeledFrame { record, mask })
}

/// Integer line pixels from `a` to `b` inclusive (Bresenham).
pub fn bresenham(a: [i32; 2], b: [i32; 2]) -> Vec<[i32; 2]> {
    let (mut x, mut y) = (a[0], a[1]);
    let dx = (b[0] - a[0]).abs();
    let dy = -(b[1] - a[1]).abs();
    let sx = if a[0] < b[0] { 1 } else { -1 };
    let sy = if a[1] < b[1] { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push([x, y]);
        if x == b[0] && y == b[1] {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

pub const OVERLAY_COLOR: [f32; 3] = [1.0, 0.0, 0.0];

/// Copy of `img` with every polyline drawn as 3-pixel-wide red segments.
pub fn render_overlay(img: &RgbImage, record: &AnnotationRecord) -> Result<RgbImage, LabelError> {
    let (w, h) = (img.width() as i32, img.height() as i32);
    for line in &record.polylines {
        if let Some(p) = line.points().iter().find(|p| p[0] < 0 || p[1] < 0 || p[0] >= w || p[1] >= h) {
            return Err(LabelError::OutOfBounds(p[0], p[1]));
        }
    }
    let mut out = img.clone();
    let mut paint = |p: [i32; 2]| {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (p[0] + dx, p[1] + dy);
                if x >= 0 && y >= 0 && x < w && y < h {
                    out.set_pixel(x as usize, y as usize, OVERLAY_COLOR);
                }
            }
        }
    };
    for line in &record.polylines {
        match line.points() {
            [] => {}
            [only] => paint(*only),
            pts => {
                for seg in pts.windows(2) {
                    bresenham(seg[0], seg[1]).into_iter().for_each(&mut paint);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Csv,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn export_annotation(record: &AnnotationRecord, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(record).expect("record serializes");
            out.push(b'\n');
            out
        }
        ExportFormat::Csv => {
            let mut out = String::from("frame,polyline,idx,x,y\n");
            let frame = csv_field(&record.frame);
            for (pi, line) in record.polylines.iter().enumerate() {
                for (i, p) in line.points().iter().enumerate() {
                    out.push_str(&format!("{frame},{pi},{i},{},{}\n", p[0], p[1]));
                }
            }
            out.into_bytes()
        }
    }
}

/// Parses an annotation JSON document.
pub fn parse_annotation(bytes: &[u8]) -> Result<AnnotationRecord, serde_json::Error> {
    serde_json::from_slice(bytes)
}

//! Synthetic airfield scenes with exact ground truth.
//!
//! A scene is a sky gradient above the horizon and a perspective pavement
//! strip below it, carrying two solid edge lines and a dashed centerline
//! that converge on a single vanishing point. Runway scenes use white
//! markings and taxiway scenes yellow ones. Ground truth comes from the
//! marking geometry before wear, tire marks and noise are applied.

use std::fs;
use std::path::{Component, Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, hsv_to_rgb, BinaryMask, Hsv, ImageError, RgbImage};
use crate::labeler::Polyline;
use crate::Category;

pub const MIN_WIDTH: usize = 64;
pub const MIN_HEIGHT: usize = 36;

pub const HORIZON_FRAC: [f64; 2] = [0.15, 0.55];
pub const PAVEMENT_ALBEDO: [f64; 2] = [0.2, 0.5];
pub const SKY_ALBEDO: [f64; 2] = [0.6, 0.95];
pub const LEFT_EDGE_FRAC: [f64; 2] = [0.2, 0.3];
pub const RIGHT_EDGE_FRAC: [f64; 2] = [0.7, 0.8];
pub const VANISHING_X_FRAC: [f64; 2] = [0.45, 0.55];
pub const NOISE_SIGMA: [f64; 2] = [0.0, 0.05];
pub const MAX_TIRE_MARKS: u32 = 6;
/// Markings start no higher than this fraction of the frame height.
pub const MARKING_TOP_FRAC: f64 = 0.57;
/// Minimum gap, as a fraction of the height, between horizon and markings.
pub const MARKING_HORIZON_GAP_FRAC: f64 = 0.05;
/// Dash gaps never exceed this many pixels.
pub const MAX_DASH_GAP: f64 = 9.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("frame {width}x{height} is smaller than {MIN_WIDTH}x{MIN_HEIGHT}")]
    TooSmall { width: usize, height: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("corpus needs at least one frame of each category")]
    EmptyCorpus,
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parameters of one synthetic scene. Fractions are of the frame width or
/// height; lengths are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub category: Category,
    pub width: usize,
    pub height: usize,
    pub horizon_frac: f64,
    pub pavement_albedo: f64,
    pub sky_albedo: f64,
    pub left_edge_frac: f64,
    pub right_edge_frac: f64,
    pub vanishing_x_frac: f64,
    pub dash_length: f64,
    pub dash_gap: f64,
    pub line_width: f64,
    pub marking_wear: f64,
    pub tire_mark_count: u32,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn dash_length_range(h: usize) -> [f64; 2] {
    [0.08 * h as f64, 0.16 * h as f64]
}

fn dash_gap_range(h: usize) -> [f64; 2] {
    let lo = (0.02 * h as f64).max(1.0);
    [lo, (0.04 * h as f64).min(MAX_DASH_GAP).max(lo)]
}

fn line_width_range(w: usize) -> [f64; 2] {
    [2.0, 2.0 + w as f64 / 100.0]
}

fn check_dims(width: usize, height: usize) -> Result<(), SynthError> {
    if width < MIN_WIDTH || height < MIN_HEIGHT {
        return Err(SynthError::TooSmall { width, height });
    }
    Ok(())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        // Keep the draw so the stream stays aligned.
        let _: f64 = rng.gen();
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draws every field uniformly from its range, in declaration order.
pub fn sample_scene_spec<R: Rng + ?Sized>(
    category: Category,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<SceneSpec, SynthError> {
    check_dims(width, height)?;
    Ok(SceneSpec {
        category,
        width,
        height,
        horizon_frac: uniform(rng, HORIZON_FRAC),
        pavement_albedo: uniform(rng, PAVEMENT_ALBEDO),
        sky_albedo: uniform(rng, SKY_ALBEDO),
        left_edge_frac: uniform(rng, LEFT_EDGE_FRAC),
        right_edge_frac: uniform(rng, RIGHT_EDGE_FRAC),
        vanishing_x_frac: uniform(rng, VANISHING_X_FRAC),
        dash_length: uniform(rng, dash_length_range(height)),
        dash_gap: uniform(rng, dash_gap_range(height)),
        line_width: uniform(rng, line_width_range(width)),
        marking_wear: uniform(rng, [0.0, 1.0]),
        tire_mark_count: rng.gen_range(0..=MAX_TIRE_MARKS),
        noise_sigma: uniform(rng, NOISE_SIGMA),
        seed: rng.gen(),
    })
}

impl SceneSpec {
    /// The same scene with wear, tire marks and noise removed.
    pub fn clean(mut self) -> Self {
        self.marking_wear = 0.0;
        self.tire_mark_count = 0;
        self.noise_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        check_dims(self.width, self.height)?;
        let within = |v: f64, r: [f64; 2]| r[0] <= v && v <= r[1];
        let checks = [
            ("horizon_frac", within(self.horizon_frac, HORIZON_FRAC)),
            ("pavement_albedo", within(self.pavement_albedo, PAVEMENT_ALBEDO)),
            ("sky_albedo", within(self.sky_albedo, SKY_ALBEDO)),
            ("left_edge_frac", within(self.left_edge_frac, LEFT_EDGE_FRAC)),
            ("right_edge_frac", within(self.right_edge_frac, RIGHT_EDGE_FRAC)),
            ("vanishing_x_frac", within(self.vanishing_x_frac, VANISHING_X_FRAC)),
            ("dash_length", self.dash_length >= 1.0 && self.dash_length.is_finite()),
            ("dash_gap", within(self.dash_gap, [1.0, MAX_DASH_GAP])),
            ("line_width", self.line_width >= 2.0 && self.line_width.is_finite()),
            ("marking_wear", within(self.marking_wear, [0.0, 1.0])),
            ("noise_sigma", within(self.noise_sigma, NOISE_SIGMA)),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(SynthError::InvalidSpec(format!("{name} out of range"))),
            None => Ok(()),
        }
    }

    pub fn horizon_row(&self) -> usize {
        (self.horizon_frac * self.height as f64).round() as usize
    }

    /// First row that may carry markings.
    pub fn marking_top(&self) -> usize {
        let h = self.height as f64;
        let top = (MARKING_TOP_FRAC * (h - 1.0)).max(self.horizon_row() as f64 + MARKING_HORIZON_GAP_FRAC * h);
        top.ceil() as usize
    }
}

/// Exact labels of a rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub category: Category,
    pub horizon_row: usize,
    pub marking_mask: BinaryMask,
    /// One polyline per visible dash, each ordered bottom to top.
    pub centerlines: Vec<Polyline>,
    /// Left then right edge line, each ordered bottom to top.
    pub edge_lines: Vec<Polyline>,
}

/// Perspective geometry shared by rendering and ground truth.
struct Geometry {
    w1: f64,
    h1: f64,
    horizon: f64,
    vp_x: f64,
}

impl Geometry {
    fn new(spec: &SceneSpec) -> Self {
        Self {
            w1: (spec.width - 1) as f64,
            h1: (spec.height - 1) as f64,
            horizon: spec.horizon_row() as f64,
            vp_x: spec.vanishing_x_frac * (spec.width - 1) as f64,
        }
    }

    /// 0 at the bottom row, 1 at the horizon.
    fn depth(&self, y: f64) -> f64 {
        (self.h1 - y) / (self.h1 - self.horizon)
    }

    /// Column of a line whose bottom end sits at `frac` of the width.
    fn line_x(&self, frac: f64, y: f64) -> f64 {
        let xb = frac * self.w1;
        xb + (self.vp_x - xb) * self.depth(y)
    }
}

struct Line {
    frac: f64,
    dashed: bool,
}

fn scene_lines(spec: &SceneSpec) -> [Line; 3] {
    [
        Line {
            frac: spec.left_edge_frac,
            dashed: false,
        },
        Line {
            frac: 0.5 * (spec.left_edge_frac + spec.right_edge_frac),
            dashed: true,
        },
        Line {
            frac: spec.right_edge_frac,
            dashed: false,
        },
    ]
}

const SUPERSAMPLE: usize = 4;

/// Marking coverage in `[0, 1]` per pixel, from 4x4 supersampling, plus the
/// per-row dash state of the centerline.
fn marking_coverage(spec: &SceneSpec, phase: f64) -> (Vec<f64>, Vec<bool>) {
    let (w, h) = (spec.width, spec.height);
    let geo = Geometry::new(spec);
    let top = spec.marking_top();
    let period = spec.dash_length + spec.dash_gap;
    let dash_on: Vec<bool> = (0..h)
        .map(|y| y >= top && ((geo.h1 - y as f64 + phase) % period) < spec.dash_length)
        .collect();
    let width_at = |y: f64| (spec.line_width * (1.0 - 0.5 * geo.depth(y))).max(2.0);
    let lines = scene_lines(spec);
    let mut cov = vec![0.0; w * h];
    let n = SUPERSAMPLE as f64;
    for y in top..h {
        for line in &lines {
            if line.dashed && !dash_on[y] {
                continue;
            }
            let xc = geo.line_x(line.frac, y as f64);
            let reach = width_at(y as f64) / 2.0 + 2.0;
            let x0 = (xc - reach).floor().max(0.0) as usize;
            let x1 = ((xc + reach).ceil() as usize).min(w - 1);
            for x in x0..=x1 {
                let mut inside = 0usize;
                for j in 0..SUPERSAMPLE {
                    let sy = y as f64 - 0.5 + (j as f64 + 0.5) / n;
                    let sxc = geo.line_x(line.frac, sy);
                    let half = width_at(sy) / 2.0;
                    for i in 0..SUPERSAMPLE {
                        let sx = x as f64 - 0.5 + (i as f64 + 0.5) / n;
                        if (sx - sxc).abs() <= half {
                            inside += 1;
                        }
                    }
                }
                let c = &mut cov[y * w + x];
                *c = f64::max(*c, inside as f64 / (n * n));
            }
        }
    }
    (cov, dash_on)
}

fn polyline_rows(geo: &Geometry, frac: f64, rows: impl Iterator<Item = usize>) -> Polyline {
    Polyline(
        rows.map(|y| [geo.line_x(frac, y as f64).round() as i32, y as i32])
            .collect(),
    )
}

fn ground_truth(spec: &SceneSpec, cov: &[f64], dash_on: &[bool]) -> GroundTruth {
    let (w, h) = (spec.width, spec.height);
    let geo = Geometry::new(spec);
    let lines = scene_lines(spec);
    let top = spec.marking_top();
    let marking_mask = BinaryMask::from_fn(w, h, |x, y| cov[y * w + x] >= 0.5);
    let edge_lines = [&lines[0], &lines[2]]
        .iter()
        .map(|l| polyline_rows(&geo, l.frac, (top..h).rev()))
        .collect();
    let mut centerlines = Vec::new();
    let mut y = h;
    while y > top {
        y -= 1;
        if !dash_on[y] {
            continue;
        }
        let bottom = y;
        while y > top && dash_on[y - 1] {
            y -= 1;
        }
        centerlines.push(polyline_rows(&geo, lines[1].frac, (y..=bottom).rev()));
    }
    GroundTruth {
        category: spec.category,
        horizon_row: spec.horizon_row(),
        marking_mask,
        centerlines,
        edge_lines,
    }
}

fn marking_color<R: Rng + ?Sized>(category: Category, rng: &mut R) -> [f64; 3] {
    let hsv = match category {
        Category::Runway => Hsv {
            h: 45.0,
            s: rng.gen_range(0.0..=0.06),
            v: rng.gen_range(0.9..=1.0),
        },
        Category::Taxiway => Hsv {
            h: rng.gen_range(50.0..=60.0),
            s: rng.gen_range(0.75..=0.95),
            v: rng.gen_range(0.85..=1.0),
        },
    };
    hsv_to_rgb(hsv)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

/// Renders a scene and its ground truth. Identical specs give bit-identical
/// output.
pub fn generate_scene(spec: &SceneSpec) -> Result<(RgbImage, GroundTruth), SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mark = marking_color(spec.category, &mut rng);
    let phase = rng.gen_range(0.0..spec.dash_length + spec.dash_gap);
    let grass_level = rng.gen_range(0.2..=0.35);

    let (cov, dash_on) = marking_coverage(spec, phase);
    let truth = ground_truth(spec, &cov, &dash_on);

    let geo = Geometry::new(spec);
    let hr = spec.horizon_row();
    let sky = spec.sky_albedo;
    let pav = spec.pavement_albedo;
    let pav_rgb = [pav, pav, (pav * 1.03).min(1.0)];
    let grass = [0.7 * grass_level, grass_level, 0.5 * grass_level];
    let pav_left = spec.left_edge_frac - 0.15;
    let pav_right = spec.right_edge_frac + 0.15;

    // Wear attenuates marking opacity through a 4x4-block noise field.
    let bw = w.div_ceil(4);
    let wear_field: Vec<f64> = (0..bw * h.div_ceil(4)).map(|_| rng.gen()).collect();

    let mut px = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            px[i] = if y < hr {
                let v = sky * (0.92 + 0.08 * y as f64 / hr.max(1) as f64);
                [0.75 * v, 0.85 * v, v]
            } else {
                let (xf, yf) = (x as f64, y as f64);
                let base = if xf >= geo.line_x(pav_left, yf) && xf <= geo.line_x(pav_right, yf) {
                    pav_rgb
                } else {
                    grass
                };
                let c = cov[i];
                let mut alpha = if c >= 0.5 { 1.0 } else { 0.3 * c };
                if alpha > 0.0 {
                    alpha *= 1.0 - spec.marking_wear * 0.6 * wear_field[(y / 4) * bw + x / 4];
                }
                mix(base, mark, alpha)
            };
        }
    }

    for _ in 0..spec.tire_mark_count {
        let frac = rng.gen_range(spec.left_edge_frac..=spec.right_edge_frac);
        let y_bottom = rng.gen_range(hr + 1..h) as f64;
        let len = rng.gen_range(0.1..=0.3) * h as f64;
        let half = rng.gen_range(1.5..=1.5 + w as f64 / 100.0);
        let k = rng.gen_range(0.55..=0.85);
        let y0 = (y_bottom - len).max(hr as f64 + 1.0).ceil() as usize;
        for y in y0..=y_bottom as usize {
            let xc = geo.line_x(frac, y as f64);
            let x0 = (xc - half).ceil().max(0.0) as usize;
            let x1 = ((xc + half).floor().max(0.0) as usize).min(w - 1);
            for x in x0..=x1 {
                px[y * w + x] = px[y * w + x].map(|c| c * k);
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma is finite and positive");
        for p in &mut px {
            for c in p.iter_mut() {
                *c += normal.sample(&mut rng);
            }
        }
    }

    let data = px
        .iter()
        .flat_map(|p| p.map(|c| c.clamp(0.0, 1.0) as f32))
        .collect();
    let img = RgbImage::new(w, h, data).expect("dimensions checked");
    Ok((img, truth))
}

/// SplitMix64 output function applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn frame_seed(corpus_seed: u64, index: usize) -> u64 {
    splitmix64(corpus_seed ^ index as u64)
}

/// Ground truth as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub stem: String,
    pub category: Category,
    pub horizon_row: usize,
    pub centerlines: Vec<Polyline>,
    pub edge_lines: Vec<Polyline>,
    /// Path of the marking mask PGM, relative to the corpus root.
    pub mask: String,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stem: String,
    pub category: Category,
    pub image: String,
    pub truth: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub frames: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn count(&self, category: Category) -> usize {
        self.frames.iter().filter(|f| f.category == category).count()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn load(root: &Path) -> Result<Self, SynthError> {
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let manifest = Self::parse(&bytes).map_err(|e| SynthError::Malformed {
            path: path.clone(),
            message: e.to_string(),
        })?;
        for f in &manifest.frames {
            let simple = !f.stem.is_empty()
                && f.stem != "."
                && f.stem != ".."
                && !f.stem.contains(['/', '\\']);
            if !simple {
                return Err(SynthError::Malformed {
                    path,
                    message: format!("stem {:?} is not a plain file name", f.stem),
                });
            }
            for p in [&f.image, &f.truth, &f.mask] {
                check_relative(&path, p)?;
            }
        }
        Ok(manifest)
    }
}

/// Manifest paths must stay inside the corpus root.
fn check_relative(manifest: &Path, p: &str) -> Result<(), SynthError> {
    let ok = !p.is_empty()
        && Path::new(p)
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(())
    } else {
        Err(SynthError::Malformed {
            path: manifest.to_path_buf(),
            message: format!("path {p:?} escapes the corpus root"),
        })
    }
}

pub fn load_image(path: &Path) -> Result<RgbImage, SynthError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    imaging::decode_ppm(&bytes).map_err(|source| SynthError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a frame's truth record and marking mask.
pub fn load_truth(root: &Path, entry: &ManifestEntry) -> Result<(TruthRecord, BinaryMask), SynthError> {
    let path = root.join(&entry.truth);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let record: TruthRecord = serde_json::from_slice(&bytes).map_err(|e| SynthError::Malformed {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mask_path = root.join(&entry.mask);
    let mask_bytes = fs::read(&mask_path).map_err(io_err(&mask_path))?;
    let mask = imaging::decode_pgm(&mask_bytes).map_err(|source| SynthError::Image {
        path: mask_path,
        source,
    })?;
    Ok((record, mask))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes `n_runway + n_taxiway` frames with truth and a manifest under
/// `out_dir`. Runway frames take the first indices. Frame `i` is rendered
/// from a spec sampled with seed `splitmix64(seed ^ i)`, so the tree is a
/// pure function of the arguments regardless of thread scheduling.
pub fn generate_corpus(
    n_runway: usize,
    n_taxiway: usize,
    width: usize,
    height: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest, SynthError> {
    if n_runway == 0 || n_taxiway == 0 {
        return Err(SynthError::EmptyCorpus);
    }
    check_dims(width, height)?;
    for sub in ["runway", "taxiway", "truth"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let categories: Vec<Category> = std::iter::repeat_n(Category::Runway, n_runway)
        .chain(std::iter::repeat_n(Category::Taxiway, n_taxiway))
        .collect();
    let frames = categories
        .par_iter()
        .enumerate()
        .map(|(i, &category)| {
            let stem = format!("frame_{i:05}");
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, i));
            let spec = sample_scene_spec(category, width, height, &mut rng)?;
            let (img, truth) = generate_scene(&spec)?;
            let entry = ManifestEntry {
                image: format!("{}/{stem}.ppm", category.as_str()),
                truth: format!("truth/{stem}.json"),
                mask: format!("truth/{stem}.mask.pgm"),
                stem: stem.clone(),
                category,
            };
            let record = TruthRecord {
                stem,
                category,
                horizon_row: truth.horizon_row,
                centerlines: truth.centerlines,
                edge_lines: truth.edge_lines,
                mask: entry.mask.clone(),
                spec,
            };
            write(&out_dir.join(&entry.image), &imaging::encode_ppm(&img))?;
            write(&out_dir.join(&entry.mask), &imaging::encode_pgm(&truth.marking_mask))?;
            let json = serde_json::to_vec_pretty(&record).expect("truth serializes");
            write(&out_dir.join(&entry.truth), &json)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let manifest = Manifest {
        width,
        height,
        seed,
        frames,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write(&out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

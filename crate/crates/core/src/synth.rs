//! Procedural multi-domain "hand scene" generator.
//!
//! A scene is one or more articulated blobs (a palm ellipse plus elongated
//! finger ellipses) over a patterned background. Each domain is described by
//! a [`DomainRecipe`] controlling foreground colour, texture, background
//! palette and pattern, global lighting and where foregrounds appear, so
//! appearance shift and label-distribution shift can be dialled separately.
//! The mask is the exact union of the ellipses; no anti-aliasing is applied.

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, SeededRng};
use crate::types::{BinaryMask, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BgPattern {
    Gradient,
    Checker,
    Blobs,
}

/// Gaussian over foreground centres, in fractions of width (x) and height (y).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionBias {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRecipe {
    pub domain_id: String,
    pub resolution: usize,
    /// Hue in `[0, 1)`.
    pub fg_hue: f64,
    /// Per-image hue jitter (uniform half-width).
    pub fg_hue_jitter: f64,
    pub fg_saturation: (f64, f64),
    pub fg_value: (f64, f64),
    /// Per-pixel Gaussian noise std on the foreground.
    pub fg_texture_noise: f64,
    /// 2 to 4 RGB base colours.
    pub bg_palette: Vec<[f64; 3]>,
    pub bg_pattern: BgPattern,
    pub bg_noise: f64,
    /// Multiplies every rendered pixel.
    pub lighting_gain: f64,
    pub label_position_bias: PositionBias,
    /// Allowed foreground fraction of the frame.
    pub fg_area_range: (f64, f64),
    /// Number of hands per image (inclusive).
    pub n_blobs_range: (usize, usize),
    /// Hand-coloured striped squares in the background (hard negatives).
    #[serde(default)]
    pub distractors: Distractors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distractors {
    /// Per image, inclusive; `(0, 0)` disables them.
    pub count: (usize, usize),
    /// Side length as a fraction of the resolution.
    pub size: (f64, f64),
    /// Stripe period in pixels.
    pub stripe_period: usize,
    /// Vertical band, as fractions of the height, the squares are placed in.
    #[serde(default = "full_band")]
    pub rows: (f64, f64),
    /// Saturation and value scale applied to a foreground colour draw.
    #[serde(default = "unit_tone")]
    pub tone: (f64, f64),
}

fn unit_tone() -> (f64, f64) {
    (1.0, 1.0)
}

fn full_band() -> (f64, f64) {
    (0.0, 1.0)
}

impl Default for Distractors {
    fn default() -> Self {
        Self { count: (0, 0), size: (0.12, 0.2), stripe_period: 4, rows: full_band(), tone: unit_tone() }
    }
}

/// Generation metadata for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub sample: Sample,
    pub blobs: Vec<BlobParams>,
    pub seed: u64,
}

const MAX_ATTEMPTS: usize = 200;

impl DomainRecipe {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleRecipe(format!("{}: {m}", self.domain_id)));
        let (amin, amax) = self.fg_area_range;
        if !(amin > 0.0 && amin < amax && amax < 0.5) {
            return bad(format!("fg_area_range {:?} must satisfy 0 < min < max < 0.5", self.fg_area_range));
        }
        if self.resolution < 8 {
            return bad(format!("resolution {} too small", self.resolution));
        }
        let px = (self.resolution * self.resolution) as f64;
        // at least a few pixels must fit between the bounds
        if (amax - amin) * px < 4.0 || amin * px < 4.0 {
            return bad(format!("area range {:?} unreachable at {}px", self.fg_area_range, self.resolution));
        }
        if !(0.0..1.0).contains(&self.fg_hue) {
            return bad(format!("fg_hue {} outside [0,1)", self.fg_hue));
        }
        for (name, (lo, hi)) in [("fg_saturation", self.fg_saturation), ("fg_value", self.fg_value)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) invalid"));
            }
        }
        if !(2..=4).contains(&self.bg_palette.len()) {
            return bad(format!("bg_palette needs 2-4 colours, has {}", self.bg_palette.len()));
        }
        let (nlo, nhi) = self.n_blobs_range;
        if nlo < 1 || nlo > nhi {
            return bad(format!("n_blobs_range {:?} invalid", self.n_blobs_range));
        }
        if !(self.lighting_gain > 0.0) || self.fg_texture_noise < 0.0 || self.bg_noise < 0.0 {
            return bad("gain must be > 0 and noise >= 0".into());
        }
        let d = &self.distractors;
        let band_ok = d.rows.0 >= 0.0 && d.rows.1 <= 1.0 && d.rows.1 - d.rows.0 >= d.size.1;
        if d.count.0 > d.count.1
            || d.stripe_period == 0
            || !(d.size.0 > 0.0 && d.size.0 <= d.size.1 && d.size.1 < 1.0)
            || !band_ok
        {
            return bad(format!("distractor settings {d:?} invalid"));
        }
        let c = self.label_position_bias.cov;
        if c[0][0] < 0.0 || c[1][1] < 0.0 || c[0][0] * c[1][1] < c[0][1] * c[1][0] {
            return bad("label_position_bias covariance is not PSD".into());
        }
        Ok(())
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn rgb_to_hue(rgb: [f64; 3]) -> f64 {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    h / 6.0
}

fn inside(b: &BlobParams, x: f64, y: f64) -> bool {
    let (s, c) = b.angle.sin_cos();
    let dx = x - b.cx;
    let dy = y - b.cy;
    let u = (dx * c + dy * s) / b.rx;
    let v = (-dx * s + dy * c) / b.ry;
    u * u + v * v <= 1.0
}

fn rasterize(blobs: &[BlobParams], res: usize) -> BinaryMask {
    BinaryMask::from_fn(res, res, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        blobs.iter().any(|b| inside(b, px, py))
    })
}

// One hand: palm plus 1-3 fingers, in units relative to `scale` (pixels).
fn hand_shape(rng: &mut SeededRng, cx: f64, cy: f64) -> Vec<BlobParams> {
    let dir = rng.range(0.0, std::f64::consts::TAU);
    let palm_rx = rng.range(0.8, 1.1);
    let palm_ry = rng.range(0.6, 0.9);
    let mut shape = vec![BlobParams { cx, cy, rx: palm_rx, ry: palm_ry, angle: dir }];
    let fingers = 1 + rng.below(3);
    for k in 0..fingers {
        let spread = (k as f64 - (fingers - 1) as f64 / 2.0) * 0.45 + rng.range(-0.15, 0.15);
        let a = dir + spread;
        let len = rng.range(0.7, 1.1);
        let reach = palm_rx * 0.8 + len * 0.6;
        shape.push(BlobParams {
            cx: cx + reach * a.cos(),
            cy: cy + reach * a.sin(),
            rx: len,
            ry: rng.range(0.3, 0.4),
            angle: a,
        });
    }
    shape
}

fn scaled(shape: &[BlobParams], cx: f64, cy: f64, scale: f64) -> Vec<BlobParams> {
    shape
        .iter()
        .map(|b| BlobParams {
            cx: cx + (b.cx - cx) * scale,
            cy: cy + (b.cy - cy) * scale,
            rx: b.rx * scale,
            ry: b.ry * scale,
            angle: b.angle,
        })
        .collect()
}

fn sample_centre(bias: &PositionBias, rng: &mut SeededRng, res: f64) -> (f64, f64) {
    // Cholesky of the 2×2 covariance
    let c = bias.cov;
    let l00 = c[0][0].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
    let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
    let (z0, z1) = (rng.normal(), rng.normal());
    let fx = (bias.mean[0] + l00 * z0).clamp(0.08, 0.92);
    let fy = (bias.mean[1] + l10 * z0 + l11 * z1).clamp(0.08, 0.92);
    (fx * res, fy * res)
}

// Hand geometry with a total area inside the recipe's range.
fn sample_geometry(recipe: &DomainRecipe, rng: &mut SeededRng) -> Option<(Vec<BlobParams>, BinaryMask)> {
    let res = recipe.resolution as f64;
    let (amin, amax) = recipe.fg_area_range;
    let (nlo, nhi) = recipe.n_blobs_range;
    let n_hands = nlo + rng.below(nhi - nlo + 1);
    let goal = rng.range(amin, amax);
    let mut hands = Vec::with_capacity(n_hands);
    for _ in 0..n_hands {
        let (cx, cy) = sample_centre(&recipe.label_position_bias, rng, res);
        hands.push((cx, cy, hand_shape(rng, cx, cy)));
    }
    let build =
        |scale: f64| -> Vec<BlobParams> { hands.iter().flat_map(|(cx, cy, s)| scaled(s, *cx, *cy, scale)).collect() };
    // area grows monotonically with scale; bisect towards the goal fraction
    let (mut lo, mut hi) = (0.5, res);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let frac = rasterize(&build(mid), recipe.resolution).fg_fraction();
        if frac < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for scale in [hi, lo] {
        let blobs = build(scale);
        let mask = rasterize(&blobs, recipe.resolution);
        let f = mask.fg_fraction();
        if f >= amin && f <= amax {
            return Some((blobs, mask));
        }
    }
    None
}

fn render_background(recipe: &DomainRecipe, rng: &mut SeededRng) -> Vec<[f64; 3]> {
    let res = recipe.resolution;
    let palette: Vec<[f64; 3]> =
        recipe.bg_palette.iter().map(|c| c.map(|v| (v + rng.range(-0.04, 0.04)).clamp(0.0, 1.0))).collect();
    let mut out = vec![[0.0; 3]; res * res];
    match recipe.bg_pattern {
        BgPattern::Gradient => {
            let a = rng.range(0.0, std::f64::consts::TAU);
            let (s, c) = a.sin_cos();
            let i0 = rng.below(palette.len());
            let i1 = (i0 + 1 + rng.below(palette.len() - 1)) % palette.len();
            for y in 0..res {
                for x in 0..res {
                    let u = ((x as f64 / res as f64 - 0.5) * c + (y as f64 / res as f64 - 0.5) * s) / 1.42 + 0.5;
                    let t = u.clamp(0.0, 1.0);
                    out[y * res + x] = [0, 1, 2].map(|k| palette[i0][k] * (1.0 - t) + palette[i1][k] * t);
                }
            }
        }
        BgPattern::Checker => {
            let cell = (res / 8).max(2) + rng.below((res / 8).max(2));
            let ox = rng.below(cell);
            let oy = rng.below(cell);
            for y in 0..res {
                for x in 0..res {
                    let k = ((x + ox) / cell + (y + oy) / cell) % palette.len();
                    out[y * res + x] = palette[k];
                }
            }
        }
        BgPattern::Blobs => {
            let base = rng.below(palette.len());
            out.fill(palette[base]);
            let n = 4 + rng.below(6);
            for _ in 0..n {
                let col = palette[rng.below(palette.len())];
                let cx = rng.range(0.0, res as f64);
                let cy = rng.range(0.0, res as f64);
                let r = rng.range(0.08, 0.25) * res as f64;
                for y in 0..res {
                    for x in 0..res {
                        let dx = x as f64 + 0.5 - cx;
                        let dy = y as f64 + 0.5 - cy;
                        if dx * dx + dy * dy <= r * r {
                            out[y * res + x] = col;
                        }
                    }
                }
            }
        }
    }
    draw_distractors(recipe, &mut out, rng);
    for p in &mut out {
        for v in p.iter_mut() {
            *v += recipe.bg_noise * rng.normal();
        }
    }
    out
}

fn fg_color(recipe: &DomainRecipe, rng: &mut SeededRng) -> [f64; 3] {
    toned_fg_color(recipe, (1.0, 1.0), rng)
}

fn toned_fg_color(recipe: &DomainRecipe, tone: (f64, f64), rng: &mut SeededRng) -> [f64; 3] {
    let hue = recipe.fg_hue + rng.range(-recipe.fg_hue_jitter, recipe.fg_hue_jitter);
    let sat = rng.range(recipe.fg_saturation.0, recipe.fg_saturation.1) * tone.0;
    let val = rng.range(recipe.fg_value.0, recipe.fg_value.1) * tone.1;
    hsv_to_rgb(hue, sat.clamp(0.0, 1.0), val.clamp(0.0, 1.0))
}

fn draw_distractors(recipe: &DomainRecipe, out: &mut [[f64; 3]], rng: &mut SeededRng) {
    let d = &recipe.distractors;
    let res = recipe.resolution;
    let n = d.count.0 + rng.below(d.count.1 - d.count.0 + 1);
    for _ in 0..n {
        let color = toned_fg_color(recipe, d.tone, rng);
        let dark = color.map(|v| v * 0.55);
        let side = ((rng.range(d.size.0, d.size.1) * res as f64).round() as usize).clamp(2, res);
        let x0 = rng.below(res - side + 1);
        let top = (d.rows.0 * res as f64).round() as usize;
        let bottom = ((d.rows.1 * res as f64).round() as usize).clamp(top + side, res);
        let y0 = top + rng.below(bottom - side - top + 1);
        let vertical = rng.below(2) == 0;
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                let t = if vertical { x - x0 } else { y - y0 };
                out[y * res + x] = if (t / d.stripe_period).is_multiple_of(2) { color } else { dark };
            }
        }
    }
}

fn render_foreground(recipe: &DomainRecipe, mask: &BinaryMask, rng: &mut SeededRng) -> Vec<[f64; 3]> {
    let res = recipe.resolution;
    let base = fg_color(recipe, rng);
    // soft directional shading across the frame
    let a = rng.range(0.0, std::f64::consts::TAU);
    let (s, c) = a.sin_cos();
    let mut out = vec![[0.0; 3]; res * res];
    for y in 0..res {
        for x in 0..res {
            let i = y * res + x;
            let shade = 1.0 + 0.12 * ((x as f64 / res as f64 - 0.5) * c + (y as f64 / res as f64 - 0.5) * s);
            let noise = [rng.normal(), rng.normal(), rng.normal()];
            if mask.as_slice()[i] {
                out[i] = [0, 1, 2].map(|k| base[k] * shade + recipe.fg_texture_noise * noise[k]);
            }
        }
    }
    out
}

/// Renders one scene. Geometry, foreground and background draw from separate
/// substreams of `seed`, so changing the background recipe never alters the
/// foreground pixels.
pub fn render_scene(recipe: &DomainRecipe, seed: u64, sample_id: &str) -> Result<SceneSample> {
    let root = seeded_rng(seed);
    let mut geo = root.named("geometry");
    let mut found = None;
    for _ in 0..MAX_ATTEMPTS {
        if let Some(g) = sample_geometry(recipe, &mut geo) {
            found = Some(g);
            break;
        }
    }
    let (blobs, mask) = found.ok_or_else(|| {
        Error::InfeasibleRecipe(format!(
            "{}: could not hit fg_area_range {:?} in {MAX_ATTEMPTS} attempts",
            recipe.domain_id, recipe.fg_area_range
        ))
    })?;
    let bg = render_background(recipe, &mut root.named("background"));
    let fg = render_foreground(recipe, &mask, &mut root.named("foreground"));
    let n = recipe.resolution * recipe.resolution;
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        let p = if mask.as_slice()[i] { fg[i] } else { bg[i] };
        data.extend(p.map(|v| (v * recipe.lighting_gain) as f32));
    }
    let image = Image::from_clipped(recipe.resolution, recipe.resolution, data)?;
    let sample = Sample::labeled(image, mask, &recipe.domain_id, sample_id)?;
    Ok(SceneSample { sample, blobs, seed })
}

fn scene_seed(seed: u64, domain: &str, part: &str, i: usize) -> u64 {
    use rand::RngCore;
    seeded_rng(seed).named(&format!("{domain}/{part}/{i}")).next_u64()
}

/// Generates a labeled train/test split for one domain.
pub fn generate_domain(recipe: &DomainRecipe, n_train: usize, n_test: usize, seed: u64) -> Result<DatasetSplit> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config("n_train and n_test must be positive".into()));
    }
    recipe.validate()?;
    let d = &recipe.domain_id;
    let mut train = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let id = format!("{d}:train/{i:05}");
        train.push(render_scene(recipe, scene_seed(seed, d, "train", i), &id)?.sample);
    }
    let mut test = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let id = format!("{d}:test/{i:05}");
        test.push(render_scene(recipe, scene_seed(seed, d, "test", i), &id)?.sample);
    }
    DatasetSplit::new(d, train, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetOptions {
    pub resolution: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self { resolution: 64, n_train: 64, n_test: 32 }
    }
}

#[derive(Clone, Debug)]
pub struct PresetSuite {
    pub source: DatasetSplit,
    pub targets: Vec<DatasetSplit>,
    pub recipes: Vec<DomainRecipe>,
}

/// Source recipe and four targets with graded shift:
/// T1 mild colour, T2 lighting, T3 strong hue + texture,
/// T4 strong appearance shift with displaced foreground positions.
pub fn preset_recipes(resolution: usize) -> Vec<DomainRecipe> {
    let base = DomainRecipe {
        domain_id: "source".into(),
        resolution,
        fg_hue: 0.06,
        fg_hue_jitter: 0.015,
        fg_saturation: (0.45, 0.65),
        fg_value: (0.65, 0.85),
        fg_texture_noise: 0.025,
        bg_palette: vec![[0.25, 0.45, 0.30], [0.55, 0.55, 0.60], [0.20, 0.30, 0.55]],
        bg_pattern: BgPattern::Blobs,
        bg_noise: 0.02,
        lighting_gain: 1.0,
        label_position_bias: PositionBias { mean: [0.5, 0.68], cov: [[0.025, 0.0], [0.0, 0.012]] },
        fg_area_range: (0.06, 0.22),
        n_blobs_range: (1, 2),
        distractors: Distractors { count: (1, 2), ..Distractors::default() },
    };
    let t1 = DomainRecipe {
        domain_id: "t1".into(),
        fg_hue: 0.1,
        fg_saturation: (0.35, 0.55),
        bg_palette: vec![[0.35, 0.50, 0.35], [0.60, 0.58, 0.52], [0.30, 0.35, 0.50]],
        bg_pattern: BgPattern::Gradient,
        distractors: Distractors { count: (2, 4), size: (0.15, 0.25), ..Distractors::default() },
        ..base.clone()
    };
    let t2 = DomainRecipe {
        domain_id: "t2".into(),
        fg_hue: 0.05,
        bg_palette: vec![[0.30, 0.35, 0.55], [0.50, 0.50, 0.65], [0.25, 0.40, 0.35]],
        lighting_gain: 0.6,
        distractors: Distractors { count: (2, 4), size: (0.15, 0.25), ..Distractors::default() },
        ..base.clone()
    };
    let t3 = DomainRecipe {
        domain_id: "t3".into(),
        fg_hue: 0.5,
        fg_saturation: (0.45, 0.7),
        fg_value: (0.6, 0.85),
        fg_texture_noise: 0.08,
        bg_palette: vec![[0.30, 0.30, 0.30], [0.35, 0.45, 0.20], [0.25, 0.28, 0.40]],
        bg_pattern: BgPattern::Checker,
        bg_noise: 0.04,
        ..base.clone()
    };
    let t4 = DomainRecipe {
        domain_id: "t4".into(),
        fg_hue: 0.85,
        fg_saturation: (0.4, 0.6),
        fg_value: (0.7, 0.9),
        fg_texture_noise: 0.05,
        bg_palette: vec![[0.55, 0.65, 0.45], [0.25, 0.30, 0.28], [0.60, 0.60, 0.65], [0.40, 0.50, 0.60]],
        bg_pattern: BgPattern::Checker,
        lighting_gain: 0.55,
        label_position_bias: PositionBias { mean: [0.28, 0.32], cov: [[0.012, 0.0], [0.0, 0.012]] },
        ..base.clone()
    };
    vec![base, t1, t2, t3, t4]
}

pub fn preset_suite_with(seed: u64, opts: PresetOptions) -> Result<PresetSuite> {
    let recipes = preset_recipes(opts.resolution);
    let mut splits =
        recipes.iter().map(|r| generate_domain(r, opts.n_train, opts.n_test, seed)).collect::<Result<Vec<_>>>()?;
    let source = splits.remove(0);
    Ok(PresetSuite { source, targets: splits, recipes })
}

pub fn preset_suite(seed: u64) -> Result<PresetSuite> {
    preset_suite_with(seed, PresetOptions::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub height: usize,
    pub width: usize,
    /// Row-major pixelwise mean of the masks.
    pub mean_mask: Vec<f64>,
    pub marginal_x: Vec<f64>,
    pub marginal_y: Vec<f64>,
}

impl LabelDistribution {
    /// Foreground centroid `(x, y)` in pixels.
    pub fn centroid(&self) -> (f64, f64) {
        let cx = self.marginal_x.iter().enumerate().map(|(i, v)| (i as f64 + 0.5) * v).sum();
        let cy = self.marginal_y.iter().enumerate().map(|(i, v)| (i as f64 + 0.5) * v).sum();
        (cx, cy)
    }
}

/// Mean mask over the train split and its normalized axis marginals.
pub fn label_distribution_summary(split: &DatasetSplit) -> Result<LabelDistribution> {
    let first = split.train.first().ok_or_else(|| Error::Empty("train split".into()))?;
    let (h, w) = (first.image.height(), first.image.width());
    let mut mean = vec![0.0; h * w];
    for s in &split.train {
        let m = s.mask()?;
        if m.height() != h || m.width() != w {
            return Err(Error::Dimension(format!("{} has a different size", s.sample_id)));
        }
        for (acc, &v) in mean.iter_mut().zip(m.as_slice()) {
            *acc += v as u8 as f64;
        }
    }
    let n = split.train.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    let mut mx = vec![0.0; w];
    let mut my = vec![0.0; h];
    for y in 0..h {
        for x in 0..w {
            mx[x] += mean[y * w + x];
            my[y] += mean[y * w + x];
        }
    }
    let total: f64 = mx.iter().sum();
    if total > 0.0 {
        mx.iter_mut().for_each(|v| *v /= total);
        my.iter_mut().for_each(|v| *v /= total);
    } else {
        // no foreground at all: uniform marginals
        mx.iter_mut().for_each(|v| *v = 1.0 / w as f64);
        my.iter_mut().for_each(|v| *v = 1.0 / h as f64);
    }
    Ok(LabelDistribution { height: h, width: w, mean_mask: mean, marginal_x: mx, marginal_y: my })
}

//! Synthetic fixtures from a second-order position control system.
//!
//! A real-like clip is a bright square following a drifting path with
//! noise-driven spring jitter `a2 x'' + a1 x' + a0 x = u`. Its generated-like
//! counterpart keeps every fourth position and interpolates linearly in
//! between, so its velocity is piecewise constant. The fixture is our own
//! construction; it makes the volatility gap measurable without real data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{D3Error, Result};
use crate::frames::FRAME_DIR_META;
use crate::harness::{write_manifest, ManifestEntry};
use crate::par;
use crate::record::Label;

pub type Point = [f64; 2];

pub const KEYFRAME_STRIDE: usize = 4;
pub const REAL_SUBSET: &str = "real";
pub const CLONE_SUBSET: &str = "smooth_clone";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
    pub force_noise_std: f64,
    pub dt_sim: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            a2: 1.0,
            a1: 0.2,
            a0: 2.4,
            force_noise_std: 0.5,
            dt_sim: 1.0,
            steps: 16,
            seed: 0,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(D3Error::ConfigError(m));
        let all = [self.a2, self.a1, self.a0, self.force_noise_std, self.dt_sim];
        if all.iter().any(|v| !v.is_finite()) {
            return bad(format!("dynamics parameters must be finite: {self:?}"));
        }
        if self.a2 <= 0.0 {
            return bad(format!("a2 must be positive, got {}", self.a2));
        }
        if self.a1 < 0.0 || self.a0 < 0.0 || self.force_noise_std < 0.0 {
            return bad("a1, a0 and force_noise_std must be non-negative".into());
        }
        if self.dt_sim <= 0.0 {
            return bad(format!("dt_sim must be positive, got {}", self.dt_sim));
        }
        if self.steps < 4 {
            return bad(format!("steps must be at least 4, got {}", self.steps));
        }
        Ok(())
    }

    /// Largest `dt_sim` for which the unforced update never increases
    /// [`mechanical_energy`](Self::mechanical_energy):
    /// `2 a1 a2 / (a0 a2 + a1^2)`, zero without damping. Below it the
    /// per-step energy change is a negative semidefinite form in `(x, v)`.
    pub fn dissipative_dt_bound(&self) -> f64 {
        if self.a1 <= 0.0 {
            return 0.0;
        }
        2.0 * self.a1 * self.a2 / (self.a0 * self.a2 + self.a1 * self.a1)
    }

    /// `a2 |v|^2 / 2 + a0 |x|^2 / 2`.
    pub fn mechanical_energy(&self, x: Point, v: Point) -> f64 {
        0.5 * self.a2 * (v[0] * v[0] + v[1] * v[1]) + 0.5 * self.a0 * (x[0] * x[0] + x[1] * x[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub positions: Vec<Point>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `x[k+1] - 2 x[k] + x[k-1]` for interior points.
    pub fn second_differences(&self) -> Vec<Point> {
        self.positions
            .windows(3)
            .map(|w| [w[2][0] - 2.0 * w[1][0] + w[0][0], w[2][1] - 2.0 * w[1][1] + w[0][1]])
            .collect()
    }
}

/// Positions and velocities of a semi-implicit Euler run.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub positions: Vec<Point>,
    pub velocities: Vec<Point>,
}

/// Integrates `steps - 1` updates with force `force(k)` at step `k`.
pub fn integrate(p: &DynamicsParams, x0: Point, v0: Point, mut force: impl FnMut(usize) -> Point) -> Integration {
    let (mut x, mut v) = (x0, v0);
    let mut positions = Vec::with_capacity(p.steps);
    let mut velocities = Vec::with_capacity(p.steps);
    positions.push(x);
    velocities.push(v);
    for k in 0..p.steps.saturating_sub(1) {
        let u = force(k);
        for i in 0..2 {
            let a = (u[i] - p.a1 * v[i] - p.a0 * x[i]) / p.a2;
            v[i] += a * p.dt_sim;
            x[i] += v[i] * p.dt_sim;
        }
        positions.push(x);
        velocities.push(v);
    }
    Integration { positions, velocities }
}

/// Noise-driven run: `u_k ~ N(0, force_noise_std^2)` per axis from a
/// ChaCha8 stream seeded with `p.seed`.
pub fn simulate_second_order(p: &DynamicsParams, x0: Point, v0: Point) -> Result<Trajectory> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noise = Normal::new(0.0, p.force_noise_std).map_err(|e| D3Error::ConfigError(e.to_string()))?;
    let run = integrate(p, x0, v0, |_| [noise.sample(&mut rng), noise.sample(&mut rng)]);
    Ok(Trajectory {
        positions: run.positions,
    })
}

/// Keyframes at every fourth index (and the last), straight lines between.
/// Trajectories shorter than two points are returned unchanged.
pub fn smooth_clone(traj: &Trajectory) -> Trajectory {
    let n = traj.len();
    if n < 2 {
        return traj.clone();
    }
    let mut keys: Vec<usize> = (0..n).step_by(KEYFRAME_STRIDE).collect();
    if *keys.last().expect("n >= 2") != n - 1 {
        keys.push(n - 1);
    }
    let src = &traj.positions;
    let mut out = src.clone();
    for w in keys.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (i, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let t = (i - a) as f64 / (b - a) as f64;
            for c in 0..2 {
                slot[c] = src[a][c] + t * (src[b][c] - src[a][c]);
            }
        }
    }
    Trajectory { positions: out }
}

/// Canvas, square and background of rendered clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderStyle {
    pub canvas: u32,
    pub square: f64,
    /// Logistic edge scale of the square, in pixels.
    pub edge_softness: f64,
    /// Gray level at the left and right edges of the background.
    pub gradient: [f64; 2],
    pub texture_amplitude: f64,
    /// Frame rate recorded in the clip's sidecar.
    pub fps: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            canvas: 256,
            square: 16.0,
            edge_softness: 5.5,
            gradient: [0.0, 250.0],
            texture_amplitude: 6.0,
            fps: 8.0,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        let ok = self.canvas >= 16
            && self.square > 0.0
            && self.square < f64::from(self.canvas)
            && self.edge_softness > 0.0
            && self.fps > 0.0
            && self.gradient.iter().chain([&self.texture_amplitude]).all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(D3Error::ConfigError(format!("invalid render style {self:?}")))
        }
    }

    fn background(&self) -> Vec<f64> {
        let c = self.canvas as usize;
        let [g0, g1] = self.gradient;
        let mut bg = Vec::with_capacity(c * c);
        for y in 0..c {
            for x in 0..c {
                let (xf, yf) = (x as f64, y as f64);
                let g = g0 + (g1 - g0) * xf / (c - 1) as f64;
                let tex = self.texture_amplitude * (xf / 9.0).sin() * (yf / 11.0).sin();
                bg.push((g + tex).clamp(0.0, 255.0));
            }
        }
        bg
    }

    /// Coverage of the square along one axis, centre `c`.
    fn profile(&self, c: f64) -> Vec<f64> {
        let half = self.square / 2.0;
        let logistic = |z: f64| 1.0 / (1.0 + (-z).exp());
        (0..self.canvas)
            .map(|i| {
                let x = f64::from(i) + 0.5;
                logistic((x - (c - half)) / self.edge_softness) - logistic((x - (c + half)) / self.edge_softness)
            })
            .collect()
    }
}

/// One frame per position: a soft-edged white square over a horizontal
/// gradient with a faint sinusoidal texture. Centres are clamped so the
/// square stays on the canvas.
pub fn render_frames(traj: &Trajectory, style: &RenderStyle) -> Result<Vec<RgbImage>> {
    style.validate()?;
    let bg = style.background();
    let c = style.canvas as usize;
    let (lo, hi) = (style.square / 2.0, f64::from(style.canvas) - style.square / 2.0);
    traj.positions
        .iter()
        .map(|p| {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(D3Error::ShapeError(format!("non-finite position {p:?}")));
            }
            let px = style.profile(p[0].clamp(lo, hi));
            let py = style.profile(p[1].clamp(lo, hi));
            Ok(RgbImage::from_fn(style.canvas, style.canvas, |x, y| {
                let (x, y) = (x as usize, y as usize);
                let b = bg[y * c + x];
                let v = (b + (255.0 - b) * px[x] * py[y]).round().clamp(0.0, 255.0) as u8;
                Rgb([v, v, v])
            }))
        })
        .collect()
}

/// Writes `frame_0000.png`, ... plus the fps sidecar into `out_dir`,
/// replacing any previous contents.
pub fn render_clip(traj: &Trajectory, style: &RenderStyle, out_dir: &Path) -> Result<PathBuf> {
    let frames = render_frames(traj, style)?;
    if out_dir.exists() {
        std::fs::remove_dir_all(out_dir).map_err(|e| D3Error::io(out_dir, e))?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| D3Error::io(out_dir, e))?;
    for (k, f) in frames.iter().enumerate() {
        f.save(out_dir.join(format!("frame_{k:04}.png")))?;
    }
    let meta = out_dir.join(FRAME_DIR_META);
    let json = serde_json::to_string(&serde_json::json!({ "fps": style.fps }))?;
    std::fs::write(&meta, json).map_err(|e| D3Error::io(&meta, e))?;
    Ok(out_dir.to_path_buf())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    /// Jitter dynamics; `seed` is the corpus base seed.
    pub dynamics: DynamicsParams,
    /// Drift speed range in pixels per step.
    pub drift_speed: [f64; 2],
    /// Drift heading is horizontal (either direction) plus up to this many
    /// radians.
    pub heading_spread: f64,
    pub style: RenderStyle,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            dynamics: DynamicsParams::default(),
            drift_speed: [2.0, 10.0],
            heading_spread: 0.5,
            style: RenderStyle::default(),
        }
    }
}

impl CorpusParams {
    pub fn with_seed(seed: u64) -> Self {
        let mut p = Self::default();
        p.dynamics.seed = seed;
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.style.validate()?;
        let [lo, hi] = self.drift_speed;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) || !(self.heading_spread >= 0.0 && self.heading_spread.is_finite()) {
            return Err(D3Error::ConfigError(format!(
                "invalid drift settings {:?} / {}",
                self.drift_speed, self.heading_spread
            )));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of clip `index` in stream `stream` (real clips and clones draw
/// from different streams).
pub fn clip_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ stream) ^ index)
}

/// Drift line through the canvas centre plus jitter from the dynamics.
pub fn fixture_trajectory(params: &CorpusParams, seed: u64) -> Result<Trajectory> {
    let dynamics = DynamicsParams { seed, ..params.dynamics };
    let jitter = simulate_second_order(&dynamics, [0.0; 2], [0.0; 2])?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    let spread = params.heading_spread;
    let mut heading = if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 };
    if rng.random_bool(0.5) {
        heading += PI;
    }
    let [lo, hi] = params.drift_speed;
    let speed = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let step = [speed * heading.cos(), speed * heading.sin()];
    let centre = f64::from(params.style.canvas) / 2.0;
    let mid = (dynamics.steps - 1) as f64 / 2.0;
    let positions = jitter
        .positions
        .iter()
        .enumerate()
        .map(|(k, j)| {
            let t = k as f64 - mid;
            [centre + t * step[0] + j[0], centre + t * step[1] + j[1]]
        })
        .collect();
    Ok(Trajectory { positions })
}

const REAL_STREAM: u64 = 0;
const CLONE_STREAM: u64 = 1;

/// Writes `n_real` real-like clips under `real/`, `n_fake` smooth clones
/// under `generated/` and a manifest with paths relative to `out_dir`.
/// Returns the manifest path.
pub fn make_corpus(n_real: usize, n_fake: usize, params: &CorpusParams, out_dir: &Path) -> Result<PathBuf> {
    make_corpus_with_workers(n_real, n_fake, params, out_dir, par::default_workers())
}

pub fn make_corpus_with_workers(
    n_real: usize,
    n_fake: usize,
    params: &CorpusParams,
    out_dir: &Path,
    workers: usize,
) -> Result<PathBuf> {
    if n_real == 0 || n_fake == 0 {
        return Err(D3Error::ConfigError("corpus needs at least one real and one generated clip".into()));
    }
    params.validate()?;
    let base = params.dynamics.seed;
    let jobs: Vec<(Label, usize)> = (0..n_real)
        .map(|i| (Label::Real, i))
        .chain((0..n_fake).map(|i| (Label::Generated, i)))
        .collect();
    let entries = par::map_ordered(&jobs, workers, |&(label, i)| {
        let (dir, subset, stream) = match label {
            Label::Real => ("real", REAL_SUBSET, REAL_STREAM),
            Label::Generated => ("generated", CLONE_SUBSET, CLONE_STREAM),
        };
        let traj = fixture_trajectory(params, clip_seed(base, stream, i as u64))?;
        let traj = match label {
            Label::Real => traj,
            Label::Generated => smooth_clone(&traj),
        };
        let rel = format!("{dir}/clip_{i:05}");
        render_clip(&traj, &params.style, &out_dir.join(&rel))?;
        Ok(ManifestEntry::new(rel.clone(), rel, label, subset))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&entries, &manifest)?;
    Ok(manifest)
}

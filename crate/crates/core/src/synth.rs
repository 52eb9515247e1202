//! Procedural multi-video datasets of thin "tools" over an eye-like background.
//!
//! Each class has its own silhouette and colour. A class appears in runs of
//! consecutive frames (episodes) whose lengths are geometric with a
//! per-class mean, which decouples per-frame prevalence from the number of
//! videos a class shows up in. Labels are exact: a class is labeled present
//! in a frame if and only if its shape is drawn there.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::image::RgbFrame;
use crate::data::manifest::{self, DatasetManifest, FrameEntry, FrameImage, FrameKey, ManifestFile, ManifestVideo, VideoRecord};
use crate::error::{Error, Result};
use crate::loss::LabelVector;
use crate::rng;

const TOOL_NAMES: [&str; 6] = ["cannula", "forceps", "hook", "spatula", "ring_tip", "injector"];
const SOURCE_NAMES: [&str; 6] = ["arc", "cross", "zigzag", "dashes", "twin_bar", "triangle"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vocabulary {
    /// Instrument-like silhouettes.
    Tools,
    /// A disjoint shape set used for pretraining.
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub num_classes: usize,
    pub width: usize,
    pub height: usize,
    /// Target fraction of all frames showing each class.
    pub prevalence: Vec<f64>,
    /// Number of videos each class appears in.
    pub coverage: Vec<usize>,
    pub max_simultaneous: usize,
    /// Probability that a simulated second annotator disagrees on a cell.
    pub annotator_noise: f64,
    /// Mean episode length in frames per class; empty picks a default.
    pub episode_mean: Vec<f64>,
    pub vocabulary: Vocabulary,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_videos: 8,
            frames_per_video: 180,
            num_classes: 6,
            width: 64,
            height: 64,
            prevalence: vec![0.3, 0.25, 0.22, 0.18, 0.15, 0.12],
            coverage: vec![8; 6],
            max_simultaneous: 3,
            annotator_noise: 0.0,
            episode_mean: Vec::new(),
            vocabulary: Vocabulary::Tools,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// `num_classes` classes with the given prevalence, each in every video.
    pub fn uniform(num_classes: usize, prevalence: f64, seed: u64) -> Self {
        let d = GeneratorConfig::default();
        GeneratorConfig {
            num_classes,
            prevalence: vec![prevalence; num_classes],
            coverage: vec![d.num_videos; num_classes],
            seed,
            ..d
        }
    }

    pub fn total_frames(&self) -> usize {
        self.num_videos * self.frames_per_video
    }

    fn target_count(&self, class: usize) -> usize {
        (self.prevalence[class] * self.total_frames() as f64).round() as usize
    }

    fn episode_mean(&self, class: usize) -> f64 {
        self.episode_mean
            .get(class)
            .copied()
            .unwrap_or_else(|| (self.frames_per_video as f64 / 10.0).max(1.0))
    }

    pub fn tool_names(&self) -> Vec<String> {
        class_names(self.vocabulary, self.num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::invalid("generator needs at least 2 classes"));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::invalid(format!("image size {}x{} is below 32x32", self.width, self.height)));
        }
        if self.num_videos == 0 || self.frames_per_video == 0 {
            return Err(Error::invalid("generator needs at least one video and one frame per video"));
        }
        if self.prevalence.len() != c || self.coverage.len() != c {
            return Err(Error::invalid(format!(
                "prevalence has {} entries and coverage {}, expected {c}",
                self.prevalence.len(),
                self.coverage.len()
            )));
        }
        if !self.episode_mean.is_empty() && self.episode_mean.len() != c {
            return Err(Error::invalid(format!("episode_mean has {} entries, expected {c}", self.episode_mean.len())));
        }
        if self.episode_mean.iter().any(|&m| !(m >= 1.0 && m.is_finite())) {
            return Err(Error::invalid("episode means must be at least 1 frame"));
        }
        if self.max_simultaneous == 0 {
            return Err(Error::invalid("max_simultaneous must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.annotator_noise) {
            return Err(Error::invalid("annotator_noise must be in [0, 1]"));
        }
        let names = self.tool_names();
        let mut demand = 0;
        for k in 0..c {
            let name = &names[k];
            let p = self.prevalence[k];
            let cov = self.coverage[k];
            let target = self.target_count(k);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("class {name}: prevalence {p} is outside [0, 1]")));
            }
            if cov > self.num_videos {
                return Err(Error::invalid(format!(
                    "class {name}: coverage {cov} exceeds the {} videos",
                    self.num_videos
                )));
            }
            if (cov == 0) != (target == 0) {
                return Err(Error::invalid(format!(
                    "class {name}: coverage {cov} is incompatible with {target} target frames"
                )));
            }
            if target < cov || target > cov * self.frames_per_video {
                return Err(Error::invalid(format!(
                    "class {name}: {target} frames cannot be spread over {cov} videos of {} frames",
                    self.frames_per_video
                )));
            }
            demand += target;
            if demand > self.max_simultaneous * self.total_frames() {
                return Err(Error::invalid(format!(
                    "class {name}: total tool frames exceed {} simultaneous tools per frame",
                    self.max_simultaneous
                )));
            }
        }
        Ok(())
    }
}

pub fn class_names(vocabulary: Vocabulary, c: usize) -> Vec<String> {
    let (base, prefix) = match vocabulary {
        Vocabulary::Tools => (&TOOL_NAMES, ""),
        Vocabulary::Source => (&SOURCE_NAMES, "src_"),
    };
    (0..c)
        .map(|k| {
            let round = k / base.len();
            let name = base[k % base.len()];
            if round == 0 {
                format!("{prefix}{name}")
            } else {
                format!("{prefix}{name}_{round}")
            }
        })
        .collect()
}

/// A run of consecutive frames of one class in one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub class: usize,
    pub start: usize,
    pub len: usize,
}

/// Per-video, per-frame class presence before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// `present[v][f][k]`
    pub present: Vec<Vec<Vec<bool>>>,
    pub episodes: Vec<Vec<Episode>>,
}

fn geometric<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = 1.0 - rng.random::<f64>();
    1 + (u.ln() / (1.0 - p).ln()).floor() as usize
}

/// Decides which frames show which class, hitting each class's target frame
/// count and video coverage exactly.
pub fn place(cfg: &GeneratorConfig) -> Result<Placement> {
    cfg.validate()?;
    let (nv, nf, c) = (cfg.num_videos, cfg.frames_per_video, cfg.num_classes);
    let names = cfg.tool_names();
    let mut present = vec![vec![vec![false; c]; nf]; nv];
    let mut counts = vec![vec![0usize; nf]; nv];
    let mut episodes = vec![Vec::new(); nv];
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(cfg.target_count(k)));
    for &k in &order {
        let target = cfg.target_count(k);
        if target == 0 {
            continue;
        }
        let mut rng = rng::stream(cfg.seed, &[rng::hash_str("place"), k as u64]);
        let free = |v: usize, counts: &Vec<Vec<usize>>| counts[v].iter().filter(|&&n| n < cfg.max_simultaneous).count();
        // prefer videos with more spare capacity, ties broken randomly
        let mut videos: Vec<usize> = (0..nv).collect();
        videos.shuffle(&mut rng);
        videos.sort_by_key(|&v| std::cmp::Reverse(free(v, &counts)));
        let chosen = &videos[..cfg.coverage[k]];
        let caps: Vec<usize> = chosen.iter().map(|&v| free(v, &counts)).collect();
        if caps.iter().sum::<usize>() < target || caps.contains(&0) {
            return Err(Error::invalid(format!(
                "class {}: not enough frames with room for another tool",
                names[k]
            )));
        }
        let alloc = allocate(target, &caps, &mut rng);
        for (&v, &n) in chosen.iter().zip(&alloc) {
            let mut remaining = n;
            while remaining > 0 {
                let eligible: Vec<usize> = (0..nf)
                    .filter(|&f| !present[v][f][k] && counts[v][f] < cfg.max_simultaneous)
                    .collect();
                let len = geometric(cfg.episode_mean(k), &mut rng).min(remaining);
                let start = eligible[rng.random_range(0..eligible.len())];
                let mut f = start;
                let mut placed = 0;
                while placed < len && f < nf && !present[v][f][k] && counts[v][f] < cfg.max_simultaneous {
                    present[v][f][k] = true;
                    counts[v][f] += 1;
                    placed += 1;
                    f += 1;
                }
                episodes[v].push(Episode { class: k, start, len: placed });
                remaining -= placed;
            }
        }
    }
    for eps in &mut episodes {
        eps.sort_by_key(|e| (e.start, e.class));
    }
    Ok(Placement { present, episodes })
}

/// Splits `total` over slots with capacities `caps`, at least one each.
fn allocate<R: Rng + ?Sized>(total: usize, caps: &[usize], rng: &mut R) -> Vec<usize> {
    let weights: Vec<f64> = caps.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let mut alloc = vec![1usize; caps.len()];
    let mut left = total - caps.len();
    while left > 0 {
        let open: Vec<usize> = (0..caps.len()).filter(|&i| alloc[i] < caps[i]).collect();
        let wsum: f64 = open.iter().map(|&i| weights[i]).sum();
        let mut given = 0;
        for &i in &open {
            let share = ((left as f64) * weights[i] / wsum).floor() as usize;
            let add = share.min(caps[i] - alloc[i]).min(left - given);
            alloc[i] += add;
            given += add;
        }
        if given == 0 {
            // fewer units than open slots: hand them out one at a time
            alloc[open[rng.random_range(0..open.len())]] += 1;
            given = 1;
        }
        left -= given;
    }
    alloc
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Bar,
    Fork,
    Hook,
    Paddle,
    RingTip,
    Taper,
    Arc,
    Cross,
    Zigzag,
    Dashes,
    TwinBar,
    Triangle,
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Segment { a: [f64; 2], b: [f64; 2], half_width: f64 },
    Disk { c: [f64; 2], r: f64 },
    Ring { c: [f64; 2], r: f64, half_width: f64 },
}

impl Primitive {
    fn coverage(&self, p: [f64; 2]) -> f64 {
        let edge = match *self {
            Primitive::Segment { a, b, half_width } => half_width - segment_distance(p, a, b),
            Primitive::Disk { c, r } => r - dist(p, c),
            Primitive::Ring { c, r, half_width } => half_width - (dist(p, c) - r).abs(),
        };
        (edge + 0.5).clamp(0.0, 1.0)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

struct ClassStyle {
    kind: Kind,
    color: [f64; 3],
    /// Shaft width as a fraction of the image width.
    width_frac: f64,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn style(vocabulary: Vocabulary, k: usize) -> ClassStyle {
    const TOOL_KINDS: [Kind; 6] = [Kind::Bar, Kind::Fork, Kind::Hook, Kind::Paddle, Kind::RingTip, Kind::Taper];
    const SOURCE_KINDS: [Kind; 6] = [Kind::Arc, Kind::Cross, Kind::Zigzag, Kind::Dashes, Kind::TwinBar, Kind::Triangle];
    // hues away from the red/orange background
    const HUES: [f64; 6] = [0.15, 0.3, 0.45, 0.58, 0.7, 0.82];
    let (kinds, hue_offset) = match vocabulary {
        Vocabulary::Tools => (&TOOL_KINDS, 0.0),
        Vocabulary::Source => (&SOURCE_KINDS, 0.04),
    };
    let round = k / kinds.len();
    ClassStyle {
        kind: kinds[k % kinds.len()],
        color: hsv(HUES[k % 6] + hue_offset + 0.03 * round as f64, 0.85, 0.95),
        width_frac: 0.04 + 0.004 * (k % 6) as f64,
    }
}

/// Pose of one tool in one frame, in pixels.
#[derive(Debug, Clone, Copy)]
struct Pose {
    tip: [f64; 2],
    /// Unit vector from the tip back along the shaft.
    dir: [f64; 2],
}

fn shapes(kind: Kind, pose: Pose, half_width: f64, scale: f64) -> Vec<Primitive> {
    let Pose { tip, dir } = pose;
    let normal = [-dir[1], dir[0]];
    let at = |along: f64, across: f64| {
        [
            tip[0] + dir[0] * along + normal[0] * across,
            tip[1] + dir[1] * along + normal[1] * across,
        ]
    };
    let far = 2.0 * scale;
    let hw = half_width;
    let seg = |a: [f64; 2], b: [f64; 2], half_width: f64| Primitive::Segment { a, b, half_width };
    match kind {
        Kind::Bar => vec![seg(tip, at(far, 0.0), hw)],
        Kind::Fork => vec![
            seg(at(0.18 * scale, 0.0), at(far, 0.0), hw),
            seg(at(0.18 * scale, 0.0), at(0.0, 0.07 * scale), hw * 0.8),
            seg(at(0.18 * scale, 0.0), at(0.0, -0.07 * scale), hw * 0.8),
        ],
        Kind::Hook => vec![seg(tip, at(far, 0.0), hw), seg(tip, at(0.0, 0.1 * scale), hw)],
        Kind::Paddle => vec![seg(at(0.05 * scale, 0.0), at(far, 0.0), hw * 0.8), Primitive::Disk { c: tip, r: 2.4 * hw }],
        Kind::RingTip => vec![
            seg(at(0.09 * scale, 0.0), at(far, 0.0), hw),
            Primitive::Ring {
                c: tip,
                r: 0.06 * scale,
                half_width: hw * 0.7,
            },
        ],
        Kind::Taper => vec![
            seg(at(0.2 * scale, 0.0), at(far, 0.0), hw * 1.5),
            seg(tip, at(0.2 * scale, 0.0), hw * 0.6),
        ],
        Kind::Arc => {
            let c = at(0.0, 0.35 * scale);
            let r = 0.35 * scale;
            (0..8)
                .map(|i| {
                    let a0 = -PI / 2.0 + i as f64 * 0.12;
                    let a1 = a0 + 0.12;
                    let p = |a: f64| {
                        [
                            c[0] + r * (a.cos() * normal[0] + a.sin() * dir[0]),
                            c[1] + r * (a.cos() * normal[1] + a.sin() * dir[1]),
                        ]
                    };
                    seg(p(a0), p(a1), hw)
                })
                .collect()
        }
        Kind::Cross => vec![
            seg(tip, at(far, 0.0), hw),
            seg(at(0.12 * scale, -0.1 * scale), at(0.12 * scale, 0.1 * scale), hw),
        ],
        Kind::Zigzag => (0..6)
            .map(|i| {
                let s = |j: usize| at(j as f64 * 0.09 * scale, if j.is_multiple_of(2) { 0.0 } else { 0.05 * scale });
                seg(s(i), s(i + 1), hw * 0.8)
            })
            .collect(),
        Kind::Dashes => (0..5)
            .map(|i| seg(at(i as f64 * 0.14 * scale, 0.0), at((i as f64 * 0.14 + 0.08) * scale, 0.0), hw))
            .collect(),
        Kind::TwinBar => vec![
            seg(at(0.0, 0.03 * scale), at(far, 0.03 * scale), hw * 0.7),
            seg(at(0.0, -0.03 * scale), at(far, -0.03 * scale), hw * 0.7),
        ],
        Kind::Triangle => {
            let a = tip;
            let b = at(0.16 * scale, 0.08 * scale);
            let c = at(0.16 * scale, -0.08 * scale);
            vec![seg(a, b, hw * 0.7), seg(b, c, hw * 0.7), seg(c, a, hw * 0.7), seg(at(0.16 * scale, 0.0), at(far, 0.0), hw * 0.7)]
        }
    }
}

/// Per-video appearance of the eye background.
struct Scene {
    center: [f64; 2],
    eye_radius: f64,
    pupil_radius: f64,
    skin: [f64; 3],
    sclera: [f64; 3],
    reflex: [f64; 3],
    /// (amplitude, frequency x, frequency y, phase)
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Scene {
    fn sample(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Scene {
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let s = w.min(h);
        let jitter = |rng: &mut ChaCha8Rng, c: [f64; 3]| c.map(|v: f64| (v + rng.random_range(-0.06..0.06)).clamp(0.0, 1.0));
        let waves = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.01..0.04),
                    rng.random_range(1.0..5.0) * 2.0 * PI / w,
                    rng.random_range(1.0..5.0) * 2.0 * PI / h,
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Scene {
            center: [w / 2.0 + rng.random_range(-0.05..0.05) * w, h / 2.0 + rng.random_range(-0.05..0.05) * h],
            eye_radius: s * rng.random_range(0.4..0.46),
            pupil_radius: s * rng.random_range(0.2..0.26),
            skin: jitter(rng, [0.72, 0.45, 0.38]),
            sclera: jitter(rng, [0.86, 0.8, 0.76]),
            reflex: jitter(rng, [0.7, 0.3, 0.12]),
            waves,
        }
    }

    fn background(&self, x: f64, y: f64) -> [f64; 3] {
        let r = dist([x, y], self.center);
        let texture: f64 = self.waves.iter().map(|&(a, fx, fy, ph)| a * (fx * x + fy * y + ph).sin()).sum();
        let blend = |a: [f64; 3], b: [f64; 3], t: f64| [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t);
        let eye_t = (r - self.eye_radius + 0.5).clamp(0.0, 1.0);
        let pupil_t = (r - self.pupil_radius + 0.5).clamp(0.0, 1.0);
        let shade = 1.0 - 0.25 * (r / self.pupil_radius).min(1.0).powi(2);
        let inner = blend(self.reflex.map(|v| v * shade), self.sclera, pupil_t);
        let base = blend(inner, self.skin, eye_t);
        base.map(|v| v + texture)
    }
}

/// Episode pose: tip position and shaft direction, with slow drift.
#[derive(Debug, Clone, Copy)]
struct EpisodePose {
    tip: [f64; 2],
    angle: f64,
    drift: [f64; 2],
}

impl EpisodePose {
    fn sample(scene: &Scene, rng: &mut ChaCha8Rng) -> EpisodePose {
        let phi = rng.random_range(0.0..2.0 * PI);
        let rho = rng.random_range(0.0..0.7) * scene.eye_radius;
        let tip = [scene.center[0] + rho * phi.cos(), scene.center[1] + rho * phi.sin()];
        EpisodePose {
            tip,
            angle: phi + rng.random_range(-0.6..0.6),
            drift: [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)],
        }
    }
}

fn render_video(cfg: &GeneratorConfig, v: usize, placement: &Placement) -> Vec<RgbFrame> {
    let (w, h) = (cfg.width, cfg.height);
    let scale = w.min(h) as f64;
    let mut rng = rng::stream(cfg.seed, &[rng::hash_str("render"), v as u64]);
    let scene = Scene::sample(cfg, &mut rng);
    let episodes = &placement.episodes[v];
    let poses: Vec<EpisodePose> = episodes.iter().map(|_| EpisodePose::sample(&scene, &mut rng)).collect();
    let styles: Vec<ClassStyle> = (0..cfg.num_classes).map(|k| style(cfg.vocabulary, k)).collect();
    let noise = Normal::new(0.0, 0.01).expect("valid normal");
    let mut bg = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            bg[y * w + x] = scene.background(x as f64 + 0.5, y as f64 + 0.5);
        }
    }
    let mut frames = Vec::with_capacity(cfg.frames_per_video);
    for f in 0..cfg.frames_per_video {
        let mut tools: Vec<(usize, Vec<Primitive>)> = Vec::new();
        for (e, ep) in episodes.iter().enumerate() {
            if f < ep.start || f >= ep.start + ep.len || !placement.present[v][f][ep.class] {
                continue;
            }
            let t = (f - ep.start) as f64;
            let p = poses[e];
            let jitter = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let tip = [p.tip[0] + p.drift[0] * t + jitter[0], p.tip[1] + p.drift[1] * t + jitter[1]];
            let angle = p.angle + rng.random_range(-0.03..0.03);
            let st = &styles[ep.class];
            let pose = Pose {
                tip,
                dir: [angle.cos(), angle.sin()],
            };
            tools.push((ep.class, shapes(st.kind, pose, st.width_frac * w as f64 / 2.0, scale)));
        }
        tools.sort_by_key(|(k, _)| *k);
        let mut pixels = Vec::with_capacity(3 * w * h);
        for y in 0..h {
            for x in 0..w {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let mut px = bg[y * w + x];
                for (k, prims) in &tools {
                    let a = prims.iter().map(|q| q.coverage(p)).fold(0.0, f64::max);
                    if a > 0.0 {
                        let col = styles[*k].color;
                        for c in 0..3 {
                            px[c] = px[c] * (1.0 - a) + col[c] * a;
                        }
                    }
                }
                for c in px {
                    let v = c + noise.sample(&mut rng);
                    pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        frames.push(RgbFrame {
            width: w,
            height: h,
            pixels,
        });
    }
    frames
}

pub fn video_id(v: usize) -> String {
    format!("video{v:02}")
}

/// Builds the dataset in memory; frames carry their pixels directly.
pub fn generate(cfg: &GeneratorConfig) -> Result<DatasetManifest> {
    let placement = place(cfg)?;
    let tool_names = cfg.tool_names();
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let frames = render_video(cfg, v, &placement);
        let mut noise_rng = rng::stream(cfg.seed, &[rng::hash_str("annotators"), v as u64]);
        let id = video_id(v);
        let entries = frames
            .into_iter()
            .enumerate()
            .map(|(f, frame)| {
                let present = placement.present[v][f].clone();
                let evaluate = (0..cfg.num_classes)
                    .map(|_| cfg.annotator_noise == 0.0 || noise_rng.random::<f64>() >= cfg.annotator_noise)
                    .collect();
                FrameEntry {
                    key: FrameKey {
                        video_id: id.clone(),
                        frame_index: f,
                    },
                    image: FrameImage::Memory(Arc::new(frame)),
                    labels: LabelVector { present, evaluate },
                }
            })
            .collect();
        videos.push(VideoRecord {
            video_id: id,
            frames: entries,
        });
    }
    let manifest = DatasetManifest { tool_names, videos };
    manifest.validate()?;
    Ok(manifest)
}

/// Same machinery with the disjoint source vocabulary and an independent
/// seed, so source labels are unrelated to target labels.
pub fn generate_source_task(cfg: &GeneratorConfig) -> Result<DatasetManifest> {
    generate(&GeneratorConfig {
        vocabulary: Vocabulary::Source,
        seed: rng::derive_seed(cfg.seed, &[rng::hash_str("source")]),
        ..cfg.clone()
    })
}

/// Writes `manifest.json`, per-video annotation CSVs and PNG frames under
/// `dir`. A second annotator file is written for videos with masked cells;
/// it holds the flipped label at every masked cell.
pub fn write_dataset(manifest: &DatasetManifest, dir: &Path) -> Result<std::path::PathBuf> {
    let ann_dir = dir.join("annotations");
    std::fs::create_dir_all(&ann_dir).map_err(|e| Error::io(&ann_dir, e))?;
    let mut videos = Vec::new();
    for v in &manifest.videos {
        let frame_dir = Path::new("frames").join(&v.video_id);
        let abs_frames = dir.join(&frame_dir);
        std::fs::create_dir_all(&abs_frames).map_err(|e| Error::io(&abs_frames, e))?;
        for f in &v.frames {
            let frame = f.image.load()?;
            frame.save(&abs_frames.join(manifest::frame_file_name(f.key.frame_index)))?;
        }
        let first: Vec<(usize, Vec<bool>)> = v.frames.iter().map(|f| (f.key.frame_index, f.labels.present.clone())).collect();
        let annotations = Path::new("annotations").join(format!("{}.csv", v.video_id));
        manifest::write_annotations(&dir.join(&annotations), &manifest.tool_names, &first)?;
        let masked = v.frames.iter().any(|f| f.labels.evaluate.iter().any(|&e| !e));
        let second_annotations = if masked {
            let second: Vec<(usize, Vec<bool>)> = v
                .frames
                .iter()
                .map(|f| {
                    let l = &f.labels;
                    (f.key.frame_index, l.present.iter().zip(&l.evaluate).map(|(&p, &e)| if e { p } else { !p }).collect())
                })
                .collect();
            let p = Path::new("annotations").join(format!("{}_b.csv", v.video_id));
            manifest::write_annotations(&dir.join(&p), &manifest.tool_names, &second)?;
            Some(p)
        } else {
            None
        };
        videos.push(ManifestVideo {
            video_id: v.video_id.clone(),
            frame_dir,
            annotations,
            second_annotations,
        });
    }
    let file = ManifestFile {
        tool_names: manifest.tool_names.clone(),
        videos,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&file).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            num_videos: 4,
            frames_per_video: 30,
            num_classes: 3,
            width: 32,
            height: 32,
            prevalence: vec![0.3, 0.2, 0.1],
            coverage: vec![4, 2, 1],
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn placement_hits_targets_and_coverage() {
        let cfg = small();
        let p = place(&cfg).unwrap();
        for k in 0..3 {
            let total: usize = p.present.iter().flatten().filter(|f| f[k]).count();
            assert_eq!(total, cfg.target_count(k));
            let videos = p.present.iter().filter(|v| v.iter().any(|f| f[k])).count();
            assert_eq!(videos, cfg.coverage[k]);
        }
        assert!(p.present.iter().flatten().all(|f| f.iter().filter(|&&b| b).count() <= 3));
    }

    #[test]
    fn unsatisfiable_profile_names_class() {
        let mut cfg = small();
        cfg.coverage[1] = 9;
        let err = place(&cfg).unwrap_err().to_string();
        assert!(err.contains("forceps"), "{err}");
        let mut cfg = small();
        cfg.prevalence = vec![1.0, 1.0, 1.0];
        cfg.coverage = vec![4, 4, 4];
        cfg.max_simultaneous = 2;
        assert!(place(&cfg).unwrap_err().to_string().contains("hook"));
    }

    #[test]
    fn deterministic_and_vocabularies_disjoint() {
        let cfg = small();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let s = generate_source_task(&cfg).unwrap();
        assert!(s.tool_names.iter().all(|n| !a.tool_names.contains(n)));
        assert!(a.frames().zip(s.frames()).any(|(x, y)| x.image != y.image));
    }

    #[test]
    fn noise_zero_means_all_evaluated() {
        let m = generate(&small()).unwrap();
        assert!(m.frames().all(|f| f.labels.evaluate.iter().all(|&e| e)));
        let mut cfg = small();
        cfg.annotator_noise = 0.2;
        let m = generate(&cfg).unwrap();
        let masked = m.frames().flat_map(|f| f.labels.evaluate.iter()).filter(|&&e| !e).count();
        assert!(masked > 0);
    }

    #[test]
    fn class_names_extend_past_base() {
        let names = class_names(Vocabulary::Tools, 8);
        assert_eq!(names[6], "cannula_1");
        assert_eq!(class_names(Vocabulary::Source, 1), vec!["src_arc".to_string()]);
    }
}

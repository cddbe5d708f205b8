//! Procedural identity dataset.
//!
//! Each identity is a fixed latent vector describing a layered "face":
//! background, hair cap, face ellipse with a fine oriented texture, eyes,
//! brows, nose and mouth. Every image of an identity re-renders that latent
//! with independent jitter (global shift, brightness offset, pixel noise).
//! Rendering is quantized to 8 bits so the in-memory records equal what is
//! decoded back from the written PNGs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{write_png, DatasetManifest, ManifestRecord, Split};
use crate::error::{invalid, IoContext, Result};
use crate::imaging::{Image, ImageRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Jitter {
    pub pose_shift_px: f64,
    pub brightness_range: f64,
    pub noise_sigma: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            pose_shift_px: 4.0,
            brightness_range: 0.06,
            noise_sigma: 0.02,
        }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Self {
            pose_shift_px: 0.0,
            brightness_range: 0.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDatasetConfig {
    pub num_identities: usize,
    pub images_per_identity: usize,
    /// `[height, width]` in pixels.
    pub image_size: [usize; 2],
    pub jitter: Jitter,
    pub seed: u64,
    /// Per-identity fraction of images held out for validation.
    pub val_fraction: f64,
    /// Per-identity fraction of images held out for evaluation (gallery + probe).
    pub eval_fraction: f64,
    /// Share of the evaluation images enrolled in the gallery.
    pub gallery_fraction: f64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            num_identities: 32,
            images_per_identity: 40,
            image_size: [137, 180],
            jitter: Jitter::default(),
            seed: 0,
            val_fraction: 0.1,
            eval_fraction: 0.2,
            gallery_fraction: 0.5,
        }
    }
}

impl SyntheticDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(invalid("num_identities must be at least 2"));
        }
        if self.images_per_identity < 2 {
            return Err(invalid("images_per_identity must be at least 2"));
        }
        if self.image_size.iter().any(|&s| s < 8) {
            return Err(invalid("image sides must be at least 8 pixels"));
        }
        let j = &self.jitter;
        if [j.pose_shift_px, j.brightness_range, j.noise_sigma]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(invalid("jitter amplitudes must be non-negative"));
        }
        for f in [self.val_fraction, self.eval_fraction, self.gallery_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid("split fractions must lie in [0, 1]"));
            }
        }
        if self.val_fraction + self.eval_fraction >= 1.0 {
            return Err(invalid("val_fraction + eval_fraction must leave training images"));
        }
        Ok(())
    }

    /// `(gallery, probe, val, train)` image counts per identity.
    pub fn split_counts(&self) -> (usize, usize, usize, usize) {
        let n = self.images_per_identity;
        let round = |x: f64| x.round_ties_even() as usize;
        let eval = round(self.eval_fraction * n as f64).min(n - 1);
        let gallery = round(self.gallery_fraction * eval as f64).min(eval);
        let val = round(self.val_fraction * n as f64).min(n - 1 - eval);
        (gallery, eval - gallery, val, n - eval - val)
    }

    fn split_of(&self, index: usize) -> Split {
        let (g, p, v, _) = self.split_counts();
        if index < g {
            Split::Gallery
        } else if index < g + p {
            Split::Probe
        } else if index < g + p + v {
            Split::Val
        } else {
            Split::Train
        }
    }
}

/// Geometry and tone parameters of one identity, in normalized coordinates
/// (`y` in units of image height, `x` in units of image width).
#[derive(Debug, Clone, PartialEq)]
struct Latent {
    background: f64,
    face_cy: f64,
    face_cx: f64,
    face_ry: f64,
    face_rx: f64,
    skin: f64,
    hair: f64,
    hair_lift: f64,
    hair_width: f64,
    eye_dy: f64,
    eye_dx: f64,
    eye_r: f64,
    eye_tone: f64,
    brow_gap: f64,
    brow_tone: f64,
    nose_len: f64,
    mouth_dy: f64,
    mouth_w: f64,
    mouth_tone: f64,
    tex_freq: f64,
    tex_angle: f64,
    tex_phase: f64,
    tex_amp: f64,
}

impl Latent {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        Self {
            background: u(0.05, 0.45),
            face_cy: u(0.46, 0.56),
            face_cx: u(0.42, 0.58),
            face_ry: u(0.30, 0.42),
            face_rx: u(0.17, 0.27),
            skin: u(0.45, 0.9),
            hair: u(0.0, 0.5),
            hair_lift: u(0.03, 0.14),
            hair_width: u(1.0, 1.25),
            eye_dy: u(0.06, 0.16),
            eye_dx: u(0.06, 0.12),
            eye_r: u(0.025, 0.05),
            eye_tone: u(0.0, 0.3),
            brow_gap: u(0.04, 0.08),
            brow_tone: u(0.05, 0.45),
            nose_len: u(0.05, 0.14),
            mouth_dy: u(0.12, 0.24),
            mouth_w: u(0.04, 0.11),
            mouth_tone: u(0.1, 0.45),
            tex_freq: u(0.08, 0.2),
            tex_angle: u(0.0, std::f64::consts::PI),
            tex_phase: u(0.0, std::f64::consts::TAU),
            tex_amp: u(0.04, 0.1),
        }
    }
}

/// Fraction of the pixel at `(y, x)` covered by an axis-aligned ellipse, with
/// a one-pixel soft edge.
fn coverage(y: f64, x: f64, cy: f64, cx: f64, ry: f64, rx: f64) -> f64 {
    let d = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
    (0.5 + (1.0 - d) * ry.min(rx)).clamp(0.0, 1.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

struct ImageJitter {
    dy: f64,
    dx: f64,
    brightness: f64,
}

fn render(latent: &Latent, jitter: &ImageJitter, h: usize, w: usize, noise: &mut dyn FnMut() -> f64) -> Image {
    let (hf, wf) = (h as f64, w as f64);
    let l = latent;
    let cy = l.face_cy * hf + jitter.dy;
    let cx = l.face_cx * wf + jitter.dx;
    let (fry, frx) = (l.face_ry * hf, l.face_rx * wf);
    let (dir_y, dir_x) = (l.tex_angle.sin(), l.tex_angle.cos());
    let eye_y = cy - l.eye_dy * hf;
    let eye_r = l.eye_r * hf;
    let brow_y = eye_y - l.brow_gap * hf;
    let mouth_y = cy + l.mouth_dy * hf;
    let mut data = Vec::with_capacity(h * w);
    for yi in 0..h {
        for xi in 0..w {
            let (y, x) = (yi as f64 + 0.5, xi as f64 + 0.5);
            let mut v = l.background;
            v = lerp(
                v,
                l.hair,
                coverage(y, x, cy - l.hair_lift * hf, cx, fry * 1.05, frx * l.hair_width),
            );
            let texture = l.tex_amp
                * (std::f64::consts::TAU * l.tex_freq * (y * dir_y + x * dir_x) + l.tex_phase).sin();
            v = lerp(v, l.skin + texture, coverage(y, x, cy, cx, fry, frx));
            for side in [-1.0, 1.0] {
                let ex = cx + side * l.eye_dx * wf;
                v = lerp(v, l.brow_tone, coverage(y, x, brow_y, ex, eye_r * 0.35, eye_r * 1.6));
                v = lerp(v, l.eye_tone, coverage(y, x, eye_y, ex, eye_r, eye_r * 1.4));
            }
            let nose_half = l.nose_len * hf * 0.5;
            v = lerp(v, l.skin * 0.7, coverage(y, x, cy + nose_half * 0.4, cx, nose_half, 0.02 * wf));
            v = lerp(v, l.mouth_tone, coverage(y, x, mouth_y, cx, 0.025 * hf, l.mouth_w * wf));
            v += jitter.brightness + noise();
            data.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }
    Image::new(h, w, 1, data).expect("rendered values are clamped")
}

const JITTER_SALT: u64 = 0x5bd1_e995_cafe_f00d;

fn identity_latent(seed: u64, identity: usize) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(identity as u64);
    Latent::sample(&mut rng)
}

fn render_one(cfg: &SyntheticDatasetConfig, latent: &Latent, identity: usize, index: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ JITTER_SALT);
    rng.set_stream(((identity as u64) << 32) | index as u64);
    let j = &cfg.jitter;
    let mut sym = |amp: f64| if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
    let jitter = ImageJitter {
        dy: sym(j.pose_shift_px),
        dx: sym(j.pose_shift_px),
        brightness: sym(j.brightness_range),
    };
    let normal = Normal::new(0.0, j.noise_sigma).expect("sigma validated non-negative");
    let mut noise = || if j.noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
    render(latent, &jitter, cfg.image_size[0], cfg.image_size[1], &mut noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub record: ImageRecord,
    pub split: Split,
    /// Position of the image within its identity.
    pub index: usize,
}

/// Mean RMS pixel distance within and across identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub intra: f64,
    pub inter: f64,
    pub ratio: f64,
}

fn rms(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    (a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

/// Intra-identity distance averages all pairs within each identity;
/// inter-identity distance pairs image `i` of identity `a` with image `i` of
/// every other identity `b > a`.
pub fn self_check(samples: &[SyntheticSample], num_identities: usize, per_identity: usize) -> SelfCheck {
    let at = |id: usize, i: usize| &samples[id * per_identity + i].record.image;
    let (mut intra, mut n_intra) = (0.0, 0usize);
    for id in 0..num_identities {
        for i in 0..per_identity {
            for j in i + 1..per_identity {
                intra += rms(at(id, i), at(id, j));
                n_intra += 1;
            }
        }
    }
    let (mut inter, mut n_inter) = (0.0, 0usize);
    for a in 0..num_identities {
        for b in a + 1..num_identities {
            for i in 0..per_identity {
                inter += rms(at(a, i), at(b, i));
                n_inter += 1;
            }
        }
    }
    let intra = intra / n_intra.max(1) as f64;
    let inter = inter / n_inter.max(1) as f64;
    SelfCheck {
        intra,
        inter,
        ratio: intra / inter,
    }
}

/// Renders the whole dataset in memory, identity-major.
pub fn render_synthetic(cfg: &SyntheticDatasetConfig) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.num_identities * cfg.images_per_identity);
    for identity in 0..cfg.num_identities {
        let latent = identity_latent(cfg.seed, identity);
        for index in 0..cfg.images_per_identity {
            let image = render_one(cfg, &latent, identity, index);
            let media_id = (identity * cfg.images_per_identity + index) as u32;
            out.push(SyntheticSample {
                record: ImageRecord::new(image, identity as u32, media_id),
                split: cfg.split_of(index),
                index,
            });
        }
    }
    Ok(out)
}

pub fn identity_name(identity: usize) -> String {
    format!("id_{identity:04}")
}

pub fn sample_path(identity: usize, index: usize) -> String {
    format!("{}/img_{index:04}.png", identity_name(identity))
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub manifest: DatasetManifest,
    pub self_check: SelfCheck,
    pub samples: Vec<SyntheticSample>,
}

/// Renders the dataset, writes one PNG per image plus `manifest.json`, and
/// verifies that identities are more similar to themselves than to others.
pub fn generate_synthetic(cfg: &SyntheticDatasetConfig, out_dir: &Path) -> Result<SyntheticOutput> {
    let samples = render_synthetic(cfg)?;
    let check = self_check(&samples, cfg.num_identities, cfg.images_per_identity);
    if !(check.ratio < 1.0) {
        return Err(invalid(format!(
            "generator self-check failed: intra/inter distance ratio {:.3}",
            check.ratio
        )));
    }
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = sample_path(s.record.identity as usize, s.index);
        write_png(&s.record.image, &out_dir.join(&rel))?;
        records.push(ManifestRecord {
            path: rel,
            identity: s.record.identity,
            media_id: s.record.media_id,
            split: s.split,
        });
    }
    let names = (0..cfg.num_identities).map(identity_name).collect();
    let manifest = DatasetManifest::build(out_dir, names, records)?;
    manifest.save(out_dir)?;
    Ok(SyntheticOutput {
        manifest,
        self_check: check,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticDatasetConfig {
        SyntheticDatasetConfig {
            num_identities: 3,
            images_per_identity: 4,
            image_size: [24, 32],
            ..Default::default()
        }
    }

    #[test]
    fn default_split_counts() {
        assert_eq!(SyntheticDatasetConfig::default().split_counts(), (4, 4, 4, 28));
        let c = SyntheticDatasetConfig {
            images_per_identity: 20,
            ..Default::default()
        };
        assert_eq!(c.split_counts(), (2, 2, 2, 14));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_synthetic(&small()).unwrap();
        let b = render_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let other = render_synthetic(&SyntheticDatasetConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn zero_jitter_gives_identical_images_per_identity() {
        let cfg = SyntheticDatasetConfig {
            jitter: Jitter::none(),
            ..small()
        };
        let s = render_synthetic(&cfg).unwrap();
        for id in 0..3 {
            for i in 1..4 {
                assert_eq!(s[id * 4].record.image, s[id * 4 + i].record.image);
            }
        }
        assert_ne!(s[0].record.image, s[4].record.image);
    }

    #[test]
    fn self_check_separates_identities() {
        let cfg = SyntheticDatasetConfig {
            num_identities: 6,
            images_per_identity: 5,
            ..Default::default()
        };
        let s = render_synthetic(&cfg).unwrap();
        let c = self_check(&s, 6, 5);
        assert!(c.ratio < 1.0, "{c:?}");
    }

    #[test]
    fn config_validation() {
        assert!(SyntheticDatasetConfig { num_identities: 1, ..small() }.validate().is_err());
        assert!(SyntheticDatasetConfig { val_fraction: 0.5, eval_fraction: 0.5, ..small() }
            .validate()
            .is_err());
        let bad = SyntheticDatasetConfig {
            jitter: Jitter {
                noise_sigma: -1.0,
                ..Jitter::default()
            },
            ..small()
        };
        assert!(bad.validate().is_err());
    }
}

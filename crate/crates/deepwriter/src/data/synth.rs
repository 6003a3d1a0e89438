//! Procedural pseudo-handwriting corpus. Each writer gets a style vector
//! (stroke thickness, slant, curvature jitter, glyph spacing, baseline
//! wobble) that modulates how a shared glyph alphabet is rendered; content
//! varies per sample, style per writer. Rasterization is pure fixed-point
//! integer arithmetic so a given corpus seed produces byte-identical files
//! on every platform.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::image_io::write_pgm;
use crate::data::manifest::{split_per_writer, write_manifest_relative, ManifestEntry};
use crate::error::{DwError, Result};
use crate::patching::GrayImage;

/// Which glyph alphabet to render; the two modes act as disjoint synthetic
/// "languages" for transfer experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphMode {
    Rounded,
    Angular,
}

/// Seed-derived per-writer rendering parameters. Units are fixed-point:
/// thickness and curvature in 1/16 px, slant in 1/256 px-per-px.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriterStyle {
    pub thickness: u32,
    pub slant: i32,
    pub curvature: u32,
    pub spacing: u32,
    pub wobble: u32,
    /// Seed for writer-consistent letterform jitter.
    pub seed: u64,
}

pub const THICKNESS_RANGE: (u32, u32) = (14, 52); // 0.9 .. 3.25 px radius
pub const SLANT_RANGE: (i32, i32) = (-72, 72); // about +-0.28 shear
pub const CURVATURE_RANGE: (u32, u32) = (0, 72); // up to 4.5 px jitter
pub const SPACING_RANGE: (u32, u32) = (32, 58); // px advance per glyph
pub const WOBBLE_RANGE: (u32, u32) = (0, 7); // px baseline amplitude

fn sample_style<R: Rng>(rng: &mut R) -> WriterStyle {
    WriterStyle {
        thickness: rng.gen_range(THICKNESS_RANGE.0..=THICKNESS_RANGE.1),
        slant: rng.gen_range(SLANT_RANGE.0..=SLANT_RANGE.1),
        curvature: rng.gen_range(CURVATURE_RANGE.0..=CURVATURE_RANGE.1),
        spacing: rng.gen_range(SPACING_RANGE.0..=SPACING_RANGE.1),
        wobble: rng.gen_range(WOBBLE_RANGE.0..=WOBBLE_RANGE.1),
        seed: rng.gen(),
    }
}

fn differs_enough(a: &WriterStyle, b: &WriterStyle) -> bool {
    // at least 2 of the 5 parameters must differ by >= 10% of their range
    let checks = [
        (a.thickness as i64 - b.thickness as i64).unsigned_abs() * 10
            >= (THICKNESS_RANGE.1 - THICKNESS_RANGE.0) as u64,
        (a.slant as i64 - b.slant as i64).unsigned_abs() * 10
            >= (SLANT_RANGE.1 - SLANT_RANGE.0) as u64,
        (a.curvature as i64 - b.curvature as i64).unsigned_abs() * 10
            >= (CURVATURE_RANGE.1 - CURVATURE_RANGE.0) as u64,
        (a.spacing as i64 - b.spacing as i64).unsigned_abs() * 10
            >= (SPACING_RANGE.1 - SPACING_RANGE.0) as u64,
        (a.wobble as i64 - b.wobble as i64).unsigned_abs() * 10
            >= (WOBBLE_RANGE.1 - WOBBLE_RANGE.0) as u64,
    ];
    checks.iter().filter(|&&c| c).count() >= 2
}

/// Styles for `num_writers` writers, rejection-sampled so every pair is
/// separated under the 2-of-5 rule.
pub fn writer_styles(num_writers: usize, corpus_seed: u64) -> Result<Vec<WriterStyle>> {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed.wrapping_mul(0x6a09e667f3bcc909));
    let mut styles: Vec<WriterStyle> = Vec::with_capacity(num_writers);
    let mut attempts = 0usize;
    while styles.len() < num_writers {
        let cand = sample_style(&mut rng);
        if styles.iter().all(|s| differs_enough(s, &cand)) {
            styles.push(cand);
        }
        attempts += 1;
        if attempts > 100_000 {
            return Err(DwError::Domain(format!(
                "could not separate {num_writers} writer styles"
            )));
        }
    }
    Ok(styles)
}

/// Quadratic curve: start, control, end. Coordinates live in a 32x48 glyph
/// box with the baseline at y = 40.
type Curve = [(i32, i32); 3];

fn line(a: (i32, i32), b: (i32, i32)) -> Curve {
    [a, ((a.0 + b.0) / 2, (a.1 + b.1) / 2), b]
}

fn rounded_glyphs() -> Vec<Vec<Curve>> {
    vec![
        // o
        vec![
            [(16, 12), (28, 12), (28, 26)],
            [(28, 26), (28, 40), (16, 40)],
            [(16, 40), (4, 40), (4, 26)],
            [(4, 26), (4, 12), (16, 12)],
        ],
        // c
        vec![
            [(28, 16), (14, 8), (6, 20)],
            [(6, 20), (2, 26), (6, 34)],
            [(6, 34), (14, 46), (28, 38)],
        ],
        // u
        vec![
            [(4, 12), (4, 38), (14, 40)],
            [(14, 40), (26, 40), (28, 28)],
            [(28, 12), (28, 30), (28, 40)],
        ],
        // n
        vec![
            [(4, 12), (4, 26), (4, 40)],
            [(4, 20), (14, 8), (24, 16)],
            [(24, 16), (28, 20), (28, 40)],
        ],
        // s
        vec![
            [(26, 14), (8, 8), (8, 20)],
            [(8, 20), (8, 26), (16, 26)],
            [(16, 26), (26, 28), (24, 36)],
            [(24, 36), (18, 44), (6, 38)],
        ],
        // e
        vec![
            [(4, 26), (28, 26), (26, 18)],
            [(26, 18), (22, 10), (14, 12)],
            [(14, 12), (2, 16), (4, 28)],
            [(4, 28), (6, 42), (26, 38)],
        ],
        // l
        vec![[(14, 0), (12, 20), (14, 40)], [(14, 40), (16, 42), (22, 40)]],
        // t
        vec![[(12, 4), (12, 24), (14, 40)], [(4, 14), (14, 12), (24, 14)]],
        // a
        vec![
            [(24, 16), (6, 10), (6, 26)],
            [(6, 26), (6, 42), (24, 36)],
            [(24, 12), (26, 26), (24, 40)],
        ],
        // h
        vec![
            [(6, 0), (6, 20), (6, 40)],
            [(6, 24), (16, 10), (26, 20)],
            [(26, 20), (28, 26), (26, 40)],
        ],
        // r
        vec![[(8, 12), (8, 26), (8, 40)], [(8, 22), (16, 8), (28, 14)]],
        // g
        vec![
            [(24, 14), (6, 10), (6, 24)],
            [(6, 24), (6, 38), (24, 34)],
            [(24, 12), (26, 30), (22, 46)],
        ],
    ]
}

fn angular_glyphs() -> Vec<Vec<Curve>> {
    vec![
        vec![line((4, 12), (28, 12)), line((28, 12), (4, 40)), line((4, 40), (28, 40))], // z
        vec![line((6, 0), (6, 40)), line((26, 12), (6, 26)), line((10, 24), (28, 40))],  // k
        vec![line((4, 12), (28, 40)), line((28, 12), (4, 40))],                          // x
        vec![
            line((2, 12), (9, 40)),
            line((9, 40), (16, 18)),
            line((16, 18), (23, 40)),
            line((23, 40), (30, 12)),
        ], // w
        vec![line((4, 12), (16, 40)), line((16, 40), (28, 12))],                         // v
        vec![line((4, 40), (4, 8)), line((4, 8), (28, 40)), line((28, 40), (28, 8))],    // N
        vec![
            line((2, 40), (2, 8)),
            line((2, 8), (16, 28)),
            line((16, 28), (30, 8)),
            line((30, 8), (30, 40)),
        ], // M
        vec![line((4, 40), (16, 8)), line((16, 8), (28, 40)), line((8, 28), (24, 28))],  // A
        vec![
            line((26, 8), (6, 8)),
            line((6, 8), (6, 40)),
            line((6, 40), (26, 40)),
            line((6, 24), (20, 24)),
        ], // E
        vec![line((4, 8), (28, 8)), line((16, 8), (16, 40))],                            // T
        vec![line((6, 8), (6, 40)), line((6, 40), (26, 40))],                            // L
        vec![line((4, 8), (16, 22)), line((28, 8), (16, 22)), line((16, 22), (16, 40))], // Y
    ]
}

/// Deterministic integer hash for writer-consistent control-point jitter:
/// shared endpoints hash identically, so jittered strokes stay connected.
fn jitter_hash(seed: u64, glyph: u64, x: i64, y: i64) -> u64 {
    let mut h = seed ^ glyph.wrapping_mul(0x9e3779b97f4a7c15);
    h ^= (x as u64).wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= (y as u64).wrapping_mul(0x94d049bb133111eb);
    h ^= h >> 31;
    h = h.wrapping_mul(0x2545f4914f6cdd1d);
    h ^ (h >> 29)
}

const INK: u8 = 40;
const BEZIER_STEPS: i64 = 64;
const WOBBLE_PERIOD: i64 = 64;

struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    /// Stamps a disk of fixed-point radius `r16` (1/16 px) centered at the
    /// fixed-point position (`cx16`, `cy16`).
    fn stamp(&mut self, cx16: i64, cy16: i64, r16: i64) {
        let r_px = (r16 / 16) + 1;
        let cx = cx16 / 16;
        let cy = cy16 / 16;
        for py in cy - r_px..=cy + r_px {
            if py < 0 || py >= self.height as i64 {
                continue;
            }
            for px in cx - r_px..=cx + r_px {
                if px < 0 || px >= self.width as i64 {
                    continue;
                }
                let dx = px * 16 + 8 - cx16;
                let dy = py * 16 + 8 - cy16;
                if dx * dx + dy * dy <= r16 * r16 {
                    let idx = py as usize * self.width + px as usize;
                    self.pixels[idx] = self.pixels[idx].min(INK);
                }
            }
        }
    }
}

fn render_glyph(
    canvas: &mut Canvas,
    glyph: &[Curve],
    glyph_id: u64,
    origin_x: i64,
    baseline_y: i64,
    style: &WriterStyle,
) {
    let jitter_amp = style.curvature as i64; // 1/16 px
    let jitter = |gx: i64, gy: i64| -> (i64, i64) {
        if jitter_amp == 0 {
            return (0, 0);
        }
        let h = jitter_hash(style.seed, glyph_id, gx, gy);
        let span = 2 * jitter_amp + 1;
        let jx = (h % span as u64) as i64 - jitter_amp;
        let jy = ((h >> 24) % span as u64) as i64 - jitter_amp;
        (jx, jy)
    };
    for curve in glyph {
        // control points in 1/16 px, jittered writer-consistently
        let mut pts16 = [(0i64, 0i64); 3];
        for (k, &(gx, gy)) in curve.iter().enumerate() {
            let (jx, jy) = jitter(gx as i64, gy as i64);
            pts16[k] = (gx as i64 * 16 + jx, gy as i64 * 16 + jy);
        }
        for i in 0..=BEZIER_STEPS {
            let a = (BEZIER_STEPS - i) * (BEZIER_STEPS - i);
            let b = 2 * (BEZIER_STEPS - i) * i;
            let c = i * i;
            let s2 = BEZIER_STEPS * BEZIER_STEPS;
            let gx16 = (a * pts16[0].0 + b * pts16[1].0 + c * pts16[2].0) / s2;
            let gy16 = (a * pts16[0].1 + b * pts16[1].1 + c * pts16[2].1) / s2;
            // shear proportional to height above the baseline (y = 40 in-box)
            let shear16 = style.slant as i64 * (40 * 16 - gy16) / 256;
            // triangle-wave baseline wobble along the pen position
            let x_abs = origin_x * 16 + gx16 + shear16;
            let phase = (style.seed % WOBBLE_PERIOD as u64) as i64;
            let pos = ((x_abs / 16 + phase) % WOBBLE_PERIOD + WOBBLE_PERIOD) % WOBBLE_PERIOD;
            let tri = if pos < WOBBLE_PERIOD / 2 {
                pos
            } else {
                WOBBLE_PERIOD - pos
            };
            let wobble16 = (tri - WOBBLE_PERIOD / 4) * style.wobble as i64 * 16
                / (WOBBLE_PERIOD / 4);
            let y_abs = (baseline_y - 40) * 16 + gy16 + wobble16;
            canvas.stamp(x_abs, y_abs, style.thickness as i64);
        }
    }
}

/// Renders one text line: a random glyph sequence in the writer's style.
fn render_sample(
    style: &WriterStyle,
    glyphs: &[Vec<Curve>],
    content_rng: &mut ChaCha8Rng,
    canvas_height: usize,
) -> GrayImage {
    let n_glyphs = content_rng.gen_range(8..=13usize);
    let margin = 10usize;
    let width = 2 * margin + 32 + (n_glyphs - 1) * style.spacing as usize;
    let mut canvas = Canvas {
        width,
        height: canvas_height,
        pixels: vec![255u8; width * canvas_height],
    };
    let baseline_y = canvas_height as i64 - 16;
    for g in 0..n_glyphs {
        let id = content_rng.gen_range(0..glyphs.len());
        let origin_x = (margin + g * style.spacing as usize) as i64;
        render_glyph(&mut canvas, &glyphs[id], id as u64, origin_x, baseline_y, style);
    }
    GrayImage::new(width, canvas_height, canvas.pixels).expect("canvas dims are positive")
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_writers: usize,
    pub samples_per_writer: usize,
    pub mode: GlyphMode,
    pub corpus_seed: u64,
    /// Canvas height in pixels; width follows from content and spacing.
    pub canvas_height: usize,
}

impl SynthConfig {
    pub fn new(num_writers: usize, samples_per_writer: usize, corpus_seed: u64) -> Self {
        SynthConfig {
            num_writers,
            samples_per_writer,
            mode: GlyphMode::Rounded,
            corpus_seed,
            canvas_height: 72,
        }
    }
}

/// Generates the corpus under `out_dir`: one PGM per sample in per-writer
/// subdirectories, plus a split `manifest.jsonl`. Byte-deterministic for a
/// given corpus seed.
pub fn generate_synthetic_corpus(
    config: &SynthConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestEntry>> {
    if config.num_writers < 2 {
        return Err(DwError::Domain("need at least 2 writers".into()));
    }
    if config.samples_per_writer < 3 {
        return Err(DwError::Domain(
            "need at least 3 samples per writer for the 4:1:1 split".into(),
        ));
    }
    if config.canvas_height < 64 {
        return Err(DwError::Domain("canvas height must be at least 64".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| DwError::Io {
        path: out_dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let glyphs = match config.mode {
        GlyphMode::Rounded => rounded_glyphs(),
        GlyphMode::Angular => angular_glyphs(),
    };
    let styles = writer_styles(config.num_writers, config.corpus_seed)?;
    let mut items: Vec<(String, PathBuf)> = Vec::new();
    for (w, style) in styles.iter().enumerate() {
        let writer = format!("writer{w:03}");
        let wdir = out_dir.join(&writer);
        fs::create_dir_all(&wdir).map_err(|e| DwError::Io {
            path: wdir.clone(),
            message: e.to_string(),
        })?;
        for s in 0..config.samples_per_writer {
            let sample_seed = config
                .corpus_seed
                .wrapping_mul(0x100000001b3)
                .wrapping_add((w as u64) << 20)
                .wrapping_add(s as u64);
            let mut content_rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let img = render_sample(style, &glyphs, &mut content_rng, config.canvas_height);
            let path = wdir.join(format!("sample{s:03}.pgm"));
            write_pgm(&img, &path)?;
            items.push((writer.clone(), path));
        }
    }
    let entries = split_per_writer(&items, config.corpus_seed)?;
    write_manifest_relative(&entries, out_dir.join("manifest.jsonl"))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn styles_are_pairwise_separated() {
        let styles = writer_styles(12, 99).unwrap();
        assert_eq!(styles.len(), 12);
        for i in 0..styles.len() {
            for j in i + 1..styles.len() {
                assert!(
                    differs_enough(&styles[i], &styles[j]),
                    "writers {i} and {j} too similar: {:?} vs {:?}",
                    styles[i],
                    styles[j]
                );
            }
        }
    }

    #[test]
    fn corpus_byte_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let config = SynthConfig::new(3, 3, 7);
        generate_synthetic_corpus(&config, d1.path()).unwrap();
        generate_synthetic_corpus(&config, d2.path()).unwrap();
        let mut files1: Vec<PathBuf> = walk(d1.path());
        let mut files2: Vec<PathBuf> = walk(d2.path());
        files1.sort();
        files2.sort();
        assert_eq!(files1.len(), files2.len());
        assert!(files1.len() >= 10); // 9 samples + manifest
        for (a, b) in files1.iter().zip(&files2) {
            assert_eq!(
                a.strip_prefix(d1.path()).unwrap(),
                b.strip_prefix(d2.path()).unwrap()
            );
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{a:?}");
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn samples_contain_ink_and_background() {
        let dir = tempfile::tempdir().unwrap();
        let entries = generate_synthetic_corpus(&SynthConfig::new(2, 3, 1), dir.path()).unwrap();
        for e in &entries {
            let img = crate::data::image_io::load_image(&e.path).unwrap();
            assert!(img.height() == 72);
            assert!(img.pixels().iter().any(|&p| p == INK), "no ink in {:?}", e.path);
            assert!(img.pixels().iter().any(|&p| p == 255));
        }
    }

    #[test]
    fn modes_render_differently() {
        let style = writer_styles(1, 5).unwrap()[0];
        let mut rng1 = ChaCha8Rng::seed_from_u64(3);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let a = render_sample(&style, &rounded_glyphs(), &mut rng1, 72);
        let b = render_sample(&style, &angular_glyphs(), &mut rng2, 72);
        assert_ne!(a.pixels(), b.pixels());
    }

    #[test]
    fn invalid_counts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_synthetic_corpus(&SynthConfig::new(1, 5, 0), dir.path()).is_err());
        assert!(generate_synthetic_corpus(&SynthConfig::new(2, 2, 0), dir.path()).is_err());
    }
}

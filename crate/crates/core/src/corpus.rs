//! Seeded procedural images for desk-scale experiments, and directory
//! loading for real corpora.
//!
//! Content images are smooth backgrounds with a few solid shapes; style
//! images are periodic textures in a small palette. Every pixel is snapped
//! to the 8-bit grid so that a written corpus reads back bit-identically.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::io::ppm::{quantize, read_image, write_image};
use crate::tensor::Tensor;

fn snap(v: f32) -> f32 {
    quantize(v) as f32 / 255.0
}

fn rgb(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn image(size: usize, mut px: impl FnMut(f32, f32) -> [f32; 3]) -> Tensor<f32> {
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let c = px(x as f32 / size as f32, y as f32 / size as f32);
            for ch in 0..3 {
                data[ch * plane + y * size + x] = snap(c[ch]);
            }
        }
    }
    Tensor::new(&[1, 3, size, size], data).expect("consistent shape")
}

/// A smooth two-colour gradient overlaid with three to six discs and boxes.
pub fn content_image(seed: u64, size: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_17e7);
    let (a, b) = (rgb(&mut rng), rgb(&mut rng));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let shapes: Vec<(bool, f32, f32, f32, f32, [f32; 3])> = (0..rng.random_range(3..=6))
        .map(|_| {
            let disc = rng.random_bool(0.5);
            (disc, rng.random(), rng.random(), rng.random_range(0.08..0.3), rng.random_range(0.08..0.3), rgb(&mut rng))
        })
        .collect();
    image(size, |x, y| {
        let t = (0.5 + 0.5 * ((x - 0.5) * dx + (y - 0.5) * dy)).clamp(0.0, 1.0);
        let mut c = [0.0; 3];
        for ch in 0..3 {
            c[ch] = a[ch] * (1.0 - t) + b[ch] * t;
        }
        for &(disc, cx, cy, rx, ry, col) in &shapes {
            let inside = if disc {
                ((x - cx) / rx).powi(2) + ((y - cy) / rx).powi(2) <= 1.0
            } else {
                (x - cx).abs() <= rx && (y - cy).abs() <= ry
            };
            if inside {
                c = col;
            }
        }
        c
    })
}

/// A periodic texture: stripes, checks, dots or interfering waves, coloured
/// from a three-entry palette.
pub fn style_image(seed: u64, size: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57_11e5);
    let palette = [rgb(&mut rng), rgb(&mut rng), rgb(&mut rng)];
    let kind = rng.random_range(0..4u32);
    let freq: f32 = rng.random_range(3.0..12.0);
    let angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    let tau = std::f32::consts::TAU;
    image(size, |x, y| {
        let u = x * ca + y * sa;
        let v = -x * sa + y * ca;
        // `t` in [0, 1] picks a blend along the palette.
        let t = match kind {
            0 => 0.5 + 0.5 * (tau * freq * u).sin(),
            1 => (((freq * u).floor() + (freq * v).floor()) as i64).rem_euclid(2) as f32,
            2 => {
                let (fu, fv) = ((freq * u).fract() - 0.5, (freq * v).fract() - 0.5);
                if fu * fu + fv * fv < 0.09 { 1.0 } else { 0.0 }
            }
            _ => 0.5 + 0.25 * (tau * freq * u).sin() + 0.25 * (tau * 0.7 * freq * v).cos(),
        };
        let t = t.clamp(0.0, 1.0) * 2.0;
        let (i, f) = if t >= 1.0 { (1, t - 1.0) } else { (0, t) };
        let mut c = [0.0; 3];
        for ch in 0..3 {
            c[ch] = palette[i][ch] * (1.0 - f) + palette[i + 1][ch] * f;
        }
        c
    })
}

/// Training and evaluation splits of content and style images.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskCorpus {
    pub content: Vec<Tensor<f32>>,
    pub eval_content: Vec<Tensor<f32>>,
    pub styles: Vec<Tensor<f32>>,
    pub held_out: Vec<Tensor<f32>>,
}

impl DeskCorpus {
    pub fn generate(seed: u64, size: usize, contents: usize, eval: usize, styles: usize, held_out: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seeds = |n: usize| (0..n).map(|_| rng.random::<u64>()).collect::<Vec<_>>();
        let (cs, es, ss, hs) = (seeds(contents), seeds(eval), seeds(styles), seeds(held_out));
        Self {
            content: cs.into_iter().map(|s| content_image(s, size)).collect(),
            eval_content: es.into_iter().map(|s| content_image(s, size)).collect(),
            styles: ss.into_iter().map(|s| style_image(s, size)).collect(),
            held_out: hs.into_iter().map(|s| style_image(s, size)).collect(),
        }
    }

    /// The desk-scale corpus at 64×64: 20 training and 8 evaluation content
    /// images, 32 training styles and 2 held-out styles.
    pub fn desk(seed: u64) -> Self {
        Self::generate(seed, 64, 20, 8, 32, 2)
    }

    /// Writes `content/`, `eval_content/`, `style/` and `held_out/`
    /// subdirectories of PPMs.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        for (sub, images) in [("content", &self.content), ("eval_content", &self.eval_content), ("style", &self.styles), ("held_out", &self.held_out)] {
            let d = dir.as_ref().join(sub);
            fs::create_dir_all(&d)?;
            for (i, img) in images.iter().enumerate() {
                write_image(img, d.join(format!("{i:03}.ppm")))?;
            }
        }
        Ok(())
    }
}

/// Every `.ppm` file in `dir`, sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Tensor<f32>>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!(Usage, "no .ppm images in {}", dir.display());
    }
    paths.iter().map(read_image).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        assert_eq!(style_image(3, 16), style_image(3, 16));
        assert_ne!(style_image(3, 16), style_image(4, 16));
        assert_eq!(content_image(3, 16), content_image(3, 16));
    }

    #[test]
    fn corpus_round_trips_through_ppm() {
        let c = DeskCorpus::generate(1, 16, 3, 1, 2, 1);
        let dir = std::env::temp_dir().join(format!("metastyle-corpus-{}", std::process::id()));
        c.write_to(&dir).unwrap();
        assert_eq!(load_dir(dir.join("content")).unwrap(), c.content);
        assert_eq!(load_dir(dir.join("held_out")).unwrap(), c.held_out);
        fs::remove_dir_all(dir).unwrap();
    }
}

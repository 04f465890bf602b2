//! Synthetic multi-object scenes: a few flat-colored shapes over textured noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RGB image with values in `[0, 1]`, row-major, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * Self::CHANNELS);
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6), 8 bits per channel.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: [f64; 3],
    pub center: (f64, f64),
    pub half_extent: (f64, f64),
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.center.0) / self.half_extent.0;
        let dx = (x - self.center.1) / self.half_extent.1;
        match self.kind {
            ShapeKind::Rectangle => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            ShapeKind::Ellipse => dy * dy + dx * dx <= 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub image: Image,
    pub shapes: Vec<Shape>,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.75, 0.20],
    [0.15, 0.30, 0.90],
    [0.95, 0.85, 0.10],
    [0.80, 0.20, 0.85],
    [0.10, 0.85, 0.85],
    [0.98, 0.55, 0.10],
    [0.95, 0.95, 0.95],
];

/// One scene of `size×size` pixels with 2 to 4 shapes of distinct colors.
pub fn synthetic_image<R: Rng>(rng: &mut R, size: usize) -> SyntheticImage {
    let s = size as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.45));
    // Background texture: two random plane waves plus per-pixel noise.
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.05..0.4),
                rng.random_range(0.05..0.4),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.03..0.08),
            )
        })
        .collect();
    let mut image = Image::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let texture: f64 = waves
                .iter()
                .map(|&(fy, fx, phase, amp)| amp * (fy * y as f64 + fx * x as f64 + phase).sin())
                .sum();
            let px: [f64; 3] = std::array::from_fn(|c| {
                (base[c] + texture + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0)
            });
            image.set(y, x, px);
        }
    }

    let count = rng.random_range(2..=4);
    let mut colors = PALETTE.to_vec();
    colors.shuffle(rng);
    let shapes: Vec<Shape> = colors
        .into_iter()
        .take(count)
        .map(|color| Shape {
            kind: if rng.random_bool(0.5) { ShapeKind::Rectangle } else { ShapeKind::Ellipse },
            color,
            center: (rng.random_range(0.15 * s..0.85 * s), rng.random_range(0.15 * s..0.85 * s)),
            half_extent: (rng.random_range(0.08 * s..0.22 * s), rng.random_range(0.08 * s..0.22 * s)),
        })
        .collect();
    for shape in &shapes {
        for y in 0..size {
            for x in 0..size {
                if shape.contains(y as f64 + 0.5, x as f64 + 0.5) {
                    image.set(y, x, shape.color);
                }
            }
        }
    }
    SyntheticImage { image, shapes }
}

/// `n` scenes from a seeded generator.
pub fn synthetic_dataset(n: usize, seed: u64, size: usize) -> Vec<SyntheticImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synthetic_image(&mut rng, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = synthetic_dataset(6, 11, 32);
        let b = synthetic_dataset(6, 11, 32);
        assert_eq!(a, b);
        for img in &a {
            assert!((2..=4).contains(&img.shapes.len()));
            assert!(img.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
            for (i, s) in img.shapes.iter().enumerate() {
                assert!(img.shapes[i + 1..].iter().all(|t| t.color != s.color));
            }
        }
        assert_ne!(a, synthetic_dataset(6, 12, 32));
    }

    #[test]
    fn ppm_header() {
        let img = Image::filled(2, 3, [1.0, 0.0, 0.5]);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 18);
        assert_eq!(&ppm[11..14], &[255, 0, 128]);
    }
}

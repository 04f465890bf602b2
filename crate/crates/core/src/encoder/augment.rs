//! View generation: random resized crop, per-channel color scaling, horizontal flip.

use rand::Rng;

use super::data::Image;

/// Random area fraction of the crop.
const CROP_AREA: (f64, f64) = (0.3, 1.0);
const CROP_ASPECT: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
const COLOR_SCALE: (f64, f64) = (0.6, 1.4);

/// Concrete draws for one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub top: usize,
    pub left: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub flip: bool,
    pub color_scale: [f64; 3],
}

impl AugmentParams {
    /// Full-frame crop, no flip, unit color scale.
    pub fn identity(image: &Image) -> Self {
        Self {
            top: 0,
            left: 0,
            crop_height: image.height,
            crop_width: image.width,
            flip: false,
            color_scale: [1.0; 3],
        }
    }

    pub fn sample<R: Rng>(rng: &mut R, image: &Image) -> Self {
        let (h, w) = (image.height as f64, image.width as f64);
        let area = rng.random_range(CROP_AREA.0..=CROP_AREA.1) * h * w;
        let log_aspect = rng.random_range(CROP_ASPECT.0.ln()..=CROP_ASPECT.1.ln());
        let aspect = log_aspect.exp();
        let crop_width = ((area * aspect).sqrt().round() as usize).clamp(1, image.width);
        let crop_height = ((area / aspect).sqrt().round() as usize).clamp(1, image.height);
        let top = rng.random_range(0..=image.height - crop_height);
        let left = rng.random_range(0..=image.width - crop_width);
        let flip = rng.random_bool(0.5);
        let color_scale = std::array::from_fn(|_| rng.random_range(COLOR_SCALE.0..=COLOR_SCALE.1));
        Self { top, left, crop_height, crop_width, flip, color_scale }
    }
}

/// Bilinear sample coordinate for output index `i` of `out` cells mapped onto
/// `len` source cells starting at `start` (pixel centres aligned).
fn source_coord(i: usize, out: usize, start: usize, len: usize) -> (usize, usize, f64) {
    let pos = (i as f64 + 0.5) * len as f64 / out as f64 - 0.5;
    let pos = pos.clamp(0.0, (len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (start + lo, start + hi, pos - lo as f64)
}

/// Applies `params`, resizing the crop to `size×size`.
pub fn apply(image: &Image, params: &AugmentParams, size: usize) -> Image {
    let mut data = Vec::with_capacity(size * size * 3);
    for oy in 0..size {
        let (y0, y1, ty) = source_coord(oy, size, params.top, params.crop_height);
        for ox in 0..size {
            let sx = if params.flip { size - 1 - ox } else { ox };
            let (x0, x1, tx) = source_coord(sx, size, params.left, params.crop_width);
            let (p00, p01, p10, p11) = (image.pixel(y0, x0), image.pixel(y0, x1), image.pixel(y1, x0), image.pixel(y1, x1));
            for c in 0..3 {
                let top = p00[c] + (p01[c] - p00[c]) * tx;
                let bottom = p10[c] + (p11[c] - p10[c]) * tx;
                let v = top + (bottom - top) * ty;
                data.push((v * params.color_scale[c]).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(size, size, data)
}

/// Random view at `size×size`.
pub fn augment<R: Rng>(image: &Image, rng: &mut R, size: usize) -> Image {
    let params = AugmentParams::sample(rng, image);
    apply(image, &params, size)
}

/// Random view at half of `full_size`.
pub fn small_view<R: Rng>(image: &Image, rng: &mut R, full_size: usize) -> Image {
    augment(image, rng, full_size / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::data::synthetic_image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> Image {
        synthetic_image(&mut ChaCha8Rng::seed_from_u64(seed), 64).image
    }

    #[test]
    fn identity_params_leave_image_unchanged() {
        let img = scene(1);
        assert_eq!(apply(&img, &AugmentParams::identity(&img), 64), img);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = scene(2);
        let params = AugmentParams { flip: true, ..AugmentParams::sample(&mut ChaCha8Rng::seed_from_u64(5), &img) };
        let once = apply(&img, &params, 40);
        let unflipped = apply(&img, &AugmentParams { flip: false, ..params }, 40);
        let twice = apply(&once, &AugmentParams { flip: true, ..AugmentParams::identity(&once) }, 40);
        assert_eq!(twice, unflipped);
    }

    #[test]
    fn seeded_views_are_reproducible() {
        let img = scene(3);
        let a = augment(&img, &mut ChaCha8Rng::seed_from_u64(9), 56);
        let b = augment(&img, &mut ChaCha8Rng::seed_from_u64(9), 56);
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let s1 = small_view(&img, &mut ChaCha8Rng::seed_from_u64(4), 56);
        let s2 = small_view(&img, &mut ChaCha8Rng::seed_from_u64(4), 56);
        assert_eq!(s1, s2);
    }

    #[test]
    fn small_view_geometry() {
        let img = Image::filled(64, 64, [0.4, 0.2, 0.1]);
        let view = small_view(&img, &mut ChaCha8Rng::seed_from_u64(0), 56);
        assert_eq!((view.height, view.width), (28, 28));
        let first = view.pixel(0, 0);
        for y in 0..28 {
            for x in 0..28 {
                assert_eq!(view.pixel(y, x), first);
            }
        }
    }
}

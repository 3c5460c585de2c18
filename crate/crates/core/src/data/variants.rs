//! Domain-shift transforms on raw byte images. All are label- and size-preserving.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageDataset, Split};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Identity,
    /// One fixed pixel bijection, drawn from `seed`, applied to every image.
    Permute { seed: u64 },
    /// `v ↦ 255 − v`.
    Invert,
    /// Per-image angle, uniform in `[min_degrees, max_degrees]`, bilinear, zero fill.
    Rotate { seed: u64, min_degrees: f32, max_degrees: f32 },
}

impl Variant {
    pub fn describe(&self) -> String {
        match self {
            Variant::Identity => "identity".into(),
            Variant::Permute { seed } => format!("permute(seed={seed})"),
            Variant::Invert => "invert".into(),
            Variant::Rotate { seed, min_degrees, max_degrees } => {
                format!("rotate({min_degrees}-{max_degrees} deg, seed={seed})")
            }
        }
    }
}

/// `out[k] = in[perm[k]]`.
pub fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, Purpose::Permutation, 0));
    perm
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

pub fn permute_image(image: &[u8], perm: &[usize]) -> Vec<u8> {
    perm.iter().map(|&p| image[p]).collect()
}

/// Rotates counter-clockwise about the image centre.
pub fn rotate_image(image: &[u8], height: usize, width: usize, degrees: f32) -> Vec<u8> {
    let (sin, cos) = (degrees as f64).to_radians().sin_cos();
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
            0.0
        } else {
            image[y as usize * width + x as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // Inverse mapping with y pointing down, so the picture turns counter-clockwise.
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + at(y0, x0 + 1) * fx * (1.0 - fy)
                + at(y0 + 1, x0) * (1.0 - fx) * fy
                + at(y0 + 1, x0 + 1) * fx * fy;
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn apply_variant(ds: &ImageDataset, variant: &Variant) -> ImageDataset {
    let mut out = ds.clone();
    let p = ds.pixels();
    match *variant {
        Variant::Identity => {}
        Variant::Invert => out.images.iter_mut().for_each(|v| *v = 255 - *v),
        Variant::Permute { seed } => {
            let perm = permutation(seed, p);
            for (dst, src) in out.images.chunks_mut(p).zip(ds.images.chunks(p)) {
                dst.copy_from_slice(&permute_image(src, &perm));
            }
        }
        Variant::Rotate { seed, min_degrees, max_degrees } => {
            let stream = match ds.split {
                Split::Train => 0,
                Split::Test => 1,
            };
            let mut rng = substream(seed, Purpose::Rotation, stream);
            for (dst, src) in out.images.chunks_mut(p).zip(ds.images.chunks(p)) {
                let angle = if max_degrees > min_degrees { rng.gen_range(min_degrees..=max_degrees) } else { min_degrees };
                dst.copy_from_slice(&rotate_image(src, ds.height, ds.width, angle));
            }
        }
    }
    out.name = format!("{}+{}", ds.name, variant.describe());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(images: Vec<u8>, h: usize, w: usize) -> ImageDataset {
        let n = images.len() / (h * w);
        ImageDataset::new("d", Split::Train, h, w, images, vec![0; n], 1).unwrap()
    }

    fn histogram(image: &[u8]) -> [usize; 256] {
        let mut h = [0; 256];
        image.iter().for_each(|&v| h[v as usize] += 1);
        h
    }

    #[test]
    fn identity_is_bitwise_equal() {
        let ds = dataset((0..32).collect(), 4, 4);
        assert_eq!(apply_variant(&ds, &Variant::Identity).images, ds.images);
    }

    #[test]
    fn rotate_zero_and_quarter_turn() {
        let img: Vec<u8> = (1..=9).collect();
        assert_eq!(rotate_image(&img, 3, 3, 0.0), img);
        // Counter-clockwise quarter turn of [[1,2,3],[4,5,6],[7,8,9]].
        assert_eq!(rotate_image(&img, 3, 3, 90.0), vec![3, 6, 9, 2, 5, 8, 1, 4, 7]);
    }

    #[test]
    fn rotation_angles_stay_in_range_and_zero_fill() {
        let ds = dataset(vec![255; 64 * 5], 8, 8);
        let out = apply_variant(&ds, &Variant::Rotate { seed: 1, min_degrees: 30.0, max_degrees: 45.0 });
        for i in 0..5 {
            // A rotated full square loses its corners to zero fill.
            assert_eq!(out.image(i)[0], 0);
            assert_eq!(out.image(i)[27], 255);
        }
    }

    proptest! {
        #[test]
        fn invert_is_an_involution(images in proptest::collection::vec(any::<u8>(), 16..=16)) {
            let ds = dataset(images, 4, 4);
            let twice = apply_variant(&apply_variant(&ds, &Variant::Invert), &Variant::Invert);
            prop_assert_eq!(twice.images, ds.images);
        }

        #[test]
        fn permute_preserves_histogram_and_inverts(
            images in proptest::collection::vec(any::<u8>(), 48..=48),
            seed in any::<u64>(),
        ) {
            let ds = dataset(images, 4, 4);
            let out = apply_variant(&ds, &Variant::Permute { seed });
            let inv = inverse_permutation(&permutation(seed, 16));
            for i in 0..3 {
                prop_assert_eq!(histogram(out.image(i)), histogram(ds.image(i)));
                prop_assert_eq!(permute_image(out.image(i), &inv), ds.image(i).to_vec());
            }
            prop_assert_eq!(out.labels, ds.labels);
        }
    }
}

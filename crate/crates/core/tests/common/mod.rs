#![allow(dead_code)]

use std::path::Path;

use distractnet::dataset::ClassLabel;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Red channel value that encodes `class` in fixture images.
pub fn class_red(class: usize) -> u8 {
    (class * 25 + 5) as u8
}

/// Inverse of [`class_red`] for a value in `[0, 1]`.
pub fn class_from_red(r: f32) -> usize {
    (((r * 255.0) - 5.0) / 25.0).round().clamp(0.0, 9.0) as usize
}

/// Constant red channel per class, seeded texture in green and blue.
pub fn fixture_image(class: usize, index: usize, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64((class * 1000 + index) as u64);
    RgbImage::from_fn(size, size, |_, _| Rgb([class_red(class), rng.gen(), rng.gen()]))
}

/// Writes `<root>/c0..c9/img_k.png`, `per_class` images each.
pub fn write_fixture(root: &Path, per_class: usize, size: u32) {
    for c in ClassLabel::all() {
        let dir = root.join(c.folder());
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            fixture_image(c.id(), i, size)
                .save(dir.join(format!("img_{i}.png")))
                .unwrap();
        }
    }
}

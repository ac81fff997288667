use std::path::Path;

use ganaug_core::dataio::{encode_image, RgbImage};
use ganaug_core::{Result, Rng};

pub const TONE_A: [u8; 3] = [220, 60, 40];
pub const TONE_B: [u8; 3] = [30, 40, 150];

/// Images split into two flat colour regions along a random horizontal or
/// vertical boundary.
pub fn two_tone(n: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let vertical = rng.below(2) == 0;
            let cut = size / 4 + rng.below(size / 2 + 1);
            let mut img = RgbImage::filled(size, size, TONE_A).unwrap();
            for y in 0..size {
                for x in 0..size {
                    if (if vertical { x } else { y }) >= cut {
                        img.put(x, y, TONE_B);
                    }
                }
            }
            img
        })
        .collect()
}

pub const SHAPE_CLASSES: [&str; 3] = ["disk", "square", "cross"];

/// A bright shape of the given class (0 disk, 1 square, 2 cross) with a
/// random centre and size on a noisy dark background.
pub fn shapes(class: usize, n: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = Rng::new(seed).fork(class as u64);
    (0..n)
        .map(|_| {
            let mut img = RgbImage::filled(size, size, [0, 0, 0]).unwrap();
            for p in img.pixels_mut() {
                *p = 20 + rng.below(30) as u8;
            }
            let s = size as f64;
            let r = s * (0.2 + 0.1 * rng.uniform());
            let cx = s * (0.4 + 0.2 * rng.uniform());
            let cy = s * (0.4 + 0.2 * rng.uniform());
            let colour = [180 + rng.below(60) as u8, 150 + rng.below(60) as u8, 60 + rng.below(60) as u8];
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    let inside = match class {
                        0 => dx * dx + dy * dy <= r * r,
                        1 => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
                        _ => (dx.abs() <= r * 0.3 && dy.abs() <= r * 1.1) || (dy.abs() <= r * 0.3 && dx.abs() <= r * 1.1),
                    };
                    if inside {
                        img.put(x, y, colour);
                    }
                }
            }
            img
        })
        .collect()
}

/// Writes `<root>/<class>/img_NNNN.ppm` for every class.
pub fn write_tree(root: &Path, classes: &[(&str, Vec<RgbImage>)]) -> Result<()> {
    for (name, images) in classes {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir)?;
        for (i, img) in images.iter().enumerate() {
            encode_image(img, &dir.join(format!("img_{i:04}.ppm")))?;
        }
    }
    Ok(())
}

/// Uniform random image.
pub fn noise_image(width: usize, height: usize, rng: &mut Rng) -> RgbImage {
    RgbImage::new(width, height, (0..width * height * 3).map(|_| rng.below(256) as u8).collect()).unwrap()
}

//! Image preprocessing and seeded augmentation.
//!
//! Training images go through [`random_augment`] followed by
//! [`to_model_input`]; validation and test images are only resized and
//! rescaled (see [`prepare_eval`]).

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use imageproc::geometric_transformations::{warp, Interpolation, Projection};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranges for every stochastic transform, plus the seed and output size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub rotation_max_deg: f64,
    pub hflip_prob: f64,
    pub translate_frac: f64,
    pub shear_max_deg: f64,
    pub scale_range: (f64, f64),
    pub seed: u64,
    /// `(height, width)` in pixels.
    pub image_size: (u32, u32),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            brightness_range: (0.8, 1.2),
            contrast_range: (0.8, 1.2),
            rotation_max_deg: 10.0,
            hflip_prob: 0.5,
            translate_frac: 0.05,
            shear_max_deg: 5.0,
            scale_range: (0.95, 1.05),
            seed: 0,
            image_size: (224, 224),
        }
    }
}

impl AugmentationConfig {
    /// A configuration whose only effect is resizing to `image_size`.
    pub fn identity(image_size: (u32, u32)) -> Self {
        AugmentationConfig {
            brightness_range: (1.0, 1.0),
            contrast_range: (1.0, 1.0),
            rotation_max_deg: 0.0,
            hflip_prob: 0.0,
            translate_frac: 0.0,
            shear_max_deg: 0.0,
            scale_range: (1.0, 1.0),
            seed: 0,
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
            ("scale_range", self.scale_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::Validation(format!(
                    "{name} ({lo}, {hi}) must satisfy 0 < low <= high"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Validation(format!(
                "hflip_prob {} outside [0, 1]",
                self.hflip_prob
            )));
        }
        for (name, v) in [
            ("rotation_max_deg", self.rotation_max_deg),
            ("translate_frac", self.translate_frac),
            ("shear_max_deg", self.shear_max_deg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} {v} must be >= 0")));
            }
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::Validation("image_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelForm {
    /// 8-bit intensities in `[0, 255]`.
    Bytes,
    /// Real intensities in `[0, 1]`, the form models consume.
    Real,
}

#[derive(Debug, Clone, PartialEq)]
enum Pixels {
    Bytes(Vec<u8>),
    Real(Vec<f32>),
}

/// An `H×W×3` image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: u32,
    width: u32,
    pixels: Pixels,
}

impl ImageTensor {
    pub fn from_rgb(img: &RgbImage) -> Self {
        ImageTensor {
            height: img.height(),
            width: img.width(),
            pixels: Pixels::Bytes(img.as_raw().clone()),
        }
    }

    pub fn from_real(height: u32, width: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != (height * width * 3) as usize {
            return Err(Error::Argument(format!(
                "expected {} values for a {height}x{width}x3 image, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            pixels: Pixels::Real(data),
        })
    }

    pub fn open(path: &std::path::Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Resource(format!("cannot decode {}: {e}", path.display())))?;
        Ok(ImageTensor::from_rgb(&img.to_rgb8()))
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn form(&self) -> PixelForm {
        match self.pixels {
            Pixels::Bytes(_) => PixelForm::Bytes,
            Pixels::Real(_) => PixelForm::Real,
        }
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.pixels {
            Pixels::Bytes(b) => Some(b),
            Pixels::Real(_) => None,
        }
    }

    pub fn real(&self) -> Option<&[f32]> {
        match &self.pixels {
            Pixels::Real(r) => Some(r),
            Pixels::Bytes(_) => None,
        }
    }

    /// The 8-bit form as an [`RgbImage`]; real images are quantised.
    pub fn to_rgb(&self) -> RgbImage {
        let raw = match &self.pixels {
            Pixels::Bytes(b) => b.clone(),
            Pixels::Real(r) => r
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        };
        RgbImage::from_raw(self.width, self.height, raw).expect("buffer length matches dimensions")
    }

    fn require_bytes(&self, op: &str) -> Result<&[u8]> {
        self.bytes()
            .ok_or_else(|| Error::Argument(format!("{op} expects an 8-bit image")))
    }

    fn map_bytes(&self, f: impl Fn(&[u8], &mut [u8])) -> ImageTensor {
        let src = self.bytes().expect("checked by caller");
        let mut out = vec![0u8; src.len()];
        for (s, d) in src.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
            f(s, d);
        }
        ImageTensor {
            height: self.height,
            width: self.width,
            pixels: Pixels::Bytes(out),
        }
    }
}

/// RGB in `[0, 255]` to (hue in degrees, saturation in `[0, 1]`, value in `[0, 255]`).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn check_factor(factor: f64, what: &str) -> Result<()> {
    if factor.is_finite() && factor > 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} factor must be > 0, got {factor}")))
    }
}

/// Scales the HSV value channel by `factor`, clipping at 255.
pub fn enhance_brightness(img: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    check_factor(factor, "brightness")?;
    img.require_bytes("enhance_brightness")?;
    Ok(img.map_bytes(|s, d| {
        let (h, sat, v) = rgb_to_hsv(s[0] as f64, s[1] as f64, s[2] as f64);
        let (r, g, b) = hsv_to_rgb(h, sat, (v * factor).clamp(0.0, 255.0));
        d.copy_from_slice(&[to_u8(r), to_u8(g), to_u8(b)]);
    }))
}

/// Scales each channel's distance from mid-grey (128) by `factor`.
pub fn change_contrast(img: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    check_factor(factor, "contrast")?;
    img.require_bytes("change_contrast")?;
    Ok(img.map_bytes(|s, d| {
        for (o, &i) in d.iter_mut().zip(s) {
            *o = to_u8((i as f64 - 128.0) * factor + 128.0);
        }
    }))
}

/// Divides 8-bit intensities by 255.
pub fn to_model_input(img: &ImageTensor) -> Result<ImageTensor> {
    let bytes = img.require_bytes("to_model_input")?;
    Ok(ImageTensor {
        height: img.height,
        width: img.width,
        pixels: Pixels::Real(bytes.iter().map(|&b| b as f32 / 255.0).collect()),
    })
}

/// Bilinear resize to `(height, width)`; a no-op copy at the same size.
pub fn resize(img: &ImageTensor, size: (u32, u32)) -> ImageTensor {
    let (h, w) = size;
    let rgb = img.to_rgb();
    ImageTensor::from_rgb(&imageops::resize(&rgb, w, h, FilterType::Triangle))
}

/// Resize plus rescale, the whole eval-time pipeline.
pub fn prepare_eval(img: &ImageTensor, size: (u32, u32)) -> Result<ImageTensor> {
    to_model_input(&resize(img, size))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, max: f64) -> f64 {
    uniform(rng, -max, max)
}

/// The random draws behind one augmentation, in consumption order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationDraw {
    pub hflip: bool,
    pub rotation_deg: f64,
    pub translate: (f64, f64),
    pub shear_deg: f64,
    pub scale: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentationDraw {
    /// Draws every parameter, always consuming the same amount of randomness
    /// regardless of which ranges are degenerate.
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentationConfig, rng: &mut R) -> Self {
        let (h, w) = cfg.image_size;
        let flip_u: f64 = rng.gen();
        AugmentationDraw {
            hflip: flip_u < cfg.hflip_prob,
            rotation_deg: symmetric(rng, cfg.rotation_max_deg),
            translate: (
                symmetric(rng, cfg.translate_frac) * w as f64,
                symmetric(rng, cfg.translate_frac) * h as f64,
            ),
            shear_deg: symmetric(rng, cfg.shear_max_deg),
            scale: uniform(rng, cfg.scale_range.0, cfg.scale_range.1),
            brightness: uniform(rng, cfg.brightness_range.0, cfg.brightness_range.1),
            contrast: uniform(rng, cfg.contrast_range.0, cfg.contrast_range.1),
        }
    }

    fn is_geometric_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.translate == (0.0, 0.0)
            && self.shear_deg == 0.0
            && self.scale == 1.0
    }

    /// Forward map (source pixel → output pixel): rotate about the centre,
    /// then scale, shear and translate.
    fn projection(&self, size: (u32, u32)) -> Option<Projection> {
        let (h, w) = size;
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let th = self.rotation_deg.to_radians();
        let sh = self.shear_deg.to_radians().tan();
        let (c, s) = (th.cos(), th.sin());
        // rotation, with y pointing down a positive angle turns counter-clockwise
        let rot = [[c, s], [-s, c]];
        // scale then x-shear
        let aff = [[self.scale, sh * self.scale], [0.0, self.scale]];
        let m = [
            [
                aff[0][0] * rot[0][0] + aff[0][1] * rot[1][0],
                aff[0][0] * rot[0][1] + aff[0][1] * rot[1][1],
            ],
            [
                aff[1][0] * rot[0][0] + aff[1][1] * rot[1][0],
                aff[1][0] * rot[0][1] + aff[1][1] * rot[1][1],
            ],
        ];
        let tx = cx + self.translate.0 - (m[0][0] * cx + m[0][1] * cy);
        let ty = cy + self.translate.1 - (m[1][0] * cx + m[1][1] * cy);
        Projection::from_matrix([
            m[0][0] as f32,
            m[0][1] as f32,
            tx as f32,
            m[1][0] as f32,
            m[1][1] as f32,
            ty as f32,
            0.0,
            0.0,
            1.0,
        ])
    }
}

/// Applies a fixed chain of seeded transforms:
/// resize → horizontal flip → rotation → affine (translate/shear/scale) →
/// brightness → contrast.
///
/// Geometric steps use bilinear sampling with a black border. Real-valued
/// inputs are quantised to 8 bits first; the output is always 8-bit.
pub fn random_augment<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<ImageTensor> {
    let draw = AugmentationDraw::sample(cfg, rng);
    apply_augmentation(img, cfg.image_size, &draw)
}

pub fn apply_augmentation(
    img: &ImageTensor,
    size: (u32, u32),
    draw: &AugmentationDraw,
) -> Result<ImageTensor> {
    let mut rgb = resize(img, size).to_rgb();
    if draw.hflip {
        imageops::flip_horizontal_in_place(&mut rgb);
    }
    if !draw.is_geometric_identity() {
        if let Some(p) = draw.projection(size) {
            rgb = warp(&rgb, &p, Interpolation::Bilinear, Rgb([0, 0, 0]));
        }
    }
    let mut out = ImageTensor::from_rgb(&rgb);
    if draw.brightness != 1.0 {
        out = enhance_brightness(&out, draw.brightness)?;
    }
    if draw.contrast != 1.0 {
        out = change_contrast(&out, draw.contrast)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_image(v: u8, h: u32, w: u32) -> ImageTensor {
        ImageTensor::from_rgb(&RgbImage::from_pixel(w, h, Rgb([v, v, v])))
    }

    fn noise_image(seed: u64, h: u32, w: u32) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<u8> = (0..h * w * 3).map(|_| rng.gen()).collect();
        ImageTensor::from_rgb(&RgbImage::from_raw(w, h, raw).unwrap())
    }

    #[test]
    fn brightness_identity_and_gray_cases() {
        let img = noise_image(1, 9, 7);
        assert_eq!(enhance_brightness(&img, 1.0).unwrap(), img);
        let out = enhance_brightness(&uniform_image(100, 3, 3), 1.5).unwrap();
        assert!(out.bytes().unwrap().iter().all(|&v| v == 150));
        let out = enhance_brightness(&uniform_image(200, 3, 3), 2.0).unwrap();
        assert!(out.bytes().unwrap().iter().all(|&v| v == 255));
        assert!(matches!(
            enhance_brightness(&img, 0.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn hsv_round_trip_is_exact_on_bytes() {
        for r in (0..=255u32).step_by(3) {
            for g in (0..=255u32).step_by(5) {
                for b in (0..=255u32).step_by(7) {
                    let (h, s, v) = rgb_to_hsv(r as f64, g as f64, b as f64);
                    let (r2, g2, b2) = hsv_to_rgb(h, s, v);
                    assert_eq!(
                        (to_u8(r2), to_u8(g2), to_u8(b2)),
                        (r as u8, g as u8, b as u8)
                    );
                }
            }
        }
    }

    #[test]
    fn contrast_pivot_and_arithmetic() {
        let img = noise_image(2, 5, 5);
        assert_eq!(change_contrast(&img, 1.0).unwrap(), img);
        for f in [0.1, 0.7, 3.0] {
            let out = change_contrast(&uniform_image(128, 2, 2), f).unwrap();
            assert!(out.bytes().unwrap().iter().all(|&v| v == 128));
        }
        let out = change_contrast(&uniform_image(192, 2, 2), 0.5).unwrap();
        assert!(out.bytes().unwrap().iter().all(|&v| v == 160));
        assert!(change_contrast(&img, -1.0).is_err());
    }

    #[test]
    fn model_input_scaling() {
        let zeros = to_model_input(&uniform_image(0, 2, 2)).unwrap();
        assert!(zeros.real().unwrap().iter().all(|&v| v == 0.0));
        let ones = to_model_input(&uniform_image(255, 2, 2)).unwrap();
        assert!(ones.real().unwrap().iter().all(|&v| v == 1.0));
        let v = to_model_input(&uniform_image(51, 1, 1)).unwrap();
        assert!((v.real().unwrap()[0] - 0.2).abs() <= 1e-7);
        assert!(to_model_input(&v).is_err());
    }

    #[test]
    fn identity_config_only_resizes() {
        let img = noise_image(3, 40, 30);
        let cfg = AugmentationConfig::identity((16, 20));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = random_augment(&img, &cfg, &mut rng).unwrap();
        assert_eq!(out, resize(&img, (16, 20)));
        assert_eq!((out.height(), out.width()), (16, 20));
    }

    #[test]
    fn forced_flip_is_an_involution() {
        let img = noise_image(4, 12, 12);
        let cfg = AugmentationConfig {
            hflip_prob: 1.0,
            ..AugmentationConfig::identity((12, 12))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = random_augment(&img, &cfg, &mut rng).unwrap();
        let a = img.to_rgb();
        let b = once.to_rgb();
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(a.get_pixel(x, y), b.get_pixel(11 - x, y));
            }
        }
        let twice = random_augment(&once, &cfg, &mut rng).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn augmentation_is_seed_deterministic() {
        let img = noise_image(5, 32, 32);
        let cfg = AugmentationConfig {
            image_size: (24, 24),
            ..Default::default()
        };
        let a = random_augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = random_augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = AugmentationConfig {
            brightness_range: (1.2, 0.8),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            hflip_prob: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            image_size: (0, 3),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_cfg() -> impl Strategy<Value = AugmentationConfig> {
            (
                (0.2f64..3.0, 0.0f64..2.0),
                (0.2f64..3.0, 0.0f64..2.0),
                0.0f64..45.0,
                0.0f64..=1.0,
                0.0f64..0.3,
                0.0f64..20.0,
                (0.5f64..1.5, 0.0f64..0.5),
                (4u32..20, 4u32..20),
            )
                .prop_map(|(b, c, rot, flip, tr, sh, sc, size)| AugmentationConfig {
                    brightness_range: (b.0, b.0 + b.1),
                    contrast_range: (c.0, c.0 + c.1),
                    rotation_max_deg: rot,
                    hflip_prob: flip,
                    translate_frac: tr,
                    shear_max_deg: sh,
                    scale_range: (sc.0, sc.0 + sc.1),
                    seed: 0,
                    image_size: size,
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn output_shape_matches_config(cfg in arb_cfg(), seed in any::<u64>(), h in 3u32..30, w in 3u32..30) {
                let img = noise_image(seed, h, w);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = random_augment(&img, &cfg, &mut rng).unwrap();
                prop_assert_eq!((out.height(), out.width()), cfg.image_size);
                prop_assert_eq!(out.bytes().unwrap().len(), (cfg.image_size.0 * cfg.image_size.1 * 3) as usize);
                let real = to_model_input(&out).unwrap();
                prop_assert!(real.real().unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
            }

            #[test]
            fn brightness_saturates_monotonically(seed in any::<u64>(), f in 1.0f64..4.0) {
                let img = noise_image(seed, 4, 4);
                let out = enhance_brightness(&img, f).unwrap();
                for (a, b) in img.bytes().unwrap().chunks(3).zip(out.bytes().unwrap().chunks(3)) {
                    let va = *a.iter().max().unwrap() as f64;
                    let vb = *b.iter().max().unwrap() as f64;
                    prop_assert!((vb - (va * f).min(255.0)).abs() <= 1.0);
                }
            }
        }
    }
}

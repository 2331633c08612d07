//! sRGB to CIELAB conversion.
//!
//! Constants:
//!
//! * transfer function: piecewise sRGB, linear segment below 0.04045
//!   (encode side: below 0.0031308), exponent 2.4
//! * RGB to XYZ: the sRGB primaries under D65,
//!   `[0.4124564 0.3575761 0.1804375; 0.2126729 0.7151522 0.0721750; 0.0193339 0.1191920 0.9503041]`
//! * reference white: D65, 2° observer, taken as the matrix row sums
//!   (`Xn = 0.9504700, Yn = 1.0000001, Zn = 1.0888300`) so that sRGB white
//!   lands exactly on `L* = 100, a* = b* = 0`
//! * CIE `epsilon = 216/24389`, `kappa = 24389/27`
//!
//! a\* stays a signed float; nothing downstream rescales it.

use std::sync::LazyLock;

use rayon::prelude::*;

use crate::error::{Error, Result};

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

pub const WHITE_D65: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const CIE_EPSILON: f64 = 216.0 / 24389.0;
const CIE_KAPPA: f64 = 24389.0 / 27.0;

static LINEAR_LUT: LazyLock<[f64; 256]> = LazyLock::new(|| {
    let mut lut = [0.0; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = srgb_channel_to_linear(v as f64 / 255.0);
    }
    lut
});

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

/// One CIELAB colour. `l` in [0, 100]; `a` and `b` roughly in [-128, 127].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

/// Row-major 8-bit sRGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_size(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Mean of one channel (0 = R) over the whole frame.
    pub fn channel_mean(&self, channel: usize) -> f64 {
        let sum: u64 = self.pixels.iter().map(|p| u64::from(p[channel])).sum();
        sum as f64 / self.pixels.len().max(1) as f64
    }

    pub fn into_pixels(self) -> Vec<[u8; 3]> {
        self.pixels
    }
}

/// Row-major CIELAB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabFrame {
    width: usize,
    height: usize,
    pixels: Vec<Lab>,
}

impl LabFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<Lab>) -> Result<Self> {
        check_size(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Lab] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Lab {
        self.pixels[y * self.width + x]
    }

    pub fn a_star(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x].a
    }

    pub fn mean_a_star(&self) -> f64 {
        self.pixels.iter().map(|p| p.a).sum::<f64>() / self.pixels.len().max(1) as f64
    }
}

fn check_size(width: usize, height: usize, len: usize) -> Result<()> {
    let expected = width * height;
    if expected != len {
        return Err(Error::FrameSize {
            width,
            height,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Gamma expansion of one channel in [0, 1].
pub fn srgb_channel_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Gamma compression of one linear channel in [0, 1].
pub fn linear_to_srgb_channel(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > CIE_EPSILON {
        t.cbrt()
    } else {
        (CIE_KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > CIE_EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / CIE_KAPPA
    }
}

pub fn linear_rgb_to_lab(rgb: [f64; 3]) -> Lab {
    let xyz = mul3(&RGB_TO_XYZ, rgb);
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

pub fn srgb_to_lab(rgb: [u8; 3]) -> Lab {
    let lut = &*LINEAR_LUT;
    linear_rgb_to_lab([
        lut[rgb[0] as usize],
        lut[rgb[1] as usize],
        lut[rgb[2] as usize],
    ])
}

/// Inverse conversion to unclamped, unquantized sRGB in [0, 1] units.
///
/// Out-of-gamut colours come back with components outside [0, 1].
pub fn lab_to_srgb_f64(lab: Lab) -> [f64; 3] {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE_D65[0],
        lab_f_inv(fy) * WHITE_D65[1],
        lab_f_inv(fz) * WHITE_D65[2],
    ];
    let lin = mul3(&XYZ_TO_RGB, xyz);
    lin.map(|c| {
        if c < 0.0 {
            -linear_to_srgb_channel(-c)
        } else {
            linear_to_srgb_channel(c)
        }
    })
}

/// Inverse conversion, clamped to the sRGB gamut and rounded to 8 bits.
pub fn lab_to_srgb(lab: Lab) -> [u8; 3] {
    lab_to_srgb_f64(lab).map(quantize)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn convert_frame(frame: &RgbFrame) -> LabFrame {
    LabFrame {
        width: frame.width,
        height: frame.height,
        pixels: frame.pixels.iter().map(|&p| srgb_to_lab(p)).collect(),
    }
}

/// Frame-parallel conversion; output order matches input order.
pub fn convert_frames(frames: &[RgbFrame]) -> Vec<LabFrame> {
    frames.par_iter().map(convert_frame).collect()
}

fn mul3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    let inv_det = 1.0 / det;
    [
        [
            cof(1, 2, 1, 2) * inv_det,
            -cof(0, 2, 1, 2) * inv_det,
            cof(0, 1, 1, 2) * inv_det,
        ],
        [
            -cof(1, 2, 0, 2) * inv_det,
            cof(0, 2, 0, 2) * inv_det,
            -cof(0, 1, 0, 2) * inv_det,
        ],
        [
            cof(1, 2, 0, 1) * inv_det,
            -cof(0, 2, 0, 1) * inv_det,
            cof(0, 1, 0, 1) * inv_det,
        ],
    ]
}

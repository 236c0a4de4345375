//! Image corruptions mapping [0, 1] images to [0, 1] images.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Corruption {
    Identity,
    /// Integer shift drawn uniformly from `[−max_shift, max_shift]²`, zero fill.
    Translate { max_shift: i32 },
    /// Normalized horizontal line kernel of odd `length`.
    MotionBlur { length: usize },
    /// Inverts the rows `first..=last`.
    Stripe { first: usize, last: usize },
    /// Sobel magnitude (scaled to a maximum of 1), non-maximum suppression and
    /// hysteresis thresholding; binary output.
    CannyEdges { low: f64, high: f64 },
    /// Adds `delta` and clips.
    Brightness { delta: f64 },
}

impl Corruption {
    pub fn name(&self) -> &'static str {
        match self {
            Corruption::Identity => "identity",
            Corruption::Translate { .. } => "translate",
            Corruption::MotionBlur { .. } => "motion-blur",
            Corruption::Stripe { .. } => "stripe",
            Corruption::CannyEdges { .. } => "canny-edges",
            Corruption::Brightness { .. } => "brightness",
        }
    }

    /// Default parameters of a corruption given by name.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Corruption::Identity,
            "translate" => Corruption::Translate { max_shift: 4 },
            "motion-blur" | "motion_blur" => Corruption::MotionBlur { length: 5 },
            "stripe" => Corruption::Stripe { first: 5, last: 9 },
            "canny-edges" | "canny_edges" => Corruption::CannyEdges { low: 0.1, high: 0.2 },
            "brightness" => Corruption::Brightness { delta: 0.3 },
            _ => return None,
        })
    }

    pub fn training_set() -> [Corruption; 3] {
        [
            Corruption::Identity,
            Corruption::MotionBlur { length: 5 },
            Corruption::Translate { max_shift: 4 },
        ]
    }

    pub fn test_set() -> [Corruption; 3] {
        [
            Corruption::Stripe { first: 5, last: 9 },
            Corruption::CannyEdges { low: 0.1, high: 0.2 },
            Corruption::Brightness { delta: 0.3 },
        ]
    }
}

/// Per-image generator derived from a seed and an image index.
fn image_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Applies `c` to one `h × w` image. `index` identifies the image for the
/// random draws of stochastic corruptions.
pub fn corrupt_image(c: &Corruption, img: &[f64], h: usize, w: usize, seed: u64, index: u64) -> Vec<f64> {
    match *c {
        Corruption::Identity => img.to_vec(),
        Corruption::Translate { max_shift } => {
            let mut rng = image_rng(seed, index);
            let dx = rng.random_range(-max_shift..=max_shift);
            let dy = rng.random_range(-max_shift..=max_shift);
            translate(img, h, w, dx, dy)
        }
        Corruption::MotionBlur { length } => motion_blur(img, h, w, length),
        Corruption::Stripe { first, last } => {
            let mut out = img.to_vec();
            for y in first..=last.min(h.saturating_sub(1)) {
                for v in &mut out[y * w..(y + 1) * w] {
                    *v = 1.0 - *v;
                }
            }
            out
        }
        Corruption::CannyEdges { low, high } => canny(img, h, w, low, high),
        Corruption::Brightness { delta } => img.iter().map(|v| (v + delta).clamp(0.0, 1.0)).collect(),
    }
}

/// Shifts right by `dx` and down by `dy`, filling with zeros.
pub fn translate(img: &[f64], h: usize, w: usize, dx: i32, dy: i32) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h as i32 {
        let sy = y - dy;
        if sy < 0 || sy >= h as i32 {
            continue;
        }
        for x in 0..w as i32 {
            let sx = x - dx;
            if sx >= 0 && sx < w as i32 {
                out[(y as usize) * w + x as usize] = img[(sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

fn motion_blur(img: &[f64], h: usize, w: usize, length: usize) -> Vec<f64> {
    let half = (length / 2) as i64;
    let weight = 1.0 / length as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for t in -half..=half {
                let sx = x as i64 + t;
                if sx >= 0 && (sx as usize) < w {
                    s += img[y * w + sx as usize];
                }
            }
            out[y * w + x] = (s * weight).clamp(0.0, 1.0);
        }
    }
    out
}

fn canny(img: &[f64], h: usize, w: usize, low: f64, high: f64) -> Vec<f64> {
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            img[y as usize * w + x as usize]
        }
    };
    let mut mag = vec![0.0; h * w];
    let mut dir = vec![0u8; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return vec![0.0; h * w];
    }
    let m = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            let (a, b) = match dir[i] {
                0 => (m(y, x - 1), m(y, x + 1)),
                1 => (m(y - 1, x - 1), m(y + 1, x + 1)),
                2 => (m(y - 1, x), m(y + 1, x)),
                _ => (m(y - 1, x + 1), m(y + 1, x - 1)),
            };
            if mag[i] >= a && mag[i] >= b {
                thin[i] = mag[i] / peak;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    let mut queue = VecDeque::new();
    for (i, &v) in thin.iter().enumerate() {
        if v >= high {
            out[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= low {
                    out[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

//! Synthetic phantoms used in place of clinical images.
//!
//! All phantoms live in the normalized square `[-1, 1]²` (y pointing up),
//! are supersampled 2×2 per pixel, take values in `[0, 1]` and are supported
//! strictly inside the inscribed circle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    /// Rotation in degrees.
    phi: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.to_radians().sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

// modified Shepp-Logan (higher contrast variant)
const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { value: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi: 0.0 },
    Ellipse { value: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi: 0.0 },
    Ellipse { value: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi: -18.0 },
    Ellipse { value: -0.2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi: 18.0 },
    Ellipse { value: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi: 0.0 },
    Ellipse { value: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi: 0.0 },
    Ellipse { value: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi: 0.0 },
];

#[derive(Debug, Clone, Copy)]
struct Blob {
    amp: f64,
    x0: f64,
    y0: f64,
    sigma: f64,
}

fn render(side: usize, f: impl Fn(f64, f64) -> f64) -> Image {
    const SUB: usize = 2;
    let half = side as f64 / 2.0;
    Image::from_fn(side, |r, c| {
        let mut acc = 0.0;
        for sr in 0..SUB {
            for sc in 0..SUB {
                let py = r as f64 + (sr as f64 + 0.5) / SUB as f64;
                let px = c as f64 + (sc as f64 + 0.5) / SUB as f64;
                let x = (px - half) / half;
                let y = (half - py) / half;
                acc += f(x, y);
            }
        }
        (acc / (SUB * SUB) as f64).clamp(0.0, 1.0)
    })
}

fn ellipse_sum(ellipses: &[Ellipse], x: f64, y: f64) -> f64 {
    ellipses
        .iter()
        .filter(|e| e.contains(x, y))
        .map(|e| e.value)
        .sum()
}

/// Modified Shepp-Logan head phantom; the standard test object.
pub fn shepp_logan(side: usize) -> Image {
    render(side, |x, y| ellipse_sum(&SHEPP_LOGAN, x, y))
}

/// Randomized ellipse-and-blob phantom. `(seed, index)` fully determine it.
pub fn random_phantom(side: usize, seed: u64, index: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let outer = Ellipse {
        value: rng.random_range(0.55..0.85),
        a: rng.random_range(0.6..0.8),
        b: rng.random_range(0.7..0.85),
        x0: rng.random_range(-0.03..0.03),
        y0: rng.random_range(-0.03..0.03),
        phi: rng.random_range(-15.0..15.0),
    };
    let mut ellipses = vec![outer];
    let n_inner = rng.random_range(4..=8);
    for _ in 0..n_inner {
        let a: f64 = rng.random_range(0.04..0.28);
        let b: f64 = rng.random_range(0.04..0.28);
        let reach = 0.5 - a.max(b) * 0.5;
        ellipses.push(Ellipse {
            value: rng.random_range(-0.35..0.35),
            a,
            b,
            x0: outer.x0 + rng.random_range(-reach..reach),
            y0: outer.y0 + rng.random_range(-reach..reach),
            phi: rng.random_range(0.0..180.0),
        });
    }
    let n_blobs = rng.random_range(2..=4);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            amp: rng.random_range(-0.2..0.2),
            x0: rng.random_range(-0.45..0.45),
            y0: rng.random_range(-0.5..0.5),
            sigma: rng.random_range(0.05..0.2),
        })
        .collect();

    render(side, |x, y| {
        if !outer.contains(x, y) {
            return 0.0;
        }
        let mut v = ellipse_sum(&ellipses, x, y);
        for b in &blobs {
            let r2 = (x - b.x0).powi(2) + (y - b.y0).powi(2);
            v += b.amp * (-r2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        v
    })
}

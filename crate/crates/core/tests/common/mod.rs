//! Shared fixtures for the integration suites: synthetic stroke-digit images
//! in IDX format (stand-ins for handwritten-digit files) and small helpers.

use rand::Rng;
use np_core::rng::Prng;

/// Renders a digit-like glyph: a few connected quadratic strokes with a soft
/// brush on a 28×28 canvas. The same family of blobs and arcs across images
/// gives a model real shared structure to learn, like a digit corpus.
pub fn stroke_digit(rng: &mut Prng) -> Vec<u8> {
    const N: usize = 28;
    let mut canvas = vec![0.0f64; N * N];
    let n_strokes = rng.gen_range(2..=4);
    for _ in 0..n_strokes {
        // quadratic Bézier with endpoints in the central region
        let p: Vec<[f64; 2]> = (0..3)
            .map(|_| [rng.gen_range(5.0..23.0), rng.gen_range(5.0..23.0)])
            .collect();
        let thickness: f64 = rng.gen_range(1.0..1.8);
        for step in 0..=60 {
            let t = step as f64 / 60.0;
            let u = 1.0 - t;
            let x = u * u * p[0][0] + 2.0 * u * t * p[1][0] + t * t * p[2][0];
            let y = u * u * p[0][1] + 2.0 * u * t * p[1][1] + t * t * p[2][1];
            // soft circular brush
            let r = thickness.ceil() as i64 + 1;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (px, py) = (x as i64 + dx, y as i64 + dy);
                    if (0..N as i64).contains(&px) && (0..N as i64).contains(&py) {
                        let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                        let ink = (-d2 / (2.0 * thickness * thickness)).exp();
                        let cell = &mut canvas[py as usize * N + px as usize];
                        *cell = (*cell + ink).min(1.0);
                    }
                }
            }
        }
    }
    canvas.iter().map(|&v| (v * 255.0).round() as u8).collect()
}

/// A complete IDX file of `count` synthetic 28×28 digits.
pub fn stroke_digit_idx(count: usize, rng: &mut Prng) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(16 + count * 28 * 28);
    bytes.extend(0x0000_0803u32.to_be_bytes());
    bytes.extend((count as u32).to_be_bytes());
    bytes.extend(28u32.to_be_bytes());
    bytes.extend(28u32.to_be_bytes());
    for _ in 0..count {
        bytes.extend(stroke_digit(rng));
    }
    bytes
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RawImages;

const SIDE: usize = 28;

// Stroke anchors: top-left, top-right, mid-left, mid-right, bottom-left, bottom-right.
const ANCHORS: [(f64, f64); 6] = [
    (9.0, 5.0),
    (19.0, 5.0),
    (9.0, 14.0),
    (19.0, 14.0),
    (9.0, 23.0),
    (19.0, 23.0),
];

// Segment endpoints as anchor indices, in the usual a..g order.
const SEGMENTS: [(usize, usize); 7] = [(0, 1), (1, 3), (3, 5), (4, 5), (2, 4), (0, 2), (2, 3)];

fn segments_of(digit: u8) -> &'static [usize] {
    match digit {
        0 => &[0, 1, 2, 3, 4, 5],
        1 => &[1, 2],
        2 => &[0, 1, 6, 4, 3],
        3 => &[0, 1, 6, 2, 3],
        4 => &[5, 6, 1, 2],
        5 => &[0, 5, 6, 2, 3],
        6 => &[0, 5, 6, 4, 3, 2],
        7 => &[0, 1, 2],
        8 => &[0, 1, 2, 3, 4, 5, 6],
        _ => &[0, 1, 2, 3, 5, 6],
    }
}

/// Handwriting-like 28×28 digit images built from jittered stroke segments.
///
/// Each image perturbs the stroke anchors, applies a random similarity
/// transform with shear, varies the stroke width and adds pixel noise.
/// Output is `per_class` images per requested class, interleaved by class.
pub fn synthetic_digit_images(classes: &[u8], per_class: usize, seed: u64) -> RawImages {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 1.3).expect("valid");
    let noise = Normal::new(0.0, 0.04).expect("valid");
    let mut pixels = Vec::with_capacity(classes.len() * per_class * SIDE * SIDE);
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    for _ in 0..per_class {
        for &digit in classes {
            let scale: f64 = rng.random_range(0.8..1.1);
            let angle: f64 = rng.random_range(-0.25..0.25);
            let shear: f64 = rng.random_range(-0.3..0.3);
            let (tx, ty): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let width: f64 = rng.random_range(0.9..2.1);
            let (sin, cos) = angle.sin_cos();
            let pts: Vec<(f64, f64)> = ANCHORS
                .iter()
                .map(|&(x, y)| {
                    let (x, y) = (
                        x + jitter.sample(&mut rng) - 14.0,
                        y + jitter.sample(&mut rng) - 14.0,
                    );
                    let x = x + shear * y;
                    (
                        14.0 + tx + scale * (cos * x - sin * y),
                        14.0 + ty + scale * (sin * x + cos * y),
                    )
                })
                .collect();
            let strokes: Vec<((f64, f64), (f64, f64))> = segments_of(digit)
                .iter()
                .map(|&s| (pts[SEGMENTS[s].0], pts[SEGMENTS[s].1]))
                .collect();
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let p = (c as f64 + 0.5, r as f64 + 0.5);
                    let dist = strokes
                        .iter()
                        .map(|&(a, b)| segment_distance(p, a, b))
                        .fold(f64::INFINITY, f64::min);
                    let ink = (width + 0.5 - dist).clamp(0.0, 1.0) + noise.sample(&mut rng);
                    pixels.push((ink.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
            labels.push(digit);
        }
    }
    RawImages {
        rows: SIDE,
        cols: SIDE,
        pixels,
        labels,
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let a = synthetic_digit_images(&[3, 5], 10, 9);
        assert_eq!(a, synthetic_digit_images(&[3, 5], 10, 9));
        assert_eq!(a.len(), 20);
        assert_eq!(a.labels.iter().filter(|&&l| l == 5).count(), 10);
        assert_eq!(a.pixels.len(), 20 * 784);
        let ink: u64 = a.image(0).iter().map(|&v| v as u64).sum();
        assert!(ink > 255 * 20);
    }

    #[test]
    fn class_means_differ_on_the_upper_verticals() {
        let raw = synthetic_digit_images(&[3, 5], 200, 2);
        let mean = |digit: u8, c0: usize, c1: usize| {
            let mut acc = 0.0;
            for i in (0..raw.len()).filter(|&i| raw.labels[i] == digit) {
                let img = raw.image(i);
                for r in 6..13 {
                    for c in c0..c1 {
                        acc += img[r * SIDE + c] as f64;
                    }
                }
            }
            acc
        };
        assert!(mean(3, 17, 22) > mean(5, 17, 22));
        assert!(mean(5, 6, 11) > mean(3, 6, 11));
    }
}

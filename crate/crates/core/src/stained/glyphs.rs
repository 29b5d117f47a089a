//! Procedural 28×28 digit glyphs, used when no MNIST files are supplied.
//!
//! Each digit is a handful of polylines in the unit square, drawn with a
//! random slant, scale, offset and stroke width and anti-aliased by
//! distance. Strokes are bold (6 to 8 px): thinning erases everything within
//! about two source pixels of an edge, and thinner strokes vanish entirely.

use rand::Rng;

use crate::raster::Raster;

pub const GLYPH_SIZE: usize = 28;

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Stroke {
    (0..=24)
        .map(|i| {
            let t = i as f64 / 24.0 * std::f64::consts::TAU;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Strokes of `digit` as `(x, y)` points, x to the right, y down.
fn strokes(digit: u8) -> Vec<Stroke> {
    match digit % 10 {
        0 => vec![ellipse(0.5, 0.5, 0.24, 0.34)],
        1 => vec![vec![(0.38, 0.27), (0.52, 0.15), (0.52, 0.85)]],
        2 => vec![vec![
            (0.28, 0.3),
            (0.35, 0.18),
            (0.5, 0.13),
            (0.65, 0.18),
            (0.72, 0.3),
            (0.68, 0.42),
            (0.28, 0.85),
            (0.76, 0.85),
        ]],
        3 => vec![vec![
            (0.28, 0.17),
            (0.7, 0.17),
            (0.48, 0.45),
            (0.68, 0.55),
            (0.72, 0.7),
            (0.6, 0.84),
            (0.4, 0.86),
            (0.27, 0.78),
        ]],
        4 => vec![vec![(0.62, 0.85), (0.62, 0.15), (0.25, 0.62), (0.78, 0.62)]],
        5 => vec![vec![
            (0.72, 0.15),
            (0.33, 0.15),
            (0.3, 0.45),
            (0.5, 0.4),
            (0.68, 0.48),
            (0.72, 0.65),
            (0.62, 0.82),
            (0.45, 0.86),
            (0.28, 0.8),
        ]],
        6 => vec![vec![
            (0.65, 0.15),
            (0.45, 0.3),
            (0.32, 0.55),
            (0.33, 0.75),
            (0.48, 0.86),
            (0.65, 0.8),
            (0.7, 0.65),
            (0.6, 0.52),
            (0.45, 0.52),
            (0.33, 0.62),
        ]],
        7 => vec![vec![(0.27, 0.15), (0.73, 0.15), (0.45, 0.85)]],
        8 => vec![ellipse(0.5, 0.32, 0.18, 0.17), ellipse(0.5, 0.67, 0.22, 0.19)],
        _ => vec![ellipse(0.5, 0.35, 0.2, 0.18), vec![(0.7, 0.35), (0.6, 0.85)]],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Draws one jittered glyph of `digit`.
pub fn procedural_digit<R: Rng + ?Sized>(digit: u8, rng: &mut R) -> Raster {
    let n = GLYPH_SIZE as f64;
    let scale = rng.random_range(0.9..1.05) * 19.0;
    let slant = rng.random_range(-0.2..0.2);
    let (ox, oy) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let half_width = rng.random_range(3.0..3.8);
    let to_px = |(x, y): (f64, f64)| {
        let (x, y) = (x - 0.5, y - 0.5);
        (n / 2.0 + ox + scale * (x - slant * y), n / 2.0 + oy + scale * y)
    };
    let strokes: Vec<Vec<(f64, f64)>> = strokes(digit)
        .into_iter()
        .map(|s| s.into_iter().map(to_px).collect())
        .collect();
    Raster::from_fn(GLYPH_SIZE, GLYPH_SIZE, |r, c| {
        let p = (c as f64 + 0.5, r as f64 + 0.5);
        let d = strokes
            .iter()
            .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
            .fold(f64::INFINITY, f64::min);
        (half_width + 0.5 - d).clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream, Domain};

    #[test]
    fn glyphs_have_ink_in_range() {
        for d in 0..10 {
            let g = procedural_digit(d, &mut stream(3, Domain::Synth, d as u64, 1));
            let (lo, hi) = g.min_max();
            assert!(lo >= 0.0 && hi == 1.0);
            let ink = g.data().iter().filter(|&&v| v > 0.5).count();
            assert!((40..400).contains(&ink), "digit {d} has {ink} ink pixels");
            // Nothing touches the border.
            for i in 0..GLYPH_SIZE {
                assert_eq!(g.get(0, i) + g.get(GLYPH_SIZE - 1, i), 0.0, "digit {d}");
            }
        }
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(segment_distance((0.0, 1.0), (-1.0, 0.0), (1.0, 0.0)), 1.0);
        assert_eq!(segment_distance((3.0, 4.0), (0.0, 0.0), (0.0, 0.0)), 5.0);
        assert_eq!(segment_distance((2.0, 0.0), (-1.0, 0.0), (1.0, 0.0)), 1.0);
    }
}

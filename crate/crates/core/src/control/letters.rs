use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Letter height, m.
pub const LETTER_HEIGHT: f64 = 0.22;
pub const MIN_WAYPOINTS: usize = 24;
pub const MAX_WAYPOINTS: usize = 44;

/// Target waypoint spacing along the stroke, m.
const SPACING: f64 = 0.02;

pub const SUPPORTED_LETTERS: [char; 7] = ['H', 'E', 'L', 'O', 'W', 'R', 'D'];

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize) -> Vec<[f64; 2]> {
    (0..=n)
        .map(|k| {
            let a = from + (to - from) * k as f64 / n as f64;
            [cx + rx * a.cos(), cy + ry * a.sin()]
        })
        .collect()
}

/// Single-stroke outline in units of the letter height, centred on the
/// origin. Strokes that cannot be drawn in one pass retrace a segment.
fn outline(letter: char) -> Option<Vec<[f64; 2]>> {
    let w = 0.3;
    let h = 0.5;
    let pts = match letter {
        'H' => vec![[-w, h], [-w, -h], [-w, 0.0], [w, 0.0], [w, h], [w, -h]],
        'E' => vec![[w, h], [-w, h], [-w, 0.0], [0.7 * w, 0.0], [-w, 0.0], [-w, -h], [w, -h]],
        'L' => vec![[-w, h], [-w, -h], [w, -h]],
        'O' => arc(0.0, 0.0, w, h, FRAC_PI_2, FRAC_PI_2 + 2.0 * PI, 24),
        'W' => vec![[-w, h], [-0.5 * w, -h], [0.0, 0.2], [0.5 * w, -h], [w, h]],
        'R' => {
            let mut p = vec![[-w, -h], [-w, h], [0.1 * w, h]];
            p.extend(arc(0.1 * w, 0.25, 0.9 * w, 0.25, FRAC_PI_2, -FRAC_PI_2, 8).into_iter().skip(1));
            p.push([-w, 0.0]);
            p.push([w, -h]);
            p
        }
        'D' => {
            let mut p = vec![[-w, -h], [-w, h], [-0.2 * w, h]];
            p.extend(arc(-0.2 * w, 0.0, 1.2 * w, h, FRAC_PI_2, -FRAC_PI_2, 12).into_iter().skip(1));
            p.push([-w, -h]);
            p
        }
        _ => return None,
    };
    Some(pts)
}

/// Points spaced evenly by arc length along `poly`, endpoints included.
pub fn resample(poly: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let mut cum = vec![0.0];
    for w in poly.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if n < 2 || total == 0.0 {
        return vec![poly[0]; n.max(1)];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let a = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let p = poly[seg];
        let q = poly[seg + 1];
        out.push([p[0] + a * (q[0] - p[0]), p[1] + a * (q[1] - p[1])]);
    }
    out
}

fn polyline_length(poly: &[[f64; 2]]) -> f64 {
    poly.windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Waypoints for `letter`, 22 cm tall and centred on the plate.
pub fn letter_path(letter: char) -> Result<Vec<[f64; 2]>> {
    let up = letter.to_ascii_uppercase();
    let unit = outline(up).ok_or(Error::UnsupportedLetter(letter))?;
    let scaled: Vec<[f64; 2]> = unit
        .iter()
        .map(|p| [p[0] * LETTER_HEIGHT, p[1] * LETTER_HEIGHT])
        .collect();
    let n = ((polyline_length(&scaled) / SPACING).round() as usize + 1).clamp(MIN_WAYPOINTS, MAX_WAYPOINTS);
    Ok(resample(&scaled, n))
}

//! Straight-line reference implementations used to check the library.
//! Nothing here calls into the crate, so a shared bug cannot hide.
#![allow(dead_code)]

pub fn fraction(t: usize, p_min: f64, t_c: usize, exponent: f64) -> f64 {
    if t_c == 1 {
        return 1.0;
    }
    let x = (t as f64 - 1.0) / (t_c as f64 - 1.0);
    p_min + (1.0 - p_min) * x.powf(exponent)
}

pub fn entropy_bits(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln() / std::f64::consts::LN_2;
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln() / std::f64::consts::LN_2;
    }
    h
}

pub fn pixel_weight(p: f64, t: usize, t_c: usize, w_min: f64, exponential: bool) -> f64 {
    let x = t as f64 / t_c as f64;
    let beta = if exponential { (-x).exp() } else { 1.0 - x };
    w_min + (1.0 - w_min) * (1.0 - beta * entropy_bits(p))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Gaussian,
    Triangular,
    Quadratic,
}

/// Sample weights for a cohort of `(mean, variance)` pairs, in input order.
/// `drop` is `[mu, sigma, out]`.
pub fn sample_weights(
    cohort: &[(f64, f64)],
    sigma_star: f64,
    gamma: f64,
    w_min: f64,
    shape: Shape,
    drop: [bool; 3],
) -> Vec<f64> {
    let scale = |xs: Vec<f64>, neutral: f64| -> Vec<f64> {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            vec![neutral; xs.len()]
        } else {
            xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
        }
    };
    let mu_n = scale(cohort.iter().map(|c| c.0).collect(), 0.0);
    let var_n = scale(cohort.iter().map(|c| c.1).collect(), sigma_star);
    mu_n.iter()
        .zip(&var_n)
        .map(|(&m, &v)| {
            let d = v - sigma_star;
            let a = if drop[0] { 1.0 } else { 1.0 - m };
            let b = if drop[1] {
                1.0
            } else {
                match shape {
                    Shape::Gaussian => (-d * d / (2.0 * gamma * gamma)).exp(),
                    Shape::Triangular => (1.0 - d.abs() / gamma).max(0.0),
                    Shape::Quadratic => (1.0 - (d / gamma).powi(2)).max(0.0),
                }
            };
            let c = if drop[2] { 1.0 } else { 1.0 - m * (1.0 - v) };
            w_min + (1.0 - w_min) * a * b * c
        })
        .collect()
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Weight-normalised binary cross-entropy with the 1e-7 probability clamp.
pub fn bce(logits: &[f64], target: &[u8], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..logits.len() {
        let p = sig(logits[i]).clamp(1e-7, 1.0 - 1e-7);
        let l = if target[i] == 1 { -p.ln() } else { -(1.0 - p).ln() };
        num += w[i] * l;
        den += w[i];
    }
    num / den
}

/// Weighted soft IoU loss with smoothing 1.
pub fn soft_iou(logits: &[f64], target: &[u8], w: &[f64]) -> f64 {
    let (mut i_, mut u) = (0.0, 0.0);
    for k in 0..logits.len() {
        let p = sig(logits[k]);
        let y = target[k] as f64;
        i_ += w[k] * p * y;
        u += w[k] * (p + y - p * y);
    }
    1.0 - (i_ + 1.0) / (u + 1.0)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|)`, with a floor so two tiny values compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        return (a - b).abs();
    }
    (a - b).abs() / scale
}

/// Brute-force 2-D DFT, unnormalised, natural (uncentered) index order.
pub fn naive_dft(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let ang = -2.0
                        * std::f64::consts::PI
                        * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    re += x[r * w + c] * ang.cos();
                    im += x[r * w + c] * ang.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

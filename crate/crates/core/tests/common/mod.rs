//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use projfilter::gauss_ring::{RingFunction, Sign};
use projfilter::metrics::StepCdf;

// 15-point Kronrod nodes on [0, 1] and weights, with the embedded 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let s = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature on `[a, b]`: keeps
/// bisecting the interval with the largest error estimate until the total
/// estimate drops below `rel_tol` times the integral of `|f|`.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut parts = vec![(a, b, kronrod(f, a, b))];
    for _ in 0..4000 {
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        let scale: f64 = parts.iter().map(|p| p.2 .0.abs()).sum();
        if err <= rel_tol * scale {
            break;
        }
        let worst = (0..parts.len())
            .max_by(|&i, &j| parts[i].2 .1.total_cmp(&parts[j].2 .1))
            .unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, kronrod(f, lo, mid)));
        parts.push((mid, hi, kronrod(f, mid, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// Term-by-term evaluation straight from the stored fields.
pub fn eval_ring(f: &RingFunction, x: f64) -> f64 {
    f.terms()
        .iter()
        .map(|t| {
            let s = if t.sign == Sign::Plus { 1.0 } else { -1.0 };
            s * x.powi(t.n as i32) * (t.a * x * x + t.b * x + t.c).exp()
        })
        .sum()
}

/// Interval outside which every decaying term is negligible.
pub fn ring_support(f: &RingFunction) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in f.terms() {
        let center = -t.b / (2.0 * t.a);
        let width = (80.0 / -t.a).sqrt() + (t.n as f64 / -t.a).sqrt() + 5.0;
        lo = lo.min(center - width);
        hi = hi.max(center + width);
    }
    (lo, hi)
}

/// `(∫ f, ∫ |f|)` by adaptive quadrature, split at the term centers.
pub fn ring_integral(f: &RingFunction) -> (f64, f64) {
    let (lo, hi) = ring_support(f);
    let mut cuts: Vec<f64> = f.terms().iter().map(|t| -t.b / (2.0 * t.a)).collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut v = 0.0;
    let mut abs = 0.0;
    for w in cuts.windows(2) {
        v += adaptive(&|x| eval_ring(f, x), w[0], w[1], 1e-14);
        abs += adaptive(&|x| eval_ring(f, x).abs(), w[0], w[1], 1e-14);
    }
    (v, abs)
}

/// Discrete-time Kalman filter for `dX = αX dt + σ dW`, `dY = βX dt + dV`:
/// exact Ornstein–Uhlenbeck prediction over `dt`, then the Gaussian update
/// with `ΔY ~ N(βxΔ, Δ)`.
pub fn kalman_track(alpha: f64, sigma: f64, beta: f64, m0: f64, p0: f64, dt: f64, dy: &[f64]) -> Vec<(f64, f64)> {
    let decay = (alpha * dt).exp();
    let q = if alpha == 0.0 {
        sigma * sigma * dt
    } else {
        sigma * sigma * ((2.0 * alpha * dt).exp() - 1.0) / (2.0 * alpha)
    };
    let mut m = m0;
    let mut p = p0;
    let mut out = vec![(m, p)];
    for &d in dy {
        m *= decay;
        p = decay * decay * p + q;
        let h = beta * dt;
        let s = h * h * p + dt;
        let gain = p * h / s;
        m += gain * (d - h * m);
        p *= 1.0 - gain * h;
        out.push((m, p));
    }
    out
}

/// Fewest jumps of a nondecreasing step function `G` with `G(-∞) = 0`,
/// `G(∞) = 1` inside the band `F(x-ε) - ε ≤ G(x) ≤ F(x+ε) + ε`, by dynamic
/// programming over the intervals on which both band edges are constant.
pub fn min_jumps_dp(f: &StepCdf, eps: f64) -> usize {
    let mut points: Vec<f64> = f.xs().iter().flat_map(|&x| [x - eps, x + eps]).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    // interval j is [points[j-1], points[j]) with points[-1] = -∞
    let probe: Vec<f64> = std::iter::once(points[0] - 1.0).chain(points.iter().copied()).collect();
    // count jumps by comparing against the same shifted expressions, so that
    // (x + ε) - ε rounding cannot misplace a breakpoint
    let level_after = |shift: f64, p: f64| {
        let jumps = f.xs().iter().filter(|&&x| x + shift <= p).count();
        if jumps == 0 { 0.0 } else { f.values()[jumps - 1] }
    };
    let lower: Vec<f64> = probe.iter().map(|&p| level_after(eps, p) - eps).collect();
    let upper: Vec<f64> = probe.iter().map(|&p| level_after(-eps, p) + eps).collect();

    let mut levels: Vec<f64> = vec![0.0, 1.0];
    levels.extend(lower.iter().chain(&upper).map(|v| v.clamp(0.0, 1.0)));
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    const INF: usize = usize::MAX / 4;
    let feasible = |j: usize, l: f64| lower[j] <= l && l <= upper[j];
    // the first interval extends to -∞, so G is 0 there
    let mut cost: Vec<usize> = levels.iter().map(|&l| if l == 0.0 && feasible(0, l) { 0 } else { INF }).collect();
    for j in 1..probe.len() {
        let mut next = vec![INF; levels.len()];
        let mut best_below = INF;
        for (i, &l) in levels.iter().enumerate() {
            let stay = cost[i];
            if feasible(j, l) {
                next[i] = stay.min(best_below.saturating_add(1));
            }
            best_below = best_below.min(cost[i]);
        }
        cost = next;
    }
    // the last interval extends to +∞, so G must reach 1 there
    let last = levels.len() - 1;
    let below = cost[..last].iter().min().copied().unwrap_or(INF);
    cost[last].min(below.saturating_add(1))
}

/// Smallest ε with `min_jumps_dp(f, ε) ≤ n`, by bisection.
pub fn min_eps_dp(f: &StepCdf, n: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if min_jumps_dp(f, mid) <= n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ogae_core::kernel::{gram, GramMatrix, KernelSpec, DEFAULT_JITTER};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect()
}

pub fn as_refs(points: &[Vec<f64>]) -> Vec<&[f64]> {
    points.iter().map(|p| p.as_slice()).collect()
}

pub fn random_gram(rng: &mut ChaCha8Rng, n: usize) -> (GramMatrix, Vec<Vec<f64>>, KernelSpec) {
    let dim = rng.random_range(1..=3);
    let pts = random_points(rng, n, dim);
    let spec = KernelSpec::rbf(rng.random_range(0.2..3.0)).unwrap();
    let k = gram(&spec, &as_refs(&pts), DEFAULT_JITTER).unwrap();
    (k, pts, spec)
}

/// Minimum of `½ αᵀKα` over `0 ≤ α ≤ 1/(νn)`, `Σα = 1`, by enumerating every
/// assignment of each coordinate to {lower bound, upper bound, free} and
/// solving the equality-constrained problem on the free set. The optimum is
/// stationary for its own assignment, so the feasible minimum is the answer.
pub fn brute_force_dual(k: &[f64], n: usize, nu: f64) -> (f64, Vec<f64>) {
    let ub = 1.0 / (nu * n as f64);
    let feas_tol = 1e-10;
    let mut best = (f64::INFINITY, vec![]);
    let total = 3usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..total {
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha = vec![0.0; n];
        let mut fixed_mass = 0.0;
        for i in 0..n {
            if state[i] == 1 {
                alpha[i] = ub;
                fixed_mass += ub;
            }
        }
        if free.is_empty() {
            if (fixed_mass - 1.0).abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut b = DVector::<f64>::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = k[i * n + j];
                }
                a[(r, m)] = 1.0;
                a[(m, r)] = 1.0;
                b[r] = -(0..n).filter(|&j| state[j] == 1).map(|j| k[i * n + j] * ub).sum::<f64>();
            }
            b[m] = 1.0 - fixed_mass;
            let Some(x) = a.lu().solve(&b) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                if x[r] < -feas_tol || x[r] > ub + feas_tol {
                    ok = false;
                    break;
                }
                alpha[i] = x[r];
            }
            if !ok {
                continue;
            }
        }
        let mut obj = 0.0;
        for i in 0..n {
            for j in 0..n {
                obj += alpha[i] * k[i * n + j] * alpha[j];
            }
        }
        obj *= 0.5;
        if obj < best.0 {
            best = (obj, alpha);
        }
    }
    best
}

/// Central difference of a scalar function of one variable.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(n: usize, values: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(n, n, values);
    m.symmetric_eigenvalues().min()
}

/// Ranks with ties averaged (1-based).
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for t in i..=j {
            r[idx[t]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// AUROC as the fraction of (anomalous, normal) pairs ranked correctly, ties half.
pub fn pair_count_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn thresholds(s: &[f64]) -> Vec<f64> {
    let mut t = s.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

fn counts_at(s: &[f64], y: &[bool], t: f64) -> (f64, f64) {
    let tp = s.iter().zip(y).filter(|(v, l)| **l && **v >= t).count() as f64;
    let fp = s.iter().zip(y).filter(|(v, l)| !**l && **v >= t).count() as f64;
    (tp, fp)
}

pub fn threshold_aupr(s: &[f64], y: &[bool]) -> f64 {
    let p = y.iter().filter(|&&l| l).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds(s) {
        let (tp, fp) = counts_at(s, y, t);
        let recall = tp / p;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    ap
}

/// Area under the ROC polyline left of `limit`, via the shoelace formula.
pub fn polygon_partial_auc(s: &[f64], y: &[bool], limit: f64) -> f64 {
    let p = y.iter().filter(|&&l| l).count() as f64;
    let n = y.len() as f64 - p;
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds(s) {
        let (tp, fp) = counts_at(s, y, t);
        pts.push((fp / n, tp / p));
    }
    let mut clipped = vec![pts[0]];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.0 <= limit {
            clipped.push(b);
        } else {
            let t = (limit - a.0) / (b.0 - a.0);
            clipped.push((limit, a.1 + t * (b.1 - a.1)));
            break;
        }
    }
    let end = clipped.last().unwrap().0;
    clipped.push((end, 0.0));
    let mut area = 0.0;
    for i in 0..clipped.len() {
        let (x0, y0) = clipped[i];
        let (x1, y1) = clipped[(i + 1) % clipped.len()];
        area += x0 * y1 - x1 * y0;
    }
    area.abs() / 2.0
}

/// Stand-in for MNIST: one noisy blob per image whose position depends on
/// the digit. `counts[d]` images of digit `d`.
pub fn fake_digits(counts: &[usize; 10], origin: ogae_core::data::Origin, seed: u64) -> ogae_core::data::LabeledImageSet {
    let mut r = rng(seed);
    let mut set = ogae_core::data::LabeledImageSet::empty(28, 28);
    let mut index = 0;
    for (digit, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let cy = 8.0 + digit as f64 + r.random_range(-1.5..1.5);
            let cx = 18.0 - digit as f64 + r.random_range(-1.5..1.5);
            let img: Vec<f64> = (0..28 * 28)
                .map(|p| {
                    let (y, x) = ((p / 28) as f64, (p % 28) as f64);
                    let v = (-((y - cy).powi(2) + (x - cx).powi(2)) / 20.0).exp() + r.random_range(0.0..0.1);
                    v.min(1.0)
                })
                .collect();
            set.push(&img, digit as u8, "identity", origin, index);
            index += 1;
        }
    }
    set
}

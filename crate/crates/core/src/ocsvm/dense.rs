//! Dense solver for small duals: accelerated projected gradient onto the
//! box ∩ simplex set, followed by a primal active-set polish that solves the
//! reduced KKT system exactly.

use log::debug;

use super::{finish, OcsvmSolution, OcsvmSpec};
use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::linalg;

const FISTA_MAX_ITERS: usize = 20_000;

/// Euclidean projection of `v` onto `{x : 0 ≤ xᵢ ≤ upper, Σxᵢ = total}`.
pub(crate) fn project_box_simplex(v: &[f64], upper: f64, total: f64) -> Vec<f64> {
    let n = v.len();
    if total >= n as f64 * upper {
        return vec![upper; n];
    }
    let mass = |tau: f64| -> f64 { v.iter().map(|&x| (x - tau).clamp(0.0, upper)).sum() };
    let mut breaks: Vec<f64> = v.iter().flat_map(|&x| [x - upper, x]).collect();
    breaks.sort_by(f64::total_cmp);
    // mass() is non-increasing; find the last breakpoint whose mass is still ≥ total.
    let (mut lo, mut hi) = (0usize, breaks.len() - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if mass(breaks[mid]) >= total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (m_lo, m_hi) = (mass(breaks[lo]), mass(breaks[hi]));
    let tau = if m_lo - m_hi > 0.0 {
        breaks[lo] + (m_lo - total) * (breaks[hi] - breaks[lo]) / (m_lo - m_hi)
    } else {
        breaks[lo]
    };
    v.iter().map(|&x| (x - tau).clamp(0.0, upper)).collect()
}

fn fista(k: &GramMatrix, upper: f64, total: f64) -> (Vec<f64>, usize) {
    let n = k.n();
    let lipschitz = (0..n)
        .map(|i| k.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut x = vec![total / n as f64; n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    for it in 0..FISTA_MAX_ITERS {
        let grad = k.mul_vec(&y);
        let step: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - gi / lipschitz).collect();
        let x_next = project_box_simplex(&step, upper, total);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let mut change = 0.0f64;
        for i in 0..n {
            change = change.max((x_next[i] - x[i]).abs());
            y[i] = x_next[i] + momentum * (x_next[i] - x[i]);
        }
        x = x_next;
        t = t_next;
        if change <= 1e-9 * upper {
            return (x, it + 1);
        }
    }
    (x, FISTA_MAX_ITERS)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Lower,
    Upper,
    Free,
}

/// Primal active-set method started from a feasible point. Returns `None`
/// when it fails to certify optimality within its iteration budget.
fn active_set(k: &GramMatrix, mut x: Vec<f64>, upper: f64, total: f64) -> Option<(Vec<f64>, usize)> {
    let n = k.n();
    let mut status: Vec<Status> = x
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                Status::Lower
            } else if v >= upper {
                Status::Upper
            } else {
                Status::Free
            }
        })
        .collect();
    for (xi, s) in x.iter_mut().zip(&status) {
        match s {
            Status::Lower => *xi = 0.0,
            Status::Upper => *xi = upper,
            Status::Free => {}
        }
    }
    let max_iters = 20 * n + 100;
    for it in 0..max_iters {
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Status::Free).collect();
        let g = k.mul_vec(&x);
        let gscale = 1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * gscale;

        let rho = if free.is_empty() {
            let lo = (0..n)
                .filter(|&i| status[i] == Status::Upper)
                .map(|i| g[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let hi = (0..n)
                .filter(|&i| status[i] == Status::Lower)
                .map(|i| g[i])
                .fold(f64::INFINITY, f64::min);
            if lo <= hi + tol {
                return Some((x, it));
            }
            // Release the upper-bound index with the largest gradient.
            let release = (0..n)
                .filter(|&i| status[i] == Status::Upper)
                .max_by(|&a, &b| g[a].total_cmp(&g[b]))
                .or_else(|| {
                    (0..n)
                        .filter(|&i| status[i] == Status::Lower)
                        .min_by(|&a, &b| g[a].total_cmp(&g[b]))
                })?;
            status[release] = Status::Free;
            continue;
        } else {
            let m = free.len();
            let dim = m + 1;
            let mut mat = vec![0.0; dim * dim];
            let mut rhs = vec![0.0; dim];
            let fixed_mass: f64 = (0..n).filter(|&i| status[i] != Status::Free).map(|i| x[i]).sum();
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    mat[a * dim + b] = k.get(i, j);
                }
                mat[a * dim + m] = -1.0;
                mat[m * dim + a] = 1.0;
                // −K_{i,W} x_W
                rhs[a] = -(0..n)
                    .filter(|&j| status[j] != Status::Free)
                    .map(|j| k.get(i, j) * x[j])
                    .sum::<f64>();
            }
            rhs[m] = total - fixed_mass;
            let sol = linalg::solve(dim, mat, &rhs).ok()?;
            let direction: Vec<f64> = free.iter().enumerate().map(|(a, &i)| sol[a] - x[i]).collect();
            let step_norm = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if step_norm > 1e-15 * upper.max(1.0) {
                let mut t = 1.0;
                let mut blocking = None;
                for (a, &i) in free.iter().enumerate() {
                    let p = direction[a];
                    let limit = if p < 0.0 {
                        -x[i] / p
                    } else if p > 0.0 {
                        (upper - x[i]) / p
                    } else {
                        f64::INFINITY
                    };
                    if limit < t {
                        t = limit;
                        blocking = Some((i, if p < 0.0 { Status::Lower } else { Status::Upper }));
                    }
                }
                for (a, &i) in free.iter().enumerate() {
                    x[i] = if t == 1.0 { sol[a] } else { x[i] + t * direction[a] };
                }
                if let Some((i, s)) = blocking {
                    status[i] = s;
                    x[i] = if s == Status::Lower { 0.0 } else { upper };
                }
                // Clip rounding excursions of the remaining free coordinates.
                for &i in &free {
                    if status[i] == Status::Free {
                        x[i] = x[i].clamp(0.0, upper);
                    }
                }
                continue;
            }
            sol[m]
        };

        // Stationary on the working set: check multiplier signs.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let multiplier = match status[i] {
                Status::Lower => g[i] - rho,
                Status::Upper => rho - g[i],
                Status::Free => continue,
            };
            if multiplier < -tol && worst.is_none_or(|(_, w)| multiplier < w) {
                worst = Some((i, multiplier));
            }
        }
        match worst {
            None => return Some((x, it)),
            Some((i, _)) => status[i] = Status::Free,
        }
    }
    None
}

pub(super) fn solve(k: &GramMatrix, spec: &OcsvmSpec) -> Result<OcsvmSolution> {
    let n = k.n();
    let (upper, total) = spec.working_bounds();
    let scale = if spec.scaled { spec.scale() } else { 1.0 };
    let (start, fista_iters) = if n == 1 {
        (vec![total], 0)
    } else {
        fista(k, upper, total)
    };
    let (x, iterations) = match active_set(k, start.clone(), upper, total) {
        Some((x, it)) => (x, fista_iters + it),
        None => {
            debug!("active-set polish did not certify optimality; keeping projected-gradient iterate");
            (start, fista_iters)
        }
    };
    let alpha: Vec<f64> = x.iter().map(|v| v / scale).collect();
    let g = k.mul_vec(&alpha);
    let sol = finish(alpha, &g, spec.nu, iterations);
    if sol.primal_dual_gap > 1e-6 {
        return Err(Error::Solver {
            iterations,
            gap: sol.primal_dual_gap,
            last_alpha: sol.alpha,
        });
    }
    Ok(sol)
}

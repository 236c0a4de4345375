//! Pairwise (SMO) solver with second-order working-set selection. Used for
//! final fits whose Gram matrix would not fit in memory.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{finish, OcsvmSolution, OcsvmSpec};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, KernelSpec};

const TAU: f64 = 1e-12;

pub(crate) struct SmoParams {
    /// Stopping tolerance on the maximal violating pair, unscaled units.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams {
            tolerance: 1e-8,
            max_iterations: 50_000_000,
        }
    }
}

/// Row access to a (possibly implicit) kernel matrix.
pub(crate) trait KernelRows {
    fn size(&self) -> usize;
    fn kernel_row(&self, i: usize) -> Rc<Vec<f64>>;
    fn diagonal(&self, i: usize) -> f64;
}

impl KernelRows for GramMatrix {
    fn size(&self) -> usize {
        self.n()
    }

    fn kernel_row(&self, i: usize) -> Rc<Vec<f64>> {
        Rc::new(self.row(i).to_vec())
    }

    fn diagonal(&self, i: usize) -> f64 {
        self.get(i, i)
    }
}

/// Kernel matrix evaluated row by row with a bounded LRU row cache.
pub struct LazyKernel {
    spec: KernelSpec,
    points: Vec<Vec<f64>>,
    jitter: f64,
    cache: RefCell<RowCache>,
}

struct RowCache {
    rows: HashMap<usize, (Rc<Vec<f64>>, u64)>,
    capacity: usize,
    clock: u64,
}

impl LazyKernel {
    /// Cache budget in bytes for kernel rows.
    pub const CACHE_BYTES: usize = 256 << 20;

    pub fn new(spec: KernelSpec, points: &[&[f64]], jitter: f64) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::usage("latent vectors of different dimensions"));
        }
        let n = points.len().max(1);
        let capacity = (Self::CACHE_BYTES / (8 * n)).max(2);
        Ok(LazyKernel {
            spec,
            points: points.iter().map(|p| p.to_vec()).collect(),
            jitter,
            cache: RefCell::new(RowCache {
                rows: HashMap::new(),
                capacity,
                clock: 0,
            }),
        })
    }
}

impl KernelRows for LazyKernel {
    fn size(&self) -> usize {
        self.points.len()
    }

    fn kernel_row(&self, i: usize) -> Rc<Vec<f64>> {
        let mut cache = self.cache.borrow_mut();
        cache.clock += 1;
        let stamp = cache.clock;
        if let Some((row, used)) = cache.rows.get_mut(&i) {
            *used = stamp;
            return Rc::clone(row);
        }
        let pi = &self.points[i];
        let mut row: Vec<f64> = self
            .points
            .iter()
            .map(|pj| self.spec.eval_unchecked(pi, pj))
            .collect();
        row[i] = self.spec.self_similarity() + self.jitter;
        let row = Rc::new(row);
        if cache.rows.len() >= cache.capacity {
            if let Some(oldest) = cache.rows.iter().min_by_key(|(_, (_, used))| *used).map(|(k, _)| *k) {
                cache.rows.remove(&oldest);
            }
        }
        cache.rows.insert(i, (Rc::clone(&row), stamp));
        row
    }

    fn diagonal(&self, _i: usize) -> f64 {
        self.spec.self_similarity() + self.jitter
    }
}

pub(crate) fn solve<K: KernelRows>(k: &K, spec: &OcsvmSpec, params: &SmoParams) -> Result<OcsvmSolution> {
    let n = k.size();
    let (upper, total) = spec.working_bounds();
    let scale = if spec.scaled { spec.scale() } else { 1.0 };
    let eps = params.tolerance * scale;

    // Fill coefficients greedily in index order.
    let mut x = vec![0.0; n];
    let mut remaining = total;
    for xi in x.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *xi = remaining.min(upper);
        remaining -= *xi;
    }
    let mut grad = vec![0.0; n];
    for i in 0..n {
        if x[i] > 0.0 {
            let row = k.kernel_row(i);
            for (g, kij) in grad.iter_mut().zip(row.iter()) {
                *g += x[i] * kij;
            }
        }
    }

    let mut iterations = 0;
    loop {
        // i: most violating index that can still grow.
        let mut gmax = f64::NEG_INFINITY;
        let mut up = usize::MAX;
        for t in 0..n {
            if x[t] < upper && -grad[t] >= gmax {
                gmax = -grad[t];
                up = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut low = usize::MAX;
        let mut best = f64::INFINITY;
        if up != usize::MAX {
            let row_up = k.kernel_row(up);
            let diag_up = k.diagonal(up);
            for t in 0..n {
                if x[t] > 0.0 {
                    gmax2 = gmax2.max(grad[t]);
                    let diff = gmax + grad[t];
                    if diff > 0.0 {
                        let mut quad = diag_up + k.diagonal(t) - 2.0 * row_up[t];
                        if quad <= 0.0 {
                            quad = TAU;
                        }
                        let obj = -diff * diff / quad;
                        if obj <= best {
                            best = obj;
                            low = t;
                        }
                    }
                }
            }
        }
        if up == usize::MAX || low == usize::MAX || gmax + gmax2 < eps {
            break;
        }
        if iterations >= params.max_iterations {
            let alpha: Vec<f64> = x.iter().map(|v| v / scale).collect();
            return Err(Error::Solver {
                iterations,
                gap: (gmax + gmax2) / scale,
                last_alpha: alpha,
            });
        }
        iterations += 1;

        let row_up = k.kernel_row(up);
        let row_low = k.kernel_row(low);
        let mut quad = k.diagonal(up) + k.diagonal(low) - 2.0 * row_up[low];
        if quad <= 0.0 {
            quad = TAU;
        }
        let mut delta = (grad[low] - grad[up]) / quad;
        delta = delta.min(upper - x[up]).min(x[low]).max(0.0);
        if delta == 0.0 {
            break;
        }
        x[up] += delta;
        x[low] -= delta;
        // Snap coordinates that landed on a bound up to rounding.
        if upper - x[up] <= upper * 1e-14 {
            x[up] = upper;
        }
        if x[low] <= upper * 1e-14 {
            x[low] = 0.0;
        }
        for t in 0..n {
            grad[t] += delta * (row_up[t] - row_low[t]);
        }
    }

    let alpha: Vec<f64> = x.iter().map(|v| v / scale).collect();
    // Recompute Kα from scratch to drop accumulated update error.
    let mut g = vec![0.0; n];
    for i in 0..n {
        if alpha[i] > 0.0 {
            let row = k.kernel_row(i);
            for (gt, kit) in g.iter_mut().zip(row.iter()) {
                *gt += alpha[i] * kit;
            }
        }
    }
    Ok(finish(alpha, &g, spec.nu, iterations))
}

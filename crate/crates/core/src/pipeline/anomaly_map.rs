use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Autoencoder;
use crate::ocsvm::SolutionFile;

/// Map aggregation level: the value below which 2% of decision values fall.
pub const AGGREGATION_QUANTILE: f64 = 0.02;

/// Slides a `patch × patch` window with stride 1 over a row-major `h × w`
/// image and writes `−f` of each window to its central pixel. Pixels without
/// a full window are NaN.
pub fn patch_anomaly_map(
    model: &Autoencoder,
    solution: &SolutionFile,
    image: &[f64],
    h: usize,
    w: usize,
) -> Result<Vec<f64>> {
    let [c, ph, pw] = model.spec().architecture.input_shape();
    if c != 1 || ph != pw || ph % 2 == 0 {
        return Err(Error::usage("patch maps need a single-channel, odd-sized square input"));
    }
    if image.len() != h * w {
        return Err(Error::usage(format!("image of {} values is not {h}×{w}", image.len())));
    }
    if h < ph || w < pw {
        return Err(Error::usage(format!("{h}×{w} image is smaller than the {ph}×{pw} patch")));
    }
    let half = ph / 2;
    let ocsvm = solution.model()?;
    let mut map = vec![f64::NAN; h * w];
    let rows = h - ph + 1;
    let cols = w - pw + 1;
    const CHUNK: usize = 512;
    let centers: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    for chunk in centers.chunks(CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * ph * pw);
        for &(r0, c0) in chunk {
            for r in r0..r0 + ph {
                data.extend_from_slice(&image[r * w + c0..r * w + c0 + pw]);
            }
        }
        let x = Tensor::new(vec![chunk.len(), 1, ph, pw], data)?;
        let z = model.encode(&x)?;
        for (&(r0, c0), zr) in chunk.iter().zip(z.rows()) {
            map[(r0 + half) * w + c0 + half] = -solution.decision(&ocsvm, zr)?;
        }
    }
    Ok(map)
}

/// Linear-interpolation quantile of the finite map values outside `mask`.
pub fn map_quantile(map: &[f64], mask: Option<&[bool]>, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::usage("quantile level must lie in [0, 1]"));
    }
    if let Some(m) = mask {
        if m.len() != map.len() {
            return Err(Error::usage("mask and map sizes differ"));
        }
    }
    let mut v: Vec<f64> = map
        .iter()
        .enumerate()
        .filter(|&(i, x)| !x.is_nan() && !mask.is_some_and(|m| m[i]))
        .map(|(_, &x)| x)
        .collect();
    if v.is_empty() {
        return Err(Error::usage("no scored pixels left to aggregate"));
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// One anomaly score per map: the 2% quantile of the decision values `f`,
/// negated. The map holds `−f`, so this is the 98% quantile of the map.
/// NaN border pixels and `mask`ed pixels (e.g. an excluded region) are ignored.
pub fn aggregate_map(map: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    map_quantile(map, mask, 1.0 - AGGREGATION_QUANTILE)
}

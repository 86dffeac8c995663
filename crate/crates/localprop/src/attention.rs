//! Spatial preprocessing of feature tensors: average pooling over local
//! windows and norm-based attention filtering.

use crate::core::{FeatureSet, FeatureTensor};
use crate::error::{Error, Result};

/// Channel-wise mean over `window × window` patches with the given stride and
/// no padding. Output spatial size is `⌊(in − window)/stride⌋ + 1` per axis.
pub fn local_spatial_pool(t: &FeatureTensor, window: usize, stride: usize) -> Result<FeatureTensor> {
    if window == 0 || stride == 0 {
        return Err(Error::arg("window and stride must be positive"));
    }
    if window > t.width() || window > t.height() {
        return Err(Error::arg(format!(
            "window {} exceeds tensor extent {}x{}",
            window,
            t.width(),
            t.height()
        )));
    }
    let out_w = (t.width() - window) / stride + 1;
    let out_h = (t.height() - window) / stride + 1;
    let d = t.depth();
    let norm = 1.0 / (window * window) as f64;
    let mut data = Vec::with_capacity(out_w * out_h * d);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let x0 = ox * stride;
            let y0 = oy * stride;
            let mut acc = vec![0.0; d];
            for dy in 0..window {
                for dx in 0..window {
                    let v = t.position_at(x0 + dx, y0 + dy);
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += b;
                    }
                }
            }
            data.extend(acc.into_iter().map(|a| a * norm));
        }
    }
    FeatureTensor::new(out_w, out_h, d, data)
}

/// Keep the position vectors whose Euclidean norm is at least `tau` times the
/// maximum position norm, in raster order.
///
/// The comparison is non-strict, so the argmax position always survives and
/// `tau = 0` keeps every position. An all-zero tensor also keeps every
/// position (`0 ≥ tau·0` for any `tau`), which downstream code treats as
/// uninformative rather than erroring.
pub fn spatial_attention(t: &FeatureTensor, tau: f64) -> Result<FeatureSet> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::arg("tau must be finite and >= 0"));
    }
    let norms: Vec<f64> = (0..t.positions())
        .map(|r| t.position(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let threshold = tau * max;
    let mut set = FeatureSet::with_capacity(t.depth(), t.positions());
    for (r, &n) in norms.iter().enumerate() {
        if n >= threshold {
            set.push_unchecked(t.position(r).to_vec());
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor_from_rows(w: usize, h: usize, d: usize, rows: &[f64]) -> FeatureTensor {
        FeatureTensor::new(w, h, d, rows.to_vec()).unwrap()
    }

    #[test]
    fn pooling_averages_a_full_window() {
        // 3x3, one channel, values 1..9: a single 3x3 window averages to 5.
        let t = tensor_from_rows(3, 3, 1, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let out = local_spatial_pool(&t, 3, 1).unwrap();
        assert_eq!(out.dims(), (1, 1, 1));
        assert!((out.position(0)[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn pooling_output_extent() {
        let t = FeatureTensor::constant(14, 14, 2, 1.0).unwrap();
        let out = local_spatial_pool(&t, 3, 1).unwrap();
        assert_eq!(out.dims(), (12, 12, 2));
        let out = local_spatial_pool(&t, 2, 2).unwrap();
        assert_eq!(out.dims(), (7, 7, 2));
    }

    #[test]
    fn pooling_window_larger_than_tensor_is_an_error() {
        let t = FeatureTensor::constant(2, 2, 1, 1.0).unwrap();
        assert!(local_spatial_pool(&t, 3, 1).is_err());
    }

    #[test]
    fn pooling_commutes_with_channel_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 3;
        let data: Vec<f64> = (0..4 * 4 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = FeatureTensor::new(4, 4, d, data.clone()).unwrap();
        // swap channels 0 and 2
        let mut swapped = data;
        for r in 0..16 {
            swapped.swap(r * d, r * d + 2);
        }
        let ts = FeatureTensor::new(4, 4, d, swapped).unwrap();
        let a = local_spatial_pool(&t, 2, 2).unwrap();
        let b = local_spatial_pool(&ts, 2, 2).unwrap();
        for r in 0..a.positions() {
            assert!((a.position(r)[0] - b.position(r)[2]).abs() < 1e-12);
            assert!((a.position(r)[2] - b.position(r)[0]).abs() < 1e-12);
            assert!((a.position(r)[1] - b.position(r)[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_keeps_positions_at_or_above_threshold() {
        // norms 1.0, 0.5, 0.2 with tau = 0.3: threshold 0.3, keep first two.
        let t = tensor_from_rows(3, 1, 1, &[1.0, 0.5, 0.2]);
        let kept = spatial_attention(&t, 0.3).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept.get(0), &[1.0]);
        assert_eq!(kept.get(1), &[0.5]);
    }

    #[test]
    fn attention_boundary_is_non_strict() {
        // norm exactly tau * max survives
        let t = tensor_from_rows(2, 1, 1, &[1.0, 0.3]);
        let kept = spatial_attention(&t, 0.3).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn attention_tau_zero_keeps_all() {
        let t = tensor_from_rows(2, 2, 1, &[0.0, 1.0, -2.0, 0.5]);
        let kept = spatial_attention(&t, 0.0).unwrap();
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn attention_zero_tensor_keeps_all() {
        let t = FeatureTensor::constant(2, 2, 3, 0.0).unwrap();
        let kept = spatial_attention(&t, 0.5).unwrap();
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn attention_preserves_raster_order_and_never_empties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let data: Vec<f64> = (0..3 * 3 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = FeatureTensor::new(3, 3, 2, data).unwrap();
            let tau = rng.gen_range(0.0..1.0);
            let kept = spatial_attention(&t, tau).unwrap();
            assert!(!kept.is_empty());
            // monotone: larger tau keeps a subset
            let kept_more = spatial_attention(&t, (tau + 0.3).min(1.0)).unwrap();
            assert!(kept_more.len() <= kept.len());
            // every kept vector appears in the original, in raster order
            let mut cursor = 0;
            for v in kept.iter() {
                let mut found = false;
                while cursor < t.positions() {
                    if t.position(cursor) == v {
                        found = true;
                        cursor += 1;
                        break;
                    }
                    cursor += 1;
                }
                assert!(found);
            }
        }
    }
}

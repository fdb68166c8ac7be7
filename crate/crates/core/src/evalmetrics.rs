//! Evaluation of uncertainty estimates.
//!
//! A sparsification curve removes the pixels an estimator is most uncertain
//! about, a fraction at a time, and tracks the average endpoint error of what
//! is left, normalized to 1 at fraction 0. The oracle curve does the same with
//! pixels ranked by their true error. Their difference is the sparsification
//! error and its area (trapezoid rule) is the AUSE.
//!
//! Ranking ties are broken by pixel index: among equally ranked pixels the
//! lower index is removed first. Pixels outside the mask never take part.

use serde::{Deserialize, Serialize};

use crate::ensembles::merge_empirical;
use crate::error::{Error, Result};
use crate::fields::{
    ensure_same_dims, epe_at, ErrorField, FlowField, HypothesisSet, UncertaintyField, ValidMask, SCALE_FLOOR,
};
use crate::io::{EvalReport, ImageReport};

/// 1% increments; fractions run from 0 to 0.99.
pub const DEFAULT_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsificationCurve {
    pub fractions: Vec<f64>,
    pub values: Vec<f64>,
    pub oracle_values: Vec<f64>,
    /// Set when the baseline error is zero; the curve is then all zeros.
    #[serde(default)]
    pub degenerate: bool,
}

impl SparsificationCurve {
    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }
}

/// Number of pixels removed at step `s` of `steps` out of `n`:
/// `floor(s / steps * n)`, computed exactly.
pub fn removal_count(s: usize, steps: usize, n: usize) -> usize {
    s * n / steps
}

fn fractions(steps: usize) -> Vec<f64> {
    (0..steps).map(|s| s as f64 / steps as f64).collect()
}

/// Remaining mean error after removing pixels in `order`, at each step.
fn remaining_means(errors: &[f64], order: &[usize], steps: usize) -> Vec<f64> {
    let n = order.len();
    // suffix[k] = sum of errors of the pixels that survive removing the first k
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + errors[order[k]];
    }
    (0..steps)
        .map(|s| {
            let k = removal_count(s, steps, n);
            suffix[k] / (n - k) as f64
        })
        .collect()
}

/// Pixel positions sorted by descending rank, stable on ties. Rankings are
/// NaN-free here; `-0.0` and `0.0` tie.
fn removal_order(ranking: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ranking.len()).collect();
    order.sort_by(|&a, &b| ranking[b].partial_cmp(&ranking[a]).expect("ranking has no NaN"));
    order
}

/// Builds a curve from already masked, pooled pixels.
fn pooled_curve(errors: &[f64], ranking: &[f64], steps: usize) -> Result<SparsificationCurve> {
    if steps < 2 {
        return Err(Error::InvalidArgument("steps must be >= 2".into()));
    }
    if errors.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(index) = ranking.iter().position(|r| r.is_nan()) {
        return Err(Error::NonFinite { index });
    }
    let values = remaining_means(errors, &removal_order(ranking), steps);
    let oracle = remaining_means(errors, &removal_order(errors), steps);
    let base = values[0];
    let fractions = fractions(steps);
    if base == 0.0 {
        return Ok(SparsificationCurve {
            fractions,
            values: vec![0.0; steps],
            oracle_values: vec![0.0; steps],
            degenerate: true,
        });
    }
    Ok(SparsificationCurve {
        fractions,
        values: values.iter().map(|v| v / base).collect(),
        oracle_values: oracle.iter().map(|v| v / base).collect(),
        degenerate: false,
    })
}

fn gather(
    errors: &ErrorField,
    ranking: &[f64],
    mask: &ValidMask,
    errs: &mut Vec<f64>,
    ranks: &mut Vec<f64>,
) -> Result<()> {
    ensure_same_dims(errors.dims(), mask.dims())?;
    if ranking.len() != errors.values().len() {
        let (width, height) = errors.dims();
        return Err(Error::BufferLength {
            width,
            height,
            actual: ranking.len(),
        });
    }
    for i in mask.valid_indices() {
        errs.push(errors.values()[i]);
        ranks.push(ranking[i]);
    }
    Ok(())
}

/// Sparsification curve of one image, ranking pixels by `ranking` (higher
/// means more uncertain).
pub fn sparsification(
    errors: &ErrorField,
    ranking: &[f64],
    mask: &ValidMask,
    steps: usize,
) -> Result<SparsificationCurve> {
    let (mut errs, mut ranks) = (Vec::new(), Vec::new());
    gather(errors, ranking, mask, &mut errs, &mut ranks)?;
    pooled_curve(&errs, &ranks, steps)
}

/// One image's contribution to [`dataset_sparsification`].
#[derive(Debug, Clone, Copy)]
pub struct ImageSample<'a> {
    pub errors: &'a ErrorField,
    pub ranking: &'a [f64],
    pub mask: &'a ValidMask,
}

/// Ranks all valid pixels of all images together, then normalizes once.
pub fn dataset_sparsification(per_image: &[ImageSample<'_>], steps: usize) -> Result<SparsificationCurve> {
    if per_image.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    let (mut errs, mut ranks) = (Vec::new(), Vec::new());
    for img in per_image {
        gather(img.errors, img.ranking, img.mask, &mut errs, &mut ranks)?;
    }
    pooled_curve(&errs, &ranks, steps)
}

/// Pointwise average of per-image curves. Degenerate curves (zero baseline
/// error) are left out; if every curve is degenerate the result is too.
pub fn average_curves(curves: &[SparsificationCurve]) -> Result<SparsificationCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves".into()))?;
    if curves.iter().any(|c| c.fractions != first.fractions) {
        return Err(Error::InvalidArgument("curves use different fractions".into()));
    }
    let used: Vec<&SparsificationCurve> = curves.iter().filter(|c| !c.degenerate).collect();
    let n = first.len();
    if used.is_empty() {
        return Ok(SparsificationCurve {
            fractions: first.fractions.clone(),
            values: vec![0.0; n],
            oracle_values: vec![0.0; n],
            degenerate: true,
        });
    }
    let avg = |f: fn(&SparsificationCurve) -> &Vec<f64>| -> Vec<f64> {
        (0..n)
            .map(|s| used.iter().map(|c| f(c)[s]).sum::<f64>() / used.len() as f64)
            .collect()
    };
    Ok(SparsificationCurve {
        fractions: first.fractions.clone(),
        values: avg(|c| &c.values),
        oracle_values: avg(|c| &c.oracle_values),
        degenerate: false,
    })
}

/// `values - oracle_values`.
pub fn sparsification_error(curve: &SparsificationCurve) -> Vec<f64> {
    curve
        .values
        .iter()
        .zip(&curve.oracle_values)
        .map(|(v, o)| v - o)
        .collect()
}

/// Trapezoidal area under the sparsification error over the curve's
/// fractions.
pub fn ause(curve: &SparsificationCurve) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument("AUSE needs at least two fractions".into()));
    }
    let err = sparsification_error(curve);
    Ok(curve
        .fractions
        .windows(2)
        .zip(err.windows(2))
        .map(|(f, e)| 0.5 * (f[1] - f[0]) * (e[0] + e[1]))
        .sum())
}

/// Average over valid pixels of the smallest member endpoint error.
pub fn oracle_epe(hyps: &HypothesisSet, gt: &FlowField, mask: &ValidMask) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::EmptyHypotheses);
    }
    ensure_same_dims(hyps.dims(), gt.dims())?;
    ensure_same_dims(hyps.dims(), mask.dims())?;
    let n = mask.require_nonempty()?;
    let sum: f64 = mask
        .valid_indices()
        .map(|i| hyps.flows().map(|f| epe_at(f, gt, i)).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(sum / n as f64)
}

/// Average over valid pixels of the empirical `var_u + var_v` of the members.
pub fn member_variance(hyps: &HypothesisSet, mask: &ValidMask) -> Result<f64> {
    if hyps.len() < 2 {
        return Err(Error::TooFewMembers {
            required: 2,
            actual: hyps.len(),
        });
    }
    ensure_same_dims(hyps.dims(), mask.dims())?;
    let n = mask.require_nonempty()?;
    let merged = merge_empirical(hyps)?;
    let sum: f64 = mask.valid_indices().map(|i| merged.var_u[i] + merged.var_v[i]).sum();
    Ok(sum / n as f64)
}

/// Ranking scalar for a Laplace prediction: `ln b_u + ln b_v`, which orders
/// pixels exactly like their entropy.
pub fn log_scale_ranking(unc: &UncertaintyField) -> Vec<f64> {
    unc.b_u().iter().zip(unc.b_v()).map(|(a, b)| a.ln() + b.ln()).collect()
}

/// Ranking scalar `2 b_u^2 + 2 b_v^2`.
pub fn variance_ranking(unc: &UncertaintyField) -> Vec<f64> {
    (0..unc.b_u().len())
        .map(|i| unc.variance_u(i) + unc.variance_v(i))
        .collect()
}

/// Per-pixel differential entropy in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl EntropyMap {
    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Affine map to `[0, 1]` using `(lo, hi)`, clamped. A degenerate range
    /// maps everything to 0.5.
    pub fn normalized(&self, lo: f64, hi: f64) -> Vec<f64> {
        if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return vec![0.5; self.values.len()];
        }
        self.values
            .iter()
            .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }
}

/// Common `(lo, hi)` range of several maps, for rendering them on the same
/// scale.
pub fn shared_range(maps: &[&EntropyMap]) -> (f64, f64) {
    maps.iter()
        .map(|m| m.min_max())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| {
            (a.min(lo), b.max(hi))
        })
}

fn laplace_h(b: f64) -> f64 {
    (2.0 * b * std::f64::consts::E).ln()
}

fn gaussian_h(sigma: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::E * sigma * sigma * std::f64::consts::PI).ln()
}

/// `ln(2 b_u e) + ln(2 b_v e)` per pixel.
pub fn laplace_entropy(unc: &UncertaintyField) -> EntropyMap {
    let (width, height) = unc.dims();
    EntropyMap {
        width,
        height,
        values: unc
            .b_u()
            .iter()
            .zip(unc.b_v())
            .map(|(&a, &b)| laplace_h(a) + laplace_h(b))
            .collect(),
    }
}

/// `0.5 ln(2 e pi sx^2) + 0.5 ln(2 e pi sy^2)` per pixel.
pub fn gaussian_entropy(width: usize, height: usize, sigma_x: &[f64], sigma_y: &[f64]) -> Result<EntropyMap> {
    if width * height != sigma_x.len() || sigma_x.len() != sigma_y.len() {
        return Err(Error::BufferLength {
            width,
            height,
            actual: sigma_x.len().max(sigma_y.len()),
        });
    }
    if let Some(index) = sigma_x.iter().chain(sigma_y).position(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidScale {
            index: index % sigma_x.len(),
            value: sigma_x.iter().chain(sigma_y).nth(index).copied().unwrap_or(f64::NAN),
        });
    }
    Ok(EntropyMap {
        width,
        height,
        values: sigma_x
            .iter()
            .zip(sigma_y)
            .map(|(&a, &b)| gaussian_h(a) + gaussian_h(b))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    Laplace,
    Gaussian,
}

/// Entropy obtained when the scales equal the absolute per-component errors
/// (floored at [`SCALE_FLOOR`]).
pub fn oracle_entropy(pred: &FlowField, gt: &FlowField, kind: EntropyKind) -> Result<EntropyMap> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    let (w, h) = pred.dims();
    let eu: Vec<f64> = pred
        .u()
        .iter()
        .zip(gt.u())
        .map(|(a, b)| (a - b).abs().max(SCALE_FLOOR))
        .collect();
    let ev: Vec<f64> = pred
        .v()
        .iter()
        .zip(gt.v())
        .map(|(a, b)| (a - b).abs().max(SCALE_FLOOR))
        .collect();
    match kind {
        EntropyKind::Laplace => Ok(laplace_entropy(&UncertaintyField::floored(w, h, eu, ev)?)),
        EntropyKind::Gaussian => gaussian_entropy(w, h, &eu, &ev),
    }
}

/// Everything the report needs about one evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub name: String,
    pub errors: ErrorField,
    pub mask: ValidMask,
    /// Higher means more uncertain; `None` when the method has no
    /// uncertainty.
    pub ranking: Option<Vec<f64>>,
    pub oracle_epe: Option<f64>,
    pub member_variance: Option<f64>,
}

/// A report together with the curve its AUSE was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curve: Option<SparsificationCurve>,
}

fn pooled(images: &[ImageEval], f: impl Fn(&ImageEval) -> Option<f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for img in images {
        let c = img.mask.count_valid();
        sum += f(img)? * c as f64;
        n += c;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Builds the report for a set of images. AEPE, oracle EPE and member
/// variance are averaged over all valid pixels of all images. The AUSE comes
/// from one pooled curve (`dataset_wise`) or from the average of the
/// per-image curves.
pub fn evaluate(images: &[ImageEval], steps: usize, dataset_wise: bool) -> Result<Evaluation> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    let ranked = images.iter().filter(|i| i.ranking.is_some()).count();
    if ranked != 0 && ranked != images.len() {
        return Err(Error::InvalidArgument(
            "either every image or no image needs a ranking".into(),
        ));
    }
    let mut total = 0.0;
    let mut valid = 0usize;
    let mut per_image = Vec::with_capacity(images.len());
    let mut curves = Vec::with_capacity(ranked);
    for img in images {
        let n = img.mask.require_nonempty()?;
        ensure_same_dims(img.errors.dims(), img.mask.dims())?;
        let sum: f64 = img.mask.valid_indices().map(|i| img.errors.values()[i]).sum();
        total += sum;
        valid += n;
        let curve = img
            .ranking
            .as_ref()
            .map(|r| sparsification(&img.errors, r, &img.mask, steps))
            .transpose()?;
        let ause_img = match &curve {
            Some(c) if !c.degenerate => Some(ause(c)?),
            _ => None,
        };
        curves.extend(curve);
        per_image.push(ImageReport {
            name: img.name.clone(),
            aepe: sum / n as f64,
            ause: ause_img,
            oracle_epe: img.oracle_epe,
            member_variance: img.member_variance,
        });
    }
    let curve = if ranked == 0 {
        None
    } else if dataset_wise {
        let samples: Vec<ImageSample> = images
            .iter()
            .map(|i| ImageSample {
                errors: &i.errors,
                ranking: i.ranking.as_deref().expect("checked above"),
                mask: &i.mask,
            })
            .collect();
        Some(dataset_sparsification(&samples, steps)?)
    } else {
        Some(average_curves(&curves)?)
    };
    let ause_all = match &curve {
        Some(c) if !c.degenerate => Some(ause(c)?),
        _ => None,
    };
    Ok(Evaluation {
        report: EvalReport {
            aepe: total / valid as f64,
            ause: ause_all,
            oracle_epe: pooled(images, |i| i.oracle_epe),
            member_variance: pooled(images, |i| i.member_variance),
            per_image,
        },
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{endpoint_error, make_flow};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn errs(v: &[f64]) -> ErrorField {
        ErrorField::new(v.len(), 1, v.to_vec()).unwrap()
    }

    fn all(n: usize) -> ValidMask {
        ValidMask::all(n, 1).unwrap()
    }

    /// Brute force: rebuild the remaining pixel set at every step.
    fn brute(errors: &[f64], ranking: &[f64], steps: usize) -> Vec<f64> {
        let n = errors.len();
        let mut idx: Vec<usize> = (0..n).collect();
        // selection by repeated arg-max, lowest index wins ties
        let mut removed = Vec::new();
        while !idx.is_empty() {
            let mut best = 0;
            for j in 1..idx.len() {
                if ranking[idx[j]] > ranking[idx[best]] {
                    best = j;
                }
            }
            removed.push(idx.remove(best));
        }
        let mean_kept = |k: usize| {
            let kept: Vec<f64> = removed[k..].iter().map(|&i| errors[i]).collect();
            kept.iter().sum::<f64>() / kept.len() as f64
        };
        let base = mean_kept(0);
        (0..steps)
            .map(|s| mean_kept((s as f64 / steps as f64 * n as f64 + 1e-9).floor() as usize) / base)
            .collect()
    }

    #[test]
    fn four_pixel_example() {
        let e = errs(&[1.0, 2.0, 3.0, 4.0]);
        let c = sparsification(&e, &[1.0, 2.0, 3.0, 4.0], &all(4), 4).unwrap();
        assert_eq!(c.fractions, vec![0.0, 0.25, 0.5, 0.75]);
        let expect = [1.0, 0.8, 0.6, 0.4];
        for ((v, o), x) in c.values.iter().zip(&c.oracle_values).zip(expect) {
            assert!((v - x).abs() < 1e-15);
            assert!((o - x).abs() < 1e-15);
        }
        assert!(sparsification_error(&c).iter().all(|&x| x.abs() < 1e-15));
        assert_eq!(ause(&c).unwrap(), 0.0);
    }

    #[test]
    fn reversed_ranking_example() {
        let e = errs(&[1.0, 2.0, 3.0, 4.0]);
        let c = sparsification(&e, &[4.0, 3.0, 2.0, 1.0], &all(4), 4).unwrap();
        let b = brute(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0], 4);
        // removes the lowest errors first: kept {2,3,4} -> 3/2.5
        assert!((c.values[1] - 1.2).abs() < 1e-15);
        for (v, x) in c.values.iter().zip(&b) {
            assert!((v - x).abs() < 1e-12);
        }
        let se = sparsification_error(&c);
        assert_eq!(se[0], 0.0);
        assert!((se[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn constant_ranking_uses_index_order() {
        let v = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let c = sparsification(&errs(&v), &[0.5; 8], &all(8), 8).unwrap();
        let b = brute(&v, &[0.5; 8], 8);
        for (v, x) in c.values.iter().zip(&b) {
            assert!((v - x).abs() < 1e-12);
        }
        // first removal drops pixel 0 (error 3)
        assert!((c.values[1] - (28.0 / 7.0) / (31.0 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn signed_zeros_tie() {
        let c = sparsification(&errs(&[1.0, 2.0]), &[-0.0, 0.0], &all(2), 2).unwrap();
        assert_eq!(c.values, vec![1.0, 4.0 / 3.0]);
    }

    #[test]
    fn masked_pixels_are_excluded() {
        let e = ErrorField::new(3, 1, vec![1.0, 1000.0, 3.0]).unwrap();
        let mask = ValidMask::new(3, 1, vec![true, false, true]).unwrap();
        let c = sparsification(&e, &[0.0, 99.0, 1.0], &mask, 2).unwrap();
        assert_eq!(c.values, vec![1.0, 0.5]);
        let none = ValidMask::new(3, 1, vec![false; 3]).unwrap();
        assert!(matches!(sparsification(&e, &[0.0; 3], &none, 2), Err(Error::EmptyMask)));
    }

    #[test]
    fn zero_baseline_is_flagged() {
        let c = sparsification(&errs(&[0.0, 0.0]), &[1.0, 2.0], &all(2), 2).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.values, vec![0.0, 0.0]);
        let ok = sparsification(&errs(&[1.0, 2.0]), &[1.0, 2.0], &all(2), 2).unwrap();
        let avg = average_curves(&[c, ok.clone()]).unwrap();
        assert_eq!(avg, ok);
    }

    #[test]
    fn ause_rectangle() {
        let fractions: Vec<f64> = (0..100).map(|s| s as f64 / 100.0).collect();
        let curve = SparsificationCurve {
            values: vec![1.1; 100],
            oracle_values: vec![1.0; 100],
            fractions,
            degenerate: false,
        };
        assert!((ause(&curve).unwrap() - 0.099).abs() < 1e-12);
        let short = SparsificationCurve {
            fractions: vec![0.0, 0.9],
            values: vec![1.1, 1.1],
            oracle_values: vec![1.0, 1.0],
            degenerate: false,
        };
        assert!((ause(&short).unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn random_rankings_have_nonnegative_ause_and_dominate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let e: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..10.0)).collect();
            let r: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
            let c = sparsification(&errs(&e), &r, &all(64), DEFAULT_STEPS).unwrap();
            assert!(ause(&c).unwrap() >= -1e-9);
            for s in 0..c.len() {
                assert!(c.values[s] >= c.oracle_values[s] - 1e-12);
                if s > 0 {
                    assert!(c.oracle_values[s] <= c.oracle_values[s - 1] + 1e-12);
                }
            }
            assert_eq!(c.values[0], 1.0);
        }
    }

    #[test]
    fn exhaustive_steps_match_leave_k_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..3.0)).collect();
        let r: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let c = sparsification(&errs(&e), &r, &all(16), 16).unwrap();
        let b = brute(&e, &r, 16);
        for (v, x) in c.values.iter().zip(&b) {
            assert!((v - x).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_wise_examples() {
        let e1 = errs(&[1.0, 2.0, 3.0, 4.0]);
        let r1 = [0.3, 0.1, 0.4, 0.2];
        let m = all(4);
        let single = dataset_sparsification(
            &[ImageSample {
                errors: &e1,
                ranking: &r1,
                mask: &m,
            }],
            4,
        )
        .unwrap();
        assert_eq!(single, sparsification(&e1, &r1, &m, 4).unwrap());

        let twice = dataset_sparsification(
            &[
                ImageSample {
                    errors: &e1,
                    ranking: &r1,
                    mask: &m,
                },
                ImageSample {
                    errors: &e1,
                    ranking: &r1,
                    mask: &m,
                },
            ],
            4,
        )
        .unwrap();
        for s in 0..4 {
            assert!((twice.values[s] - single.values[s]).abs() < 1e-12);
        }

        // disjoint error ranges
        let e2 = errs(&[100.0, 200.0, 300.0, 400.0]);
        let r2 = [0.0, 0.05, 0.01, 0.02];
        let pooled = dataset_sparsification(
            &[
                ImageSample {
                    errors: &e1,
                    ranking: &r1,
                    mask: &m,
                },
                ImageSample {
                    errors: &e2,
                    ranking: &r2,
                    mask: &m,
                },
            ],
            4,
        )
        .unwrap();
        let all_e = [1.0, 2.0, 3.0, 4.0, 100.0, 200.0, 300.0, 400.0];
        let all_r = [0.3, 0.1, 0.4, 0.2, 0.0, 0.05, 0.01, 0.02];
        let b = brute(&all_e, &all_r, 4);
        let avg = average_curves(&[
            sparsification(&e1, &r1, &m, 4).unwrap(),
            sparsification(&e2, &r2, &m, 4).unwrap(),
        ])
        .unwrap();
        for (v, x) in pooled.values.iter().zip(&b) {
            assert!((v - x).abs() < 1e-12);
        }
        assert!((pooled.values[1] - avg.values[1]).abs() > 1e-3);
        assert!(dataset_sparsification(&[], 4).is_err());
    }

    fn set(flows: Vec<FlowField>) -> HypothesisSet {
        HypothesisSet::from_flows(flows).unwrap()
    }

    #[test]
    fn oracle_epe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut rf =
            || FlowField::from_fn(4, 4, |_, _| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).unwrap();
        let (a, b, c, gt) = (rf(), rf(), rf(), rf());
        let mask = ValidMask::all(4, 4).unwrap();
        let single = oracle_epe(&set(vec![a.clone()]), &gt, &mask).unwrap();
        let direct = crate::fields::mean_epe(&endpoint_error(&a, &gt, &mask).unwrap(), &mask).unwrap();
        assert!((single - direct).abs() < 1e-15);
        assert_eq!(oracle_epe(&set(vec![a.clone(), gt.clone()]), &gt, &mask).unwrap(), 0.0);

        let three = oracle_epe(&set(vec![a.clone(), b.clone(), c.clone()]), &gt, &mask).unwrap();
        let mut sum = 0.0;
        for i in 0..16 {
            sum += [&a, &b, &c]
                .iter()
                .map(|f| ((f.u()[i] - gt.u()[i]).powi(2) + (f.v()[i] - gt.v()[i]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
        }
        assert!((three - sum / 16.0).abs() < 1e-12);
        let dup = oracle_epe(&set(vec![a.clone(), b.clone(), c.clone(), b.clone()]), &gt, &mask).unwrap();
        assert_eq!(three, dup);
        for m in [&a, &b, &c] {
            let e = crate::fields::mean_epe(&endpoint_error(m, &gt, &mask).unwrap(), &mask).unwrap();
            assert!(three <= e + 1e-12);
        }
    }

    #[test]
    fn member_variance_examples() {
        let mask = ValidMask::all(3, 2).unwrap();
        let f = make_flow(3, 2, (1.0, 1.0)).unwrap();
        assert_eq!(member_variance(&set(vec![f.clone(), f.clone()]), &mask).unwrap(), 0.0);
        let g = make_flow(3, 2, (3.0, 1.0)).unwrap();
        assert_eq!(member_variance(&set(vec![f.clone(), g]), &mask).unwrap(), 1.0);
        assert!(matches!(
            member_variance(&set(vec![f]), &mask),
            Err(Error::TooFewMembers { .. })
        ));
    }

    #[test]
    fn entropy_examples() {
        let e = std::f64::consts::E;
        let b0 = 1.0 / (2.0 * e);
        let h = laplace_entropy(&UncertaintyField::filled(1, 1, (b0, b0)).unwrap());
        assert!(h.values[0].abs() < 1e-15);
        let h = laplace_entropy(&UncertaintyField::filled(1, 1, (1.0, 1.0)).unwrap());
        assert!((h.values[0] - 3.386_294_361_119_89).abs() < 1e-12);
        let h2 = laplace_entropy(&UncertaintyField::filled(1, 1, (1.5, 1.0)).unwrap());
        assert!(h2.values[0] > h.values[0]);

        let s0 = 1.0 / (2.0 * std::f64::consts::PI * e).sqrt();
        assert!(gaussian_entropy(1, 1, &[s0], &[s0]).unwrap().values[0].abs() < 1e-14);
        let g1 = gaussian_entropy(1, 1, &[1.0], &[1.0]).unwrap().values[0];
        assert!((g1 - 2.837_877_066_409_345_3).abs() < 1e-12);
        let g2 = gaussian_entropy(1, 1, &[2.0], &[2.0]).unwrap().values[0];
        assert!((g2 - g1 - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(gaussian_entropy(1, 1, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn oracle_entropy_examples() {
        let p = make_flow(2, 1, (1.0, 2.0)).unwrap();
        let h = oracle_entropy(&p, &p, EntropyKind::Laplace).unwrap();
        let floor = 2.0 * (2.0 * SCALE_FLOOR * std::f64::consts::E).ln();
        assert!(h.values.iter().all(|&x| (x - floor).abs() < 1e-12));
        let gt = make_flow(2, 1, (0.0, 3.0)).unwrap();
        let h = oracle_entropy(&p, &gt, EntropyKind::Laplace).unwrap();
        assert!((h.values[0] - 3.386_294_361_119_89).abs() < 1e-12);
        let far = make_flow(2, 1, (5.0, 7.0)).unwrap();
        let h2 = oracle_entropy(&p, &far, EntropyKind::Laplace).unwrap();
        assert!(h2.values.iter().zip(&h.values).all(|(a, b)| a > b));
        let g = oracle_entropy(&p, &gt, EntropyKind::Gaussian).unwrap();
        assert!((g.values[0] - 2.837_877_066_409_345_3).abs() < 1e-12);
    }

    #[test]
    fn normalization_range() {
        let m = EntropyMap {
            width: 3,
            height: 1,
            values: vec![-1.0, 0.0, 3.0],
        };
        assert_eq!(m.normalized(-1.0, 3.0), vec![0.0, 0.25, 1.0]);
        assert_eq!(m.normalized(2.0, 2.0), vec![0.5; 3]);
        let n = EntropyMap {
            width: 1,
            height: 1,
            values: vec![5.0],
        };
        assert_eq!(shared_range(&[&m, &n]), (-1.0, 5.0));
    }
    fn image(name: &str, errs: Vec<f64>, ranking: Option<Vec<f64>>) -> ImageEval {
        let n = errs.len();
        ImageEval {
            name: name.into(),
            errors: ErrorField::new(n, 1, errs).unwrap(),
            mask: ValidMask::all(n, 1).unwrap(),
            ranking,
            oracle_epe: None,
            member_variance: None,
        }
    }

    #[test]
    fn evaluate_pools_aepe_over_pixels() {
        let a = image("a", vec![1.0, 3.0], None);
        let b = image("b", vec![2.0, 2.0, 2.0, 2.0], None);
        let ev = evaluate(&[a, b], 10, false).unwrap();
        assert!((ev.report.aepe - 12.0 / 6.0).abs() < 1e-15);
        assert_eq!(ev.report.per_image[0].aepe, 2.0);
        assert!(ev.report.ause.is_none() && ev.curve.is_none());
    }

    #[test]
    fn evaluate_true_error_ranking_gives_zero_ause() {
        let errs = vec![0.5, 2.0, 0.1, 7.0, 3.0];
        let ev = evaluate(&[image("a", errs.clone(), Some(errs))], 100, false).unwrap();
        assert_eq!(ev.report.ause, Some(0.0));
        assert_eq!(ev.report.per_image[0].ause, Some(0.0));
    }

    #[test]
    fn evaluate_dataset_wise_single_image_matches_image_wise() {
        let img = image("a", vec![0.5, 2.0, 0.1, 7.0, 3.0], Some(vec![1.0, 0.0, 4.0, 2.0, 3.0]));
        let a = evaluate(std::slice::from_ref(&img), 20, false).unwrap();
        let b = evaluate(&[img], 20, true).unwrap();
        assert_eq!(a, b);
        assert!(a.report.ause.unwrap() > 0.0);
    }

    #[test]
    fn evaluate_rejects_partial_rankings_and_weights_extras() {
        let a = image("a", vec![1.0], Some(vec![1.0]));
        let b = image("b", vec![1.0], None);
        assert!(evaluate(&[a.clone(), b], 10, true).is_err());
        let mut c = image("c", vec![1.0, 1.0, 1.0], Some(vec![0.0; 3]));
        let mut a = a;
        a.oracle_epe = Some(4.0);
        c.oracle_epe = Some(0.0);
        let ev = evaluate(&[a.clone(), c.clone()], 10, true).unwrap();
        assert_eq!(ev.report.oracle_epe, Some(1.0));
        c.oracle_epe = None;
        assert_eq!(evaluate(&[a, c], 10, true).unwrap().report.oracle_epe, None);
    }
}

//! Training losses with analytic gradients.
//!
//! Gradients are always taken of the *summed* per-pixel loss, so the value at
//! a pixel is the derivative of that pixel's own term. Scale gradients are
//! with respect to the log-scale `s = ln b`, which is what a network emits.

use crate::error::{Error, Result};
use crate::fields::{ensure_same_dims, epe_at, FlowField, HypothesisSet, UncertaintyField, ValidMask};

/// Below this endpoint error the EPE gradient is taken to be zero.
pub const EPE_KINK: f64 = 1e-9;

/// How [`LossValue::total`] aggregates the per-pixel terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Mean over valid pixels; used for reporting.
    #[default]
    Mean,
    /// Sum over valid pixels; used inside training steps.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// Per-pixel terms; pixels outside the mask are 0.
    pub per_pixel: Vec<f64>,
    pub reduction: Reduction,
}

impl LossValue {
    fn reduce(per_pixel: Vec<f64>, mask: &ValidMask, reduction: Reduction) -> Result<Self> {
        let n = mask.require_nonempty()?;
        let sum: f64 = mask.valid_indices().map(|i| per_pixel[i]).sum();
        let total = match reduction {
            Reduction::Mean => sum / n as f64,
            Reduction::Sum => sum,
        };
        Ok(Self {
            total,
            per_pixel,
            reduction,
        })
    }
}

/// Gradient with respect to a flow prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrad {
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Gradient with respect to a Laplace prediction `(a_u, a_v, s_u, s_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub da_u: Vec<f64>,
    pub da_v: Vec<f64>,
    pub ds_u: Vec<f64>,
    pub ds_v: Vec<f64>,
}

impl ParamGrad {
    fn zeros(n: usize) -> Self {
        Self {
            da_u: vec![0.0; n],
            da_v: vec![0.0; n],
            ds_u: vec![0.0; n],
            ds_v: vec![0.0; n],
        }
    }
}

fn check3(pred: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<()> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    ensure_same_dims(pred.dims(), mask.dims())
}

/// Endpoint-error loss, averaged over valid pixels.
pub fn epe_loss(pred: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<LossValue> {
    epe_loss_with(pred, gt, mask, Reduction::Mean)
}

pub fn epe_loss_with(pred: &FlowField, gt: &FlowField, mask: &ValidMask, reduction: Reduction) -> Result<LossValue> {
    check3(pred, gt, mask)?;
    let per_pixel = (0..pred.len())
        .map(|i| if mask.is_valid(i) { epe_at(pred, gt, i) } else { 0.0 })
        .collect();
    LossValue::reduce(per_pixel, mask, reduction)
}

#[inline]
fn epe_grad_at(du: f64, dv: f64) -> (f64, f64) {
    let e = du.hypot(dv);
    if e < EPE_KINK {
        (0.0, 0.0)
    } else {
        (du / e, dv / e)
    }
}

/// `d EPE / d(u, v) = (u - u_gt, v - v_gt) / EPE`, zero at the kink and
/// outside the mask.
pub fn epe_loss_grad(pred: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<FlowGrad> {
    check3(pred, gt, mask)?;
    let n = pred.len();
    let mut g = FlowGrad {
        du: vec![0.0; n],
        dv: vec![0.0; n],
    };
    for i in mask.valid_indices() {
        let (a, b) = epe_grad_at(pred.u()[i] - gt.u()[i], pred.v()[i] - gt.v()[i]);
        g.du[i] = a;
        g.dv[i] = b;
    }
    Ok(g)
}

#[inline]
fn nll_term(residual: f64, b: f64) -> f64 {
    residual.abs() / b + b.ln()
}

/// Factorized Laplace negative log-likelihood
/// `|u - a_u| / b_u + ln b_u + |v - a_v| / b_v + ln b_v`, averaged over
/// valid pixels. The constant `ln 4` is omitted.
pub fn laplace_nll(pred: &FlowField, unc: &UncertaintyField, gt: &FlowField, mask: &ValidMask) -> Result<LossValue> {
    laplace_nll_with(pred, unc, gt, mask, Reduction::Mean)
}

pub fn laplace_nll_with(
    pred: &FlowField,
    unc: &UncertaintyField,
    gt: &FlowField,
    mask: &ValidMask,
    reduction: Reduction,
) -> Result<LossValue> {
    check3(pred, gt, mask)?;
    ensure_same_dims(pred.dims(), unc.dims())?;
    let per_pixel = (0..pred.len())
        .map(|i| {
            if mask.is_valid(i) {
                nll_term(gt.u()[i] - pred.u()[i], unc.b_u()[i]) + nll_term(gt.v()[i] - pred.v()[i], unc.b_v()[i])
            } else {
                0.0
            }
        })
        .collect();
    LossValue::reduce(per_pixel, mask, reduction)
}

#[inline]
fn nll_grad_at(a: f64, target: f64, b: f64) -> (f64, f64) {
    let r = a - target;
    let sign = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    (sign / b, 1.0 - r.abs() / b)
}

/// Gradient of [`laplace_nll`] with respect to the means and the log-scales:
/// `dL/da = sign(a - u) / b`, `dL/ds = 1 - |u - a| / b`.
pub fn laplace_nll_grad(
    pred: &FlowField,
    unc: &UncertaintyField,
    gt: &FlowField,
    mask: &ValidMask,
) -> Result<ParamGrad> {
    check3(pred, gt, mask)?;
    ensure_same_dims(pred.dims(), unc.dims())?;
    let mut g = ParamGrad::zeros(pred.len());
    for i in mask.valid_indices() {
        let (da, ds) = nll_grad_at(pred.u()[i], gt.u()[i], unc.b_u()[i]);
        g.da_u[i] = da;
        g.ds_u[i] = ds;
        let (da, ds) = nll_grad_at(pred.v()[i], gt.v()[i], unc.b_v()[i]);
        g.da_v[i] = da;
        g.ds_v[i] = ds;
    }
    Ok(g)
}

/// Per-pixel index of the hypothesis closest to the ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WtaSelection {
    pub width: usize,
    pub height: usize,
    pub best_idx: Vec<usize>,
}

impl WtaSelection {
    /// How often each of `m` hypotheses wins over the valid pixels, as
    /// fractions summing to 1.
    pub fn usage(&self, m: usize, mask: &ValidMask) -> Vec<f64> {
        let mut counts = vec![0usize; m];
        for i in mask.valid_indices() {
            counts[self.best_idx[i]] += 1;
        }
        let n = mask.count_valid().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Picks, per pixel, the hypothesis with the lowest endpoint error. Ties go
/// to the lowest index. Pixels outside the mask get index 0.
pub fn wta_best_idx(hyps: &HypothesisSet, gt: &FlowField, mask: &ValidMask) -> Result<WtaSelection> {
    if hyps.is_empty() {
        return Err(Error::EmptyHypotheses);
    }
    ensure_same_dims(hyps.dims(), gt.dims())?;
    ensure_same_dims(hyps.dims(), mask.dims())?;
    let (width, height) = hyps.dims();
    let mut best_idx = vec![0usize; width * height];
    for i in mask.valid_indices() {
        let mut best = f64::INFINITY;
        for (k, flow) in hyps.flows().enumerate() {
            let e = epe_at(flow, gt, i);
            if e < best {
                best = e;
                best_idx[i] = k;
            }
        }
    }
    Ok(WtaSelection {
        width,
        height,
        best_idx,
    })
}

/// Spatial smoothness of every hypothesis: the sum over hypotheses, both
/// components and all interior neighbor pairs of the absolute one-sided
/// difference to the pixel above and to the pixel on the left.
///
/// `per_pixel[i]` holds the differences between pixel `i` and its upper and
/// left neighbors; `total` is their sum. The term ignores the validity mask.
pub fn wta_smoothness(hyps: &HypothesisSet) -> LossValue {
    let (w, h) = hyps.dims();
    let mut per_pixel = vec![0.0; w * h];
    for flow in hyps.flows() {
        for comp in [flow.u(), flow.v()] {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if y > 0 {
                        per_pixel[i] += (comp[i] - comp[i - w]).abs();
                    }
                    if x > 0 {
                        per_pixel[i] += (comp[i] - comp[i - 1]).abs();
                    }
                }
            }
        }
    }
    let total = per_pixel.iter().sum();
    LossValue {
        total,
        per_pixel,
        reduction: Reduction::Sum,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`wta_smoothness`]'s total with respect to each hypothesis.
pub fn wta_smoothness_grad(hyps: &HypothesisSet) -> Vec<FlowGrad> {
    let (w, h) = hyps.dims();
    hyps.flows()
        .map(|flow| {
            let mut grads = [vec![0.0; w * h], vec![0.0; w * h]];
            for (comp, g) in [flow.u(), flow.v()].into_iter().zip(grads.iter_mut()) {
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        if y > 0 {
                            let s = sign(comp[i] - comp[i - w]);
                            g[i] += s;
                            g[i - w] -= s;
                        }
                        if x > 0 {
                            let s = sign(comp[i] - comp[i - 1]);
                            g[i] += s;
                            g[i - 1] -= s;
                        }
                    }
                }
            }
            let [du, dv] = grads;
            FlowGrad { du, dv }
        })
        .collect()
}

/// Per-pixel loss applied to the winning hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerLoss {
    #[default]
    Epe,
    LaplaceNll,
}

/// Value of the multi-hypothesis loss, split into its two terms.
#[derive(Debug, Clone, PartialEq)]
pub struct WtaLoss {
    /// Inner loss at the selected hypothesis, summed over valid pixels.
    pub data: LossValue,
    /// Unweighted smoothness term over all hypotheses.
    pub smoothness: f64,
    pub smoothness_weight: f64,
    pub total: f64,
}

/// Winner-takes-all loss: per pixel the inner loss of the EPE-best
/// hypothesis, summed over valid pixels, plus `smoothness_weight` times the
/// global smoothness term. Selection is by EPE for either inner loss.
pub fn wta_loss(
    hyps: &HypothesisSet,
    gt: &FlowField,
    mask: &ValidMask,
    inner: InnerLoss,
    smoothness_weight: f64,
) -> Result<(WtaLoss, WtaSelection)> {
    if inner == InnerLoss::LaplaceNll && !hyps.has_uncertainty() {
        return Err(Error::MissingUncertainty);
    }
    let sel = wta_best_idx(hyps, gt, mask)?;
    let members = hyps.members();
    let mut per_pixel = vec![0.0; gt.len()];
    for i in mask.valid_indices() {
        let m = &members[sel.best_idx[i]];
        per_pixel[i] = match (inner, &m.uncertainty) {
            (InnerLoss::Epe, _) => epe_at(&m.flow, gt, i),
            (InnerLoss::LaplaceNll, Some(unc)) => {
                nll_term(gt.u()[i] - m.flow.u()[i], unc.b_u()[i]) + nll_term(gt.v()[i] - m.flow.v()[i], unc.b_v()[i])
            }
            (InnerLoss::LaplaceNll, None) => unreachable!("checked above"),
        };
    }
    let data = LossValue::reduce(per_pixel, mask, Reduction::Sum)?;
    let smoothness = wta_smoothness(hyps).total;
    let total = data.total + smoothness_weight * smoothness;
    Ok((
        WtaLoss {
            data,
            smoothness,
            smoothness_weight,
            total,
        },
        sel,
    ))
}

/// Gradient of [`wta_loss`] for every hypothesis. Non-selected hypotheses
/// receive exactly zero from the data term; the smoothness term reaches all
/// of them. In EPE mode the scale gradients are zero.
pub fn wta_loss_grad(
    hyps: &HypothesisSet,
    gt: &FlowField,
    mask: &ValidMask,
    inner: InnerLoss,
    smoothness_weight: f64,
) -> Result<(Vec<ParamGrad>, WtaSelection)> {
    if inner == InnerLoss::LaplaceNll && !hyps.has_uncertainty() {
        return Err(Error::MissingUncertainty);
    }
    let sel = wta_best_idx(hyps, gt, mask)?;
    let n = gt.len();
    let mut grads: Vec<ParamGrad> = (0..hyps.len()).map(|_| ParamGrad::zeros(n)).collect();
    let members = hyps.members();
    for i in mask.valid_indices() {
        let k = sel.best_idx[i];
        let m = &members[k];
        let g = &mut grads[k];
        match (inner, &m.uncertainty) {
            (InnerLoss::Epe, _) => {
                let (a, b) = epe_grad_at(m.flow.u()[i] - gt.u()[i], m.flow.v()[i] - gt.v()[i]);
                g.da_u[i] = a;
                g.da_v[i] = b;
            }
            (InnerLoss::LaplaceNll, Some(unc)) => {
                let (da, ds) = nll_grad_at(m.flow.u()[i], gt.u()[i], unc.b_u()[i]);
                g.da_u[i] = da;
                g.ds_u[i] = ds;
                let (da, ds) = nll_grad_at(m.flow.v()[i], gt.v()[i], unc.b_v()[i]);
                g.da_v[i] = da;
                g.ds_v[i] = ds;
            }
            (InnerLoss::LaplaceNll, None) => unreachable!("checked above"),
        }
    }
    if smoothness_weight != 0.0 {
        for (g, s) in grads.iter_mut().zip(wta_smoothness_grad(hyps)) {
            for i in 0..n {
                g.da_u[i] += smoothness_weight * s.du[i];
                g.da_v[i] += smoothness_weight * s.dv[i];
            }
        }
    }
    Ok((grads, sel))
}

//! Grid types shared by every other module.
//!
//! All grids are stored row-major with the origin at the top-left pixel, so
//! pixel `(x, y)` lives at index `y * width + x`. This is the layout of the
//! `.flo` and KITTI files handled in [`crate::io`].

use crate::error::{Error, Result};

/// Smallest Laplace scale an [`UncertaintyField`] will hold.
pub const SCALE_FLOOR: f64 = 1e-6;

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension { width, height });
    }
    Ok(())
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if len != width * height {
        return Err(Error::BufferLength {
            width,
            height,
            actual: len,
        });
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Dense per-pixel displacement `(u, v)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, u.len())?;
        check_len(width, height, v.len())?;
        check_finite(&u)?;
        check_finite(&v)?;
        Ok(Self { width, height, u, v })
    }

    /// A field holding the same vector at every pixel.
    pub fn filled(width: usize, height: usize, fill: (f64, f64)) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        Self::new(width, height, vec![fill.0; n], vec![fill.1; n])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Result<Self> {
        check_dims(width, height)?;
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(width, height, u, v)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Multiplies every vector by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.u.iter().map(|a| a * s).collect(),
            self.v.iter().map(|a| a * s).collect(),
        )
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.u, self.v)
    }
}

/// Shorthand for [`FlowField::filled`].
pub fn make_flow(width: usize, height: usize, fill: (f64, f64)) -> Result<FlowField> {
    FlowField::filled(width, height, fill)
}

/// Which pixels carry ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ValidMask {
    pub fn new(width: usize, height: usize, valid: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, valid.len())?;
        Ok(Self { width, height, valid })
    }

    pub fn all(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            valid: vec![true; width * height],
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.valid
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    /// Errors with [`Error::EmptyMask`] when nothing is valid.
    pub fn require_nonempty(&self) -> Result<usize> {
        match self.count_valid() {
            0 => Err(Error::EmptyMask),
            n => Ok(n),
        }
    }
}

/// Per-pixel Laplace scales `(b_u, b_v)`.
///
/// Every scale is at least [`SCALE_FLOOR`]. The variance of a Laplace
/// distribution with scale `b` is `2 b^2`; it is computed on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyField {
    width: usize,
    height: usize,
    b_u: Vec<f64>,
    b_v: Vec<f64>,
}

impl UncertaintyField {
    /// Rejects non-positive or non-finite scales; positive scales below the
    /// floor are raised to it.
    pub fn new(width: usize, height: usize, b_u: Vec<f64>, b_v: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, b_u.len())?;
        check_len(width, height, b_v.len())?;
        for (index, &value) in b_u.iter().chain(b_v.iter()).enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidScale {
                    index: index % (width * height),
                    value,
                });
            }
        }
        Ok(Self::floor_all(width, height, b_u, b_v))
    }

    /// Like [`UncertaintyField::new`] but accepts zeros, which are floored.
    /// Used for oracle scales built from absolute errors.
    pub fn floored(width: usize, height: usize, b_u: Vec<f64>, b_v: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, b_u.len())?;
        check_len(width, height, b_v.len())?;
        for (index, &value) in b_u.iter().chain(b_v.iter()).enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidScale {
                    index: index % (width * height),
                    value,
                });
            }
        }
        Ok(Self::floor_all(width, height, b_u, b_v))
    }

    /// Builds scales from log-scales `s = ln b`, the parameterization the
    /// toy networks emit.
    pub fn from_log_scales(width: usize, height: usize, s_u: &[f64], s_v: &[f64]) -> Result<Self> {
        check_len(width, height, s_u.len())?;
        check_len(width, height, s_v.len())?;
        let b_u: Vec<f64> = s_u.iter().map(|s| s.exp()).collect();
        let b_v: Vec<f64> = s_v.iter().map(|s| s.exp()).collect();
        Self::floored(width, height, b_u, b_v)
    }

    pub fn filled(width: usize, height: usize, b: (f64, f64)) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        Self::new(width, height, vec![b.0; n], vec![b.1; n])
    }

    fn floor_all(width: usize, height: usize, mut b_u: Vec<f64>, mut b_v: Vec<f64>) -> Self {
        for b in b_u.iter_mut().chain(b_v.iter_mut()) {
            *b = b.max(SCALE_FLOOR);
        }
        Self {
            width,
            height,
            b_u,
            b_v,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn b_u(&self) -> &[f64] {
        &self.b_u
    }

    pub fn b_v(&self) -> &[f64] {
        &self.b_v
    }

    pub fn variance_u(&self, index: usize) -> f64 {
        2.0 * self.b_u[index] * self.b_u[index]
    }

    pub fn variance_v(&self, index: usize) -> f64 {
        2.0 * self.b_v[index] * self.b_v[index]
    }
}

/// One member of a [`HypothesisSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub flow: FlowField,
    pub uncertainty: Option<UncertaintyField>,
}

/// `M >= 1` aligned predictions of the same scene, from an ensemble or from
/// the heads of a multi-hypothesis network.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    members: Vec<Hypothesis>,
}

impl HypothesisSet {
    pub fn new(members: Vec<Hypothesis>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyHypotheses)?;
        let dims = first.flow.dims();
        let with_unc = first.uncertainty.is_some();
        for m in &members {
            ensure_same_dims(dims, m.flow.dims())?;
            if let Some(u) = &m.uncertainty {
                ensure_same_dims(dims, u.dims())?;
            }
            if m.uncertainty.is_some() != with_unc {
                return Err(Error::MixedUncertainty);
            }
        }
        Ok(Self { members })
    }

    /// An empirical set: flows without uncertainties.
    pub fn from_flows(flows: Vec<FlowField>) -> Result<Self> {
        Self::new(
            flows
                .into_iter()
                .map(|flow| Hypothesis {
                    flow,
                    uncertainty: None,
                })
                .collect(),
        )
    }

    /// A predictive set: every flow paired with its scales.
    pub fn from_predictions(preds: Vec<(FlowField, UncertaintyField)>) -> Result<Self> {
        Self::new(
            preds
                .into_iter()
                .map(|(flow, unc)| Hypothesis {
                    flow,
                    uncertainty: Some(unc),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.members[0].flow.dims()
    }

    pub fn members(&self) -> &[Hypothesis] {
        &self.members
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowField> {
        self.members.iter().map(|m| &m.flow)
    }

    pub fn has_uncertainty(&self) -> bool {
        self.members[0].uncertainty.is_some()
    }

    /// Uncertainty of every member, or [`Error::MissingUncertainty`].
    pub fn uncertainties(&self) -> Result<Vec<&UncertaintyField>> {
        self.members
            .iter()
            .map(|m| m.uncertainty.as_ref().ok_or(Error::MissingUncertainty))
            .collect()
    }
}

/// Per-pixel endpoint error. Pixels outside the mask hold 0 and must be
/// excluded by passing the same mask to any aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorField {
    width: usize,
    height: usize,
    epe: Vec<f64>,
}

impl ErrorField {
    pub fn new(width: usize, height: usize, epe: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, epe.len())?;
        check_finite(&epe)?;
        if let Some(index) = epe.iter().position(|&e| e < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative endpoint error at pixel {index}"
            )));
        }
        Ok(Self { width, height, epe })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.epe
    }
}

#[inline]
pub(crate) fn epe_at(pred: &FlowField, gt: &FlowField, i: usize) -> f64 {
    (pred.u[i] - gt.u[i]).hypot(pred.v[i] - gt.v[i])
}

/// `sqrt((u - u_gt)^2 + (v - v_gt)^2)` at every valid pixel.
pub fn endpoint_error(pred: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<ErrorField> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    ensure_same_dims(pred.dims(), mask.dims())?;
    let epe = (0..pred.len())
        .map(|i| if mask.is_valid(i) { epe_at(pred, gt, i) } else { 0.0 })
        .collect();
    ErrorField::new(pred.width, pred.height, epe)
}

/// Average endpoint error over the valid pixels.
pub fn mean_epe(errors: &ErrorField, mask: &ValidMask) -> Result<f64> {
    ensure_same_dims(errors.dims(), mask.dims())?;
    let n = mask.require_nonempty()?;
    let sum: f64 = mask.valid_indices().map(|i| errors.epe[i]).sum();
    Ok(sum / n as f64)
}

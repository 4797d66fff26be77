//! Regularized linear least squares over correlation filters.
//!
//! Objective, for supervision points `(patch, target, weight)` and
//! `N = sum(weight)`:
//!
//! ```text
//! L(f) = (1/N) * sum_w ||target - apply(patch, f)||^2 + eta^2 ||f||^2
//! ```
//!
//! with `apply(patch, f)[o] = <patch, f[o]>`. The gradient is
//! `-(2/N) sum_w patch^T (target - apply(patch, f)) + 2 eta^2 f` and the
//! Hessian is `2 [(1/N) sum_w patch patch^T + eta^2 I]` (block-diagonal over
//! outputs). Steepest descent uses the exact line minimizer
//! `alpha = ||g||^2 / (g^T H g)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{FcotError, Result};
use crate::tensor::{correlate2d, same_pad_lead, FeatureMap, FilterShape, LinearFilter, PaddingMode};

/// Early-stop threshold on the gradient norm.
pub const GRADIENT_TOLERANCE: f64 = 1e-12;

/// One supervised location: a flattened `(in, k, k)` patch, its `out`-vector
/// target and a non-negative importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionPoint {
    pub patch: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

impl SupervisionPoint {
    pub fn new(patch: Vec<f64>, target: Vec<f64>) -> Self {
        Self { patch, target, weight: 1.0 }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// A weighted linear least-squares problem over a filter bank. Implemented by
/// the explicit point list [`LsqProblem`] and the whole-map
/// [`DenseMapProblem`].
pub trait LeastSquares {
    fn shape(&self) -> FilterShape;

    fn eta(&self) -> f64;

    /// `N`, the sum of point weights.
    fn total_weight(&self) -> f64;

    /// Returns `sum_w ||target - apply(f)||^2`; when `grad` is given, adds
    /// `sum_w residual_o * patch` into `grad[o]`.
    fn residual_pass(&self, f: &[f64], grad: Option<&mut [f64]>) -> f64;

    /// `sum_w ||apply(g)||^2`.
    fn response_energy(&self, g: &[f64]) -> f64;

    /// `(A, B)` with `A = (1/N) sum_w x x^T` and `B = (1/N) sum_w x t^T`.
    fn normal_equations(&self) -> (DMatrix<f64>, DMatrix<f64>);
}

/// Explicit list of supervision points stored in flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LsqProblem {
    shape: FilterShape,
    eta: f64,
    patches: Vec<f64>,
    targets: Vec<f64>,
    weights: Vec<f64>,
}

impl LsqProblem {
    pub fn new(shape: FilterShape, eta: f64, points: impl IntoIterator<Item = SupervisionPoint>) -> Result<Self> {
        let mut prob = Self::empty(shape, eta)?;
        for p in points {
            prob.push(p)?;
        }
        prob.check_non_empty()?;
        Ok(prob)
    }

    pub(crate) fn empty(shape: FilterShape, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(FcotError::InvalidArgument(format!("eta {eta} must be finite and >= 0")));
        }
        if shape.is_empty() {
            return Err(FcotError::InvalidArgument(format!("empty filter shape {shape}")));
        }
        Ok(Self { shape, eta, patches: Vec::new(), targets: Vec::new(), weights: Vec::new() })
    }

    pub(crate) fn check_non_empty(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(FcotError::Empty("supervision points"));
        }
        if self.total_weight() <= 0.0 {
            return Err(FcotError::InvalidArgument("total supervision weight must be positive".into()));
        }
        Ok(())
    }

    pub fn push(&mut self, p: SupervisionPoint) -> Result<()> {
        self.push_parts(&p.patch, &p.target, p.weight)
    }

    pub(crate) fn push_parts(&mut self, patch: &[f64], target: &[f64], weight: f64) -> Result<()> {
        if patch.len() != self.shape.patch_len() || target.len() != self.shape.out_channels {
            return Err(FcotError::ShapeMismatch(format!(
                "point with patch {} / target {} does not fit filter {}",
                patch.len(),
                target.len(),
                self.shape
            )));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(FcotError::InvalidArgument(format!("weight {weight} must be finite and >= 0")));
        }
        if patch.iter().chain(target).any(|v| !v.is_finite()) {
            return Err(FcotError::InvalidArgument("non-finite supervision value".into()));
        }
        self.patches.extend_from_slice(patch);
        self.targets.extend_from_slice(target);
        self.weights.push(weight);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn point(&self, i: usize) -> SupervisionPoint {
        let pl = self.shape.patch_len();
        let out = self.shape.out_channels;
        SupervisionPoint {
            patch: self.patches[i * pl..(i + 1) * pl].to_vec(),
            target: self.targets[i * out..(i + 1) * out].to_vec(),
            weight: self.weights[i],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = SupervisionPoint> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LeastSquares for LsqProblem {
    fn shape(&self) -> FilterShape {
        self.shape
    }

    fn eta(&self) -> f64 {
        self.eta
    }

    fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn residual_pass(&self, f: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let pl = self.shape.patch_len();
        let out = self.shape.out_channels;
        let mut total = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            let patch = &self.patches[i * pl..(i + 1) * pl];
            let target = &self.targets[i * out..(i + 1) * out];
            for o in 0..out {
                let r = target[o] - dot(patch, &f[o * pl..(o + 1) * pl]);
                total += w * r * r;
                if let Some(g) = grad.as_deref_mut() {
                    let wr = w * r;
                    for (gv, pv) in g[o * pl..(o + 1) * pl].iter_mut().zip(patch) {
                        *gv += wr * pv;
                    }
                }
            }
        }
        total
    }

    fn response_energy(&self, g: &[f64]) -> f64 {
        let pl = self.shape.patch_len();
        let out = self.shape.out_channels;
        let mut total = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            let patch = &self.patches[i * pl..(i + 1) * pl];
            for o in 0..out {
                let a = dot(patch, &g[o * pl..(o + 1) * pl]);
                total += w * a * a;
            }
        }
        total
    }

    fn normal_equations(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let pl = self.shape.patch_len();
        let out = self.shape.out_channels;
        let n = self.total_weight();
        let mut a = DMatrix::<f64>::zeros(pl, pl);
        let mut b = DMatrix::<f64>::zeros(pl, out);
        for (i, &w) in self.weights.iter().enumerate() {
            let patch = &self.patches[i * pl..(i + 1) * pl];
            let target = &self.targets[i * out..(i + 1) * out];
            for r in 0..pl {
                let wr = w * patch[r];
                for c in 0..pl {
                    a[(r, c)] += wr * patch[c];
                }
                for o in 0..out {
                    b[(r, o)] += wr * target[o];
                }
            }
        }
        (a / n, b / n)
    }
}

/// Whole-map supervision: every grid position of every sample is one point
/// whose patch is the same-zero window of [`correlate2d`] and whose target is
/// the per-position value of a target map with `out_channels` channels.
#[derive(Debug, Clone)]
pub struct DenseMapProblem {
    shape: FilterShape,
    eta: f64,
    samples: Vec<(FeatureMap, FeatureMap, f64)>,
}

impl DenseMapProblem {
    pub fn new(shape: FilterShape, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(FcotError::InvalidArgument(format!("eta {eta} must be finite and >= 0")));
        }
        Ok(Self { shape, eta, samples: Vec::new() })
    }

    /// Adds one sample; `weight` applies to each of its positions.
    pub fn push(&mut self, features: FeatureMap, targets: FeatureMap, weight: f64) -> Result<()> {
        if features.channels() != self.shape.in_channels
            || targets.channels() != self.shape.out_channels
            || features.height() != targets.height()
            || features.width() != targets.width()
        {
            return Err(FcotError::ShapeMismatch(format!(
                "sample {}x{}x{} / target {}x{}x{} does not fit filter {}",
                features.channels(),
                features.height(),
                features.width(),
                targets.channels(),
                targets.height(),
                targets.width(),
                self.shape
            )));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(FcotError::InvalidArgument(format!("weight {weight} must be finite and >= 0")));
        }
        self.samples.push((features, targets, weight));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn filter(&self, w: &[f64]) -> LinearFilter {
        LinearFilter::new(self.shape, w.to_vec()).expect("filter length checked by caller")
    }

    // grad[o,c,i,j] += w * sum_{y,x} residual[o,y,x] * features[c, y+i-pt, x+j-pl]
    fn accumulate_grad(&self, features: &FeatureMap, residual: &FeatureMap, w: f64, grad: &mut [f64]) {
        let s = self.shape;
        let (h, wd) = (features.height(), features.width());
        let (pt, pl) = (same_pad_lead(s.kernel_h), same_pad_lead(s.kernel_w));
        for o in 0..s.out_channels {
            let res = residual.channel(o);
            for c in 0..s.in_channels {
                let src = features.channel(c);
                for i in 0..s.kernel_h {
                    let y_lo = pt.saturating_sub(i);
                    let y_hi = h.min((h + pt).saturating_sub(i));
                    for j in 0..s.kernel_w {
                        let x_lo = pl.saturating_sub(j);
                        let x_hi = wd.min((wd + pl).saturating_sub(j));
                        let mut acc = 0.0;
                        for y in y_lo..y_hi {
                            let sy = y + i - pt;
                            let r_row = &res[y * wd + x_lo..y * wd + x_hi];
                            let s_row = &src[sy * wd + x_lo + j - pl..sy * wd + x_hi + j - pl];
                            acc += dot(r_row, s_row);
                        }
                        grad[((o * s.in_channels + c) * s.kernel_h + i) * s.kernel_w + j] += w * acc;
                    }
                }
            }
        }
    }
}

impl LeastSquares for DenseMapProblem {
    fn shape(&self) -> FilterShape {
        self.shape
    }

    fn eta(&self) -> f64 {
        self.eta
    }

    fn total_weight(&self) -> f64 {
        self.samples.iter().map(|(f, _, w)| w * f.plane_len() as f64).sum()
    }

    fn residual_pass(&self, f: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let filter = self.filter(f);
        let mut total = 0.0;
        for (features, targets, w) in &self.samples {
            let mut pred = correlate2d(features, &filter, PaddingMode::SameZero).expect("shape checked on push");
            for (p, t) in pred.data_mut().iter_mut().zip(targets.data()) {
                *p = t - *p;
            }
            total += w * pred.norm_sq();
            if let Some(g) = grad.as_deref_mut() {
                self.accumulate_grad(features, &pred, *w, g);
            }
        }
        total
    }

    fn response_energy(&self, g: &[f64]) -> f64 {
        let filter = self.filter(g);
        self.samples
            .iter()
            .map(|(features, _, w)| {
                w * correlate2d(features, &filter, PaddingMode::SameZero).expect("shape checked on push").norm_sq()
            })
            .sum()
    }

    fn normal_equations(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = self.shape;
        let pl = s.patch_len();
        let k = s.kernel_h;
        let mut prob = LsqProblem::empty(s, self.eta).expect("validated shape");
        let mut patch = vec![0.0; pl];
        for (features, targets, w) in &self.samples {
            for y in 0..features.height() {
                for x in 0..features.width() {
                    // square kernels only for the dense oracle path
                    debug_assert_eq!(s.kernel_h, s.kernel_w);
                    crate::tensor::extract_patch_into(features, crate::geometry::GridPos::new(x, y), k, &mut patch)
                        .expect("in range");
                    let t: Vec<f64> = (0..s.out_channels).map(|o| targets.get(o, y, x)).collect();
                    prob.push_parts(&patch, &t, *w).expect("finite");
                }
            }
        }
        prob.normal_equations()
    }
}

fn check_filter<P: LeastSquares + ?Sized>(f: &LinearFilter, prob: &P) -> Result<()> {
    if f.shape() != prob.shape() {
        return Err(FcotError::ShapeMismatch(format!(
            "filter {} does not match problem {}",
            f.shape(),
            prob.shape()
        )));
    }
    Ok(())
}

fn normalizer<P: LeastSquares + ?Sized>(prob: &P) -> Result<f64> {
    let n = prob.total_weight();
    if !(n > 0.0) {
        return Err(FcotError::InvalidArgument("total supervision weight must be positive".into()));
    }
    Ok(n)
}

/// The regularized loss.
pub fn loss<P: LeastSquares + ?Sized>(f: &LinearFilter, prob: &P) -> Result<f64> {
    check_filter(f, prob)?;
    let n = normalizer(prob)?;
    let eta = prob.eta();
    Ok(prob.residual_pass(f.weights(), None) / n + eta * eta * f.norm_sq())
}

fn loss_and_gradient<P: LeastSquares + ?Sized>(f: &LinearFilter, prob: &P) -> Result<(f64, LinearFilter)> {
    check_filter(f, prob)?;
    let n = normalizer(prob)?;
    let eta2 = prob.eta() * prob.eta();
    let mut acc = vec![0.0; f.weights().len()];
    let data = prob.residual_pass(f.weights(), Some(&mut acc));
    for (g, w) in acc.iter_mut().zip(f.weights()) {
        *g = -2.0 / n * *g + 2.0 * eta2 * w;
    }
    let value = data / n + eta2 * f.norm_sq();
    Ok((value, LinearFilter::new(f.shape(), acc)?))
}

/// Gradient of [`loss`] with respect to the filter weights.
pub fn gradient<P: LeastSquares + ?Sized>(f: &LinearFilter, prob: &P) -> Result<LinearFilter> {
    loss_and_gradient(f, prob).map(|(_, g)| g)
}

/// Exact minimizer of `t -> loss(f - t g)`: `||g||^2 / (g^T H g)`.
pub fn step_length<P: LeastSquares + ?Sized>(g: &LinearFilter, prob: &P) -> Result<f64> {
    check_filter(g, prob)?;
    let n = normalizer(prob)?;
    let num = g.norm_sq();
    if num == 0.0 {
        return Err(FcotError::ZeroGradient);
    }
    let eta2 = prob.eta() * prob.eta();
    let curvature = 2.0 * (prob.response_energy(g.weights()) / n + eta2 * num);
    if !(curvature > 0.0) {
        // flat direction with no regularization: the quadratic has no minimizer along g
        return Err(FcotError::ZeroGradient);
    }
    Ok(num / curvature)
}

/// Result of a steepest-descent run.
#[derive(Debug, Clone)]
pub struct DescentTrace {
    pub filter: LinearFilter,
    /// Loss before the first step and after every step taken.
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// `iters` steepest-descent steps with exact step length; stops early when
/// the gradient norm drops below [`GRADIENT_TOLERANCE`].
pub fn steepest_descent<P: LeastSquares + ?Sized>(f0: &LinearFilter, prob: &P, iters: usize) -> Result<LinearFilter> {
    check_filter(f0, prob)?;
    let mut f = f0.clone();
    for _ in 0..iters {
        if !descent_step(&mut f, prob)? {
            break;
        }
    }
    Ok(f)
}

/// As [`steepest_descent`], also recording the loss sequence.
pub fn steepest_descent_traced<P: LeastSquares + ?Sized>(
    f0: &LinearFilter,
    prob: &P,
    iters: usize,
) -> Result<DescentTrace> {
    check_filter(f0, prob)?;
    let mut f = f0.clone();
    let mut losses = vec![loss(&f, prob)?];
    let mut steps = 0;
    for _ in 0..iters {
        if !descent_step(&mut f, prob)? {
            break;
        }
        steps += 1;
        losses.push(loss(&f, prob)?);
    }
    Ok(DescentTrace { filter: f, losses, steps })
}

// Returns false when converged.
fn descent_step<P: LeastSquares + ?Sized>(f: &mut LinearFilter, prob: &P) -> Result<bool> {
    let (_, g) = loss_and_gradient(f, prob)?;
    if g.norm_sq().sqrt() < GRADIENT_TOLERANCE {
        return Ok(false);
    }
    let alpha = match step_length(&g, prob) {
        Ok(a) => a,
        Err(FcotError::ZeroGradient) => return Ok(false),
        Err(e) => return Err(e),
    };
    for (w, gv) in f.weights_mut().iter_mut().zip(g.weights()) {
        *w -= alpha * gv;
    }
    Ok(true)
}

/// Dense normal-equations minimizer, `(A + eta^2 I) f_o = b_o` per output.
pub fn closed_form_solve<P: LeastSquares + ?Sized>(prob: &P) -> Result<LinearFilter> {
    let shape = prob.shape();
    if shape.len() > 10_000 {
        return Err(FcotError::InvalidArgument(format!("{} unknowns exceed the dense-solve limit", shape.len())));
    }
    normalizer(prob)?;
    let (mut a, b) = prob.normal_equations();
    let eta2 = prob.eta() * prob.eta();
    for i in 0..a.nrows() {
        a[(i, i)] += eta2;
    }
    let chol = a.cholesky().ok_or(FcotError::Singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d * d), hi.max(d * d)));
    if !(lo > 1e-12 * hi) {
        return Err(FcotError::Singular);
    }
    let pl = shape.patch_len();
    let mut weights = Vec::with_capacity(shape.len());
    for o in 0..shape.out_channels {
        let col: DVector<f64> = b.column(o).into_owned();
        weights.extend(chol.solve(&col).iter().copied());
    }
    debug_assert_eq!(weights.len(), shape.out_channels * pl);
    LinearFilter::new(shape, weights)
}

//! Dense multi-channel grids and the spatial primitives built on them.
//!
//! Layout is row-major `(channel, row, column)` for maps and
//! `(out, in, row, column)` for filters. Grid index `i` sits at continuous
//! grid coordinate `i + 0.5`, so a cell covers `[i, i + 1)` and image pixel
//! `p` maps to grid coordinate `p / stride`.

use serde::{Deserialize, Serialize};

use crate::error::{FcotError, Result};
use crate::geometry::{BBox, GridPos};

/// A `channels x height x width` grid of finite reals annotated with the
/// number of image pixels per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    stride: f64,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(FcotError::InvalidArgument(format!(
                "feature map extents must be positive, got {channels}x{height}x{width}"
            )));
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(FcotError::InvalidArgument(format!("stride {stride} must be positive")));
        }
        if data.len() != channels * height * width {
            return Err(FcotError::ShapeMismatch(format!(
                "data length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FcotError::InvalidArgument("feature map contains non-finite values".into()));
        }
        Ok(Self { channels, height, width, stride, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, stride: f64) -> Self {
        assert!(channels > 0 && height > 0 && width > 0 && stride > 0.0);
        Self { channels, height, width, stride, data: vec![0.0; channels * height * width] }
    }

    pub fn filled(channels: usize, height: usize, width: usize, stride: f64, value: f64) -> Self {
        let mut m = Self::zeros(channels, height, width, stride);
        m.data.fill(value);
        m
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut m = Self::zeros(channels, height, width, stride);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    m.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        m
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn with_stride(mut self, stride: f64) -> Self {
        assert!(stride.is_finite() && stride > 0.0);
        self.stride = stride;
        self
    }

    /// Bilinear sample of channel `c` at continuous *index* coordinates,
    /// clamping to the border (edge replication).
    pub fn sample(&self, c: usize, fy: f64, fx: f64) -> f64 {
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let wy = fy - y0 as f64;
        let wx = fx - x0 as f64;
        let plane = self.channel(c);
        let w = self.width;
        let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
        let bottom = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
        top * (1.0 - wy) + bottom * wy
    }

    /// Row-major flattening of the whole map (used as a filter patch).
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Shape of a correlation kernel bank: `(out, in, kernel_h, kernel_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FilterShape {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl FilterShape {
    pub fn new(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self { out_channels, in_channels, kernel_h, kernel_w }
    }

    /// Number of weights feeding one output channel.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for FilterShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }
}

/// A bank of `out_channels` correlation kernels over `in_channels` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFilter {
    shape: FilterShape,
    weights: Vec<f64>,
}

impl LinearFilter {
    pub fn new(shape: FilterShape, weights: Vec<f64>) -> Result<Self> {
        if shape.out_channels == 0 || shape.in_channels == 0 || shape.kernel_h == 0 || shape.kernel_w == 0 {
            return Err(FcotError::InvalidArgument(format!("filter extents must be positive, got {shape}")));
        }
        if weights.len() != shape.len() {
            return Err(FcotError::ShapeMismatch(format!(
                "weights length {} != {shape}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(FcotError::InvalidArgument("filter contains non-finite weights".into()));
        }
        Ok(Self { shape, weights })
    }

    pub fn zeros(shape: FilterShape) -> Self {
        Self { shape, weights: vec![0.0; shape.len()] }
    }

    pub fn shape(&self) -> FilterShape {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Weights of output channel `o`, flattened `(in, row, column)`.
    pub fn output(&self, o: usize) -> &[f64] {
        let n = self.shape.patch_len();
        &self.weights[o * n..(o + 1) * n]
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    #[inline]
    pub fn get(&self, o: usize, c: usize, i: usize, j: usize) -> f64 {
        let s = self.shape;
        self.weights[((o * s.in_channels + c) * s.kernel_h + i) * s.kernel_w + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaddingMode {
    /// Only positions where the kernel lies fully inside the input.
    Valid,
    /// Output has the input's extent; zero padding of `floor((k-1)/2)` on the
    /// top/left and `ceil((k-1)/2)` on the bottom/right.
    SameZero,
}

/// Leading (top/left) zero padding used by [`PaddingMode::SameZero`].
pub fn same_pad_lead(k: usize) -> usize {
    (k - 1) / 2
}

/// Multi-channel 2D cross-correlation (no kernel flip).
pub fn correlate2d(input: &FeatureMap, filter: &LinearFilter, padding: PaddingMode) -> Result<FeatureMap> {
    let s = filter.shape();
    if s.in_channels != input.channels() {
        return Err(FcotError::ShapeMismatch(format!(
            "filter expects {} input channels, map has {}",
            s.in_channels,
            input.channels()
        )));
    }
    let (h, w) = (input.height(), input.width());
    let (kh, kw) = (s.kernel_h, s.kernel_w);
    let (out_h, out_w, pad_t, pad_l) = match padding {
        PaddingMode::Valid => {
            if kh > h || kw > w {
                return Err(FcotError::InvalidArgument(format!(
                    "kernel {kh}x{kw} larger than input {h}x{w} in valid mode"
                )));
            }
            (h - kh + 1, w - kw + 1, 0, 0)
        }
        PaddingMode::SameZero => (h, w, same_pad_lead(kh), same_pad_lead(kw)),
    };

    let mut out = FeatureMap::zeros(s.out_channels, out_h, out_w, input.stride());
    let plane_out = out_h * out_w;
    for o in 0..s.out_channels {
        let dst = &mut out.data_mut()[o * plane_out..(o + 1) * plane_out];
        for c in 0..s.in_channels {
            let src = input.channel(c);
            for i in 0..kh {
                // output rows y with 0 <= y + i - pad_t < h
                let y_lo = pad_t.saturating_sub(i);
                let y_hi = out_h.min((h + pad_t).saturating_sub(i));
                for j in 0..kw {
                    let wgt = filter.get(o, c, i, j);
                    if wgt == 0.0 {
                        continue;
                    }
                    let x_lo = pad_l.saturating_sub(j);
                    let x_hi = out_w.min((w + pad_l).saturating_sub(j));
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let sy = y + i - pad_t;
                        let src_row = &src[sy * w + x_lo + j - pad_l..sy * w + x_hi + j - pad_l];
                        let dst_row = &mut dst[y * out_w + x_lo..y * out_w + x_hi];
                        for (d, v) in dst_row.iter_mut().zip(src_row) {
                            *d += wgt * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear resampling with the align-corners convention.
pub fn bilinear_resize(input: &FeatureMap, new_h: usize, new_w: usize) -> Result<FeatureMap> {
    if new_h == 0 || new_w == 0 {
        return Err(FcotError::InvalidArgument(format!("resize target {new_h}x{new_w} must be positive")));
    }
    let (h, w) = (input.height(), input.width());
    if new_h == h && new_w == w {
        return Ok(input.clone());
    }
    let src_coord = |o: usize, n_out: usize, n_in: usize| -> f64 {
        if n_out > 1 {
            o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            (n_in - 1) as f64 / 2.0
        }
    };
    let stride = input.stride() * w as f64 / new_w as f64;
    let mut out = FeatureMap::zeros(input.channels(), new_h, new_w, stride);
    for c in 0..input.channels() {
        for y in 0..new_h {
            let fy = src_coord(y, new_h, h);
            for x in 0..new_w {
                let fx = src_coord(x, new_w, w);
                out.set(c, y, x, input.sample(c, fy, fx));
            }
        }
    }
    Ok(out)
}

/// Region pooling: the box (image pixels) is split into `out_h x out_w` bins
/// and each bin returns the mean of `samples_per_bin^2` bilinear samples at
/// uniformly spaced interior points.
pub fn prroi_pool(
    input: &FeatureMap,
    bbox: &BBox,
    out_h: usize,
    out_w: usize,
    samples_per_bin: usize,
) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 || samples_per_bin == 0 {
        return Err(FcotError::InvalidArgument("pooling sizes must be positive".into()));
    }
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
        return Err(FcotError::DegenerateBox(format!("{bbox:?}")));
    }
    let s = input.stride();
    let extent_w = input.width() as f64 * s;
    let extent_h = input.height() as f64 * s;
    if bbox.x1 <= 0.0 || bbox.y1 <= 0.0 || bbox.x0 >= extent_w || bbox.y0 >= extent_h {
        return Err(FcotError::InvalidArgument(format!(
            "box {bbox:?} does not overlap the {extent_w}x{extent_h} map extent"
        )));
    }

    let (gx0, gy0) = (bbox.x0 / s, bbox.y0 / s);
    let bin_w = bbox.width() / s / out_w as f64;
    let bin_h = bbox.height() / s / out_h as f64;
    let n = samples_per_bin as f64;
    let norm = 1.0 / (n * n);
    let out_stride = bbox.width() / out_w as f64;
    let mut out = FeatureMap::zeros(input.channels(), out_h, out_w, out_stride);
    for by in 0..out_h {
        for bx in 0..out_w {
            for c in 0..input.channels() {
                let mut acc = 0.0;
                for sy in 0..samples_per_bin {
                    let v = gy0 + (by as f64 + (sy as f64 + 0.5) / n) * bin_h;
                    for sx in 0..samples_per_bin {
                        let u = gx0 + (bx as f64 + (sx as f64 + 0.5) / n) * bin_w;
                        acc += input.sample(c, v - 0.5, u - 0.5);
                    }
                }
                out.set(c, by, bx, acc * norm);
            }
        }
    }
    Ok(out)
}

/// Copies the `k x k` window whose kernel-origin aligns with `center` the same
/// way [`correlate2d`] in same-zero mode does; cells outside the map are zero.
pub fn extract_patch(input: &FeatureMap, center: GridPos, k: usize) -> Result<FeatureMap> {
    let mut out = FeatureMap::zeros(input.channels(), k, k, input.stride());
    extract_patch_into(input, center, k, out.data_mut())?;
    Ok(out)
}

/// As [`extract_patch`], writing the flattened `(channel, row, column)` patch
/// into `dst` (length `channels * k * k`).
pub fn extract_patch_into(input: &FeatureMap, center: GridPos, k: usize, dst: &mut [f64]) -> Result<()> {
    if k == 0 {
        return Err(FcotError::InvalidArgument("patch size must be positive".into()));
    }
    if center.x >= input.width() || center.y >= input.height() {
        return Err(FcotError::OutOfGrid {
            x: center.x as i64,
            y: center.y as i64,
            width: input.width(),
            height: input.height(),
        });
    }
    debug_assert_eq!(dst.len(), input.channels() * k * k);
    let lead = same_pad_lead(k) as i64;
    let (h, w) = (input.height() as i64, input.width() as i64);
    for c in 0..input.channels() {
        let plane = input.channel(c);
        for i in 0..k {
            let sy = center.y as i64 + i as i64 - lead;
            for j in 0..k {
                let sx = center.x as i64 + j as i64 - lead;
                dst[(c * k + i) * k + j] = if sy >= 0 && sy < h && sx >= 0 && sx < w {
                    plane[(sy * w + sx) as usize]
                } else {
                    0.0
                };
            }
        }
    }
    Ok(())
}

//! Image/grid coordinate bookkeeping, anchor-free offset targets and
//! Gaussian center labels.

use serde::{Deserialize, Serialize};

use crate::error::{FcotError, Result};
use crate::tensor::FeatureMap;

/// Axis-aligned box in image pixel coordinates, `x1 > x0` and `y1 > y0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    /// Box from top-left corner and extent (`x, y, w, h`).
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite());
        if !finite || self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(FcotError::DegenerateBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x0, self.y0, self.width(), self.height()]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x0: self.x0 + dx, y0: self.y0 + dy, x1: self.x1 + dx, y1: self.y1 + dy }
    }

    /// Intersection-over-union, in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let ih = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Integer feature-grid position, `x` = column, `y` = row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub x: usize,
    pub y: usize,
}

impl GridPos {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Image pixel that grid cell `(x, y)` maps back to: `floor(s/2 + x*s)`.
pub fn grid_to_image(x: usize, y: usize, stride: f64) -> (f64, f64) {
    let map = |i: usize| (stride / 2.0 + i as f64 * stride).floor();
    (map(x), map(y))
}

/// Grid cell whose mapped pixel is nearest to an image point; errors when the
/// point falls outside the grid.
pub fn nearest_grid_pos(px: f64, py: f64, height: usize, width: usize, stride: f64) -> Result<GridPos> {
    let gx = ((px - stride / 2.0) / stride).round();
    let gy = ((py - stride / 2.0) / stride).round();
    if !(gx >= 0.0 && gy >= 0.0 && gx < width as f64 && gy < height as f64) {
        return Err(FcotError::OutOfGrid {
            x: if gx.is_finite() { gx as i64 } else { i64::MIN },
            y: if gy.is_finite() { gy as i64 } else { i64::MIN },
            width,
            height,
        });
    }
    Ok(GridPos::new(gx as usize, gy as usize))
}

/// Dense per-position box-side distances, channels ordered `(l, r, t, b)`,
/// in image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetMaps {
    map: FeatureMap,
}

impl OffsetMaps {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const TOP: usize = 2;
    pub const BOTTOM: usize = 3;

    pub fn from_map(map: FeatureMap) -> Result<Self> {
        if map.channels() != 4 {
            return Err(FcotError::ShapeMismatch(format!("offset maps need 4 channels, got {}", map.channels())));
        }
        Ok(Self { map })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn stride(&self) -> f64 {
        self.map.stride()
    }

    /// `(l, r, t, b)` at a grid position.
    pub fn at(&self, p: GridPos) -> [f64; 4] {
        [0, 1, 2, 3].map(|c| self.map.get(c, p.y, p.x))
    }
}

/// Anchor-free regression targets of `bbox` at every grid position.
///
/// Offsets are signed; positions outside the box get negative sides.
pub fn encode_targets(bbox: &BBox, grid_h: usize, grid_w: usize, stride: f64) -> OffsetMaps {
    let mut map = FeatureMap::zeros(4, grid_h, grid_w, stride);
    for y in 0..grid_h {
        for x in 0..grid_w {
            let [l, r, t, b] = offsets_at(bbox, GridPos::new(x, y), stride);
            map.set(OffsetMaps::LEFT, y, x, l);
            map.set(OffsetMaps::RIGHT, y, x, r);
            map.set(OffsetMaps::TOP, y, x, t);
            map.set(OffsetMaps::BOTTOM, y, x, b);
        }
    }
    OffsetMaps { map }
}

/// The `(l, r, t, b)` target at a single position.
pub fn offsets_at(bbox: &BBox, p: GridPos, stride: f64) -> [f64; 4] {
    let (px, py) = grid_to_image(p.x, p.y, stride);
    [px - bbox.x0, bbox.x1 - px, py - bbox.y0, bbox.y1 - py]
}

/// Inverse of [`offsets_at`].
pub fn decode_box(offsets: [f64; 4], p: GridPos, stride: f64) -> Result<BBox> {
    let [l, r, t, b] = offsets;
    if !(l + r > 0.0 && t + b > 0.0) {
        return Err(FcotError::DegenerateBox(format!("offsets {offsets:?} at {p:?}")));
    }
    let (px, py) = grid_to_image(p.x, p.y, stride);
    BBox::new(px - l, py - t, px + r, py + b)
}

/// Positions within Chebyshev distance `radius` of `center`, clipped to the
/// grid, in row-major order.
pub fn vicinity(center: GridPos, radius: usize, grid_h: usize, grid_w: usize) -> Vec<GridPos> {
    let y_lo = center.y.saturating_sub(radius);
    let y_hi = (center.y + radius).min(grid_h.saturating_sub(1));
    let x_lo = center.x.saturating_sub(radius);
    let x_hi = (center.x + radius).min(grid_w.saturating_sub(1));
    let mut out = Vec::with_capacity((2 * radius + 1).pow(2));
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            out.push(GridPos::new(x, y));
        }
    }
    out
}

/// Single-channel response map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    map: FeatureMap,
}

impl ScoreMap {
    pub fn from_map(map: FeatureMap) -> Result<Self> {
        if map.channels() != 1 {
            return Err(FcotError::ShapeMismatch(format!("score map needs 1 channel, got {}", map.channels())));
        }
        Ok(Self { map })
    }

    pub fn new(height: usize, width: usize, stride: f64, data: Vec<f64>) -> Result<Self> {
        Self::from_map(FeatureMap::new(1, height, width, stride, data)?)
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn into_map(self) -> FeatureMap {
        self.map
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn stride(&self) -> f64 {
        self.map.stride()
    }

    pub fn values(&self) -> &[f64] {
        self.map.data()
    }

    pub fn at(&self, p: GridPos) -> f64 {
        self.map.get(0, p.y, p.x)
    }
}

/// `exp(-|p - center|^2 / (2 sigma^2))` over the grid; `center` is in grid
/// index units `(x, y)`.
pub fn gaussian_label(center: (f64, f64), grid_h: usize, grid_w: usize, sigma: f64, stride: f64) -> Result<ScoreMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FcotError::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let denom = 2.0 * sigma * sigma;
    let map = FeatureMap::from_fn(1, grid_h, grid_w, stride, |_, y, x| {
        let dx = x as f64 - center.0;
        let dy = y as f64 - center.1;
        (-(dx * dx + dy * dy) / denom).exp()
    });
    ScoreMap::from_map(map)
}

/// Continuous grid-index coordinates `(x, y)` of an image point.
pub fn image_to_grid(px: f64, py: f64, stride: f64) -> (f64, f64) {
    (px / stride - 0.5, py / stride - 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_mapping_examples() {
        assert_eq!(grid_to_image(0, 0, 4.0), (2.0, 2.0));
        assert_eq!(grid_to_image(7, 9, 1.0), (7.0, 9.0));
        assert_eq!(grid_to_image(3, 5, 4.0), (14.0, 22.0));
    }

    #[test]
    fn encode_examples() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let m = encode_targets(&b, 5, 5, 4.0);
        assert_eq!(m.at(GridPos::new(0, 0)), [2.0, 8.0, 2.0, 8.0]);

        // centered at pixel (14, 22) = grid (3, 5)
        let b = BBox::from_center(14.0, 22.0, 9.0, 5.0).unwrap();
        let m = encode_targets(&b, 8, 8, 4.0);
        assert_eq!(m.at(GridPos::new(3, 5)), [4.5, 4.5, 2.5, 2.5]);
    }

    #[test]
    fn decode_examples() {
        let b = decode_box([2.0, 8.0, 2.0, 8.0], GridPos::new(0, 0), 4.0).unwrap();
        assert_eq!(b, BBox::new(0.0, 0.0, 10.0, 10.0).unwrap());
        // (12, 12) at stride 4 maps to pixel (50, 50)
        let b = decode_box([5.0; 4], GridPos::new(12, 12), 4.0).unwrap();
        assert_eq!(b, BBox::new(45.0, 45.0, 55.0, 55.0).unwrap());
        assert!(decode_box([1.0, -1.0, 2.0, 2.0], GridPos::new(0, 0), 4.0).is_err());
    }

    #[test]
    fn vicinity_counts() {
        assert_eq!(vicinity(GridPos::new(4, 4), 0, 9, 9), vec![GridPos::new(4, 4)]);
        assert_eq!(vicinity(GridPos::new(4, 4), 2, 9, 9).len(), 25);
        assert_eq!(vicinity(GridPos::new(0, 0), 2, 9, 9).len(), 9);
        assert_eq!(vicinity(GridPos::new(8, 0), 2, 9, 9).len(), 9);
    }

    #[test]
    fn vicinity_matches_clipping_oracle() {
        for (cx, cy) in [(0, 0), (1, 3), (6, 6), (7, 2)] {
            for r in 0..4 {
                let brute = (0..8i64)
                    .flat_map(|y| (0..7i64).map(move |x| (x, y)))
                    .filter(|&(x, y)| (x - cx as i64).abs().max((y - cy as i64).abs()) <= r as i64)
                    .count();
                assert_eq!(vicinity(GridPos::new(cx, cy), r, 8, 7).len(), brute);
            }
        }
    }

    #[test]
    fn gaussian_examples() {
        let g = gaussian_label((3.0, 4.0), 9, 9, 1.0, 4.0).unwrap();
        assert_eq!(g.at(GridPos::new(3, 4)), 1.0);
        assert!((g.at(GridPos::new(4, 4)) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.at(GridPos::new(4, 4)) - 0.6065306597126334).abs() < 1e-12);
        assert_eq!(g.at(GridPos::new(2, 4)), g.at(GridPos::new(3, 5)));
        assert!(gaussian_label((0.0, 0.0), 3, 3, 0.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(5.0, 5.0, 6.0, 6.0).unwrap()), 0.0);
    }

    // Coordinates on a 1/256-pixel lattice: the subtraction round trip is then
    // exact in binary floating point.
    fn arb_box() -> impl Strategy<Value = BBox> {
        let q = |v: f64| (v * 256.0).round() / 256.0;
        (-50.0f64..300.0, -50.0f64..300.0, 0.5f64..200.0, 0.5f64..200.0)
            .prop_map(move |(x, y, w, h)| BBox::from_xywh(q(x), q(y), q(w), q(h)).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip_exact(b in arb_box(), x in 0usize..72, y in 0usize..72) {
            let p = GridPos::new(x, y);
            let back = decode_box(offsets_at(&b, p, 4.0), p, 4.0).unwrap();
            prop_assert_eq!(back, b);
        }

        #[test]
        fn sides_sum_to_extent(b in arb_box()) {
            let m = encode_targets(&b, 12, 10, 4.0);
            for y in 0..12 {
                for x in 0..10 {
                    let [l, r, t, bt] = m.at(GridPos::new(x, y));
                    prop_assert!((l + r - b.width()).abs() < 1e-9);
                    prop_assert!((t + bt - b.height()).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn gaussian_bounded_and_monotone(cx in 0.0f64..10.0, cy in 0.0f64..10.0, sigma in 0.5f64..5.0) {
            let g = gaussian_label((cx, cy), 11, 11, sigma, 1.0).unwrap();
            let mut pairs: Vec<(f64, f64)> = (0..11).flat_map(|y| (0..11).map(move |x| (x, y)))
                .map(|(x, y)| (((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt(), g.at(GridPos::new(x, y))))
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
            for (_, v) in &pairs {
                prop_assert!(*v > 0.0);
                prop_assert!(*v <= 1.0);
            }
        }

        #[test]
        fn iou_symmetric_and_nested(a in arb_box(), s in 0.1f64..1.0) {
            let (cx, cy) = a.center();
            let inner = BBox::from_center(cx, cy, a.width() * s, a.height() * s).unwrap();
            prop_assert!((a.iou(&inner) - inner.iou(&a)).abs() < 1e-15);
            let ratio = inner.area() / a.area();
            prop_assert!((a.iou(&inner) - ratio).abs() < 1e-9);
        }
    }
}

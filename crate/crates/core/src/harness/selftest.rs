//! Oracle suites run by `fcot selftest`: the optimizer against finite
//! differences, a line grid and the dense normal equations; monotone
//! descent; box encoding round trips; fusion endpoints.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{decode_box, offsets_at, BBox, GridPos};
use crate::optim::{closed_form_solve, gradient, loss, step_length, steepest_descent_traced, LsqProblem, SupervisionPoint};
use crate::rmg::{fuse_with, RegModel};
use crate::tensor::{FilterShape, LinearFilter};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!("{} {:<18} {} ({:.2}s)", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail, self.seconds)
    }
}

fn random_problem(rng: &mut ChaCha8Rng, shape: FilterShape, points: usize, eta: f64, scale: f64) -> Result<LsqProblem> {
    let pts: Vec<SupervisionPoint> = (0..points)
        .map(|_| SupervisionPoint {
            patch: (0..shape.patch_len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
            target: (0..shape.out_channels).map(|_| rng.random_range(-3.0..3.0)).collect(),
            weight: rng.random_range(0.2..2.0),
        })
        .collect();
    LsqProblem::new(shape, eta, pts)
}

fn random_shape(rng: &mut ChaCha8Rng) -> FilterShape {
    let k = if rng.random_bool(0.5) { 3 } else { 1 };
    FilterShape::new(rng.random_range(1..=4), rng.random_range(1..=16), k, k)
}

fn random_filter(rng: &mut ChaCha8Rng, shape: FilterShape) -> Result<LinearFilter> {
    LinearFilter::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn suite(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Result<SuiteReport> {
    let t = Instant::now();
    let (passed, detail) = f()?;
    Ok(SuiteReport { name, passed, detail, seconds: t.elapsed().as_secs_f64() })
}

/// Analytic gradient against central differences; worst relative error.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    suite("gradient", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let shape = random_shape(&mut rng);
            let pts = rng.random_range(5..40);
            let eta = rng.random_range(0.0..0.5);
            let prob = random_problem(&mut rng, shape, pts, eta, 1.0)?;
            let f = random_filter(&mut rng, shape)?;
            let g = gradient(&f, &prob)?;
            let h = 1e-4;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..shape.len() {
                let mut fp = f.clone();
                fp.weights_mut()[i] += h;
                let mut fm = f.clone();
                fm.weights_mut()[i] -= h;
                let fd = (loss(&fp, &prob)? - loss(&fm, &prob)?) / (2.0 * h);
                num += (fd - g.weights()[i]).powi(2);
                den += g.weights()[i].powi(2);
            }
            worst = worst.max((num / den.max(f64::MIN_POSITIVE)).sqrt());
        }
        Ok((worst < 1e-5, format!("{instances} problems, worst relative error {worst:.2e}")))
    })
}

/// The exact step is no worse than any point of a 101-point grid on
/// `[0, 3 alpha]`.
pub fn line_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    suite("line minimality", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fails = 0;
        for _ in 0..instances {
            let shape = random_shape(&mut rng);
            let pts = rng.random_range(5..40);
            let eta = rng.random_range(0.01..0.5);
            let prob = random_problem(&mut rng, shape, pts, eta, 1.0)?;
            let f = random_filter(&mut rng, shape)?;
            let g = gradient(&f, &prob)?;
            let alpha = step_length(&g, &prob)?;
            let at = |a: f64| -> Result<f64> {
                let w = f.weights().iter().zip(g.weights()).map(|(x, d)| x - a * d).collect();
                loss(&LinearFilter::new(shape, w)?, &prob)
            };
            let best = at(alpha)?;
            let mut grid_min = f64::INFINITY;
            for i in 0..=100 {
                grid_min = grid_min.min(at(3.0 * alpha * i as f64 / 100.0)?);
            }
            if best > grid_min + 1e-12 * grid_min.abs().max(1.0) {
                fails += 1;
            }
        }
        Ok((fails == 0, format!("{instances} problems, {fails} beaten by the grid")))
    })
}

/// Steepest descent reaches the normal-equations solution within `1e-6`
/// relative loss gap in at most 200 iterations (eta = 0.1, small patches so
/// the Hessian is well conditioned).
pub fn closed_form_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    suite("closed form", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst_gap: f64 = 0.0;
        let mut worst_iters = 0;
        for _ in 0..instances {
            let shape = random_shape(&mut rng);
            let pts = rng.random_range(10..60);
            let prob = random_problem(&mut rng, shape, pts, 0.1, 0.1)?;
            let opt = loss(&closed_form_solve(&prob)?, &prob)?;
            let trace = steepest_descent_traced(&LinearFilter::zeros(shape), &prob, 200)?;
            let gap = |l: f64| (l - opt) / opt.abs().max(f64::MIN_POSITIVE);
            let reached = trace.losses.iter().position(|&l| gap(l) < 1e-6);
            worst_gap = worst_gap.max(gap(*trace.losses.last().unwrap_or(&f64::INFINITY)));
            match reached {
                Some(i) => worst_iters = worst_iters.max(i),
                None => worst_iters = usize::MAX,
            }
        }
        let ok = worst_iters <= 200;
        let iters = if ok { worst_iters.to_string() } else { ">200".into() };
        Ok((ok, format!("{instances} problems, worst gap {worst_gap:.2e}, iterations needed {iters}")))
    })
}

/// Loss never increases along a descent run.
pub fn monotone_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    suite("monotone descent", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0;
        for _ in 0..instances {
            let shape = random_shape(&mut rng);
            let pts = rng.random_range(2..30);
            let eta = rng.random_range(0.0..0.5);
            let scale = rng.random_range(0.05..2.0);
            let prob = random_problem(&mut rng, shape, pts, eta, scale)?;
            let f0 = random_filter(&mut rng, shape)?;
            let trace = steepest_descent_traced(&f0, &prob, 15)?;
            violations += trace.losses.windows(2).filter(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)).count();
        }
        Ok((violations == 0, format!("{instances} runs, {violations} increases")))
    })
}

/// Encode then decode returns the box exactly (coordinates on a 1/256 pixel
/// lattice), and opposite offsets always sum to the box side.
pub fn geometry_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    suite("box round trip", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bad = 0;
        let lattice = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo..hi) * 256.0).round() / 256.0;
        for _ in 0..instances {
            let stride = if rng.random_bool(0.5) { 4.0 } else { 16.0 };
            let x0 = lattice(&mut rng, -50.0, 300.0);
            let y0 = lattice(&mut rng, -50.0, 300.0);
            let b = BBox::new(x0, y0, x0 + lattice(&mut rng, 0.5, 200.0), y0 + lattice(&mut rng, 0.5, 200.0))?;
            let p = GridPos::new(rng.random_range(0..72), rng.random_range(0..72));
            let o = offsets_at(&b, p, stride);
            if decode_box(o, p, stride)? != b || o[0] + o[1] != b.width() || o[2] + o[3] != b.height() {
                bad += 1;
            }
        }
        Ok((bad == 0, format!("{instances} boxes, {bad} mismatches")))
    })
}

/// Fusion endpoints and idempotence.
pub fn fusion_suite(seed: u64) -> Result<SuiteReport> {
    suite("fusion endpoints", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = FilterShape::new(4, 8, 3, 3);
        let st = RegModel::new(random_filter(&mut rng, shape)?)?;
        let on = RegModel::new(random_filter(&mut rng, shape)?)?;
        let mut ok = fuse_with(&on, &st, 0.0, false)? == st && fuse_with(&on, &st, 1.0, false)? == on;
        for lambda in [0.0, 0.25, 0.6, 1.0] {
            ok &= fuse_with(&st, &st, lambda, true)? == st && fuse_with(&on, &on, lambda, false)? == on;
        }
        Ok((ok, "lambda 0/1 reproduce static/online, fuse(f, f) = f".into()))
    })
}

/// All suites at their acceptance sizes.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        gradient_suite(seed, 100)?,
        line_suite(seed + 1, 100)?,
        closed_form_suite(seed + 2, 20)?,
        monotone_suite(seed + 3, 1000)?,
        geometry_suite(seed + 4, 10_000)?,
        fusion_suite(seed + 5)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for r in [
            gradient_suite(1, 5).unwrap(),
            line_suite(2, 5).unwrap(),
            closed_form_suite(3, 3).unwrap(),
            monotone_suite(4, 20).unwrap(),
            geometry_suite(5, 200).unwrap(),
            fusion_suite(6).unwrap(),
        ] {
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn report_line_format() {
        let r = SuiteReport { name: "x", passed: false, detail: "d".into(), seconds: 0.5 };
        assert!(r.line().starts_with("FAIL x"));
    }
}

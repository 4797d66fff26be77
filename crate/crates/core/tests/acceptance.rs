//! End-to-end acceptance checks. Runs as a plain binary so each criterion
//! prints one PASS/FAIL line; exits nonzero when any fails.

use std::process::ExitCode;
use std::time::Instant;

use fcot_core::geometry::{decode_box, encode_targets, GridPos, OffsetMaps};
use fcot_core::harness::ablation::{drift_check, Ablation, AblationConfig, RMG};
use fcot_core::harness::config::config_hash;
use fcot_core::harness::dataset::{read_dataset, read_meta, write_dataset, write_results, RunMeta};
use fcot_core::harness::metrics::{evaluate, Protocol};
use fcot_core::harness::run::run_sequence;
use fcot_core::harness::synth::{synth_sequence, SynthSpec};
use fcot_core::optim::{gradient, step_length, steepest_descent, steepest_descent_traced};
use fcot_core::rmg::fuse_with;
use fcot_core::{BBox, FilterShape, LeastSquares, LinearFilter, LsqProblem, RegModel, SupervisionPoint, TrackerConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn problem(rng: &mut ChaCha8Rng, shape: FilterShape, points: usize, eta: f64, scale: f64) -> LsqProblem {
    let pts: Vec<SupervisionPoint> = (0..points)
        .map(|_| SupervisionPoint {
            patch: (0..shape.patch_len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
            target: (0..shape.out_channels).map(|_| rng.random_range(-3.0..3.0)).collect(),
            weight: rng.random_range(0.2..2.0),
        })
        .collect();
    LsqProblem::new(shape, eta, pts).unwrap()
}

fn shape(rng: &mut ChaCha8Rng) -> FilterShape {
    let k = [1, 3][rng.random_range(0..2)];
    FilterShape::new(rng.random_range(1..=4), rng.random_range(1..=16), k, k)
}

fn filter(rng: &mut ChaCha8Rng, s: FilterShape) -> LinearFilter {
    LinearFilter::new(s, (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// Weighted mean squared residual plus eta^2 |w|^2, by scalar loops.
fn loss_ref(w: &[f64], p: &LsqProblem) -> f64 {
    let s = p.shape();
    let (mut acc, mut n) = (0.0, 0.0);
    for pt in p.points() {
        n += pt.weight;
        for o in 0..s.out_channels {
            let pred: f64 = (0..s.patch_len()).map(|i| pt.patch[i] * w[o * s.patch_len() + i]).sum();
            acc += pt.weight * (pt.target[o] - pred).powi(2);
        }
    }
    let eta = p.eta();
    acc / n + eta * eta * w.iter().map(|v| v * v).sum::<f64>()
}

// Minimizer from the normal equations (A + eta^2 I) w_o = b_o, by LU.
fn normal_equations(p: &LsqProblem) -> Vec<f64> {
    let s = p.shape();
    let d = s.patch_len();
    let n: f64 = p.points().map(|pt| pt.weight).sum();
    let mut a = DMatrix::<f64>::identity(d, d) * (p.eta() * p.eta());
    let mut b = DMatrix::<f64>::zeros(d, s.out_channels);
    for pt in p.points() {
        let v = DVector::from_column_slice(&pt.patch);
        a += &v * v.transpose() * (pt.weight / n);
        for o in 0..s.out_channels {
            let mut col = b.column_mut(o);
            col += &v * (pt.weight * pt.target[o] / n);
        }
    }
    let x = a.lu().solve(&b).expect("regularized system is nonsingular");
    let mut w = vec![0.0; s.len()];
    for o in 0..s.out_channels {
        for i in 0..d {
            w[o * d + i] = x[(i, o)];
        }
    }
    w
}

fn c1_optimizer() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_grad, mut grid_beaten, mut worst_iters) = (0.0f64, 0, 0usize);
    for i in 0..100 {
        let s = shape(&mut rng);
        let pts = rng.random_range(5..50);
        let eta = rng.random_range(0.01..0.5);
        let p = problem(&mut rng, s, pts, eta, 1.0);
        let f = filter(&mut rng, s);
        let g = gradient(&f, &p).unwrap();
        let h = 1e-4;
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..s.len() {
            let mut wp = f.weights().to_vec();
            wp[j] += h;
            let mut wm = f.weights().to_vec();
            wm[j] -= h;
            let fd = (loss_ref(&wp, &p) - loss_ref(&wm, &p)) / (2.0 * h);
            num += (fd - g.weights()[j]).powi(2);
            den += fd * fd;
        }
        worst_grad = worst_grad.max((num / den).sqrt());

        let alpha = step_length(&g, &p).unwrap();
        let at = |a: f64| loss_ref(&f.weights().iter().zip(g.weights()).map(|(x, d)| x - a * d).collect::<Vec<_>>(), &p);
        let grid = (0..=100).map(|k| at(4.0 * alpha * k as f64 / 100.0 + 1e-3 * alpha)).fold(f64::INFINITY, f64::min);
        if at(alpha) > grid + 1e-12 * grid.abs().max(1.0) {
            grid_beaten += 1;
        }

        // eta = 0.1 instance, small patches for a well-conditioned Hessian
        if i % 5 == 0 {
            let q = problem(&mut rng, s, pts, 0.1, 0.1);
            let opt = loss_ref(&normal_equations(&q), &q);
            let mut w = LinearFilter::zeros(s);
            let mut reached = None;
            for it in 0..=200 {
                if (loss_ref(w.weights(), &q) - opt) / opt < 1e-6 {
                    reached = Some(it);
                    break;
                }
                w = steepest_descent(&w, &q, 1).unwrap();
            }
            worst_iters = worst_iters.max(reached.unwrap_or(usize::MAX));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst_grad < 1e-5 && grid_beaten == 0 && worst_iters <= 200 && secs < 30.0;
    (ok, format!("gradient rel err {worst_grad:.1e}, grid wins {grid_beaten}/100, closed form reached in {worst_iters} iters, {secs:.1}s"))
}

fn c2_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    let mut steps = 0;
    for _ in 0..1000 {
        let s = shape(&mut rng);
        let pts = rng.random_range(2..40);
        let eta = rng.random_range(0.0..0.5);
        let scale = rng.random_range(0.05..3.0);
        let p = problem(&mut rng, s, pts, eta, scale);
        let mut f = filter(&mut rng, s);
        let mut prev = loss_ref(f.weights(), &p);
        for _ in 0..10 {
            f = steepest_descent(&f, &p, 1).unwrap();
            let l = loss_ref(f.weights(), &p);
            if l > prev + 1e-12 * prev.abs().max(1.0) {
                violations += 1;
            }
            prev = l;
            steps += 1;
        }
        let trace = steepest_descent_traced(&filter(&mut rng, s), &p, 10).unwrap();
        violations += trace.losses.windows(2).filter(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)).count();
    }
    (violations == 0, format!("1000 instances, {steps} checked steps, {violations} increases"))
}

fn c3_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let lattice = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo..hi) * 256.0).round() / 256.0;
    let (mut bad_trip, mut bad_sum) = (0, 0);
    for _ in 0..10_000 {
        let stride = [4.0, 16.0][rng.random_range(0..2)];
        let n = if stride == 4.0 { 72 } else { 18 };
        let x0 = lattice(&mut rng, -64.0, 320.0);
        let y0 = lattice(&mut rng, -64.0, 320.0);
        let b = BBox::new(x0, y0, x0 + lattice(&mut rng, 0.25, 250.0), y0 + lattice(&mut rng, 0.25, 250.0)).unwrap();
        let maps = encode_targets(&b, n, n, stride);
        let p = GridPos::new(rng.random_range(0..n), rng.random_range(0..n));
        if decode_box(maps.at(p), p, stride).unwrap() != b {
            bad_trip += 1;
        }
        for y in 0..n {
            for x in 0..n {
                let m = maps.map();
                let (l, r) = (m.get(OffsetMaps::LEFT, y, x), m.get(OffsetMaps::RIGHT, y, x));
                let (t, bo) = (m.get(OffsetMaps::TOP, y, x), m.get(OffsetMaps::BOTTOM, y, x));
                if l + r != b.width() || t + bo != b.height() {
                    bad_sum += 1;
                }
            }
        }
    }
    (bad_trip == 0 && bad_sum == 0, format!("10000 boxes, {bad_trip} round-trip mismatches, {bad_sum} side-sum mismatches"))
}

fn c4_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut ok = true;
    for _ in 0..50 {
        let s = FilterShape::new(4, 2 * rng.random_range(1..=16), 3, 3);
        let st = RegModel::new(filter(&mut rng, s)).unwrap();
        let on = RegModel::new(filter(&mut rng, s)).unwrap();
        let bits = |m: &RegModel| m.filter().weights().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ok &= bits(&fuse_with(&on, &st, 0.0, false).unwrap()) == bits(&st);
        ok &= bits(&fuse_with(&on, &st, 1.0, false).unwrap()) == bits(&on);
        for _ in 0..10 {
            let lambda = rng.random_range(0.0..=1.0);
            for half in [false, true] {
                ok &= bits(&fuse_with(&st, &st, lambda, half).unwrap()) == bits(&st);
            }
        }
    }
    (ok, "lambda 0/1 bit-exact, fuse(f, f, lambda) = f over 50 filters x 10 rates".into())
}

fn c5_smoke() -> Outcome {
    let t = Instant::now();
    let seq = synth_sequence(&SynthSpec::translation(0)).unwrap();
    let out = run_sequence(&seq, &TrackerConfig::default(), false).unwrap();
    let rep = evaluate(&out.boxes, &seq.ground_truth, Protocol::Vot).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = seq.frames.len() == 100 && rep.ao >= 0.7 && rep.vot_failures == 0 && secs < 10.0;
    (ok, format!("mean IoU {:.4}, failures {}, {:.2}s for {} frames", rep.ao, rep.vot_failures, secs, seq.frames.len()))
}

fn c6_online_regression(ab: &mut Ablation) -> Outcome {
    let t = ab.online_regression().unwrap();
    let rmg = t.row(RMG, None).unwrap().mean_iou;
    let st = ab.static_only().unwrap().mean_iou;
    (rmg >= st, format!("rmg {rmg:.6} vs static-only {st:.6} (delta {:+.2e}) over 10 deforming seeds", rmg - st))
}

fn c7_drift() -> Outcome {
    let rows = drift_check(&TrackerConfig::default(), &(0..10).collect::<Vec<_>>(), 0.3).unwrap();
    let wins = rows.iter().filter(|r| r.rectified_loss < r.dynamic_loss).count();
    let worst = rows.iter().map(|r| r.rectified_loss / r.dynamic_loss).fold(0.0, f64::max);
    let trad = rows.iter().map(|r| r.trad_loss / r.dynamic_loss).sum::<f64>() / rows.len() as f64;
    (
        wins == rows.len() && rows.len() == 10,
        format!("rectified < generated on {wins}/10 seeds, worst ratio {worst:.3}, plain descent mean ratio {trad:.3}"),
    )
}

fn c8_sweep(ab: &mut Ablation) -> Outcome {
    let t = ab.fusion_sweep().unwrap();
    let lambdas: Vec<f64> = t.rows.iter().filter_map(|r| r.lambda).collect();
    let expected: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let identical = t.rows[0].digest == ab.static_only().unwrap().digest;
    let best = t.rows.iter().max_by(|a, b| a.mean_iou.total_cmp(&b.mean_iou)).unwrap();
    (
        t.rows.len() == 11 && lambdas == expected && identical,
        format!("{} rows, lambda 0 identical to static-only: {identical}, best lambda {:.1}", t.rows.len(), best.lambda.unwrap()),
    )
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let seq = synth_sequence(&SynthSpec::translation(0)).unwrap();
    write_dataset(&tmp.path().join("seq"), &seq).unwrap();
    let cfg = TrackerConfig::default();
    let run = |name: &str| {
        let data = read_dataset(&tmp.path().join("seq")).unwrap();
        let out = run_sequence(&data, &cfg, false).unwrap();
        let path = tmp.path().join(name).join("results.txt");
        let meta = RunMeta { config_hash: config_hash(&cfg).unwrap(), seed: cfg.seed, frames: out.frames, fps: out.fps() };
        write_results(&path, &out.boxes, &meta).unwrap();
        (std::fs::read(&path).unwrap(), read_meta(&path).unwrap().config_hash)
    };
    let (a, ha) = run("a");
    let (b, hb) = run("b");
    (a == b && ha == hb && !a.is_empty(), format!("two 100-frame runs, {} bytes each, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let mut ab = Ablation::new(TrackerConfig::default(), AblationConfig::default()).unwrap();
    let mut all = true;
    let mut report = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let (ok, detail) = f();
        all &= ok;
        println!("criterion {n}: {} {detail} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    };
    report(1, &mut c1_optimizer);
    report(2, &mut c2_monotone);
    report(3, &mut c3_geometry);
    report(4, &mut c4_fusion);
    report(5, &mut c5_smoke);
    report(6, &mut || c6_online_regression(&mut ab));
    report(7, &mut c7_drift);
    report(8, &mut || c8_sweep(&mut ab));
    report(9, &mut c9_determinism);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use proptest::prelude::*;

use super::*;
use crate::rng::Rng;

fn counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
    ConfusionCounts { tp, tn, fp, fn_ }
}

#[test]
fn confusion_metrics() {
    let c = counts(5, 5, 0, 0);
    assert_eq!(accuracy(&c).unwrap(), 1.0);
    assert_eq!(f1(&c).unwrap(), 1.0);
    let c = counts(1, 0, 1, 1);
    assert_eq!(precision(&c).unwrap(), 0.5);
    assert_eq!(recall(&c).unwrap(), 0.5);
    assert_eq!(f1(&c).unwrap(), 0.5);
    assert!(matches!(precision(&counts(0, 3, 0, 2)), Err(Error::UndefinedMetric(_))));
    assert!(matches!(accuracy(&counts(0, 0, 0, 0)), Err(Error::UndefinedMetric(_))));
    assert!(matches!(f1(&counts(0, 1, 1, 1)), Err(Error::UndefinedMetric(_))));
}

#[test]
fn confusion_from_predictions() {
    let c = ConfusionCounts::from_predictions(&[true, true, false, false], &[true, false, true, false]).unwrap();
    assert_eq!(c, counts(1, 1, 1, 1));
    assert!(ConfusionCounts::from_predictions(&[true], &[]).is_err());
}

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&[0.9, 0.4, 0.6, 0.1], &[true, true, false, false]).unwrap(), 0.75);
    assert_eq!(auroc(&[3.0, 4.0, 1.0, 2.0], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
    assert!(matches!(auroc(&[1.0, 2.0], &[true, true]), Err(Error::OneClassOnly)));
    assert!(auroc(&[f64::NAN, 1.0], &[true, false]).is_err());
}

proptest! {
    #[test]
    fn auroc_equals_pairwise(n in 2usize..200, levels in 1u64..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels as usize) as f64 / 7.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        labels[0] = true;
        labels[1] = false;
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), pairwise_auroc(&scores, &labels));
    }

    #[test]
    fn auroc_complement(n in 2usize..100, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        labels[0] = true;
        labels[1] = false;
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn set_metrics_symmetric(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut set = |n: usize| -> PointSet {
            (0..n).map(|_| (rng.below(12) as i64, rng.below(12) as i64)).collect()
        };
        let (p, t, u) = (set(10), set(8), set(6));
        prop_assert_eq!(dsc(&p, &t), dsc(&t, &p));
        let d = dsc(&p, &t);
        prop_assert!((0.0..=1.0).contains(&d));
        let pt = hausdorff(&p, &t).unwrap();
        prop_assert_eq!(pt, hausdorff(&t, &p).unwrap());
        let pu = hausdorff(&p, &u).unwrap();
        let ut = hausdorff(&u, &t).unwrap();
        prop_assert!(pt <= pu + ut + 1e-12);
    }
}

fn set(points: &[(i64, i64)]) -> PointSet {
    points.iter().copied().collect()
}

#[test]
fn dsc_examples() {
    let a = set(&[(0, 0), (1, 0), (2, 0), (3, 0)]);
    let b = set(&[(2, 0), (3, 0), (4, 0), (5, 0)]);
    assert_eq!(dsc(&a, &a), 1.0);
    assert_eq!(dsc(&a, &set(&[(9, 9)])), 0.0);
    assert_eq!(dsc(&a, &b), 0.5);
    assert_eq!(dsc(&PointSet::new(), &PointSet::new()), 1.0);
}

#[test]
fn hausdorff_examples() {
    assert_eq!(hausdorff(&set(&[(0, 0)]), &set(&[(3, 4)])).unwrap(), 5.0);
    let a = set(&[(1, 2), (5, 5)]);
    assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    assert_eq!(hausdorff(&set(&[(0, 0), (10, 0)]), &set(&[(0, 0)])).unwrap(), 10.0);
    assert!(matches!(hausdorff(&PointSet::new(), &a), Err(Error::EmptySet)));
}

#[test]
fn mae_examples() {
    assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
    assert!(matches!(mae(&[], &[]), Err(Error::Empty)));
    assert!(matches!(mae(&[1.0], &[]), Err(Error::LengthMismatch(1, 0))));
    let mut rng = Rng::new(4);
    let a: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
    let mut total = 0.0;
    for i in 0..a.len() {
        total += if a[i] > b[i] { a[i] - b[i] } else { b[i] - a[i] };
    }
    assert_eq!(mae(&a, &b).unwrap(), total / 500.0);
}

#[test]
fn boundary_of_square() {
    let sq: PointSet = (0..4).flat_map(|x| (0..4).map(move |y| (x, y))).collect();
    let b = sq.boundary();
    assert_eq!(b.len(), 12);
    assert!(!b.0.contains(&(1, 1)) && !b.0.contains(&(2, 2)));
}

fn masks(w: usize, h: usize, ps: &[(i64, i64)], centre: (f64, f64), r: f64) -> (Image, Image) {
    let mut p = Image::filled(w, h, 0.0);
    for &(x, y) in ps {
        p.set(x as usize, y as usize, 255.0);
    }
    let f = Image::from_fn(w, h, |x, y| {
        if (x as f64 - centre.0).hypot(y as f64 - centre.1) <= r {
            255.0
        } else {
            0.0
        }
    });
    (p, f)
}

fn segment(x0: i64, x1: i64, y: i64) -> Vec<(i64, i64)> {
    (x0..=x1).map(|x| (x, y)).collect()
}

/// Outer tangent angle from the anchor to a circle, measured from +x toward +y.
fn circle_tangent_deg(anchor: (f64, f64), centre: (f64, f64), r: f64) -> f64 {
    let (dx, dy) = (centre.0 - anchor.0, centre.1 - anchor.1);
    (dy.atan2(dx) + (r / dx.hypot(dy)).asin()).to_degrees()
}

#[test]
fn aop_disc_example() {
    let (ps, fh) = masks(100, 100, &segment(10, 30, 50), (60.0, 70.0), 10.0);
    let g = aop_geometry(&ps, &fh).unwrap();
    assert_eq!(g.anchor, (30, 50));
    assert_eq!((g.axis_start, g.axis_end), ((10, 50), (30, 50)));
    let want = circle_tangent_deg((30.0, 50.0), (60.0, 70.0), 10.0);
    assert!((want - 49.79).abs() < 0.01);
    assert!((g.degrees - want).abs() < 1.5, "{} vs {want}", g.degrees);
}

#[test]
fn aop_increases_as_head_descends() {
    let mut last = 0.0;
    for d in [0, 5, 10, 15] {
        let (ps, fh) = masks(100, 120, &segment(10, 30, 50), (60.0, 70.0 + d as f64), 10.0);
        let a = aop(&ps, &fh).unwrap();
        assert!(a > last, "d={d}: {a} <= {last}");
        last = a;
    }
}

#[test]
fn aop_translation_and_scale() {
    let (ps, fh) = masks(100, 100, &segment(10, 30, 50), (60.0, 70.0), 10.0);
    let base = aop(&ps, &fh).unwrap();
    let (ps2, fh2) = masks(100, 100, &segment(17, 37, 58), (67.0, 78.0), 10.0);
    assert!((aop(&ps2, &fh2).unwrap() - base).abs() < 1e-12);
    for k in [2i64, 3] {
        let anchor = (70i64, 70i64);
        let seg: Vec<_> = (0..=20 * k).map(|i| (anchor.0 - i, anchor.1)).collect();
        let c = (70.0 + 30.0 * k as f64, 70.0 + 20.0 * k as f64);
        let (ps, fh) = masks(300, 300, &seg, c, 10.0 * k as f64);
        assert!((aop(&ps, &fh).unwrap() - base).abs() < 1.5);
    }
}

#[test]
fn aop_degenerate_masks() {
    let (ps, fh) = masks(40, 40, &[(5, 5)], (20.0, 20.0), 5.0);
    assert!(matches!(aop(&ps, &fh), Err(Error::DegenerateMask(_))));
    let (ps, _) = masks(40, 40, &segment(2, 6, 5), (20.0, 20.0), 5.0);
    assert!(matches!(aop(&ps, &Image::filled(40, 40, 0.0)), Err(Error::DegenerateMask(_))));
}

#[test]
fn ci95_examples() {
    assert_eq!(ci95(&[2.0; 4]).unwrap(), (2.0, 0.0));
    let (m, h) = ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert_eq!(m, 3.0);
    assert!((h - 1.3859).abs() < 1e-4);
    assert!(matches!(ci95(&[1.0]), Err(Error::TooFewSamples { .. })));
}

#[test]
fn ci95_shrinks_with_replication() {
    let base = [1.0, 4.0, 2.0, 8.0];
    let (_, h1) = ci95(&base).unwrap();
    let rep: Vec<f64> = base.iter().cycle().take(400).copied().collect();
    let (_, h100) = ci95(&rep).unwrap();
    // Sample variance changes slightly with n through the n-1 denominator.
    let var_ratio = ((400.0_f64 / 399.0) / (4.0 / 3.0)).sqrt();
    assert!((h100 / h1 - var_ratio / 10.0).abs() < 1e-12);
}

/// Two-sided p for Student's t by direct quadrature. With `x = sqrt(df) tan u`
/// the density becomes proportional to `cos(u)^(df-1)` on `[0, pi/2)`.
fn t_pvalue_quadrature(t: f64, df: f64) -> f64 {
    let simpson = |a: f64, b: f64| {
        let n = 200_000;
        let h = (b - a) / n as f64;
        let f = |u: f64| u.cos().max(0.0).powf(df - 1.0);
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let u0 = (t.abs() / df.sqrt()).atan();
    simpson(u0, half_pi) / simpson(0.0, half_pi)
}

#[test]
fn t_test_examples() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let r = welch_t_test(&a, &a).unwrap();
    assert_eq!(r.t, 0.0);
    assert!((r.p_value - 1.0).abs() < 1e-12);

    let b = [6.0, 7.0, 8.0, 9.0, 10.0];
    let r = welch_t_test(&a, &b).unwrap();
    assert!((r.t + 5.0).abs() < 1e-12);
    assert!((r.df - 8.0).abs() < 1e-12);
    let oracle = t_pvalue_quadrature(r.t, r.df);
    assert!((r.p_value - oracle).abs() < 1e-9 * oracle.max(1e-3), "{} vs {oracle}", r.p_value);
    assert!((r.p_value - 0.0010528).abs() < 1e-7, "{}", r.p_value);

    assert!(matches!(t_test(&[2.0, 2.0], &[2.0, 2.0]), Err(Error::DegenerateVariance)));
    assert!(matches!(t_test(&[2.0], &[1.0, 2.0]), Err(Error::TooFewSamples { .. })));
}

proptest! {
    #[test]
    fn t_test_matches_quadrature(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let na = 2 + rng.below(8);
        let nb = 2 + rng.below(8);
        let shift = rng.normal();
        let a: Vec<f64> = (0..na).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.normal() * 2.0 + shift).collect();
        let r = welch_t_test(&a, &b).unwrap();
        prop_assume!(r.df >= 1.0);
        let oracle = t_pvalue_quadrature(r.t, r.df);
        prop_assert!((r.p_value - oracle).abs() < 1e-6, "{} vs {}", r.p_value, oracle);
    }
}

use epit::eit;
use epit_demo::{compute_eit, compute_tilted_curve, compute_toy, TOY_TRUTH};

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

#[test]
fn tilted_curve_is_normalized_and_matches_moments() {
    let c = compute_tilted_curve(0.8, 0.09, 3.0, 1.0, 0.7, 20_001).unwrap();
    // zero below the floor, smooth apart from the kink at the background
    let k = c.xs.iter().position(|&x| x == 0.7).expect("floor on the grid");
    assert!(c.tilted[..k].iter().all(|&p| p == 0.0));
    let (xs, p) = (&c.xs[k..], &c.tilted[k..]);
    assert!((trapezoid(xs, p) - 1.0).abs() < 1e-6);
    let mean = trapezoid(xs, &xs.iter().zip(p).map(|(x, p)| x * p).collect::<Vec<_>>());
    let var = trapezoid(xs, &xs.iter().zip(p).map(|(x, p)| (x - mean).powi(2) * p).collect::<Vec<_>>());
    assert!((mean - c.mean).abs() < 1e-6, "{mean} vs {}", c.mean);
    assert!((var - c.var).abs() < 1e-6 * c.var.max(1.0));
    assert!((trapezoid(&c.xs, &c.projected) - 1.0).abs() < 1e-6);
}

#[test]
fn tilted_curve_rejects_bad_inputs() {
    assert!(compute_tilted_curve(0.0, 0.0, 1.0, 1.0, 0.0, 10).is_err());
    assert!(compute_tilted_curve(0.0, 1.0, -1.0, 1.0, 0.0, 10).is_err());
}

#[test]
fn toy_without_prior_is_exactly_gaussian() {
    let t = compute_toy(0.5, 0.0, f64::NEG_INFINITY, 400.0, 200).unwrap();
    for k in 0..2 {
        assert!((t.ep_mean[k] - TOY_TRUTH[k]).abs() < 1e-10);
        assert!((t.exact_mean[k] - t.ep_mean[k]).abs() < 1e-3 * t.ep_std[k]);
        assert!((t.exact_std[k] / t.ep_std[k] - 1.0).abs() < 1e-2);
    }
    assert_eq!(t.density.len(), 200 * 200);
    assert!(t.density.iter().all(|d| (0.0..=1.0).contains(d)));
}

#[test]
fn toy_ep_tracks_the_truncated_posterior() {
    let t = compute_toy(0.6, 20.0, 0.9, 100.0, 300).unwrap();
    for k in 0..2 {
        assert!(t.ep_mean[k] >= 0.9);
        assert!((t.exact_mean[k] - t.ep_mean[k]).abs() < 0.25 * t.exact_std[k], "{k}: {:?} {:?}", t.exact_mean, t.ep_mean);
        assert!((t.ep_std[k] / t.exact_std[k] - 1.0).abs() < 0.25);
    }
    assert!(compute_toy(1.0, 1.0, 0.0, 1.0, 50).is_err());
}

#[test]
fn coarse_eit_reconstruction_finds_the_inclusion() {
    let inc = eit::DESK_INCLUSION;
    let r = compute_eit(inc.center[0], inc.center[1], inc.radius, 2.0, 150, 3).unwrap();
    let n = r.mean.len();
    assert_eq!((r.nodes.len(), r.truth.len(), r.std.len()), (2 * n, n, n));
    assert_eq!(r.triangles.len() % 3, 0);
    assert!(r.triangles.iter().all(|&i| (i as usize) < n));
    assert!(r.converged && r.outer_iterations <= 7);
    let (inside, outside): (Vec<_>, Vec<_>) = (0..n).partition(|&i| r.truth[i] > eit::BACKGROUND);
    let avg = |ix: &[usize]| ix.iter().map(|&i| r.mean[i]).sum::<f64>() / ix.len() as f64;
    assert!(avg(&inside) > avg(&outside));
}

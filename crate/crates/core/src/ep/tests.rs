use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linalg::rel_frobenius;
use crate::tilted::{moments_laplace_positivity, FactorHandle, GaussianFactor, LaplacePositivityFactor, ScalarFactor, TiltedMoments};

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.transpose() * &m + DMatrix::identity(n, n)
}

fn scalar_global(h: f64, k: f64) -> NaturalGaussian {
    NaturalGaussian::new(DVector::from_element(1, h), DMatrix::from_element(1, 1, k)).unwrap()
}

/// Returns fixed tilted moments regardless of the cavity.
#[derive(Debug)]
struct Fixed(TiltedMoments);

impl ScalarFactor for Fixed {
    fn tilted_moments(&self, _m: f64, _v: f64) -> Result<TiltedMoments, crate::tilted::TiltedError> {
        Ok(self.0)
    }
    fn is_log_concave(&self) -> bool {
        false
    }
}

fn laplace(lambda: f64, bg: f64, floor: f64) -> FactorHandle {
    Arc::new(LaplacePositivityFactor::new(lambda, bg, floor))
}

#[test]
fn cavity_with_empty_site_is_the_marginal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = random_spd(4, &mut rng);
    let h = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
    let g = NaturalGaussian::new(h, k.clone()).unwrap();
    let u = DMatrix::from_fn(1, 4, |_, _| rng.random_range(-1.0..1.0));
    let site = Site::new(u.clone(), laplace(1.0, 0.0, f64::NEG_INFINITY)).with_params(DVector::zeros(1), DMatrix::zeros(1, 1));
    let cav = cavity(&g, &site).unwrap();
    let cov = g.factor().inverse();
    let marg_var = (&u * &cov * u.transpose())[(0, 0)];
    let marg_mean = (&u * g.mean())[0];
    assert!((cav.prec[(0, 0)] - 1.0 / marg_var).abs() < 1e-12 / marg_var);
    assert!((cav.mean[0] - marg_mean).abs() < 1e-12 * marg_mean.abs().max(1.0));
}

#[test]
fn scalar_cavity_example() {
    let g = scalar_global(2.0, 2.0);
    let site = Site::coordinate(1, 0, laplace(1.0, 0.0, f64::NEG_INFINITY))
        .with_params(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 0.5));
    let cav = cavity(&g, &site).unwrap();
    assert!((cav.prec[(0, 0)] - 1.5).abs() < 1e-14);
    // (1 - 0.25)⁻¹ (1 - 0.15)
    assert!((cav.mean[0] - 0.85 / 0.75).abs() < 1e-14);
    // removing the site directly: precision 1.5, natural mean 1.7
    assert!((cav.mean[0] - 1.7 / 1.5).abs() < 1e-14);
}

#[test]
fn cavity_of_product_is_the_marginal_without_the_site() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for l in 1..=2 {
        let n = 5;
        let k0 = random_spd(n, &mut rng);
        let h0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::from_fn(l, n, |_, _| rng.random_range(-1.0..1.0));
        let k_i = random_spd(l, &mut rng);
        let h_i = DVector::from_fn(l, |_, _| rng.random_range(-1.0..1.0));
        let site = Site::new(u.clone(), Arc::new(GaussianFactor::new(DVector::zeros(l), DMatrix::identity(l, l))))
            .with_params(h_i.clone(), k_i.clone());
        let rest = NaturalGaussian::new(h0.clone(), k0.clone()).unwrap();
        let with_site = assemble_global(&rest.params(), std::slice::from_ref(&site)).into_gaussian().unwrap();
        let cav = cavity(&with_site, &site).unwrap();
        let c0 = rest.factor().inverse();
        let want_cov = &u * &c0 * u.transpose();
        let want_mean = &u * rest.mean();
        assert!(rel_frobenius(&cav.cov, &want_cov) < 1e-10);
        assert!((&cav.mean - &want_mean).norm() < 1e-10 * want_mean.norm().max(1.0));
    }
}

#[test]
fn cavity_rejects_indefinite_precision() {
    let g = scalar_global(0.0, 1.0);
    let site =
        Site::coordinate(1, 0, laplace(1.0, 0.0, f64::NEG_INFINITY)).with_params(DVector::zeros(1), DMatrix::from_element(1, 1, 2.0));
    assert_eq!(cavity(&g, &site), Err(EpError::CavityInvalid));
}

#[test]
fn update_with_unit_factor_gives_empty_site() {
    let cav =
        Cavity { mean: DVector::from_element(1, 0.7), prec: DMatrix::from_element(1, 1, 4.0), cov: DMatrix::from_element(1, 1, 0.25) };
    let tm = crate::tilted::ProjectedMoments { log_z: 0.0, mean: cav.mean.clone(), cov: cav.cov.clone() };
    let (h, k) = update_site(&cav, &tm).unwrap();
    assert_eq!(k[(0, 0)], 0.0);
    assert!(h[0].abs() < 1e-15);
}

#[test]
fn gaussian_site_recovers_the_factor_in_one_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for l in 1..=2 {
        let n = 4;
        let g = NaturalGaussian::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), random_spd(n, &mut rng)).unwrap();
        let t_cov = random_spd(l, &mut rng);
        let t_mean = DVector::from_fn(l, |_, _| rng.random_range(-2.0..2.0));
        let u = DMatrix::from_fn(l, n, |_, _| rng.random_range(-1.0..1.0));
        let site =
            Site::new(u, Arc::new(GaussianFactor::new(t_mean.clone(), t_cov.clone()))).with_params(DVector::zeros(l), DMatrix::zeros(l, l));
        let cav = cavity(&g, &site).unwrap();
        let tm = site.factor.tilted(&cav.mean, &cav.cov).unwrap();
        let (h, k) = update_site(&cav, &tm).unwrap();
        let t_prec = t_cov.clone().try_inverse().unwrap();
        assert!(rel_frobenius(&k, &t_prec) < 1e-10);
        let want_h = &t_prec * &t_mean;
        assert!((&h - &want_h).norm() < 1e-10 * want_h.norm());
    }
}

#[test]
fn log_concave_updates_are_psd_on_a_grid() {
    let f = LaplacePositivityFactor::new(2.0, 0.5, 0.0);
    for i in 0..41 {
        let m = -3.0 + 0.15 * i as f64;
        for &v in &[1e-3, 0.05, 1.0, 10.0] {
            let cav = Cavity {
                mean: DVector::from_element(1, m),
                prec: DMatrix::from_element(1, 1, 1.0 / v),
                cov: DMatrix::from_element(1, 1, v),
            };
            // cavities far below the floor carry no mass and are rejected upstream
            let Ok(tm) = moments_laplace_positivity(&f, m, v) else { continue };
            let (_, k) = update_site(&cav, &tm.into()).unwrap();
            assert!(k[(0, 0)] >= -1e-10, "m={m} v={v}: {}", k[(0, 0)]);
        }
    }
}

#[test]
fn refresh_with_unchanged_site_is_bitwise_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = NaturalGaussian::new(DVector::from_element(3, 0.2), random_spd(3, &mut rng)).unwrap();
    let before = g.clone();
    let site = Site::coordinate(3, 1, laplace(1.0, 0.0, 0.0));
    refresh_global(&mut g, &site, &site.h.clone(), &site.k.clone()).unwrap();
    assert_eq!(g, before);
}

#[test]
fn refresh_matches_reassembly_and_reverts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 6;
    let base = NaturalParams::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), random_spd(n, &mut rng));
    let mut sites: Vec<Site> = (0..4)
        .map(|_| Site::new(DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0)), laplace(1.0, 0.0, f64::NEG_INFINITY)))
        .collect();
    let mut g = assemble_global(&base, &sites).into_gaussian().unwrap();
    let original = g.clone();
    for (i, &new_k) in [0.3, 2.5, 0.05, 1.0].iter().enumerate() {
        let h_new = DVector::from_element(1, rng.random_range(-1.0..1.0));
        let k_new = DMatrix::from_element(1, 1, new_k);
        refresh_global(&mut g, &sites[i], &h_new, &k_new).unwrap();
        sites[i].h = h_new;
        sites[i].k = k_new;
        let want = assemble_global(&base, &sites);
        assert!(rel_frobenius(g.k(), &want.k) < 1e-10);
        assert!(rel_frobenius(&g.factor().reconstruct(), &want.k) < 1e-10);
        assert!((g.h() - &want.h).norm() < 1e-12 * want.h.norm());
    }
    // walk every site back to its initial value
    for site in sites.iter_mut() {
        let (h0, k0) = (DVector::zeros(1), DMatrix::identity(1, 1));
        refresh_global(&mut g, site, &h0, &k0).unwrap();
        site.h = h0;
        site.k = k0;
    }
    assert!(rel_frobenius(g.factor().lower(), original.factor().lower()) < 1e-12);
}

#[test]
fn failed_refresh_leaves_global_untouched() {
    let mut g = scalar_global(0.0, 1.0);
    let before = g.clone();
    let site = Site::coordinate(1, 0, laplace(1.0, 0.0, 0.0)).with_params(DVector::zeros(1), DMatrix::zeros(1, 1));
    assert!(refresh_global(&mut g, &site, &DVector::zeros(1), &DMatrix::from_element(1, 1, -2.0)).is_err());
    assert_eq!(g, before);
}

#[test]
fn projection_with_unit_factor_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = random_spd(3, &mut rng);
    let mu = DVector::from_vec(vec![0.1, -0.3, 2.0]);
    let u = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
    let g = project_moments(&mu, &c, &u, &(&u * &mu), &(&u * &c * u.transpose())).unwrap();
    assert!((&g.mean - &mu).norm() < 1e-14);
    assert!(rel_frobenius(&g.cov, &c) < 1e-14);
}

#[test]
fn projection_of_half_normal() {
    let half = LaplacePositivityFactor::new(0.0, 0.0, 0.0);
    let handle: FactorHandle = Arc::new(half);
    let prior = MomentGaussian::new(DVector::zeros(2), DMatrix::identity(2, 2));
    let u = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let (log_z, g) = tilted_projection(&prior, &u, &handle).unwrap();
    let pi = std::f64::consts::PI;
    assert!((log_z - 0.5f64.ln()).abs() < 1e-14);
    assert!((g.mean[0] - (2.0 / pi).sqrt()).abs() < 1e-14);
    assert_eq!(g.mean[1], 0.0);
    assert!((g.cov[(0, 0)] - (1.0 - 2.0 / pi)).abs() < 1e-14);
    assert_eq!(g.cov[(1, 1)], 1.0);
    assert_eq!(g.cov[(0, 1)], 0.0);
}

fn exact_gaussian_product(base: &NaturalParams, factors: &[(DMatrix<f64>, DVector<f64>, DMatrix<f64>)]) -> MomentGaussian {
    let mut acc = base.clone();
    for (u, m, c) in factors {
        let p = c.clone().try_inverse().unwrap();
        acc = acc.product(&NaturalParams::new(&p * m, p).lift(u));
    }
    let k_inv = acc.k.clone().try_inverse().unwrap();
    MomentGaussian::new(&k_inv * &acc.h, k_inv)
}

#[test]
fn gaussian_sites_are_exact_after_one_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 8;
    let base = NaturalParams::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), random_spd(n, &mut rng));
    let mut factors = Vec::new();
    for i in 0..5 {
        let l = 1 + i % 2;
        let u = DMatrix::from_fn(l, n, |_, _| rng.random_range(-1.0..1.0));
        let m = DVector::from_fn(l, |_, _| rng.random_range(-2.0..2.0));
        factors.push((u, m, random_spd(l, &mut rng)));
    }
    let sites: Vec<Site> =
        factors.iter().map(|(u, m, c)| Site::new(u.clone(), Arc::new(GaussianFactor::new(m.clone(), c.clone())))).collect();
    let opts = EPOptions { max_sweeps: 1, ..Default::default() };
    let r = run_ep(&base, sites, &opts).unwrap();
    let exact = exact_gaussian_product(&base, &factors);
    assert!((&r.mean - &exact.mean).norm() / exact.mean.norm() < 1e-10);
    assert!(rel_frobenius(&r.cov, &exact.cov) < 1e-10);
}

fn decoupled_problem() -> (NaturalParams, Vec<Site>) {
    let n = 6;
    let prior_var = [0.5, 1.0, 2.0, 0.3, 1.5, 0.8];
    let prior_mean = [0.2, -0.4, 1.0, 0.0, 0.6, -1.2];
    let k0 = DMatrix::from_diagonal(&DVector::from_iterator(n, prior_var.iter().map(|v| 1.0 / v)));
    let h0 = DVector::from_iterator(n, prior_mean.iter().zip(&prior_var).map(|(m, v)| m / v));
    let sites = (0..n).map(|j| Site::coordinate(n, j, laplace(1.0 + j as f64, 0.3, 0.0))).collect();
    (NaturalParams::new(h0, k0), sites)
}

#[test]
fn decoupled_sites_converge_in_one_sweep() {
    let (base, sites) = decoupled_problem();
    let one = run_ep(&base, sites, &EPOptions { max_sweeps: 1, ..Default::default() }).unwrap();
    let two = run_ep(&base, one.sites.clone(), &EPOptions { max_sweeps: 1, ..Default::default() }).unwrap();
    for (a, b) in one.sites.iter().zip(&two.sites) {
        assert!(relative_change(&a.h, &a.k, &b.h, &b.k) < 1e-12);
    }
    let full = run_ep(&base, decoupled_problem().1, &EPOptions::default()).unwrap();
    assert!(full.converged);
    assert_eq!(full.sweeps_used, 2);
    assert!(full.metrics[1].max_site_change < 1e-12);
}

#[test]
fn single_site_ep_matches_tilted_moments() {
    let (m, v) = (0.4, 2.0);
    let base = NaturalParams::new(DVector::from_element(1, m / v), DMatrix::from_element(1, 1, 1.0 / v));
    let f = LaplacePositivityFactor::new(1.5, 0.0, f64::NEG_INFINITY);
    let r = run_ep(&base, vec![Site::coordinate(1, 0, Arc::new(f))], &EPOptions::default()).unwrap();
    let tm = f.moments(m, v).unwrap();
    assert!((r.mean[0] - tm.mean).abs() < 1e-8 * tm.mean.abs().max(tm.var.sqrt()));
    assert!((r.cov[(0, 0)] - tm.var).abs() < 1e-8 * tm.var);
}

#[test]
fn serial_and_parallel_reach_the_same_fixed_point() {
    let (base, sites) = decoupled_problem();
    let par = EPOptions { sweep_mode: SweepMode::Parallel, ..Default::default() };
    let a = run_ep(&base, sites.clone(), &EPOptions::default()).unwrap();
    let b = run_ep(&base, sites, &par).unwrap();
    assert!((&a.mean - &b.mean).norm() < 1e-6 * a.mean.norm());

    let (m, v) = (0.4, 2.0);
    let base = NaturalParams::new(DVector::from_element(1, m / v), DMatrix::from_element(1, 1, 1.0 / v));
    let site = Site::coordinate(1, 0, laplace(1.5, 0.0, -0.5));
    let a = run_ep(&base, vec![site.clone()], &EPOptions::default()).unwrap();
    let b = run_ep(&base, vec![site], &par).unwrap();
    assert!((a.mean[0] - b.mean[0]).abs() < 1e-6 * a.mean[0].abs());
}

#[test]
fn coupled_log_concave_run_keeps_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (m, n) = (10, 6);
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let alpha = 4.0;
    let x_true = DVector::from_fn(n, |i, _| if i == 2 { 2.0 } else { 0.5 });
    let b = &a * &x_true;
    let base = NaturalParams::new(alpha * a.transpose() * &b, alpha * a.transpose() * &a);
    let sites: Vec<Site> = (0..n).map(|j| Site::coordinate(n, j, laplace(2.0, 0.5, 0.0))).collect();
    let r = run_ep(&base, sites, &EPOptions::default()).unwrap();
    assert!(r.converged);
    assert!(r.skipped_sites.is_empty());
    for s in &r.sites {
        assert!(s.k[(0, 0)] >= -1e-10);
    }
    // incremental K against reassembly, and the cavity–site–global identity
    let want = assemble_global(&base, &r.sites);
    assert!(rel_frobenius(&r.global.factor().reconstruct(), &want.k) < 1e-10);
    for s in &r.sites {
        let cav = cavity(&r.global, s).unwrap();
        let marg_prec = (&s.u * &r.cov * s.u.transpose()).try_inverse().unwrap();
        assert!(rel_frobenius(&(&cav.prec + &s.k), &marg_prec) < 1e-10);
    }
    assert!(r.metrics.last().unwrap().e_f_mu == 0.0);
    assert!(r.metrics[0].e_p_mu > r.metrics.last().unwrap().e_p_mu);
}

#[test]
fn parallel_downdate_failure_skips_and_reverts() {
    let base = NaturalParams::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0));
    let wide: FactorHandle = Arc::new(Fixed(TiltedMoments { log_z: 0.0, mean: 0.0, var: 10.0 }));
    let sites = vec![Site::coordinate(1, 0, wide.clone()), Site::coordinate(1, 0, wide)];
    let opts = EPOptions { max_sweeps: 1, sweep_mode: SweepMode::Parallel, ..Default::default() };
    let r = run_ep(&base, sites, &opts).unwrap();
    assert_eq!(r.skipped_sites, vec![SkippedSite { sweep: 1, site: 1, reason: SkipReason::DowndateFailed }]);
    assert_eq!(r.sites[1].k[(0, 0)], 1.0);
    let want = assemble_global(&base, &r.sites);
    assert!((r.global.k()[(0, 0)] - want.k[(0, 0)]).abs() < 1e-14);

    let abort = EPOptions { on_downdate_failure: FailurePolicy::Abort, ..opts };
    let sites = vec![
        Site::coordinate(1, 0, Arc::new(Fixed(TiltedMoments { log_z: 0.0, mean: 0.0, var: 10.0 }))),
        Site::coordinate(1, 0, Arc::new(Fixed(TiltedMoments { log_z: 0.0, mean: 0.0, var: 10.0 }))),
    ];
    assert!(matches!(run_ep(&base, sites, &abort), Err(EpError::SiteFailed { site: 1, .. })));
}

#[test]
fn rejects_bad_options_and_singular_start() {
    let base = NaturalParams::new(DVector::zeros(2), DMatrix::zeros(2, 2));
    let site = Site::coordinate(2, 0, laplace(1.0, 0.0, 0.0));
    assert!(matches!(
        run_ep(&base, vec![site.clone()], &EPOptions { site_tol: 0.0, ..Default::default() }),
        Err(EpError::InvalidOptions(_))
    ));
    assert!(matches!(run_ep(&base, vec![site], &EPOptions::default()), Err(EpError::GlobalNotPositiveDefinite(_))));
}

use nalgebra::DVector;

use super::*;
use crate::nonlinear::ForwardModel;

fn homogeneous(p: &CemProblem) -> DVector<f64> {
    DVector::from_element(p.mesh().num_nodes(), BACKGROUND)
}

fn problem(target: usize) -> CemProblem {
    let mesh = gen_disk_mesh(RADIUS, ELECTRODES, electrode_coverage(), target).unwrap();
    CemProblem::new(mesh, default_config()).unwrap()
}

fn scaled_pair(c: f64) -> (f64, f64) {
    let p = problem(250);
    let sigma = conductivity(p.mesh(), BACKGROUND, &[Inclusion { center: [0.03, -0.02], radius: 0.03, sigma: 0.3 * BACKGROUND }]);
    let (f1, j1) = p.jacobian(&sigma).unwrap();
    let mut cfg = default_config();
    for z in &mut cfg.z {
        *z /= c;
    }
    let scaled = CemProblem::new(p.mesh().clone(), cfg).unwrap();
    let (fc, jc) = scaled.jacobian(&(&sigma * c)).unwrap();
    ((&fc * c - &f1).norm() / f1.norm(), (&jc * (c * c) - &j1).norm() / j1.norm())
}

#[test]
fn scaling_conductivity_and_contact_conductance_scales_voltages() {
    // a power of two scales every floating-point operation exactly
    assert_eq!(scaled_pair(4.0), (0.0, 0.0));
    let (ef, ej) = scaled_pair(3.7);
    assert!(ef <= 1e-8 && ej <= 1e-8, "{ef} {ej}");
}

#[test]
fn scaling_conductivity_alone_is_not_homogeneous() {
    let p = problem(250);
    let s = homogeneous(&p);
    let v1 = p.measurements(&s).unwrap();
    let v2 = p.measurements(&(&s * 2.0)).unwrap();
    assert!((&v2 * 2.0 - &v1).norm() > 1e-6 * v1.norm());
}

#[test]
fn refinement_differences_shrink() {
    let spec = DiskMeshSpec { radius: RADIUS, electrodes: 16, coverage: electrode_coverage(), segments: 1, grading: 0.0 };
    let mut mesh = disk_mesh(&spec).unwrap();
    let mut volts = Vec::new();
    for _ in 0..4 {
        let p = CemProblem::new(mesh.clone(), default_config()).unwrap();
        volts.push(p.forward(&homogeneous(&p)).unwrap().voltages);
        mesh = mesh.refine(RADIUS);
    }
    let d: Vec<f64> = volts.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
    assert!(d[1] < d[0] && d[2] < d[1], "{d:?}");
}

#[test]
fn sensitivity_is_larger_near_the_electrodes() {
    let p = problem(300);
    let (_, jac) = p.jacobian(&homogeneous(&p)).unwrap();
    let mesh = p.mesh();
    let radius = |v: usize| mesh.nodes[v][0].hypot(mesh.nodes[v][1]);
    let centre = (0..mesh.num_nodes()).min_by(|&a, &b| radius(a).total_cmp(&radius(b))).unwrap();
    let r_max = mesh.interior.iter().map(|&v| radius(v)).fold(0.0, f64::max);
    let outer: Vec<usize> = mesh.interior.iter().copied().filter(|&v| radius(v) > r_max - 1e-9).collect();
    let mean_outer = outer.iter().map(|&v| jac.column(v).norm()).sum::<f64>() / outer.len() as f64;
    assert!(mean_outer > 1.5 * jac.column(centre).norm());
}

#[test]
fn synthetic_data_is_deterministic_and_noise_free_at_zero() {
    let fine = problem(600);
    let s = homogeneous(&fine);
    let clean = synth_data(&fine, &s, 0.0, 9).unwrap();
    assert_eq!(clean.data, fine.measurements(&s).unwrap());
    let a = synth_data(&fine, &s, 1.0 / ALPHA.sqrt(), 9).unwrap();
    let b = synth_data(&fine, &s, 1.0 / ALPHA.sqrt(), 9).unwrap();
    assert_eq!(a, b);
    let c = synth_data(&fine, &s, 1.0 / ALPHA.sqrt(), 10).unwrap();
    assert_ne!(a.data, c.data);
    let resid = (&a.data - &a.clean).norm() / (a.data.len() as f64).sqrt();
    assert!((resid * ALPHA.sqrt() - 1.0).abs() < 0.2);
}

#[test]
fn data_csv_round_trip() {
    let cfg = default_config();
    let data = DVector::from_fn(cfg.num_measurements(), |i, _| (i as f64 * 0.37).sin() * 1e-2);
    let text = format_data_csv(&cfg, &data);
    assert!(text.starts_with("pattern_id,electrode_id,voltage\n"));
    assert_eq!(parse_data_csv(&cfg, &text).unwrap(), data);
    let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    assert!(matches!(parse_data_csv(&cfg, &truncated), Err(DataError::Missing { .. })));
    let dup = format!("{text}0,2,1.0\n");
    assert!(matches!(parse_data_csv(&cfg, &dup), Err(DataError::Parse { .. })));
}

#[test]
fn model_restricts_to_interior_nodes() {
    let p = problem(250);
    let model = EitModel::new(p.clone(), BACKGROUND);
    let n = model.interior().len();
    assert_eq!(model.dims(), (210, n));
    let x = DVector::from_element(n, BACKGROUND);
    let (f, j) = model.evaluate_with_jacobian(&x).unwrap();
    let (f_all, j_all) = p.jacobian(&homogeneous(&p)).unwrap();
    assert_eq!(f, f_all);
    assert_eq!(j.column(3), j_all.column(model.interior()[3]));
    let mut bad = x.clone();
    bad[0] = -1.0;
    assert!(matches!(model.evaluate(&bad), Err(crate::nonlinear::ModelError::NotAdmissible(_))));
}

#[test]
fn prior_sites_cover_each_unknown() {
    let sites = prior_sites(5, LAMBDA, BACKGROUND, FLOOR);
    assert_eq!(sites.len(), 5);
    for (j, s) in sites.iter().enumerate() {
        assert_eq!(s.u[(0, j)], 1.0);
        assert_eq!(s.u.row(0).sum(), 1.0);
    }
}

use std::io::Write;
use std::path::PathBuf;

use snippet_smc::models::{load_sonar, FilamentaryTarget, GaussianPath, GaussianTarget};
use snippet_smc::phase::TemperedTarget;
use snippet_smc::{log_mu, PhaseState, RandomStream, VelocityLaw};

fn sonar() -> snippet_smc::models::LogisticRegressionTarget {
    load_sonar(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sonar.csv")).unwrap()
}

fn fd_check(target: &dyn TemperedTarget, gamma: f64, x: &[f64], rel: f64) {
    let mut g = vec![0.0; x.len()];
    target.grad_log_density(x, gamma, &mut g);
    let h = 1e-5;
    for i in 0..x.len() {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        let fd = (target.log_density(&p, gamma) - target.log_density(&m, gamma)) / (2.0 * h);
        let scale = g[i].abs().max(1.0);
        assert!((fd - g[i]).abs() / scale < rel, "coord {i}: fd {fd} vs grad {}", g[i]);
    }
}

#[test]
fn canonical_sonar_shape() {
    let t = sonar();
    assert_eq!(t.n_obs(), 208);
    assert_eq!(t.dim(), 61);
    assert!(t.row(0)[0] == 1.0 && t.row(207)[0] == 1.0);
    let pos = t.responses().iter().filter(|y| **y == 1.0).count();
    assert_eq!(pos, 97);
}

#[test]
fn sonar_log_mu_at_origin() {
    let t = sonar();
    let z = PhaseState { x: vec![0.0; 61], v: vec![0.0; 61] };
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let prior = -0.5 * (ln2pi + 2.0 * 20f64.ln()) - 60.0 * 0.5 * (ln2pi + 2.0 * 5f64.ln());
    let expected = prior + 208.0 * 0.5f64.ln() - 61.0 * 0.5 * ln2pi;
    let got = log_mu(&t, &VelocityLaw::standard(61), 1.0, &z);
    assert!((got - expected).abs() < 1e-9 * expected.abs());
}

#[test]
fn single_row_file_prepends_intercept() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "{},R", vec!["0"; 60].join(",")).unwrap();
    let t = load_sonar(f.path()).unwrap();
    assert_eq!(t.n_obs(), 1);
    let mut row = vec![0.0; 61];
    row[0] = 1.0;
    assert_eq!(t.row(0), row.as_slice());
    assert_eq!(t.responses(), &[1.0]);
}

#[test]
fn sonar_gradient_matches_finite_differences() {
    let t = sonar();
    let mut rng = RandomStream::new(1);
    for _ in 0..100 {
        let x: Vec<f64> = (0..61).map(|_| 0.5 * rng.normal()).collect();
        let gamma = rng.uniform();
        fd_check(&t, gamma, &x, 1e-5);
        let mut g = vec![0.0; 61];
        let lp = t.log_density_and_grad(&x, gamma, &mut g);
        assert!((lp - t.log_density(&x, gamma)).abs() < 1e-9 * lp.abs().max(1.0));
        let mut g2 = vec![0.0; 61];
        t.grad_log_density(&x, gamma, &mut g2);
        for (a, b) in g.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}

#[test]
fn gaussian_gradients_match_finite_differences() {
    let g = GaussianTarget::new(vec![0.3, 2.0, 5.0]).unwrap();
    let p = GaussianPath::new(vec![1.0, 4.0, 0.5], vec![0.2, 1.0, 3.0]).unwrap();
    let mut rng = RandomStream::new(2);
    for _ in 0..100 {
        let x = rng.normal_vec(3);
        let gamma = rng.uniform();
        fd_check(&g, gamma, &x, 1e-7);
        fd_check(&p, gamma, &x, 1e-7);
    }
}

#[test]
fn filamentary_gradient_inside_shell() {
    let t = FilamentaryTarget::new(vec![1.0, 0.1, 1.0, 0.1], 2.0, 5.0, 0.5).unwrap();
    let mut rng = RandomStream::new(3);
    let mut checked = 0;
    while checked < 100 {
        let x = t.sample_prior(&mut rng).unwrap();
        let gamma = rng.uniform();
        let lp = t.log_density(&x, gamma);
        // stay away from the indicator boundary
        let margin = t.tolerance(gamma) - {
            let c = t.constraint().unwrap();
            c.value(&x).abs()
        };
        if lp.is_finite() && margin > 1e-3 {
            fd_check(&t, gamma, &x, 1e-6);
            checked += 1;
        }
    }
}

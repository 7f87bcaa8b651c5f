use std::f64::consts::SQRT_2;
use std::path::PathBuf;

use snippet_smc::adaptation::estimate_tau;
use snippet_smc::cli::verify::{rao_blackwell_grid, run_verification};
use snippet_smc::integrators::IntegratorKind;
use snippet_smc::markov_snippet::{run_markov_snippet, MarkovConfig};
use snippet_smc::models::{load_sonar, FilamentaryTarget, GaussianPath};
use snippet_smc::smc::{EpsilonMode, Sampler, SmcConfig};
use snippet_smc::RandomStream;

#[test]
fn markov_snippet_gaussian_evidence() {
    let p = GaussianPath::new(vec![1.0], vec![1.0]).unwrap();
    let cfg = MarkovConfig { n: 100, t: 99, ess_target: 0.8, max_iterations: 100 };
    let root = RandomStream::new(31);
    let z: Vec<f64> =
        (0..100).map(|r| run_markov_snippet(&p, cfg, &root.substream(r)).unwrap().0.log_z.exp()).collect();
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    let se = (z.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((m - 1.0 / SQRT_2).abs() <= 3.0 * se, "mean {m}, se {se}");
}

#[test]
fn filamentary_run_with_thug_snug_mixture_reaches_final_tolerance() {
    let t = FilamentaryTarget::new(vec![1.0, 0.1, 1.0, 0.1], 2.0, 3.0, 0.1).unwrap();
    let cfg = SmcConfig {
        n: 300,
        t: 10,
        epsilon: EpsilonMode::Fixed(0.05),
        integrators: vec![IntegratorKind::Thug, IntegratorKind::Snug],
        proportions: vec![0.8, 0.2],
        ..Default::default()
    };
    let out = Sampler::new(&t, cfg).unwrap().run(&RandomStream::new(5)).unwrap();
    assert_eq!(out.cloud.gamma, 1.0);
    let c = snippet_smc::phase::TemperedTarget::constraint(&t).unwrap();
    for p in &out.cloud.particles {
        assert!(c.value(&p.z.x).abs() <= 0.1 + 1e-12);
    }
    assert!(out.log_z.is_finite());
    // one constraint gradient per THUG/SNUG step
    assert_eq!(out.gradient_evaluations, (out.records.len() * 300 * 10) as u64);
}

#[test]
fn sampler_runs_are_reproducible_and_count_gradients() {
    let p = GaussianPath::new(vec![1.0, 3.0], vec![0.5, 0.2]).unwrap();
    let cfg = SmcConfig { n: 50, t: 7, ..Default::default() };
    let s = Sampler::new(&p, cfg).unwrap();
    let a = s.run(&RandomStream::new(1)).unwrap();
    let b = s.run(&RandomStream::new(1)).unwrap();
    let key = |o: &snippet_smc::smc::RunOutput| -> Vec<[u64; 4]> {
        o.records
            .iter()
            .map(|r| [r.gamma.to_bits(), r.theta.to_bits(), r.log_z_cumulative.to_bits(), r.ess_unfolded.to_bits()])
            .collect()
    };
    assert_eq!(key(&a), key(&b));
    assert_eq!(a.log_z.to_bits(), b.log_z.to_bits());
    // each iteration grows N snippets of T leapfrog steps: T+1 gradients each
    assert_eq!(a.gradient_evaluations, (a.records.len() * 50 * 8) as u64);
}

#[test]
fn logistic_contraction_has_interior_trough() {
    let target = load_sonar(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sonar.csv")).unwrap();
    let cfg = SmcConfig { n: 200, t: 30, epsilon: EpsilonMode::Fixed(0.1), ..Default::default() };
    let s = Sampler::new(&target, cfg).unwrap();
    let rng = RandomStream::new(3);
    let cloud = s.initialize(&rng).unwrap();
    let mut cloud = cloud;
    // move part of the way along the path so the curves are informative
    for i in 0..5 {
        let g = (i + 1) as f64 * 0.02;
        cloud = s.run_iteration(&cloud, g, 30, &rng.substream(100 + i)).unwrap().cloud;
    }
    let ints = s.integrators(&target, cloud.gamma).unwrap();
    let est = estimate_tau(&cloud.particles, &ints, 200, 1000, 50, &mut rng.substream(9)).unwrap().unwrap();
    let means: Vec<f64> = est.data.bin_means.iter().flatten().cloned().collect();
    assert!(means.iter().all(|m| m.is_finite() && *m > 0.0));
    let last = *means.last().unwrap();
    let best = means.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < last, "no trough before the end of the curve");
    assert!(est.tau > 0.0 && est.t_next >= 1);
}

#[test]
fn verification_suite_passes_and_detects_sign_bug() {
    let a = run_verification();
    assert!(a.all_passed(), "{a}");
    let (bad, _) = rao_blackwell_grid(11, true);
    assert!(bad > 1e-6);
    assert_eq!(a, run_verification());
}

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};

use super::*;
use crate::boosting::Stopping;

fn random_clr(m: &Arc<ReferenceMeasure>, rng: &mut ChaCha8Rng) -> ClrElement {
    let v: Vec<f64> = (0..m.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ClrElement::centered(m.clone(), v).unwrap()
}

fn measure(g: usize) -> Arc<ReferenceMeasure> {
    Arc::new(share_measure(g).unwrap())
}

fn covariance(residuals: &[ClrElement]) -> DMatrix<f64> {
    let n = residuals.len();
    let len = residuals[0].values().len();
    let mean: Vec<f64> = (0..len)
        .map(|t| residuals.iter().map(|r| r.values()[t]).sum::<f64>() / n as f64)
        .collect();
    let mut c = DMatrix::zeros(len, len);
    for r in residuals {
        for t in 0..len {
            for s in 0..len {
                c[(t, s)] += (r.values()[t] - mean[t]) * (r.values()[s] - mean[s]) / n as f64;
            }
        }
    }
    c
}

#[test]
fn one_dimensional_residuals_have_one_component() {
    let m = measure(20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = random_clr(&m, &mut rng);
    let res: Vec<ClrElement> = (0..15).map(|_| dir.scale(rng.random_range(-2.0..2.0))).collect();
    let f = fpca(&res, 5).unwrap();
    assert!(f.eigenvalues[0] > 0.1);
    for x in &f.eigenvalues[1..] {
        assert!(*x < 1e-12 * f.eigenvalues[0]);
    }
}

#[test]
fn eigenfunctions_are_orthonormal_and_centered() {
    for (g, n) in [(20, 50), (40, 12)] {
        let m = measure(g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let res: Vec<ClrElement> = (0..n).map(|_| random_clr(&m, &mut rng)).collect();
        let k = max_components(n, m.len());
        let f = fpca(&res, k).unwrap();
        for a in 0..k {
            assert!(f.eigenfunctions[a].integral().abs() < 1e-10);
            for b in 0..k {
                let ip = f.eigenfunctions[a].inner(&f.eigenfunctions[b]).unwrap();
                assert_abs_diff_eq!(ip, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-8);
            }
        }
        for w in f.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for c in 0..k {
            assert!(f.scores.column(c).mean().abs() < 1e-10);
        }
        // full expansion reproduces the centered residuals
        for (i, r) in res.iter().enumerate() {
            let row: Vec<f64> = f.scores.row(i).iter().copied().collect();
            let back = f.expand(&row).unwrap();
            for t in 0..m.len() {
                assert_abs_diff_eq!(back[t] + f.mean[t], r.values()[t], epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn eigen_expansion_reproduces_covariance() {
    let m = measure(15);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let res: Vec<ClrElement> = (0..40).map(|_| random_clr(&m, &mut rng)).collect();
    let f = fpca(&res, max_components(40, m.len())).unwrap();
    let len = m.len();
    let mut rebuilt = DMatrix::zeros(len, len);
    for (xi, psi) in f.eigenvalues.iter().zip(&f.eigenfunctions) {
        let p = DVector::from_column_slice(psi.values());
        rebuilt += &p * p.transpose() * *xi;
    }
    assert!((rebuilt - covariance(&res)).norm() < 1e-6);
}

#[test]
fn component_bound_is_enforced() {
    let m = measure(10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let res: Vec<ClrElement> = (0..5).map(|_| random_clr(&m, &mut rng)).collect();
    assert!(fpca(&res, 4).is_ok());
    assert!(matches!(fpca(&res, 5), Err(Error::InvalidArgument(_))));
    assert!(matches!(fpca(&res, 0), Err(Error::InvalidArgument(_))));
    assert!(fpca(&[], 1).is_err());
}

#[test]
fn original_scores_reproduce_responses() {
    let m = measure(25);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 30;
    let raw: Vec<ClrElement> = (0..n).map(|_| random_clr(&m, &mut rng)).collect();
    let mean: Vec<f64> = (0..m.len())
        .map(|t| raw.iter().map(|r| r.values()[t]).sum::<f64>() / n as f64)
        .collect();
    let res: Vec<ClrElement> = raw
        .iter()
        .map(|r| ClrElement::new(m.clone(), r.values().iter().zip(&mean).map(|(a, b)| a - b).collect()).unwrap())
        .collect();
    let means: Vec<DensityElement> = (0..n).map(|_| random_clr(&m, &mut rng).to_density()).collect();
    let ys: Vec<DensityElement> = means.iter().zip(&res).map(|(f, r)| f.perturb(&r.to_density()).unwrap()).collect();
    let f = fpca(&res, max_components(n, m.len())).unwrap();
    let back = responses_from_scores(&means, &f, &f.scores).unwrap();
    for (a, b) in back.iter().zip(&ys) {
        for (x, y) in a.clr().values().iter().zip(b.clr().values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }
}

#[test]
fn simulation_noise() {
    let m = measure(20);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let res: Vec<ClrElement> = (0..30).map(|_| random_clr(&m, &mut rng)).collect();
    let mut f = fpca(&res, 6).unwrap();
    let means: Vec<DensityElement> = (0..4).map(|_| random_clr(&m, &mut rng).to_density()).collect();

    let sims = simulate_responses(&means, &f, 9).unwrap();
    assert_eq!(sims, simulate_responses(&means, &f, 9).unwrap());
    for (s, mu) in sims.iter().zip(&means) {
        assert!(s.difference(mu).unwrap().clr().integral().abs() < 1e-10);
    }

    let n = 10_000;
    let mut draw = ChaCha8Rng::seed_from_u64(7);
    let scores = draw_scores(n, &f, 1.0, &mut draw);
    for (k, xi) in f.eigenvalues.iter().enumerate() {
        let col = scores.column(k);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var / xi - 1.0).abs() < 0.05, "component {k}: {var} vs {xi}");
    }

    f.eigenvalues.iter_mut().for_each(|x| *x = 0.0);
    let same = simulate_responses(&means, &f, 3).unwrap();
    for (a, b) in same.iter().zip(&means) {
        assert!(a.difference(b).unwrap().norm() < 1e-12);
    }
}

#[test]
fn rel_mse_reference_values() {
    let m = measure(10);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth: Vec<DensityElement> = (0..5).map(|_| random_clr(&m, &mut rng).to_density()).collect();
    assert!(rel_mse(&truth, &truth).unwrap() < 1e-24);
    let flat = vec![DensityElement::uniform(m.clone()); 5];
    assert_abs_diff_eq!(rel_mse(&truth, &flat).unwrap(), 1.0, epsilon = 1e-12);
    assert!(matches!(rel_mse(&flat, &truth), Err(Error::Numeric(_))));

    // two points with weights 1 and 3: clr truth (3, -1), estimate (1, -1/3)
    let d = Arc::new(ReferenceMeasure::discrete(&[(0.0, 1.0), (1.0, 3.0)]).unwrap());
    let t = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
    let e = DMatrix::from_row_slice(1, 2, &[1.0, -1.0 / 3.0]);
    // numerator 1·4 + 3·(4/9) = 16/3, denominator 9 + 3 = 12
    assert_abs_diff_eq!(rel_mse_clr(&d, &t, &e).unwrap(), 16.0 / 36.0, epsilon = 1e-12);
    let td = vec![ClrElement::new(d.clone(), vec![3.0, -1.0]).unwrap().to_density()];
    let ed = vec![ClrElement::new(d.clone(), vec![1.0, -1.0 / 3.0]).unwrap().to_density()];
    assert_abs_diff_eq!(rel_mse(&td, &ed).unwrap(), 16.0 / 36.0, epsilon = 1e-12);
}

#[test]
fn selection_table_counts() {
    let terms: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let reps = vec![
        vec![vec![0, 0, 1], vec![0]],
        vec![vec![0], vec![2]],
        vec![vec![], vec![]],
    ];
    let t = selection_table(&terms, &reps);
    assert_eq!(t[0].selected, vec![2, 1]);
    assert_eq!(t[0].combined, 2);
    // continuous only still counts as selected
    assert_eq!(t[1].selected, vec![1, 0]);
    assert_eq!(t[1].combined, 1);
    assert_eq!(t[2].combined, 1);
    for row in &t {
        assert_eq!(row.replicates, 3);
        for (s, n) in row.selected.iter().zip(row.not_selected()) {
            assert_eq!(s + n, 3);
        }
        assert_eq!(row.combined + row.combined_not_selected(), 3);
    }
    let none = selection_table(&terms, &[vec![vec![], vec![]]]);
    assert!(none.iter().all(|r| r.combined == 0));
}

#[test]
fn synthetic_panel_shape() {
    let (data, ys) = synthetic_panel(&PanelConfig::default()).unwrap();
    assert_eq!(data.n_rows(), 180);
    assert_eq!(ys.len(), 180);
    assert_eq!(ys[0].values().len(), 102);
    assert!(synthetic_panel(&PanelConfig { years: 2, ..Default::default() }).is_err());
    let again = synthetic_panel(&PanelConfig::default()).unwrap().1;
    assert_eq!(ys, again);
}

fn small_study_inputs() -> (FittedModel, DataTable, FpcaResult, BoostConfig) {
    let cfg = PanelConfig {
        years: 8,
        grid_size: 30,
        ..Default::default()
    };
    let (data, ys) = synthetic_panel(&cfg).unwrap();
    let boost = BoostConfig {
        max_iter: 150,
        stopping: Stopping::Kfold { folds: 4 },
        ..Default::default()
    };
    let truth = fit(&panel_spec(), &data, &ys, &boost).unwrap();
    let (_, f) = residual_fpca(&truth, &data, &ys, None).unwrap();
    (truth, data, f, boost)
}

#[test]
fn relmse_grows_with_noise() {
    let (truth, data, f, boost) = small_study_inputs();
    let mut last = -1.0;
    for c in [0.0, 0.5, 1.0, 2.0] {
        let sim = SimulationConfig {
            replicates: 20,
            noise_scale: c,
            seed: 11,
            ..Default::default()
        };
        let reps = run_study(&truth, &data, &f, &sim, &boost).unwrap();
        let med = median(&reps.iter().map(|r| r.rel_mse).collect::<Vec<_>>()).unwrap();
        assert!(med >= last, "noise {c}: median {med} < {last}");
        last = med;
    }
}

#[test]
fn study_is_independent_of_thread_count() {
    let (truth, data, f, boost) = small_study_inputs();
    let sim = SimulationConfig {
        replicates: 4,
        seed: 5,
        ..Default::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_study(&truth, &data, &f, &sim, &boost).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn config_validation() {
    assert!(SimulationConfig::default().validate().is_ok());
    assert!(SimulationConfig { replicates: 0, ..Default::default() }.validate().is_err());
    assert!(SimulationConfig { components: Some(0), ..Default::default() }.validate().is_err());
    assert!(SimulationConfig { noise_scale: -1.0, ..Default::default() }.validate().is_err());
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}

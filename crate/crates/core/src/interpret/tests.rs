use std::sync::Arc;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bayes::MixedSplit;
use crate::boosting::{BoostConfig, Stopping};
use crate::measure::Atom;
use crate::model::{fit, ModelSpec, TermKind, TermSpec};

fn mixed(g: usize) -> Arc<ReferenceMeasure> {
    Arc::new(
        ReferenceMeasure::mixed(0.0, 1.0, &[Atom::new(0.0, 1.0), Atom::new(1.0, 1.0)], g).unwrap(),
    )
}

fn random_density(m: &Arc<ReferenceMeasure>, rng: &mut ChaCha8Rng) -> DensityElement {
    let logs: Vec<f64> = (0..m.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    DensityElement::from_log_values(m.clone(), &logs).unwrap()
}

fn scaled(f: &DensityElement, c: f64) -> DensityElement {
    DensityElement::new(f.measure().clone(), f.values().iter().map(|v| v * c).collect()).unwrap()
}

#[test]
fn log_odds_basics() {
    let m = mixed(20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = random_density(&m, &mut rng).clr();
    for _ in 0..50 {
        let t = rng.random_range(0..m.len());
        let s = rng.random_range(0..m.len());
        assert_eq!(log_odds(&z, t, t).unwrap(), 0.0);
        assert_eq!(log_odds(&z, t, s).unwrap(), -log_odds(&z, s, t).unwrap());
    }
    assert!(log_odds(&z, m.len(), 0).is_err());
}

#[test]
fn worked_odds_example() {
    // equal weights; the fourth value centers the element
    let m = Arc::new(
        ReferenceMeasure::discrete(&[(0.0, 1.0), (0.5, 1.0), (0.75, 1.0), (1.0, 1.0)]).unwrap(),
    );
    let z = ClrElement::new(m.clone(), vec![-0.44, 0.53, -0.40, 0.31]).unwrap();
    let t = support_index(&m, 1.0).unwrap();
    let s = support_index(&m, 0.0).unwrap();
    let u = support_index(&m, 0.5).unwrap();
    let lo = log_odds(&z, t, s).unwrap();
    assert_abs_diff_eq!(lo, 0.75, epsilon = 1e-12);
    assert_eq!((lo.exp() * 100.0).round() / 100.0, 2.12);
    let lo = log_odds(&z, u, s).unwrap();
    assert_abs_diff_eq!(lo, 0.97, epsilon = 1e-12);
    assert_eq!((lo.exp() * 100.0).round() / 100.0, 2.64);
}

#[test]
fn support_index_locates_atoms_and_cells() {
    let m = mixed(10);
    assert_eq!(support_index(&m, 0.0).unwrap(), 0);
    assert_eq!(support_index(&m, 1.0).unwrap(), 1);
    assert_eq!(support_index(&m, 0.05).unwrap(), 2);
    assert_eq!(support_index(&m, 0.99).unwrap(), 11);
    assert!(support_index(&m, 1.5).is_err());
}

#[test]
fn odds_ratio_properties() {
    let m = mixed(20);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hj = random_density(&m, &mut rng);
    let hk = random_density(&m, &mut rng);
    let common = random_density(&m, &mut rng);
    let zero = ClrElement::zero(m.clone());
    for _ in 0..50 {
        let t = rng.random_range(0..m.len());
        let s = rng.random_range(0..m.len());
        assert_eq!(log_odds_ratio(&hj.clr(), &hj.clr(), t, s).unwrap(), 0.0);
        assert_eq!(
            log_odds_ratio(&hj.clr(), &zero, t, s).unwrap(),
            log_odds(&hj.clr(), t, s).unwrap()
        );
        let plain = log_odds_ratio(&hj.clr(), &hk.clr(), t, s).unwrap();
        let both = log_odds_ratio(
            &hj.perturb(&common).unwrap().clr(),
            &hk.perturb(&common).unwrap().clr(),
            t,
            s,
        )
        .unwrap();
        assert_abs_diff_eq!(plain, both, epsilon = 1e-12);
    }
}

#[test]
fn geometric_mean_odds_two_ways() {
    let m = mixed(30);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let flat = DensityElement::uniform(m.clone());
    for t in 0..m.len() {
        assert_abs_diff_eq!(geometric_mean_odds(&flat, t).unwrap(), 1.0, epsilon = 1e-14);
    }
    for _ in 0..20 {
        let h = random_density(&m, &mut rng);
        let mut s = 0.0;
        for t in 0..m.len() {
            let odds = geometric_mean_odds(&h, t).unwrap();
            let direct = h.values()[t] / h.geometric_mean_full();
            assert!((odds - direct).abs() <= 1e-10 * direct);
            s += m.weights()[t] * odds.ln();
        }
        assert!(s.abs() < 1e-10);
    }
}

#[test]
fn mixed_discrete_odds_matches_decomposition() {
    let m = mixed(25);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let flat = DensityElement::uniform(m.clone());
    assert_abs_diff_eq!(mixed_discrete_odds(&flat, 0).unwrap(), 1.0, epsilon = 1e-14);
    let split = MixedSplit::new(m.clone()).unwrap();
    for _ in 0..20 {
        let h = random_density(&m, &mut rng);
        let (_, fd) = split.decompose(&h).unwrap();
        let z = fd.clr();
        let label = z.values()[split.label_position()];
        for (k, &p) in split.atom_positions().iter().enumerate() {
            let via_split = (z.values()[p] - label).exp();
            let odds = mixed_discrete_odds(&h, k).unwrap();
            assert!((odds - via_split).abs() <= 1e-10 * odds);
        }
    }
    let mut v = vec![1.0; m.len()];
    v[0] = 2.0;
    let h = DensityElement::new(m.clone(), v).unwrap();
    assert_abs_diff_eq!(mixed_discrete_odds(&h, 0).unwrap(), 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(mixed_discrete_odds(&h, 1).unwrap(), 1.0, epsilon = 1e-12);
    let cont = Arc::new(ReferenceMeasure::continuous(0.0, 1.0, 10).unwrap());
    assert!(mixed_discrete_odds(&DensityElement::uniform(cont), 0).is_err());
}

#[test]
fn heatmap_layout_and_values() {
    let m = mixed(40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let flat = heatmap(&DensityElement::uniform(m.clone()), 10).unwrap();
    assert!(flat.log_odds.amax() < 1e-14);
    let kinds: Vec<PointKind> = flat.points.iter().map(|p| p.kind).collect();
    assert_eq!(kinds[0], PointKind::Continuous);
    assert_eq!(kinds[1], PointKind::Atom);
    assert_eq!(*kinds.last().unwrap(), PointKind::Atom);
    assert_eq!(kinds.iter().filter(|k| **k == PointKind::Grid).count(), 10);

    let h = random_density(&m, &mut rng);
    let grid = heatmap(&h, 13).unwrap();
    let n = grid.points.len();
    for r in 0..n {
        assert_eq!(grid.log_odds[(r, r)], 0.0);
        for c in 0..n {
            assert_abs_diff_eq!(grid.log_odds[(r, c)], -grid.log_odds[(c, r)], epsilon = 1e-14);
        }
    }
    // outer band: atom against the continuous aggregate
    assert_abs_diff_eq!(
        grid.log_odds[(1, 0)],
        mixed_discrete_odds(&h, 0).unwrap().ln(),
        epsilon = 1e-12
    );

    let increasing: Vec<f64> = m.locations().iter().map(|t| 3.0 * t).collect();
    let h = DensityElement::from_log_values(m.clone(), &increasing).unwrap();
    let grid = heatmap(&h, 40).unwrap();
    for (r, pr) in grid.points.iter().enumerate() {
        for (c, pc) in grid.points.iter().enumerate() {
            if pr.kind == PointKind::Grid && pc.kind == PointKind::Grid && pr.location > pc.location {
                assert!(grid.log_odds[(r, c)] > 0.0);
            }
        }
    }
    assert!(heatmap(&h, 0).is_err());
}

#[test]
fn threshold_split_constant_effect() {
    let m = mixed(20);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = random_density(&m, &mut rng);
    let g = DensityElement::uniform(m.clone());
    let alpha = 1.0 / m.total_mass();
    let s = threshold_split(&f, &g, alpha * (1.0 - 1e-12)).unwrap();
    assert_eq!(s.inside.len(), m.len());
    assert_abs_diff_eq!(s.before_inside, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.after_inside, 1.0, epsilon = 1e-12);
    assert!(threshold_split(&f, &g, 0.0).is_err());
    assert!(threshold_split(&f, &g, -1.0).is_err());
}

#[test]
fn threshold_split_moves_mass_into_the_upper_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let measures = [
        mixed(30),
        Arc::new(ReferenceMeasure::continuous(0.0, 2.0, 50).unwrap()),
        Arc::new(ReferenceMeasure::discrete(&[(1.0, 0.5), (2.0, 1.0), (3.0, 2.0), (4.0, 1.0)]).unwrap()),
    ];
    for i in 0..1000 {
        let m = &measures[i % 3];
        let f = random_density(m, &mut rng);
        let g = random_density(m, &mut rng);
        let alpha = rng.random_range(0.1..3.0) / m.total_mass();
        let s = threshold_split(&f, &g, alpha).unwrap();
        assert!(s.after_inside >= s.before_inside - 1e-9);
        assert!(s.after_outside <= s.before_outside + 1e-9);
        assert_abs_diff_eq!(s.before_inside + s.before_outside, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn density_ratios_order_probability_ratios() {
    let m = mixed(60);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let it: Vec<usize> = (40..50).collect();
    let is: Vec<usize> = (10..20).collect();
    for _ in 0..100 {
        let hk = random_density(&m, &mut rng);
        // h_j shrinks the ratio of every t in I_t to every s in I_s
        let mut logs: Vec<f64> = hk.values().iter().map(|v| v.ln()).collect();
        for &t in &it {
            logs[t] -= rng.random_range(0.1..1.0);
        }
        for &s in &is {
            logs[s] += rng.random_range(0.1..1.0);
        }
        let hj = DensityElement::from_log_values(m.clone(), &logs).unwrap();
        for &t in &it {
            for &s in &is {
                assert!(hj.values()[t] / hj.values()[s] < hk.values()[t] / hk.values()[s]);
            }
        }
        let pj = probability(&hj, &it).unwrap() / probability(&hj, &is).unwrap();
        let pk = probability(&hk, &it).unwrap() / probability(&hk, &is).unwrap();
        assert!(pj < pk);
    }
}

#[test]
fn outputs_ignore_the_representative() {
    let m = mixed(30);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let f = random_density(&m, &mut rng);
        let g = random_density(&m, &mut rng);
        let c = rng.random_range(0.01..100.0);
        let (fc, gc) = (scaled(&f, c), scaled(&g, 1.0 / c));
        for t in 0..m.len() {
            let a = geometric_mean_odds(&f, t).unwrap();
            assert!((a - geometric_mean_odds(&fc, t).unwrap()).abs() <= 1e-12 * a.max(1.0));
        }
        for k in 0..2 {
            let a = mixed_discrete_odds(&f, k).unwrap();
            assert!((a - mixed_discrete_odds(&fc, k).unwrap()).abs() <= 1e-12 * a.max(1.0));
        }
        let (h1, h2) = (heatmap(&f, 12).unwrap(), heatmap(&fc, 12).unwrap());
        assert!((&h1.log_odds - &h2.log_odds).amax() <= 1e-12);
        let (s1, s2) = (threshold_split(&f, &g, 0.7).unwrap(), threshold_split(&fc, &gc, 0.7).unwrap());
        assert_eq!(s1.inside, s2.inside);
        assert_abs_diff_eq!(s1.after_inside, s2.after_inside, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.before_inside, s2.before_inside, epsilon = 1e-12);
        let t = rng.random_range(0..m.len());
        let s = rng.random_range(0..m.len());
        assert_abs_diff_eq!(
            log_odds(&f.clr(), t, s).unwrap(),
            log_odds(&fc.clr(), t, s).unwrap(),
            epsilon = 1e-12
        );
    }
}

#[test]
fn density_odds_approximate_probability_odds() {
    let m = Arc::new(ReferenceMeasure::continuous(0.0, 1.0, 4000).unwrap());
    let logs: Vec<f64> = m.locations().iter().map(|t| (3.0 * t).sin() + t * t).collect();
    let f = DensityElement::from_log_values(m.clone(), &logs).unwrap();
    let (t, s) = (0.7, 0.3);
    let target = f.values()[support_index(&m, t).unwrap()] / f.values()[support_index(&m, s).unwrap()];
    let near = |c: f64, d: f64| -> Vec<usize> {
        (0..m.len()).filter(|&i| (m.grid_nodes()[i] - c).abs() < d).collect()
    };
    let errors: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&d| {
            let ratio = probability(&f, &near(t, d)).unwrap() / probability(&f, &near(s, d)).unwrap();
            (ratio - target).abs()
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    assert!(errors[2] < 0.01 * target);
}

fn panel() -> DataTable {
    let mut region = Vec::new();
    let mut group = Vec::new();
    for r in ["east", "west"] {
        for g in ["a", "b", "c"] {
            for _ in 0..4 {
                region.push(r.to_string());
                group.push(g.to_string());
            }
        }
    }
    DataTable::new()
        .with_text("region", region)
        .unwrap()
        .with_text("group", group)
        .unwrap()
}

fn fitted(interaction: bool, seed: u64) -> FittedModel {
    let data = panel();
    let m = mixed(20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys: Vec<DensityElement> = (0..data.n_rows()).map(|_| random_density(&m, &mut rng)).collect();
    let mut terms = vec![
        TermSpec::new(TermKind::Intercept, &[]),
        TermSpec::new(TermKind::GroupIntercept, &["region"]),
        TermSpec::new(TermKind::GroupIntercept, &["group"]),
    ];
    if interaction {
        terms.push(TermSpec::new(TermKind::Interaction, &["region", "group"]));
    }
    let config = BoostConfig {
        max_iter: 60,
        stopping: Stopping::Fixed,
        ..Default::default()
    };
    fit(&ModelSpec::new(terms), &data, &ys, &config).unwrap()
}

fn level(s: &str) -> CovariateValue {
    CovariateValue::Level(s.to_string())
}

#[test]
fn did_without_interaction_is_neutral() {
    let model = fitted(false, 10);
    let a = Contrast::new("region", level("west"), level("east"));
    let b = Contrast::new("group", level("c"), level("a"));
    let did = did_effect(&model, &panel(), &a, &b).unwrap();
    assert!(did.norm() < 1e-8);
}

#[test]
fn did_recovers_the_interaction_contrast() {
    let model = fitted(true, 11);
    let data = panel();
    let a = Contrast::new("region", level("west"), level("east"));
    let b = Contrast::new("group", level("b"), level("a"));
    let did = did_effect(&model, &data, &a, &b).unwrap();
    assert!(did.norm() > 1e-3);

    // the same contrast read off the interaction term alone
    let j = model.term_index("interaction(region,group)").unwrap();
    let cell = |r: &str, g: &str| -> Vec<f64> {
        let t = data
            .select_rows(&[0])
            .unwrap()
            .with_constant("region", &level(r))
            .unwrap()
            .with_constant("group", &level(g))
            .unwrap();
        model.effect_clr(j, &t).unwrap().row(0).iter().copied().collect()
    };
    let (c11, c01, c10, c00) = (cell("west", "b"), cell("east", "b"), cell("west", "a"), cell("east", "a"));
    let z = did.clr();
    for t in 0..z.values().len() {
        let planted = c11[t] - c01[t] - c10[t] + c00[t];
        assert_abs_diff_eq!(z.values()[t], planted, epsilon = 1e-9);
    }

    let swapped = Contrast::new("region", level("east"), level("west"));
    let back = did_effect(&model, &data, &swapped, &b).unwrap();
    assert!(back.perturb(&did).unwrap().norm() < 1e-10);
}

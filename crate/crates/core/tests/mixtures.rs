use ldlc::decoder::{convolve_pair, product_pair};
use ldlc::gmix::{gql_pair, moment_match, reduce, GaussianComponent, GaussianMixture, ReductionParams};
use ldlc::oracle::{grid_convolve, integrate_over_support, l1_distance, mixture_pdf, GridFunction};
use ldlc::selftest::{self, SelftestConfig};
use proptest::prelude::*;

fn mix(triples: &[(f64, f64, f64)]) -> GaussianMixture {
    GaussianMixture::from_triples(triples).unwrap()
}

#[test]
fn oracle_checks_at_small_counts() {
    let cfg = SelftestConfig { pairs: 200, mixtures: 50, node_cases: 5, seed: 42 };
    for outcome in selftest::run_all(&cfg) {
        assert!(outcome.passed, "{outcome}");
    }
}

#[test]
fn convolution_matches_grid() {
    let a = mix(&[(0.0, 0.3, 0.4), (1.2, 0.1, 0.6)]);
    let b = mix(&[(-0.5, 0.2, 0.7), (0.4, 0.05, 0.3)]);
    let fast = convolve_pair(&a, &b, &ReductionParams::disabled()).unwrap();
    assert_eq!(fast.len(), 4);
    let step = 1e-3;
    let ga = GridFunction::from_mixture(&a, 10.0, step).unwrap().normalized();
    let gb = GridFunction::from_mixture(&b, 10.0, step).unwrap().normalized();
    let grid = grid_convolve(&ga, &gb).unwrap();
    let l1: f64 = grid
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (s - mixture_pdf(&fast, grid.origin() + i as f64 * step)).abs())
        .sum::<f64>()
        * step;
    assert!(l1 <= 1e-3, "L1 {l1}");
}

#[test]
fn product_matches_quadrature() {
    let a = mix(&[(0.0, 0.3, 0.4), (1.2, 0.1, 0.6)]);
    let b = mix(&[(0.5, 0.2, 0.7), (0.9, 0.5, 0.3)]);
    let fast = product_pair(&a, &b, &ReductionParams::disabled()).unwrap();
    let raw = |z: f64| mixture_pdf(&a, z) * mixture_pdf(&b, z);
    let z = integrate_over_support(&[&a, &b], raw, 1e-13).unwrap();
    let l1 = l1_distance(&[&fast, &a, &b], |x| mixture_pdf(&fast, x), |x| raw(x) / z).unwrap();
    assert!(l1 <= 1e-6, "L1 {l1}");
}

#[test]
fn three_component_example_matches_every_merge_order() {
    let input = mix(&[(0.0, 1.0, 1.0 / 3.0), (0.1, 1.0, 1.0 / 3.0), (50.0, 1.0, 1.0 / 3.0)]);
    let c = input.components();
    // Exhaustive over the three possible first merges: the cheapest must be
    // the close pair, and reduce must return exactly that merge.
    let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
    let losses: Vec<f64> = pairs.iter().map(|&(i, j, _)| gql_pair(&c[i], &c[j]).unwrap()).collect();
    let best = (0..3).min_by(|&x, &y| losses[x].total_cmp(&losses[y])).unwrap();
    assert_eq!(best, 0);
    let merged = moment_match(&c[0], &c[1]).unwrap();
    for theta in [0.0, 1e-3] {
        let out = reduce(&input, &ReductionParams::new(theta, 2).unwrap());
        assert_eq!(out.len(), 2);
        let first = out.components()[0];
        assert!((first.mean() - merged.mean()).abs() < 1e-15);
        assert!((first.variance() - merged.variance()).abs() < 1e-15);
        assert!((first.weight() - 2.0 / 3.0).abs() < 1e-15);
        let second = out.components()[1];
        assert_eq!((second.mean(), second.variance()), (50.0, 1.0));
    }
}

#[test]
fn tsv_round_trip_is_exact() {
    let m = mix(&[(0.1, 0.7, 0.25), (-3.333333333333333, 1e-6, 0.75)]);
    let mut buf = Vec::new();
    m.write_tsv(&mut buf).unwrap();
    let back = GaussianMixture::read_tsv(buf.as_slice()).unwrap();
    assert_eq!(back, m);
}

fn arb_component() -> impl Strategy<Value = GaussianComponent> {
    (-10.0..10.0f64, 0.01..5.0f64, 0.01..1.0f64).prop_map(|(m, v, c)| GaussianComponent::new(m, v, c).unwrap())
}

fn arb_mixture() -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec(arb_component(), 1..40).prop_map(|c| GaussianMixture::new(c).unwrap())
}

fn moments(m: &GaussianMixture) -> (f64, f64) {
    let total: f64 = m.components().iter().map(|c| c.weight()).sum();
    let mean = m.components().iter().map(|c| c.weight() * c.mean()).sum::<f64>() / total;
    let var = m.components().iter().map(|c| c.weight() * (c.variance() + (c.mean() - mean).powi(2))).sum::<f64>() / total;
    (mean, var)
}

proptest! {
    #[test]
    fn reduce_respects_budget_and_moments(m in arb_mixture(), theta in 0.0..2.0f64, budget in 1usize..8) {
        let out = reduce(&m, &ReductionParams::new(theta, budget).unwrap());
        prop_assert!(out.len() <= budget.min(m.len()));
        prop_assert!((out.total_weight() - 1.0).abs() < 1e-12);
        let (m0, v0) = moments(&m);
        let (m1, v1) = moments(&out);
        prop_assert!((m1 - m0).abs() <= 1e-9 * m0.abs().max(v0.sqrt()));
        prop_assert!((v1 - v0).abs() <= 1e-9 * v0);
    }

    #[test]
    fn reduce_is_idempotent_at_zero_theta(m in arb_mixture(), budget in 1usize..8) {
        let params = ReductionParams::new(0.0, budget).unwrap();
        let once = reduce(&m, &params);
        let twice = reduce(&once, &params);
        prop_assert_eq!(once.len(), twice.len());
        for (a, b) in once.components().iter().zip(twice.components()) {
            prop_assert_eq!((a.mean(), a.variance()), (b.mean(), b.variance()));
        }
    }

    #[test]
    fn gql_is_symmetric_and_nonnegative(a in arb_component(), b in arb_component()) {
        let g = gql_pair(&a, &b).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!((g - gql_pair(&b, &a).unwrap()).abs() <= 1e-12 * g.max(1.0));
    }
}

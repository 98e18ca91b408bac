//! Oracle cross-checks of the closed forms and node rules.
//!
//! Each check draws random inputs from a seeded generator, runs the fast code
//! path and the matching [`crate::oracle`] computation, and reports the worst
//! disagreement seen. The same checks back `ldlc selftest` and the acceptance
//! suite; only the case counts differ.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{check_node_messages, variable_node_messages, DecoderParams};
use crate::gmix::{gql_pair, moment_match, reduce, sd_single, GaussianComponent, GaussianMixture, ReductionParams};
use crate::oracle::{grid_convolve, integrate_over_support, l1_distance, mixture_pdf, quad_moments, quad_sd, GridFunction};

/// Case counts for one selftest run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelftestConfig {
    /// Random Gaussian pairs for the SD and moment-matching checks.
    pub pairs: usize,
    /// Random mixtures for the reduction contract.
    pub mixtures: usize,
    /// Random node configurations for the node-rule checks.
    pub node_cases: usize,
    pub seed: u64,
}

impl SelftestConfig {
    /// Small counts, a few seconds in total.
    pub fn quick() -> Self {
        Self { pairs: 100, mixtures: 40, node_cases: 4, seed: 1 }
    }

    /// The counts the acceptance suite runs.
    pub fn full() -> Self {
        Self { pairs: 1000, mixtures: 200, node_cases: 20, seed: 1 }
    }
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self::quick()
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, failures: Vec<String>, summary: String) -> CheckOutcome {
    match failures.first() {
        None => CheckOutcome { name, passed: true, detail: summary },
        Some(first) => CheckOutcome {
            name,
            passed: false,
            detail: format!("{summary}; {} failure(s), first: {first}", failures.len()),
        },
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn random_component(rng: &mut ChaCha8Rng, mean_range: f64, var_lo: f64, var_hi: f64) -> GaussianComponent {
    GaussianComponent::new(
        rng.random_range(-mean_range..mean_range),
        log_uniform(rng, var_lo, var_hi),
        rng.random_range(0.05..1.0),
    )
    .expect("valid random component")
}

fn random_mixture(rng: &mut ChaCha8Rng, len: usize, mean_range: f64, var_lo: f64, var_hi: f64) -> GaussianMixture {
    let comps = (0..len).map(|_| random_component(rng, mean_range, var_lo, var_hi)).collect();
    GaussianMixture::new(comps).expect("non-empty").normalize().expect("positive weights")
}

fn relative(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Two-pass mean and variance of a mixture, normalized by its total weight.
fn direct_moments(mix: &GaussianMixture) -> (f64, f64) {
    let total: f64 = mix.components().iter().map(|c| c.weight()).sum();
    let mean = mix.components().iter().map(|c| c.weight() * c.mean()).sum::<f64>() / total;
    let var = mix
        .components()
        .iter()
        .map(|c| c.weight() * (c.variance() + (c.mean() - mean).powi(2)))
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Closed-form squared difference of two Gaussians against quadrature.
pub fn check_sd_closed_form(cfg: &SelftestConfig) -> CheckOutcome {
    let mut rng = rng_for(cfg.seed, 1);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let unit = |m: f64, v: f64| GaussianComponent::new(m, v, 1.0).expect("valid");
    let reference = sd_single(&unit(0.0, 1.0), &unit(1.0, 1.0));
    if format!("{reference:.6}") != "0.124798" {
        failures.push(format!("SD(N(0,1), N(1,1)) = {reference:.9}, expected 0.124798 to 6 decimals"));
    }
    for case in 0..cfg.pairs {
        let a = unit(rng.random_range(-5.0..5.0), log_uniform(&mut rng, 0.05, 5.0));
        let b = unit(rng.random_range(-5.0..5.0), log_uniform(&mut rng, 0.05, 5.0));
        let closed = sd_single(&a, &b);
        let quad = match quad_sd(&GaussianMixture::single(a), &GaussianMixture::single(b)) {
            Ok(q) => q,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let err = (closed - quad).abs();
        worst = worst.max(err);
        if err > 1e-8 {
            failures.push(format!("case {case}: closed {closed:.12e} vs quadrature {quad:.12e}"));
        }
    }
    outcome(
        "sd-closed-form",
        failures,
        format!("{} pairs, max |error| {worst:.2e} (tol 1e-8); SD(N(0,1),N(1,1)) = {reference:.7}", cfg.pairs),
    )
}

/// Moment matching and the pair GQL against quadrature.
pub fn check_moment_matching(cfg: &SelftestConfig) -> CheckOutcome {
    let mut rng = rng_for(cfg.seed, 2);
    let mut failures = Vec::new();
    let (mut worst_mm, mut worst_gql): (f64, f64) = (0.0, 0.0);
    for case in 0..cfg.pairs {
        let a = random_component(&mut rng, 5.0, 0.05, 5.0);
        let b = random_component(&mut rng, 5.0, 0.05, 5.0);
        let pair = GaussianMixture::new(vec![a, b]).expect("two components").normalize().expect("positive");
        let merged = match moment_match(&a, &b) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let (qm, qv) = match quad_moments(&pair) {
            Ok(x) => x,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let err = relative(merged.mean(), qm, qm.abs().max(qv.sqrt())).max(relative(merged.variance(), qv, qv));
        worst_mm = worst_mm.max(err);
        if err > 1e-9 {
            failures.push(format!(
                "case {case}: moment match ({}, {}) vs quadrature ({qm}, {qv})",
                merged.mean(),
                merged.variance()
            ));
        }
        let gql = gql_pair(&a, &b).expect("positive weights");
        let single = GaussianMixture::gaussian(merged.mean(), merged.variance()).expect("valid");
        match quad_sd(&pair, &single) {
            Ok(q) => {
                let err = (gql - q).abs();
                worst_gql = worst_gql.max(err);
                if err > 1e-8 {
                    failures.push(format!("case {case}: GQL {gql:.12e} vs quadrature {q:.12e}"));
                }
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    outcome(
        "moment-matching",
        failures,
        format!(
            "{} pairs, max rel moment error {worst_mm:.2e} (tol 1e-9), max |GQL error| {worst_gql:.2e} (tol 1e-8)",
            cfg.pairs
        ),
    )
}

/// Reduction respects the component budget, preserves the first two moments
/// and leaves the input alone when it has nothing to do.
pub fn check_reduction_contract(cfg: &SelftestConfig) -> CheckOutcome {
    let mut rng = rng_for(cfg.seed, 3);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..cfg.mixtures {
        let len = rng.random_range(1..=50);
        let mix = random_mixture(&mut rng, len, 5.0, 0.01, 4.0);
        let (m0, v0) = direct_moments(&mix);
        for budget in [1usize, 2, 6] {
            let theta = rng.random_range(0.0..1.0);
            let out = reduce(&mix, &ReductionParams::new(theta, budget).expect("valid"));
            if out.len() > budget {
                failures.push(format!("case {case}: {len} -> {} components with M = {budget}", out.len()));
            }
            let (m1, v1) = direct_moments(&out);
            let err = relative(m1, m0, m0.abs().max(v0.sqrt())).max(relative(v1, v0, v0));
            worst = worst.max(err);
            if err > 1e-9 {
                failures.push(format!("case {case}, M = {budget}: moments ({m0}, {v0}) -> ({m1}, {v1})"));
            }
        }
        let same = reduce(&mix, &ReductionParams::new(0.0, len).expect("valid"));
        // Renormalizing may move weights by an ulp; shapes must be untouched.
        let unchanged = same.len() == mix.len()
            && same.components().iter().zip(mix.components()).all(|(a, b)| {
                a.mean() == b.mean() && a.variance() == b.variance() && (a.weight() - b.weight()).abs() <= 4.0 * f64::EPSILON * b.weight()
            });
        if !unchanged {
            failures.push(format!("case {case}: theta = 0, M = N changed the mixture"));
        }
    }
    outcome(
        "reduction-contract",
        failures,
        format!("{} mixtures x M in {{1, 2, 6}}, max rel moment drift {worst:.2e} (tol 1e-9)", cfg.mixtures),
    )
}

const D: usize = 3;

fn coefficients(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut h = vec![1.0, 1.0 / (D as f64).sqrt(), 1.0 / (D as f64).sqrt()];
    for v in h.iter_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    h
}

/// A check-node configuration whose convolution components all fall inside
/// one integer cell, so the replica window does not depend on the component.
struct CheckCase {
    inputs: Vec<GaussianMixture>,
    coeffs: Vec<f64>,
    channel: Vec<f64>,
}

fn check_case(rng: &mut ChaCha8Rng, max_len: usize, var_lo: f64, var_hi: f64) -> CheckCase {
    let coeffs = coefficients(rng);
    let inputs: Vec<GaussianMixture> = (0..D)
        .map(|_| {
            let centre = rng.random_range(-2.0..2.0);
            let len = rng.random_range(1..=max_len);
            let comps = (0..len)
                .map(|_| {
                    GaussianComponent::new(
                        centre + rng.random_range(-0.1..0.1),
                        log_uniform(rng, var_lo, var_hi),
                        rng.random_range(0.2..1.0),
                    )
                    .expect("valid")
                })
                .collect();
            GaussianMixture::new(comps).expect("non-empty").normalize().expect("positive")
        })
        .collect();
    let centres: Vec<f64> = inputs.iter().map(|m| direct_moments(m).0).collect();
    let channel = (0..D)
        .map(|k| {
            let s: f64 = (0..D).filter(|&i| i != k).map(|i| coeffs[i] * centres[i]).sum();
            // Put s + h_k·y at an integer plus a small offset.
            let target = rng.random_range(-3i64..=3) as f64 + rng.random_range(-0.2..0.2);
            (target - s) / coeffs[k]
        })
        .collect();
    CheckCase { inputs, coeffs, channel }
}

/// Grid oracle of one check-node output: convolve the scaled other inputs,
/// replicate over the integer window, then map back to the variable's axis.
fn check_oracle(case: &CheckCase, k: usize, shifts: usize, step: f64) -> GridFunction {
    let scaled: Vec<GridFunction> = (0..D)
        .filter(|&i| i != k)
        .map(|i| {
            let h = case.coeffs[i];
            let mix = &case.inputs[i];
            let lo = mix.components().iter().map(|c| h * c.mean() - 9.0 * h.abs() * c.variance().sqrt());
            let hi = mix.components().iter().map(|c| h * c.mean() + 9.0 * h.abs() * c.variance().sqrt());
            let lo = lo.fold(f64::INFINITY, f64::min);
            let hi = hi.fold(f64::NEG_INFINITY, f64::max);
            GridFunction::sample(|z| mixture_pdf(mix, z / h) / h.abs(), lo, hi, step).expect("grid").normalized()
        })
        .collect();
    let mut sum = scaled[0].clone();
    for g in &scaled[1..] {
        sum = grid_convolve(&sum, g).expect("same step");
    }
    let mass_mean: f64 =
        sum.samples().iter().enumerate().map(|(i, s)| s * (sum.origin() + i as f64 * step)).sum::<f64>() * step;
    let h = case.coeffs[k];
    let centre = (mass_mean + h * case.channel[k]).round() as i64;
    let half = (shifts / 2) as i64;
    // h_k x = b − s, so x = (b − s)/h_k for every replica b.
    let xs: Vec<f64> = ((centre - half)..=(centre + half))
        .flat_map(|b| [(b as f64 - sum.end()) / h, (b as f64 - sum.origin()) / h])
        .collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dx = step / h.abs();
    GridFunction::sample(
        |x| ((centre - half)..=(centre + half)).map(|b| sum.at(b as f64 - h * x)).sum::<f64>(),
        lo,
        hi,
        dx,
    )
    .expect("grid")
    .normalized()
}

fn grid_l1(mix: &GaussianMixture, oracle: &GridFunction) -> f64 {
    // Riemann sum on a grid covering both the oracle and the mixture.
    let lo = mix.components().iter().map(|c| c.mean() - 9.0 * c.variance().sqrt()).fold(oracle.origin(), f64::min);
    let hi = mix.components().iter().map(|c| c.mean() + 9.0 * c.variance().sqrt()).fold(oracle.end(), f64::max);
    let dx = oracle.step() / 4.0;
    let count = ((hi - lo) / dx).ceil() as usize;
    (0..=count)
        .map(|i| {
            let x = lo + i as f64 * dx;
            (mixture_pdf(mix, x) - oracle.at(x)).abs()
        })
        .sum::<f64>()
        * dx
}

fn gaussian_product_ref(channel: (f64, f64), others: &[(f64, f64)]) -> (f64, f64) {
    let precision = 1.0 / channel.1 + others.iter().map(|&(_, v)| 1.0 / v).sum::<f64>();
    let weighted = channel.0 / channel.1 + others.iter().map(|&(m, v)| m / v).sum::<f64>();
    (weighted / precision, 1.0 / precision)
}

/// Check- and variable-node rules without reduction against the grid and
/// quadrature oracles, plus the single-Gaussian closed forms.
pub fn check_node_equivalence(cfg: &SelftestConfig) -> CheckOutcome {
    let mut rng = rng_for(cfg.seed, 4);
    let mut failures = Vec::new();
    let params = DecoderParams::default().without_reduction();
    let (mut worst_check, mut worst_var, mut worst_closed): (f64, f64, f64) = (0.0, 0.0, 0.0);

    for case_no in 0..cfg.node_cases {
        let case = check_case(&mut rng, 2, 0.005, 0.02);
        match check_node_messages(&case.inputs, &case.coeffs, &case.channel, &params) {
            Ok(out) => {
                for (k, msg) in out.iter().enumerate() {
                    let oracle = check_oracle(&case, k, params.shift_count, 1e-3);
                    let l1 = grid_l1(msg, &oracle);
                    worst_check = worst_check.max(l1);
                    if l1 > 1e-3 {
                        failures.push(format!("check case {case_no}, edge {k}: L1 {l1:.3e}"));
                    }
                }
            }
            Err(e) => failures.push(format!("check case {case_no}: {e}")),
        }

        let incoming: Vec<GaussianMixture> =
            (0..D).map(|_| { let len = rng.random_range(1..=3); random_mixture(&mut rng, len, 1.0, 0.05, 0.5) }).collect();
        let y = rng.random_range(-1.0..1.0);
        let sigma2 = log_uniform(&mut rng, 0.05, 0.5);
        let channel = GaussianMixture::gaussian(y, sigma2).expect("valid");
        match variable_node_messages(&incoming, y, sigma2, &params) {
            Ok((out, _)) => {
                for (k, msg) in out.iter().enumerate() {
                    let others: Vec<&GaussianMixture> = (0..D).filter(|&l| l != k).map(|l| &incoming[l]).collect();
                    let product = |x: f64| mixture_pdf(&channel, x) * others.iter().map(|m| mixture_pdf(m, x)).product::<f64>();
                    let mut support: Vec<&GaussianMixture> = vec![&channel];
                    support.extend(others.iter().copied());
                    let l1 = integrate_over_support(&support, product, 1e-13).and_then(|z| {
                        l1_distance(&[msg, &channel], |x| mixture_pdf(msg, x), |x| product(x) / z)
                    });
                    match l1 {
                        Ok(l1) => {
                            worst_var = worst_var.max(l1);
                            if l1 > 1e-6 {
                                failures.push(format!("variable case {case_no}, edge {k}: L1 {l1:.3e}"));
                            }
                        }
                        Err(e) => failures.push(format!("variable case {case_no}, edge {k}: {e}")),
                    }
                }
            }
            Err(e) => failures.push(format!("variable case {case_no}: {e}")),
        }

        // Single-Gaussian closed forms.
        let coeffs = coefficients(&mut rng);
        let singles: Vec<(f64, f64)> =
            (0..D).map(|_| (rng.random_range(-2.0..2.0), log_uniform(&mut rng, 0.01, 1.0))).collect();
        let inputs: Vec<GaussianMixture> =
            singles.iter().map(|&(m, v)| GaussianMixture::gaussian(m, v).expect("valid")).collect();
        let channel_y: Vec<f64> = (0..D).map(|_| rng.random_range(-3.0..3.0)).collect();
        let one_shift = DecoderParams { shift_count: 1, ..params };
        match check_node_messages(&inputs, &coeffs, &channel_y, &one_shift) {
            Ok(out) => {
                for (k, msg) in out.iter().enumerate() {
                    let mean: f64 = (0..D).filter(|&i| i != k).map(|i| coeffs[i] * singles[i].0).sum();
                    let var: f64 = (0..D).filter(|&i| i != k).map(|i| coeffs[i].powi(2) * singles[i].1).sum();
                    let b = (mean + coeffs[k] * channel_y[k]).round();
                    let (em, ev) = ((b - mean) / coeffs[k], var / coeffs[k].powi(2));
                    let c = msg.components()[0];
                    let err = relative(c.mean(), em, em.abs().max(ev.sqrt())).max(relative(c.variance(), ev, ev));
                    worst_closed = worst_closed.max(err);
                    if msg.len() != 1 || err > 1e-12 {
                        failures.push(format!("closed-form check case {case_no}, edge {k}: rel error {err:.2e}"));
                    }
                }
            }
            Err(e) => failures.push(format!("closed-form check case {case_no}: {e}")),
        }
        let y = rng.random_range(-2.0..2.0);
        let sigma2 = log_uniform(&mut rng, 0.01, 1.0);
        match variable_node_messages(&inputs, y, sigma2, &params) {
            Ok((out, _)) => {
                for (k, msg) in out.iter().enumerate() {
                    let others: Vec<(f64, f64)> = (0..D).filter(|&l| l != k).map(|l| singles[l]).collect();
                    let (em, ev) = gaussian_product_ref((y, sigma2), &others);
                    let c = msg.components()[0];
                    let err = relative(c.mean(), em, em.abs().max(ev.sqrt())).max(relative(c.variance(), ev, ev));
                    worst_closed = worst_closed.max(err);
                    if msg.len() != 1 || err > 1e-12 {
                        failures.push(format!("closed-form variable case {case_no}, edge {k}: rel error {err:.2e}"));
                    }
                }
            }
            Err(e) => failures.push(format!("closed-form variable case {case_no}: {e}")),
        }
    }
    outcome(
        "node-equivalence",
        failures,
        format!(
            "{} cases, max L1 check {worst_check:.2e} (tol 1e-3), variable {worst_var:.2e} (tol 1e-6), \
             closed forms {worst_closed:.2e} (tol 1e-12)",
            cfg.node_cases
        ),
    )
}

/// Without reduction, outputs hold exactly the product of the other inputs'
/// component counts, times the shift count at a check node.
pub fn check_growth_law(cfg: &SelftestConfig) -> CheckOutcome {
    let mut rng = rng_for(cfg.seed, 5);
    let mut failures = Vec::new();
    let params = DecoderParams::default().without_reduction();
    for case_no in 0..cfg.node_cases {
        let case = check_case(&mut rng, 4, 0.01, 0.05);
        let counts: Vec<usize> = case.inputs.iter().map(|m| m.len()).collect();
        match check_node_messages(&case.inputs, &case.coeffs, &case.channel, &params) {
            Ok(out) => {
                for (k, msg) in out.iter().enumerate() {
                    let expected: usize =
                        (0..D).filter(|&i| i != k).map(|i| counts[i]).product::<usize>() * params.shift_count;
                    if msg.len() != expected {
                        failures.push(format!("check case {case_no}, edge {k}: {} components, expected {expected}", msg.len()));
                    }
                }
            }
            Err(e) => failures.push(format!("check case {case_no}: {e}")),
        }
        let incoming: Vec<GaussianMixture> =
            (0..D).map(|_| { let len = rng.random_range(1..=4); random_mixture(&mut rng, len, 0.5, 0.5, 2.0) }).collect();
        let counts: Vec<usize> = incoming.iter().map(|m| m.len()).collect();
        match variable_node_messages(&incoming, 0.0, 1.0, &params) {
            Ok((out, posterior)) => {
                for (k, msg) in out.iter().enumerate() {
                    let expected: usize = (0..D).filter(|&l| l != k).map(|l| counts[l]).product();
                    if msg.len() != expected {
                        failures.push(format!(
                            "variable case {case_no}, edge {k}: {} components, expected {expected}",
                            msg.len()
                        ));
                    }
                }
                let all: usize = counts.iter().product();
                if posterior.len() != all {
                    failures.push(format!("variable case {case_no}: posterior has {}, expected {all}", posterior.len()));
                }
            }
            Err(e) => failures.push(format!("variable case {case_no}: {e}")),
        }
    }
    outcome("growth-law", failures, format!("{} check and variable cases", cfg.node_cases))
}

/// Runs every check in order.
pub fn run_all(cfg: &SelftestConfig) -> Vec<CheckOutcome> {
    vec![
        check_sd_closed_form(cfg),
        check_moment_matching(cfg),
        check_reduction_contract(cfg),
        check_node_equivalence(cfg),
        check_growth_law(cfg),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_run_passes() {
        let cfg = SelftestConfig { pairs: 20, mixtures: 10, node_cases: 2, seed: 9 };
        for outcome in run_all(&cfg) {
            assert!(outcome.passed, "{outcome}");
        }
    }

    #[test]
    fn outcome_formatting() {
        let ok = outcome("x", Vec::new(), "fine".into());
        assert_eq!(ok.to_string(), "PASS x: fine");
        let bad = outcome("x", vec!["a".into(), "b".into()], "s".into());
        assert!(!bad.passed);
        assert_eq!(bad.to_string(), "FAIL x: s; 2 failure(s), first: a");
    }
}

//! Scalar Gaussian mixtures and greedy mixture reduction.
//!
//! A message is a list of `(mean, variance, weight)` triples describing
//! `f(z) = Σ c_i N(z; m_i, v_i)`. Everything in this module is closed form:
//! the squared difference `∫(p − q)² dz` between two Gaussians, the moment
//! matched merge of two weighted components, the Gaussian quadratic loss
//! (GQL) incurred by that merge, and the pairwise-greedy reduction that
//! shrinks a mixture to at most `M` components.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// Smallest variance any operation is allowed to produce.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Largest variance any operation is allowed to produce.
pub const VARIANCE_CEIL: f64 = 1e12;
/// Normalized weights below this are dropped before reduction.
pub const WEIGHT_FLOOR: f64 = 1e-12;

static VARIANCE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a variance has been clamped into
/// `[VARIANCE_FLOOR, VARIANCE_CEIL]` since process start.
pub fn variance_clamp_count() -> u64 {
    VARIANCE_CLAMPS.load(Ordering::Relaxed)
}

#[inline]
pub(crate) fn clamp_variance(v: f64) -> f64 {
    if v < VARIANCE_FLOOR {
        VARIANCE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        VARIANCE_FLOOR
    } else if v > VARIANCE_CEIL {
        VARIANCE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        VARIANCE_CEIL
    } else {
        v
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("invalid component: mean {mean}, variance {variance}, weight {weight}")]
    InvalidComponent { mean: f64, variance: f64, weight: f64 },
    #[error("a mixture needs at least one component")]
    Empty,
    #[error("degenerate message: component weights sum to {0}")]
    DegenerateMessage(f64),
    #[error("cannot merge a pair whose total weight is zero")]
    DegeneratePair,
    #[error("invalid reduction parameters: theta {theta}, max_components {max_components}")]
    InvalidParams { theta: f64, max_components: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One weighted Gaussian `c · N(z; m, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    mean: f64,
    variance: f64,
    weight: f64,
}

impl GaussianComponent {
    /// Validated constructor. Variance must be strictly positive, weight
    /// non-negative, and all three finite.
    pub fn new(mean: f64, variance: f64, weight: f64) -> Result<Self, MixtureError> {
        if !(mean.is_finite() && variance.is_finite() && weight.is_finite())
            || variance <= 0.0
            || weight < 0.0
        {
            return Err(MixtureError::InvalidComponent { mean, variance, weight });
        }
        Ok(Self { mean, variance, weight })
    }

    /// Unchecked constructor for hot paths that maintain the invariants
    /// themselves.
    #[inline]
    pub(crate) fn raw(mean: f64, variance: f64, weight: f64) -> Self {
        debug_assert!(mean.is_finite(), "mean {mean}");
        debug_assert!(variance > 0.0 && variance.is_finite(), "variance {variance}");
        debug_assert!(weight >= 0.0 && weight.is_finite(), "weight {weight}");
        Self { mean, variance, weight }
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.variance
    }

    #[inline]
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Same shape, different weight.
    pub fn with_weight(self, weight: f64) -> Result<Self, MixtureError> {
        Self::new(self.mean, self.variance, weight)
    }

    /// Weighted density `c · N(z; m, v)`.
    #[inline]
    pub fn density_at(&self, z: f64) -> f64 {
        let dz = z - self.mean;
        self.weight * (-dz * dz / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }
}

/// Reduction stopping parameters: the one-step GQL threshold `theta` and the
/// component budget `max_components`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionParams {
    theta: f64,
    max_components: usize,
}

impl ReductionParams {
    pub fn new(theta: f64, max_components: usize) -> Result<Self, MixtureError> {
        if !theta.is_finite() || theta < 0.0 || max_components < 1 {
            return Err(MixtureError::InvalidParams { theta, max_components });
        }
        Ok(Self { theta, max_components })
    }

    /// Parameters under which `reduce` never merges anything.
    pub fn disabled() -> Self {
        Self { theta: 0.0, max_components: usize::MAX }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn max_components(&self) -> usize {
        self.max_components
    }
}

impl Default for ReductionParams {
    /// `theta = 0.5`, `max_components = 6`.
    fn default() -> Self {
        Self { theta: 0.5, max_components: 6 }
    }
}

/// A non-empty ordered list of weighted Gaussian components.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::Empty);
        }
        Ok(Self { components })
    }

    /// Builds a mixture from `(mean, variance, weight)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self, MixtureError> {
        let components = triples
            .iter()
            .map(|&(m, v, c)| GaussianComponent::new(m, v, c))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(components)
    }

    pub fn single(component: GaussianComponent) -> Self {
        Self { components: vec![component] }
    }

    /// Unit-weight Gaussian `N(mean, variance)`.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, MixtureError> {
        Ok(Self::single(GaussianComponent::new(mean, variance, 1.0)?))
    }

    #[inline]
    pub(crate) fn from_vec_unchecked(components: Vec<GaussianComponent>) -> Self {
        debug_assert!(!components.is_empty());
        Self { components }
    }

    #[inline]
    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.components.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn density_at(&self, z: f64) -> f64 {
        density_at(self, z)
    }

    /// Divides every weight by the weight sum.
    pub fn normalize(&self) -> Result<Self, MixtureError> {
        normalize(self)
    }

    /// Mean and variance of the (normalized) mixture.
    pub fn moments(&self) -> (f64, f64) {
        let total = self.total_weight();
        let mean = self.components.iter().map(|c| c.weight * c.mean).sum::<f64>() / total;
        let var = self
            .components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - mean) * (c.mean - mean)))
            .sum::<f64>()
            / total;
        (mean, var)
    }

    /// Maps every component through `z → scale · z`.
    pub fn scaled(&self, scale: f64) -> Self {
        let s2 = scale * scale;
        Self {
            components: self
                .components
                .iter()
                .map(|c| GaussianComponent::raw(c.mean * scale, clamp_variance(c.variance * s2), c.weight))
                .collect(),
        }
    }

    /// Writes one `mean<TAB>variance<TAB>weight` line per component.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for c in &self.components {
            writeln!(out, "{:.16e}\t{:.16e}\t{:.16e}", c.mean, c.variance, c.weight)?;
        }
        Ok(())
    }

    /// Parses the format produced by [`GaussianMixture::write_tsv`]. Blank
    /// lines and lines starting with `#` are skipped.
    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, MixtureError> {
        let mut components = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| MixtureError::Parse { line: line_no, message: e.to_string() })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(MixtureError::Parse {
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let mut vals = [0.0; 3];
            for (slot, field) in vals.iter_mut().zip(&fields) {
                *slot = field.trim().parse::<f64>().map_err(|e| MixtureError::Parse {
                    line: line_no,
                    message: format!("{field:?}: {e}"),
                })?;
            }
            components.push(GaussianComponent::new(vals[0], vals[1], vals[2])?);
        }
        Self::new(components)
    }
}

impl fmt::Display for GaussianMixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({}, {}, {})", c.mean, c.variance, c.weight)?;
        }
        write!(f, "}}")
    }
}

/// Pointwise density `Σ c_i N(z; m_i, v_i)`.
pub fn density_at(mix: &GaussianMixture, z: f64) -> f64 {
    mix.components.iter().map(|c| c.density_at(z)).sum()
}

pub fn normalize(mix: &GaussianMixture) -> Result<GaussianMixture, MixtureError> {
    let mut components = mix.components.clone();
    normalize_in_place(&mut components)?;
    Ok(GaussianMixture { components })
}

pub(crate) fn normalize_in_place(components: &mut [GaussianComponent]) -> Result<(), MixtureError> {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(MixtureError::DegenerateMessage(total));
    }
    for c in components.iter_mut() {
        c.weight /= total;
    }
    Ok(())
}

/// Squared difference `∫(p − q)² dz` between the unit-mass densities of two
/// components (weights are ignored).
pub fn sd_single(a: &GaussianComponent, b: &GaussianComponent) -> f64 {
    let sum_v = a.variance + b.variance;
    let dm = a.mean - b.mean;
    let sd = 0.5 / (PI * a.variance).sqrt() + 0.5 / (PI * b.variance).sqrt()
        - 2.0 * (-dm * dm / (2.0 * sum_v)).exp() / (2.0 * PI * sum_v).sqrt();
    sd.max(0.0)
}

/// Moment-matched merge of two weighted components. The result carries the
/// combined weight and the mean and variance of the normalized two-component
/// mixture.
pub fn moment_match(a: &GaussianComponent, b: &GaussianComponent) -> Result<GaussianComponent, MixtureError> {
    let total = a.weight + b.weight;
    if !(total > 0.0) {
        return Err(MixtureError::DegeneratePair);
    }
    let (mean, variance) = merged_shape(a, b, a.weight / total, b.weight / total);
    Ok(GaussianComponent::raw(mean, variance, total))
}

// c1·(m1² + v1) + c2·(m2² + v2) − m² rewritten without the cancellation.
#[inline]
fn merged_shape(a: &GaussianComponent, b: &GaussianComponent, c1: f64, c2: f64) -> (f64, f64) {
    let mean = c1 * a.mean + c2 * b.mean;
    let dm = a.mean - b.mean;
    let variance = c1 * a.variance + c2 * b.variance + c1 * c2 * dm * dm;
    (mean, clamp_variance(variance))
}

/// Gaussian quadratic loss of the normalized pair mixture against its moment
/// matched Gaussian.
pub fn gql_pair(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64, MixtureError> {
    let total = a.weight + b.weight;
    if !(total > 0.0) {
        return Err(MixtureError::DegeneratePair);
    }
    Ok(gql_normalized(a, b, a.weight / total, b.weight / total))
}

#[inline]
fn gql_normalized(a: &GaussianComponent, b: &GaussianComponent, c1: f64, c2: f64) -> f64 {
    let (m, v) = merged_shape(a, b, c1, c2);
    let (m1, v1, m2, v2) = (a.mean, a.variance, b.mean, b.variance);
    let inv_sqrt_pi = 1.0 / PI.sqrt();
    let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
    let self_terms = 0.5 * inv_sqrt_pi * (1.0 / v.sqrt() + c1 * c1 / v1.sqrt() + c2 * c2 / v2.sqrt());
    let cross = |mx: f64, vx: f64, my: f64, vy: f64| {
        let s = vx + vy;
        let d = mx - my;
        inv_sqrt_2pi * (-d * d / (2.0 * s)).exp() / s.sqrt()
    };
    let loss = self_terms - 2.0 * c1 * cross(m, v, m1, v1) - 2.0 * c2 * cross(m, v, m2, v2)
        + 2.0 * c1 * c2 * cross(m1, v1, m2, v2);
    loss.max(0.0)
}

/// Greedy pairwise reduction: while the smallest pair GQL is below `theta`,
/// or more than `max_components` components remain, merge the pair with the
/// smallest GQL into its moment-matched Gaussian.
///
/// The output is normalized. Weights summing to zero leave the input as is.
pub fn reduce(mix: &GaussianMixture, params: &ReductionParams) -> GaussianMixture {
    let mut components = mix.components.clone();
    match reduce_in_place(&mut components, params) {
        Ok(()) => GaussianMixture { components },
        Err(_) => mix.clone(),
    }
}

/// Reduces `components` in place, normalizing first. Fails only when the
/// weights sum to zero (or are not finite).
pub(crate) fn reduce_in_place(
    components: &mut Vec<GaussianComponent>,
    params: &ReductionParams,
) -> Result<(), MixtureError> {
    normalize_in_place(components)?;
    if components.len() > 1 {
        let max_weight = components.iter().map(|c| c.weight).fold(0.0, f64::max);
        if max_weight >= WEIGHT_FLOOR {
            components.retain(|c| c.weight >= WEIGHT_FLOOR);
        }
    }
    if components.len() < 2 {
        return Ok(());
    }
    let mut table = PairTable::new(components);
    table.run(params);
    table.finish(components);
    normalize_in_place(components)
}

/// Upper-triangular GQL table with a cached minimum per row. Merged
/// components take the slot of the lower index; the higher slot dies.
struct PairTable {
    slots: Vec<Option<GaussianComponent>>,
    gql: Vec<f64>,
    row_min: Vec<(f64, usize)>,
    alive: usize,
    n: usize,
}

impl PairTable {
    fn new(components: &[GaussianComponent]) -> Self {
        let n = components.len();
        let mut table = Self {
            slots: components.iter().copied().map(Some).collect(),
            gql: vec![f64::INFINITY; n * n],
            row_min: vec![(f64::INFINITY, usize::MAX); n],
            alive: n,
            n,
        };
        for i in 0..n {
            for j in (i + 1)..n {
                table.gql[i * n + j] = pair_loss(&components[i], &components[j]);
            }
            table.refresh_row(i);
        }
        table
    }

    fn refresh_row(&mut self, i: usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        if self.slots[i].is_some() {
            for j in (i + 1)..self.n {
                if self.slots[j].is_some() {
                    let g = self.gql[i * self.n + j];
                    if g < best.0 || best.1 == usize::MAX {
                        best = (g, j);
                    }
                }
            }
        }
        self.row_min[i] = best;
    }

    /// Lexicographically first pair holding the minimum GQL.
    fn min_pair(&self) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, &(g, j)) in self.row_min.iter().enumerate() {
            if j == usize::MAX {
                continue;
            }
            if best.is_none_or(|(bg, _, _)| g < bg) {
                best = Some((g, i, j));
            }
        }
        best
    }

    fn run(&mut self, params: &ReductionParams) {
        while self.alive >= 2 {
            let Some((min_gql, i, j)) = self.min_pair() else { break };
            if !(min_gql < params.theta || self.alive > params.max_components) {
                break;
            }
            self.merge(i, j);
        }
    }

    fn merge(&mut self, i: usize, j: usize) {
        let a = self.slots[i].expect("live slot");
        let b = self.slots[j].expect("live slot");
        let total = a.weight + b.weight;
        let (mean, variance) = merged_shape(&a, &b, a.weight / total, b.weight / total);
        let merged = GaussianComponent::raw(mean, variance, total);
        self.slots[i] = Some(merged);
        self.slots[j] = None;
        self.alive -= 1;
        let n = self.n;
        for r in 0..n {
            if r == i {
                continue;
            }
            let Some(other) = self.slots[r] else { continue };
            let (lo, hi) = if r < i { (r, i) } else { (i, r) };
            self.gql[lo * n + hi] = pair_loss(&merged, &other);
        }
        self.refresh_row(i);
        self.row_min[j] = (f64::INFINITY, usize::MAX);
        for r in 0..i {
            if self.slots[r].is_none() {
                continue;
            }
            let (cur, arg) = self.row_min[r];
            let g = self.gql[r * n + i];
            if arg == i || arg == j {
                self.refresh_row(r);
            } else if g < cur || (g == cur && i < arg) {
                self.row_min[r] = (g, i);
            }
        }
        for r in (i + 1)..j {
            if self.slots[r].is_some() && self.row_min[r].1 == j {
                self.refresh_row(r);
            }
        }
    }

    fn finish(self, out: &mut Vec<GaussianComponent>) {
        out.clear();
        out.extend(self.slots.into_iter().flatten());
    }
}

#[inline]
fn pair_loss(a: &GaussianComponent, b: &GaussianComponent) -> f64 {
    let total = a.weight + b.weight;
    gql_normalized(a, b, a.weight / total, b.weight / total)
}

//! Independent numerical ground truth for testing.
//!
//! Nothing here reuses the closed forms of [`crate::gmix`] or the factorized
//! solver of [`crate::lattice`]: densities are evaluated from scratch,
//! integrals come from adaptive Simpson quadrature, convolutions are done on
//! sampled grids, the generator matrix is obtained by Gauss–Jordan inversion,
//! and maximum-likelihood decoding is exhaustive enumeration.

use thiserror::Error;

use crate::gmix::GaussianMixture;
use crate::lattice::MagicSquareH;

/// Default absolute tolerance of [`adaptive_simpson`] based integrals.
pub const QUAD_TOLERANCE: f64 = 1e-12;
const MAX_DEPTH: u32 = 60;
/// Largest dimension [`ml_decode_bruteforce`] accepts.
pub const MAX_BRUTEFORCE_DIM: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("adaptive quadrature did not converge on [{a}, {b}]")]
    NoConvergence { a: f64, b: f64 },
    #[error("grid steps differ: {0} vs {1}")]
    StepMismatch(f64, f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension {0} too large for exhaustive search (max {MAX_BRUTEFORCE_DIM})")]
    DimensionTooLarge(usize),
    #[error("matrix is singular")]
    Singular,
    #[error("input has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

fn normal_pdf(z: f64, mean: f64, variance: f64) -> f64 {
    let u = (z - mean) / variance.sqrt();
    (-0.5 * u * u).exp() / (variance * std::f64::consts::TAU).sqrt()
}

/// Density of a mixture, evaluated independently of `GaussianMixture::density_at`.
pub fn mixture_pdf(f: &GaussianMixture, z: f64) -> f64 {
    f.components().iter().map(|c| c.weight() * normal_pdf(z, c.mean(), c.variance())).sum()
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, OracleError> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, OracleError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(OracleError::NoConvergence { a, b });
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Integrates `g` over the union of the `±8σ` supports of the given mixtures,
/// splitting at every component's `m + kσ` so no narrow peak is missed.
pub fn integrate_over_support<F: Fn(f64) -> f64>(
    mixtures: &[&GaussianMixture],
    g: F,
    tol: f64,
) -> Result<f64, OracleError> {
    let mut breaks: Vec<f64> = Vec::new();
    for mix in mixtures {
        for c in mix.components() {
            let s = c.variance().sqrt();
            breaks.extend((-8..=8).map(|k| c.mean() + k as f64 * s));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    if breaks.len() < 2 {
        return Ok(0.0);
    }
    let per = tol / (breaks.len() - 1) as f64;
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += adaptive_simpson(&g, w[0], w[1], per)?;
    }
    Ok(total)
}

/// `∫ (f − g)² dz` by adaptive quadrature.
pub fn quad_sd(f: &GaussianMixture, g: &GaussianMixture) -> Result<f64, OracleError> {
    integrate_over_support(
        &[f, g],
        |z| {
            let diff = mixture_pdf(f, z) - mixture_pdf(g, z);
            diff * diff
        },
        QUAD_TOLERANCE,
    )
}

/// Mean and variance of the normalized mixture by quadrature. The variance is
/// integrated about the quadrature mean to avoid cancellation.
pub fn quad_moments(f: &GaussianMixture) -> Result<(f64, f64), OracleError> {
    let mass = integrate_over_support(&[f], |z| mixture_pdf(f, z), QUAD_TOLERANCE)?;
    let first = integrate_over_support(&[f], |z| z * mixture_pdf(f, z), QUAD_TOLERANCE)?;
    let mean = first / mass;
    let second = integrate_over_support(&[f], |z| (z - mean) * (z - mean) * mixture_pdf(f, z), QUAD_TOLERANCE)?;
    Ok((mean, second / mass))
}

/// Uniformly sampled function `samples[i] = f(origin + i · step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    origin: f64,
    step: f64,
    samples: Vec<f64>,
}

impl GridFunction {
    pub fn new(origin: f64, step: f64, samples: Vec<f64>) -> Result<Self, OracleError> {
        if !(step > 0.0 && step.is_finite()) || !origin.is_finite() {
            return Err(OracleError::InvalidGrid(format!("origin {origin}, step {step}")));
        }
        if samples.is_empty() {
            return Err(OracleError::InvalidGrid("no samples".into()));
        }
        Ok(Self { origin, step, samples })
    }

    /// Samples `f` on `[lo, hi]`. `lo` is snapped down to a multiple of
    /// `step` so grids built with the same step line up.
    pub fn sample<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> Result<Self, OracleError> {
        if !(hi > lo) {
            return Err(OracleError::InvalidGrid(format!("empty range [{lo}, {hi}]")));
        }
        let start = (lo / step).floor() as i64;
        let end = (hi / step).ceil() as i64;
        let samples = (start..=end).map(|i| f(i as f64 * step)).collect();
        Self::new(start as f64 * step, step, samples)
    }

    /// Samples a mixture density over its `±span·σ` support.
    pub fn from_mixture(mix: &GaussianMixture, span: f64, step: f64) -> Result<Self, OracleError> {
        let lo = mix.components().iter().map(|c| c.mean() - span * c.variance().sqrt()).fold(f64::INFINITY, f64::min);
        let hi =
            mix.components().iter().map(|c| c.mean() + span * c.variance().sqrt()).fold(f64::NEG_INFINITY, f64::max);
        Self::sample(|z| mixture_pdf(mix, z), lo, hi, step)
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn end(&self) -> f64 {
        self.origin + (self.samples.len() - 1) as f64 * self.step
    }

    /// Linear interpolation; zero outside the grid.
    pub fn at(&self, z: f64) -> f64 {
        let t = (z - self.origin) / self.step;
        if t < 0.0 || t > (self.samples.len() - 1) as f64 {
            return 0.0;
        }
        let i = t.floor() as usize;
        if i + 1 >= self.samples.len() {
            return self.samples[self.samples.len() - 1];
        }
        let frac = t - i as f64;
        self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac
    }

    /// Riemann mass `Σ |samples| · step`.
    pub fn l1_mass(&self) -> f64 {
        self.samples.iter().map(|s| s.abs()).sum::<f64>() * self.step
    }

    /// Rescales to unit L1 mass.
    pub fn normalized(mut self) -> Self {
        let mass = self.l1_mass();
        if mass > 0.0 {
            for s in self.samples.iter_mut() {
                *s /= mass;
            }
        }
        self
    }

    /// Shifts the argument: returns `z ↦ self(z − offset)` for an offset that
    /// is an integer number of steps.
    pub fn shifted_by_steps(&self, steps: i64) -> Self {
        Self { origin: self.origin + steps as f64 * self.step, step: self.step, samples: self.samples.clone() }
    }
}

/// Discrete convolution `(a ∗ b)(z) ≈ Σ a_i b_j · step`, L1-normalized.
pub fn grid_convolve(a: &GridFunction, b: &GridFunction) -> Result<GridFunction, OracleError> {
    if (a.step - b.step).abs() > 1e-12 * a.step {
        return Err(OracleError::StepMismatch(a.step, b.step));
    }
    let mut out = vec![0.0; a.samples.len() + b.samples.len() - 1];
    for (i, &x) in a.samples.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(&b.samples) {
            *o += x * y;
        }
    }
    for o in out.iter_mut() {
        *o *= a.step;
    }
    Ok(GridFunction::new(a.origin + b.origin, a.step, out)?.normalized())
}

/// `∫ |f − g| dz` for two grid-free densities, by adaptive quadrature over
/// the supports of the listed mixtures.
pub fn l1_distance<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(
    support: &[&GaussianMixture],
    f: F,
    g: G,
) -> Result<f64, OracleError> {
    integrate_over_support(support, |z| (f(z) - g(z)).abs(), 1e-10)
}

/// Row-major dense matrix used by the linear-algebra oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_sparse(h: &MagicSquareH) -> Self {
        let n = h.n();
        let mut data = vec![0.0; n * n];
        for (r, c, v) in h.entries() {
            data[r * n + c] = v;
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.get(r, c) * x[c]).sum()).collect()
    }

    pub fn mul_ivec(&self, b: &[i64]) -> Vec<f64> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.get(r, c) * b[c] as f64).sum()).collect()
    }

    /// Gauss–Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Self, OracleError> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
                .expect("non-empty range");
            if a[pivot * n + col].abs() < 1e-14 {
                return Err(OracleError::Singular);
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                    inv.swap(pivot * n + k, col * n + k);
                }
            }
            let p = a[col * n + col];
            for k in 0..n {
                a[col * n + k] /= p;
                inv[col * n + k] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[r * n + k] -= factor * a[col * n + k];
                    inv[r * n + k] -= factor * inv[col * n + k];
                }
            }
        }
        Ok(Self { n, data: inv })
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> f64 {
        let n = self.n;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
                .expect("non-empty range");
            let p = a[pivot * n + col];
            if p == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                }
                det = -det;
            }
            det *= p;
            for r in (col + 1)..n {
                let factor = a[r * n + col] / p;
                for k in col..n {
                    a[r * n + k] -= factor * a[col * n + k];
                }
            }
        }
        det
    }
}

/// Result of exhaustive nearest-lattice-point search.
#[derive(Debug, Clone, PartialEq)]
pub struct MlDecision {
    /// Integer vector of the closest lattice point in the box.
    pub b: Vec<i64>,
    /// Squared distance `‖y − G b‖²`.
    pub distance: f64,
    /// Smallest squared distance among box points with a coordinate on the
    /// box boundary.
    pub boundary_distance: f64,
}

impl MlDecision {
    /// True when a boundary point is within 1% of the best distance, so the
    /// true nearest point might lie outside the box.
    pub fn near_boundary(&self) -> bool {
        self.boundary_distance <= 1.01 * self.distance
    }
}

/// Exhaustive ML decoding: minimizes `‖y − G b‖²` over
/// `b ∈ [−radius, radius]ⁿ`, ties broken lexicographically.
pub fn ml_decode_bruteforce(h: &MagicSquareH, y: &[f64], box_radius: i64) -> Result<MlDecision, OracleError> {
    let n = h.n();
    if n > MAX_BRUTEFORCE_DIM {
        return Err(OracleError::DimensionTooLarge(n));
    }
    if y.len() != n {
        return Err(OracleError::LengthMismatch { expected: n, got: y.len() });
    }
    let g = DenseMatrix::from_sparse(h).inverse()?;
    // Columns of G, so that G b is accumulated incrementally.
    let cols: Vec<Vec<f64>> = (0..n).map(|c| (0..n).map(|r| g.get(r, c)).collect()).collect();
    let mut b = vec![-box_radius; n];
    let mut x: Vec<f64> = (0..n).map(|r| (0..n).map(|c| cols[c][r] * b[c] as f64).sum()).collect();
    let mut best = MlDecision { b: b.clone(), distance: f64::INFINITY, boundary_distance: f64::INFINITY };
    loop {
        let dist: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.distance {
            best.distance = dist;
            best.b.clone_from(&b);
        }
        if b.iter().any(|v| v.abs() == box_radius) && dist < best.boundary_distance {
            best.boundary_distance = dist;
        }
        // Odometer increment, last coordinate fastest: lexicographic order.
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            if b[k] < box_radius {
                b[k] += 1;
                for (xr, gr) in x.iter_mut().zip(&cols[k]) {
                    *xr += gr;
                }
                break;
            }
            let span = 2 * box_radius;
            b[k] = -box_radius;
            for (xr, gr) in x.iter_mut().zip(&cols[k]) {
                *xr -= gr * span as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_and_gaussians() {
        let v = adaptive_simpson(&|x: f64| x * x * x - x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let g = GaussianMixture::gaussian(0.3, 0.01).unwrap();
        let mass = integrate_over_support(&[&g], |z| mixture_pdf(&g, z), 1e-12).unwrap();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sd_of_identical_mixtures_is_tiny() {
        let f = GaussianMixture::from_triples(&[(0.0, 1.0, 0.4), (2.0, 0.5, 0.6)]).unwrap();
        assert!(quad_sd(&f, &f).unwrap() <= 1e-10);
    }

    #[test]
    fn moments_of_simple_mixtures() {
        let (m, v) = quad_moments(&GaussianMixture::gaussian(-1.5, 0.7).unwrap()).unwrap();
        assert!((m + 1.5).abs() < 1e-10 && (v - 0.7).abs() < 1e-10);
        let two = GaussianMixture::from_triples(&[(0.0, 1.0, 0.5), (2.0, 1.0, 0.5)]).unwrap();
        let (m, v) = quad_moments(&two).unwrap();
        assert!((m - 1.0).abs() < 1e-10 && (v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn moments_of_five_components_match_accumulation() {
        let t = [(0.0, 1.0, 0.1), (-2.0, 0.3, 0.2), (1.5, 0.05, 0.3), (4.0, 2.0, 0.25), (0.7, 0.6, 0.15)];
        let f = GaussianMixture::from_triples(&t).unwrap();
        let mean: f64 = t.iter().map(|(m, _, c)| c * m).sum();
        let second: f64 = t.iter().map(|(m, v, c)| c * (v + m * m)).sum();
        let (qm, qv) = quad_moments(&f).unwrap();
        assert!((qm - mean).abs() < 1e-10);
        assert!((qv - (second - mean * mean)).abs() < 1e-9);
    }

    #[test]
    fn grid_delta_convolution_shifts() {
        let step = 1.0 / 64.0;
        let f = GridFunction::sample(|z| normal_pdf(z, 0.0, 0.25), -4.0, 4.0, step).unwrap().normalized();
        // Unit mass spike at z = 1.
        let delta = GridFunction::new(1.0, step, vec![1.0 / step]).unwrap();
        let out = grid_convolve(&f, &delta).unwrap();
        for z in [-1.0, 0.5, 1.0, 1.75, 3.0] {
            assert!((out.at(z) - f.at(z - 1.0)).abs() < 1e-12, "z = {z}");
        }
        assert!(grid_convolve(&f, &GridFunction::new(0.0, 0.5, vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn grid_convolution_of_gaussians() {
        let step = 1.0 / 512.0;
        let a = GridFunction::sample(|z| normal_pdf(z, 0.0, 1.0), -10.0, 10.0, step).unwrap();
        let out = grid_convolve(&a, &a).unwrap();
        let l1: f64 =
            out.samples().iter().enumerate().map(|(i, s)| (s - normal_pdf(out.origin() + i as f64 * step, 0.0, 2.0)).abs()).sum::<f64>()
                * step;
        assert!(l1 <= 1e-4, "{l1}");
    }

    #[test]
    fn gauss_jordan_inverse() {
        let h = MagicSquareH::generate(6, 3, 3).unwrap();
        let dense = DenseMatrix::from_sparse(&h);
        let inv = dense.inverse().unwrap();
        for c in 0..6 {
            let e: Vec<f64> = (0..6).map(|r| inv.get(r, c)).collect();
            let col = dense.mul_vec(&e);
            for (r, v) in col.iter().enumerate() {
                let expected = if r == c { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12);
            }
        }
        assert!((dense.determinant().abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn brute_force_finds_exact_points() {
        let h = MagicSquareH::generate(4, 3, 5).unwrap();
        let g = DenseMatrix::from_sparse(&h).inverse().unwrap();
        let b = vec![1, -1, 0, 2];
        let y = g.mul_ivec(&b);
        let ml = ml_decode_bruteforce(&h, &y, 2).unwrap();
        assert_eq!(ml.b, b);
        assert!(ml.distance < 1e-20);
        let ml0 = ml_decode_bruteforce(&h, &[1e-4, -2e-4, 0.0, 3e-5], 2).unwrap();
        assert_eq!(ml0.b, vec![0; 4]);
        assert!(!ml0.near_boundary());
    }

    #[test]
    fn brute_force_rejects_large_dimensions() {
        let h = MagicSquareH::generate(11, 3, 0).unwrap();
        assert_eq!(ml_decode_bruteforce(&h, &[0.0; 11], 1), Err(OracleError::DimensionTooLarge(11)));
    }
}

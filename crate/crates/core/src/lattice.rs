//! Magic-square LDLC parity matrices.
//!
//! `H` is built as `Σ_i h_i · P_i ∘ S_i`: `d` row-to-column permutations that
//! never collide, each carrying one magnitude of `{1, 1/√d, …, 1/√d}` and an
//! independent random sign per entry. Every row and every column therefore
//! holds exactly the multiset `{h_1, …, h_d}` up to sign. The matrix is then
//! scaled so that `|det H| = 1`.
//!
//! Codewords are `x = G b` with `G = H⁻¹`; encoding solves `H x = b` and
//! decoding maps an estimate back with `b̂ = round(H x̂)`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MAX_ATTEMPTS: u64 = 100;
const MAX_PERMUTATION_DRAWS: usize = 20_000;
const ENCODE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("invalid dimensions: n = {n}, d = {d} (need n >= d >= 2)")]
    InvalidDimensions { n: usize, d: usize },
    #[error("no non-singular collision-free matrix found after {attempts} attempts")]
    GenerationExhausted { attempts: u64 },
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("encode failed: residual {residual:e} exceeds tolerance")]
    Encode { residual: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("malformed matrix: {0}")]
    Malformed(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The `h_1 = 1, h_i = 1/√d` magnitude sequence.
pub fn h_sequence(d: usize) -> Vec<f64> {
    let tail = 1.0 / (d as f64).sqrt();
    (0..d).map(|i| if i == 0 { 1.0 } else { tail }).collect()
}

/// A sparse `n × n` magic-square parity matrix with row/column degree `d`.
///
/// Edges are numbered row-major: edge `row * d + slot` is the `slot`-th
/// non-zero of `row`.
#[derive(Debug, Clone)]
pub struct MagicSquareH {
    n: usize,
    d: usize,
    edge_cols: Vec<usize>,
    edge_values: Vec<f64>,
    // Edge ids of each column, `d` per column, ordered by row.
    col_edges: Vec<usize>,
    h_sequence: Vec<f64>,
    global_scale: f64,
    lu: LU<f64, Dyn, Dyn>,
    log_abs_det: f64,
}

/// A lattice point `x = G b` together with its integer coordinates `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePoint {
    pub coords: Vec<f64>,
    pub integers: Vec<i64>,
}

impl MagicSquareH {
    /// Generates a normalized magic-square matrix, deterministic in `seed`.
    pub fn generate(n: usize, d: usize, seed: u64) -> Result<Self, LatticeError> {
        generate(n, d, seed)
    }

    /// Assembles a matrix from already-scaled `(row, col, value)` entries,
    /// checking the degree and magnitude invariants.
    pub fn from_entries(
        n: usize,
        d: usize,
        global_scale: f64,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self, LatticeError> {
        if d < 2 || n < d {
            return Err(LatticeError::InvalidDimensions { n, d });
        }
        if !(global_scale.is_finite() && global_scale > 0.0) {
            return Err(LatticeError::Malformed(format!("global scale {global_scale}")));
        }
        if entries.len() != n * d {
            return Err(LatticeError::Malformed(format!("expected {} entries, found {}", n * d, entries.len())));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(d); n];
        for &(r, c, v) in entries {
            if r >= n || c >= n {
                return Err(LatticeError::Malformed(format!("entry ({r}, {c}) out of range")));
            }
            if !v.is_finite() || v == 0.0 {
                return Err(LatticeError::Malformed(format!("entry ({r}, {c}) has value {v}")));
            }
            rows[r].push((c, v));
        }
        let h = h_sequence(d);
        let mut col_mags: Vec<Vec<f64>> = vec![Vec::with_capacity(d); n];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(LatticeError::Malformed(format!("row {r} has {} entries", row.len())));
            }
            let mut cols: Vec<usize> = row.iter().map(|e| e.0).collect();
            cols.sort_unstable();
            cols.dedup();
            if cols.len() != d {
                return Err(LatticeError::Malformed(format!("row {r} repeats a column")));
            }
            check_magnitudes(row.iter().map(|e| e.1.abs() / global_scale), &h)
                .map_err(|m| LatticeError::Malformed(format!("row {r}: {m}")))?;
            for &(c, v) in row.iter() {
                col_mags[c].push(v.abs() / global_scale);
            }
        }
        for (c, mags) in col_mags.iter().enumerate() {
            if mags.len() != d {
                return Err(LatticeError::Malformed(format!("column {c} has {} entries", mags.len())));
            }
            check_magnitudes(mags.iter().copied(), &h)
                .map_err(|m| LatticeError::Malformed(format!("column {c}: {m}")))?;
        }
        let mut edge_cols = Vec::with_capacity(n * d);
        let mut edge_values = Vec::with_capacity(n * d);
        for row in &rows {
            for &(c, v) in row {
                edge_cols.push(c);
                edge_values.push(v);
            }
        }
        Self::assemble(n, d, edge_cols, edge_values, h, global_scale)
    }

    fn assemble(
        n: usize,
        d: usize,
        edge_cols: Vec<usize>,
        edge_values: Vec<f64>,
        h_sequence: Vec<f64>,
        global_scale: f64,
    ) -> Result<Self, LatticeError> {
        // Slot order inside a row: largest magnitude first, then by column.
        let (mut edge_cols, mut edge_values) = (edge_cols, edge_values);
        for row in 0..n {
            let span = row * d..(row + 1) * d;
            let mut pairs: Vec<(usize, f64)> =
                edge_cols[span.clone()].iter().copied().zip(edge_values[span.clone()].iter().copied()).collect();
            pairs.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            for (k, (c, v)) in pairs.into_iter().enumerate() {
                edge_cols[row * d + k] = c;
                edge_values[row * d + k] = v;
            }
        }
        let dense = dense_from_edges(n, d, &edge_cols, &edge_values);
        let lu = dense.lu();
        let log_abs_det = log_abs_det(&lu);
        if !log_abs_det.is_finite() {
            return Err(LatticeError::Singular);
        }
        let mut col_edges = vec![Vec::with_capacity(d); n];
        for (e, &c) in edge_cols.iter().enumerate() {
            col_edges[c].push(e);
        }
        let col_edges = col_edges.into_iter().flatten().collect();
        Ok(Self { n, d, edge_cols, edge_values, col_edges, h_sequence, global_scale, lu, log_abs_det })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h_sequence(&self) -> &[f64] {
        &self.h_sequence
    }

    /// Factor applied to every entry so that `|det H| = 1`.
    pub fn global_scale(&self) -> f64 {
        self.global_scale
    }

    pub fn abs_det(&self) -> f64 {
        self.log_abs_det.exp()
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// Number of edges, `n · d`.
    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edge_cols.len()
    }

    #[inline]
    pub fn edge_row(&self, edge: usize) -> usize {
        edge / self.d
    }

    #[inline]
    pub fn edge_col(&self, edge: usize) -> usize {
        self.edge_cols[edge]
    }

    /// Signed, scaled matrix entry carried by `edge`.
    #[inline]
    pub fn edge_value(&self, edge: usize) -> f64 {
        self.edge_values[edge]
    }

    /// Edge ids of `row`, in slot order.
    #[inline]
    pub fn row_edges(&self, row: usize) -> std::ops::Range<usize> {
        row * self.d..(row + 1) * self.d
    }

    /// Edge ids of `col`, ordered by row.
    #[inline]
    pub fn col_edges(&self, col: usize) -> &[usize] {
        &self.col_edges[col * self.d..(col + 1) * self.d]
    }

    /// `(row, col, value)` for every non-zero, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.edge_count()).map(|e| (self.edge_row(e), self.edge_cols[e], self.edge_values[e]))
    }

    /// Sparse product `H · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, LatticeError> {
        self.check_len(x.len())?;
        Ok((0..self.n)
            .map(|r| self.row_edges(r).map(|e| self.edge_values[e] * x[self.edge_cols[e]]).sum())
            .collect())
    }

    /// Solves `H x = b` for the codeword of `b`.
    pub fn encode(&self, b: &[i64]) -> Result<LatticePoint, LatticeError> {
        encode(self, b)
    }

    /// `round(H · x)` with ties to even.
    pub fn round_to_integers(&self, x: &[f64]) -> Result<Vec<i64>, LatticeError> {
        round_to_integers(self, x)
    }

    /// Dense copy of `H`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        dense_from_edges(self.n, self.d, &self.edge_cols, &self.edge_values)
    }

    fn check_len(&self, got: usize) -> Result<(), LatticeError> {
        if got != self.n {
            return Err(LatticeError::LengthMismatch { expected: self.n, got });
        }
        Ok(())
    }

    /// Text format: a header `n d global_scale`, then one `row col value` line
    /// per non-zero.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {:.16e}", self.n, self.d, self.global_scale)?;
        for (r, c, v) in self.entries() {
            writeln!(out, "{r} {c} {v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, LatticeError> {
        let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('#') => None,
            other => Some((i + 1, other)),
        });
        let (line_no, header) = lines.next().ok_or_else(|| LatticeError::Malformed("empty file".into()))?;
        let header = header?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(LatticeError::Parse { line: line_no, message: "header must be `n d global_scale`".into() });
        }
        let n: usize = parse_field(fields[0], line_no)?;
        let d: usize = parse_field(fields[1], line_no)?;
        let scale: f64 = parse_field(fields[2], line_no)?;
        let mut entries = Vec::with_capacity(n * d);
        for (line_no, line) in lines {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(LatticeError::Parse { line: line_no, message: "expected `row col value`".into() });
            }
            entries.push((
                parse_field(fields[0], line_no)?,
                parse_field(fields[1], line_no)?,
                parse_field(fields[2], line_no)?,
            ));
        }
        Self::from_entries(n, d, scale, &entries)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, LatticeError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| LatticeError::Parse { line, message: format!("{s:?}: {e}") })
}

fn check_magnitudes(mags: impl Iterator<Item = f64>, h: &[f64]) -> Result<(), String> {
    let mut mags: Vec<f64> = mags.collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    for (m, &expected) in mags.iter().zip(h) {
        if (m - expected).abs() > 1e-9 * expected {
            return Err(format!("magnitudes {mags:?} do not match {h:?}"));
        }
    }
    Ok(())
}

fn dense_from_edges(n: usize, d: usize, cols: &[usize], values: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for (e, (&c, &v)) in cols.iter().zip(values).enumerate() {
        m[(e / d, c)] = v;
    }
    m
}

fn log_abs_det(lu: &LU<f64, Dyn, Dyn>) -> f64 {
    lu.u().diagonal().iter().map(|u| u.abs().ln()).sum()
}

/// Mixes `(seed, attempt)` into a fresh 64-bit stream key (SplitMix64 finalizer).
fn derive_seed(seed: u64, attempt: u64) -> u64 {
    let mut z = seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `d` row → column permutations such that no two agree on any row.
fn collision_free_permutations(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<usize>>> {
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(d);
    let mut candidate: Vec<usize> = (0..n).collect();
    for _ in 0..d {
        let mut found = false;
        for _ in 0..MAX_PERMUTATION_DRAWS {
            candidate.shuffle(rng);
            if perms.iter().all(|p| p.iter().zip(&candidate).all(|(a, b)| a != b)) {
                found = true;
                break;
            }
        }
        if !found {
            return None;
        }
        perms.push(candidate.clone());
    }
    Some(perms)
}

pub fn generate(n: usize, d: usize, seed: u64) -> Result<MagicSquareH, LatticeError> {
    if d < 2 || n < d {
        return Err(LatticeError::InvalidDimensions { n, d });
    }
    let h = h_sequence(d);
    // Entries are bounded by h_1 = 1, so |det| < 1e-9 · h_1ⁿ counts as singular.
    let singular_log = (1e-9f64).ln() + n as f64 * h[0].ln();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt));
        let Some(perms) = collision_free_permutations(n, d, &mut rng) else { continue };
        let mut edge_cols = Vec::with_capacity(n * d);
        let mut edge_values = Vec::with_capacity(n * d);
        for row in 0..n {
            for (slot, perm) in perms.iter().enumerate() {
                let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
                edge_cols.push(perm[row]);
                edge_values.push(sign * h[slot]);
            }
        }
        let raw_log_det = log_abs_det(&dense_from_edges(n, d, &edge_cols, &edge_values).lu());
        if !raw_log_det.is_finite() || raw_log_det < singular_log {
            continue;
        }
        let scale = (-raw_log_det / n as f64).exp();
        for v in edge_values.iter_mut() {
            *v *= scale;
        }
        return MagicSquareH::assemble(n, d, edge_cols, edge_values, h, scale);
    }
    Err(LatticeError::GenerationExhausted { attempts: MAX_ATTEMPTS })
}

pub fn encode(h: &MagicSquareH, b: &[i64]) -> Result<LatticePoint, LatticeError> {
    h.check_len(b.len())?;
    let rhs = DVector::from_iterator(h.n, b.iter().map(|&v| v as f64));
    let mut x = h.lu.solve(&rhs).ok_or(LatticeError::Singular)?;
    let mut residual = f64::INFINITY;
    // One or two rounds of iterative refinement bring the residual to roundoff.
    for _ in 0..3 {
        let hx = h.mul_vec(x.as_slice())?;
        let r = DVector::from_iterator(h.n, rhs.iter().zip(&hx).map(|(a, b)| a - b));
        residual = r.amax();
        if residual <= ENCODE_TOLERANCE * 1e-3 {
            break;
        }
        if let Some(dx) = h.lu.solve(&r) {
            x += dx;
        }
    }
    let hx = h.mul_vec(x.as_slice())?;
    residual = residual.min(rhs.iter().zip(&hx).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    if !(residual <= ENCODE_TOLERANCE) {
        return Err(LatticeError::Encode { residual });
    }
    Ok(LatticePoint { coords: x.as_slice().to_vec(), integers: b.to_vec() })
}

pub fn round_to_integers(h: &MagicSquareH, x: &[f64]) -> Result<Vec<i64>, LatticeError> {
    Ok(h.mul_vec(x)?.into_iter().map(|v| v.round_ties_even() as i64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degree_histograms(h: &MagicSquareH) -> (Vec<usize>, Vec<usize>) {
        let mut rows = vec![0; h.n()];
        let mut cols = vec![0; h.n()];
        for (r, c, _) in h.entries() {
            rows[r] += 1;
            cols[c] += 1;
        }
        (rows, cols)
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(generate(3, 4, 0), Err(LatticeError::InvalidDimensions { .. })));
        assert!(matches!(generate(5, 1, 0), Err(LatticeError::InvalidDimensions { .. })));
    }

    #[test]
    fn n_equals_d_magnitudes() {
        let h = generate(5, 5, 11).unwrap();
        let s = h.global_scale();
        let tail = 1.0 / 5f64.sqrt();
        for row in 0..5 {
            let mut mags: Vec<f64> = h.row_edges(row).map(|e| h.edge_value(e).abs() / s).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            assert!((mags[0] - 1.0).abs() < 1e-12);
            for m in &mags[1..] {
                assert!((m - tail).abs() < 1e-12);
            }
        }
        for col in 0..5 {
            let mut mags: Vec<f64> = h.col_edges(col).iter().map(|&e| h.edge_value(e).abs() / s).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            assert!((mags[0] - 1.0).abs() < 1e-12);
            assert!(mags[1..].iter().all(|m| (m - tail).abs() < 1e-12));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(100, 5, 42).unwrap();
        let b = generate(100, 5, 42).unwrap();
        assert_eq!(a.entries().collect::<Vec<_>>(), b.entries().collect::<Vec<_>>());
        let c = generate(100, 5, 43).unwrap();
        assert_ne!(a.entries().collect::<Vec<_>>(), c.entries().collect::<Vec<_>>());
    }

    #[test]
    fn degrees_are_regular() {
        let h = generate(6, 3, 9).unwrap();
        let (rows, cols) = degree_histograms(&h);
        assert!(rows.iter().chain(&cols).all(|&k| k == 3));
    }

    #[test]
    fn determinant_is_normalized() {
        for seed in 0..5 {
            let h = generate(100, 5, seed).unwrap();
            assert!((h.abs_det() - 1.0).abs() < 1e-6, "seed {seed}: {}", h.abs_det());
        }
    }

    #[test]
    fn zero_encodes_to_zero() {
        let h = generate(12, 3, 1).unwrap();
        let p = h.encode(&[0; 12]).unwrap();
        assert!(p.coords.iter().all(|&x| x == 0.0));
        assert_eq!(h.round_to_integers(&[0.0; 12]).unwrap(), vec![0; 12]);
    }

    #[test]
    fn encode_then_round_is_identity() {
        let h = generate(100, 5, 3).unwrap();
        let b: Vec<i64> = (0..100).map(|i| (i % 7) as i64 - 3).collect();
        let p = h.encode(&b).unwrap();
        assert_eq!(h.round_to_integers(&p.coords).unwrap(), b);
    }

    #[test]
    fn ties_round_to_even() {
        let s = 1.0 / 2f64.sqrt();
        let h = MagicSquareH::from_entries(2, 2, 1.0, &[(0, 0, 1.0), (0, 1, s), (1, 0, s), (1, 1, 1.0)]).unwrap();
        assert_eq!(h.round_to_integers(&[2.5, 0.0]).unwrap()[0], 2);
        assert_eq!(h.round_to_integers(&[3.5, 0.0]).unwrap()[0], 4);
        assert_eq!(h.round_to_integers(&[-0.5, 0.0]).unwrap()[0], 0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let h = generate(6, 3, 0).unwrap();
        assert!(matches!(h.encode(&[0; 5]), Err(LatticeError::LengthMismatch { expected: 6, got: 5 })));
        assert!(h.round_to_integers(&[0.0; 7]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let h = generate(20, 4, 8).unwrap();
        let mut buf = Vec::new();
        h.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 80);
        let back = MagicSquareH::read_from(&buf[..]).unwrap();
        assert_eq!(back.entries().collect::<Vec<_>>(), h.entries().collect::<Vec<_>>());
        assert_eq!(back.global_scale(), h.global_scale());
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(MagicSquareH::read_from("".as_bytes()).is_err());
        assert!(MagicSquareH::read_from("2 2 1.0\n0 0 1.0\n".as_bytes()).is_err());
        // Row 0 repeats column 0.
        let bad = "2 2 1.0\n0 0 1.0\n0 0 0.7071067811865476\n1 1 1.0\n1 0 0.7071067811865476\n";
        assert!(MagicSquareH::read_from(bad.as_bytes()).is_err());
    }
}

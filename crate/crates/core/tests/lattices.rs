use ldlc::lattice::{h_sequence, MagicSquareH};
use ldlc::oracle::{ml_decode_bruteforce, DenseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn encode_agrees_with_gauss_jordan_inverse() {
    for (n, d, seed) in [(6, 3, 1), (12, 3, 2), (20, 4, 3), (30, 5, 4)] {
        let h = MagicSquareH::generate(n, d, seed).unwrap();
        let g = DenseMatrix::from_sparse(&h).inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<i64> = (0..n).map(|_| rng.random_range(-5..=5)).collect();
        let fast = h.encode(&b).unwrap().coords;
        let slow = g.mul_ivec(&b);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn encode_then_round_over_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..100u64 {
        let n = rng.random_range(3..=12);
        let h = MagicSquareH::generate(n, 3, 1000 + trial).unwrap();
        let b: Vec<i64> = (0..n).map(|_| rng.random_range(-20..=20)).collect();
        let x = h.encode(&b).unwrap().coords;
        assert_eq!(h.round_to_integers(&x).unwrap(), b, "n = {n}, trial {trial}");
    }
}

#[test]
fn generated_matrix_shape() {
    let h = MagicSquareH::generate(100, 5, 11).unwrap();
    assert_eq!(h.edge_count(), 500);
    assert!((h.abs_det() - 1.0).abs() < 1e-9);
    let dense = DenseMatrix::from_sparse(&h);
    assert!((dense.determinant().abs() - 1.0).abs() < 1e-8);
    let seq = h_sequence(5);
    for row in 0..100 {
        let mut mags: Vec<f64> = h.row_edges(row).map(|e| h.edge_value(e).abs() / h.global_scale()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        for (m, s) in mags.iter().zip(&seq) {
            assert!((m - s).abs() < 1e-12);
        }
    }
    for col in 0..100 {
        assert_eq!(h.col_edges(col).len(), 5);
    }
}

#[test]
fn matrix_file_round_trip() {
    let h = MagicSquareH::generate(24, 4, 5).unwrap();
    let mut buf = Vec::new();
    h.write_to(&mut buf).unwrap();
    let back = MagicSquareH::read_from(buf.as_slice()).unwrap();
    assert_eq!(back.entries().collect::<Vec<_>>(), h.entries().collect::<Vec<_>>());
    assert_eq!(back.global_scale(), h.global_scale());
}

#[test]
fn bruteforce_ml_matches_sorted_enumeration() {
    let h = MagicSquareH::generate(4, 2, 3).unwrap();
    let g = DenseMatrix::from_sparse(&h).inverse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let radius = 2i64;
    let mut points = Vec::new();
    for a in -radius..=radius {
        for b in -radius..=radius {
            for c in -radius..=radius {
                for d in -radius..=radius {
                    let v = vec![a, b, c, d];
                    let x = g.mul_ivec(&v);
                    points.push((v, x));
                }
            }
        }
    }
    for _ in 0..50 {
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut dists: Vec<(f64, &Vec<i64>)> = points
            .iter()
            .map(|(v, x)| (x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum(), v))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ml = ml_decode_bruteforce(&h, &y, radius).unwrap();
        assert_eq!(&ml.b, dists[0].1);
        assert!((ml.distance - dists[0].0).abs() < 1e-12);
    }
}

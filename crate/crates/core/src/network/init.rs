use rand::Rng;
use rand_distr::StandardNormal;

/// Random `rows × cols` matrix (row-major) with orthonormal rows when
/// `rows <= cols`, orthonormal columns otherwise.
///
/// Gaussian vectors are orthonormalized with modified Gram-Schmidt, run
/// twice so the result stays orthonormal to working precision.
pub fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (count, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> =
        (0..count).map(|_| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();

    for i in 0..count {
        for _pass in 0..2 {
            let (done, rest) = vecs.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (x, &y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let norm = vecs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in vecs[i].iter_mut() {
            *x /= norm;
        }
    }

    if rows <= cols {
        vecs.concat()
    } else {
        let mut out = vec![0.0; rows * cols];
        for (c, v) in vecs.iter().enumerate() {
            for (r, &x) in v.iter().enumerate() {
                out[r * cols + c] = x;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn gram_error(m: &[f64], rows: usize, cols: usize) -> f64 {
        // compare the smaller Gram matrix against the identity
        let (n, by_rows) = if rows <= cols { (rows, true) } else { (cols, false) };
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = if by_rows {
                    (0..cols).map(|c| m[i * cols + c] * m[j * cols + c]).sum()
                } else {
                    (0..rows).map(|r| m[r * cols + i] * m[r * cols + j]).sum()
                };
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    #[test]
    fn rows_and_columns_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (r, c) in [(4, 9), (9, 4), (32, 75), (1, 5), (6, 6)] {
            let m = orthogonal_matrix(r, c, &mut rng);
            assert!(gram_error(&m, r, c) < 1e-12, "{r}x{c}");
        }
    }

    #[test]
    fn seeds_differ() {
        let a = orthogonal_matrix(4, 9, &mut ChaCha8Rng::seed_from_u64(1));
        let b = orthogonal_matrix(4, 9, &mut ChaCha8Rng::seed_from_u64(2));
        assert_ne!(a, b);
        assert!(gram_error(&b, 4, 9) < 1e-12);
    }

    #[test]
    fn singular_values_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(16, 27), (27, 16)] {
            let m = orthogonal_matrix(r, c, &mut rng);
            let svd = nalgebra::DMatrix::from_row_slice(r, c, &m).svd(false, false);
            for s in svd.singular_values.iter() {
                assert!((s - 1.0).abs() < 1e-5, "{s}");
            }
        }
    }
}

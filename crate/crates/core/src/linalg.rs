//! Small dense symmetric positive-definite solves.
//!
//! Plain scalar loops keep the floating-point summation order fixed, so
//! solutions are bit-identical across runs, allocations and thread counts.

/// Cholesky factorization `A = L Lᵀ` of a row-major `n × n` matrix, in place
/// (lower triangle holds `L`). Fails when a pivot is not positive or falls
/// below `rel_tol` times the largest diagonal entry.
pub(crate) fn cholesky(a: &mut [f64], n: usize, rel_tol: f64) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    let scale = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max);
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > rel_tol * scale) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / ljj;
        }
    }
    Some(())
}

/// Solves `L Lᵀ x = b` in place given the factor from [`cholesky`].
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * n + p] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in i + 1..n {
            s -= l[p * n + i] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves the SPD system `A x = b`; `None` when `A` is numerically singular.
pub(crate) fn solve_spd(mut a: Vec<f64>, n: usize, mut b: Vec<f64>, rel_tol: f64) -> Option<Vec<f64>> {
    cholesky(&mut a, n, rel_tol)?;
    cholesky_solve(&a, n, &mut b);
    b.iter().all(|v| v.is_finite()).then_some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_known_system() {
        // [[4, 2], [2, 3]] x = [2, 1] -> x = [0.5, 0]
        let x = solve_spd(vec![4.0, 2.0, 2.0, 3.0], 2, vec![2.0, 1.0], 0.0).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!(x[1].abs() < 1e-15);
    }

    #[test]
    fn matches_nalgebra_on_random_spd() {
        use rand::Rng;
        let mut g = crate::rng::seeded(5);
        for n in 1..8 {
            let m = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| g.gen_range(-1.0..1.0));
            let a = &m * m.transpose() + nalgebra::DMatrix::identity(n, n) * 0.5;
            let b = nalgebra::DVector::<f64>::from_fn(n, |_, _| g.gen_range(-1.0..1.0));
            let want = a.clone().lu().solve(&b).unwrap();
            let flat: Vec<f64> = (0..n * n).map(|i| a[(i / n, i % n)]).collect();
            let got = solve_spd(flat, n, b.iter().copied().collect(), 0.0).unwrap();
            for i in 0..n {
                assert!((got[i] - want[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_singular() {
        assert!(solve_spd(vec![1.0, 1.0, 1.0, 1.0], 2, vec![1.0, 1.0], 1e-12).is_none());
        assert!(solve_spd(vec![0.0], 1, vec![1.0], 0.0).is_none());
    }
}

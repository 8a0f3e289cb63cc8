//! Kronecker-product decomposition: the rearrangement operator, optimal
//! rank-k approximation via its SVD, truncation tails, and factored
//! matrix-vector application.

use crate::error::{Error, Result};
use crate::matlin::{self, gemm_nn_acc, gemm_nt_acc, kron, svd, Flops, Matrix};

/// Factorization `(m1·m2) × (n1·n2)` of a matrix into `m1 × n1` left factors
/// and `m2 × n2` right factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KpShape {
    pub m1: usize,
    pub n1: usize,
    pub m2: usize,
    pub n2: usize,
}

impl KpShape {
    pub fn new(m1: usize, n1: usize, m2: usize, n2: usize) -> Result<Self> {
        if m1 == 0 || n1 == 0 || m2 == 0 || n2 == 0 {
            return Err(Error::Param(format!(
                "Kronecker shape entries must be positive, got ({m1},{n1},{m2},{n2})"
            )));
        }
        Ok(Self { m1, n1, m2, n2 })
    }

    /// Shape of the full matrix being factored.
    pub fn full(&self) -> (usize, usize) {
        (self.m1 * self.m2, self.n1 * self.n2)
    }

    /// Shape of the rearranged matrix.
    pub fn rearranged(&self) -> (usize, usize) {
        (self.m1 * self.n1, self.m2 * self.n2)
    }

    /// Largest meaningful Kronecker rank.
    pub fn max_rank(&self) -> usize {
        (self.m1 * self.n1).min(self.m2 * self.n2)
    }

    fn check(&self, w: &Matrix, context: &str) -> Result<()> {
        if w.shape() != self.full() {
            return Err(Error::shape(context, w.shape(), self.full()));
        }
        Ok(())
    }
}

/// Rank-k list of Kronecker factor pairs with the full rearrangement spectrum.
#[derive(Debug, Clone)]
pub struct KpdFactors {
    pub shape: KpShape,
    pub pairs: Vec<(Matrix, Matrix)>,
    pub sigma: Vec<f64>,
}

impl KpdFactors {
    pub fn rank(&self) -> usize {
        self.pairs.len()
    }

    /// Keeps the leading `k` pairs.
    pub fn truncate(&self, k: usize) -> Result<KpdFactors> {
        if k == 0 || k > self.pairs.len() {
            return Err(Error::Param(format!("rank {k} outside 1..={}", self.pairs.len())));
        }
        Ok(KpdFactors {
            shape: self.shape,
            pairs: self.pairs[..k].to_vec(),
            sigma: self.sigma.clone(),
        })
    }

    /// Dense `Σⱼ Leftⱼ ⊗ Rightⱼ`.
    pub fn reconstruct(&self) -> Matrix {
        let (r, c) = self.shape.full();
        let mut out = Matrix::zeros(r, c);
        for (l, rt) in &self.pairs {
            out.axpy(1.0, &kron(l, rt));
        }
        out
    }

    /// Truncation tail for the current rank.
    pub fn epsilon(&self) -> f64 {
        epsilon_trunc(&self.sigma, self.rank())
    }
}

/// Rearranges `w` so that block `(i₁, j₁)` (numbered column-major over the
/// `m1 × n1` block grid) becomes row `i₁ + j₁·m1`, holding `vec` of the block.
pub fn rearrange(w: &Matrix, shape: KpShape) -> Result<Matrix> {
    shape.check(w, "rearrange")?;
    let KpShape { m1, n1, m2, n2 } = shape;
    let mut out = Matrix::zeros(m1 * n1, m2 * n2);
    for j1 in 0..n1 {
        for j2 in 0..n2 {
            let wcol = w.col(j1 * n2 + j2);
            for i1 in 0..m1 {
                let row = i1 + j1 * m1;
                for i2 in 0..m2 {
                    out.set(row, i2 + j2 * m2, wcol[i1 * m2 + i2]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`rearrange`].
pub fn unrearrange(r: &Matrix, shape: KpShape) -> Result<Matrix> {
    if r.shape() != shape.rearranged() {
        return Err(Error::shape("unrearrange", r.shape(), shape.rearranged()));
    }
    let KpShape { m1, n1, m2, n2 } = shape;
    let mut w = Matrix::zeros(m1 * m2, n1 * n2);
    for j1 in 0..n1 {
        for j2 in 0..n2 {
            for i1 in 0..m1 {
                for i2 in 0..m2 {
                    w.set(i1 * m2 + i2, j1 * n2 + j2, r.get(i1 + j1 * m1, i2 + j2 * m2));
                }
            }
        }
    }
    Ok(w)
}

/// Full-rank decomposition: every singular triplet of the rearrangement.
/// Truncate with [`KpdFactors::truncate`] to avoid repeating the SVD.
pub fn kpd_full(w: &Matrix, shape: KpShape) -> Result<KpdFactors> {
    let r = rearrange(w, shape)?;
    let s = svd(&r)?;
    let KpShape { m1, n1, m2, n2 } = shape;
    let pairs = (0..s.sigma.len())
        .map(|j| {
            let left: Vec<f64> = s.u.col(j).iter().map(|x| x * s.sigma[j]).collect();
            let left = matlin::mat(&left, m1, n1)?;
            let right = matlin::mat(s.v.col(j), m2, n2)?;
            Ok((left, right))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KpdFactors {
        shape,
        pairs,
        sigma: s.sigma,
    })
}

/// Optimal rank-`k` Kronecker approximation of `w` in the Frobenius norm.
pub fn kpd_approx(w: &Matrix, shape: KpShape, k: usize) -> Result<KpdFactors> {
    shape.check(w, "kpd_approx")?;
    if k == 0 || k > shape.max_rank() {
        return Err(Error::Param(format!(
            "rank {k} outside 1..={} for shape {shape:?}",
            shape.max_rank()
        )));
    }
    kpd_full(w, shape)?.truncate(k)
}

/// `(Σⱼ Leftⱼ ⊗ Rightⱼ) x` without forming the Kronecker product, as
/// `vec(Σⱼ Rightⱼ · mat(x, n2, n1) · Leftⱼᵀ)`. Each pair is applied in
/// whichever association order is cheaper for its shape.
pub fn kp_apply(factors: &KpdFactors, x: &[f64], flops: &mut Flops) -> Result<Vec<f64>> {
    let KpShape { m1, n1, m2, n2 } = factors.shape;
    let xm = matlin::mat(x, n2, n1)?;
    let mut out = Matrix::zeros(m2, m1);
    // (R X) Lᵀ costs 2·m2·n1·(n2 + m1); R (X Lᵀ) costs 2·m1·n2·(n1 + m2).
    let right_first = m2 * n1 * (n2 + m1) <= m1 * n2 * (n1 + m2);
    for (i, (l, r)) in factors.pairs.iter().enumerate() {
        let mut term = Matrix::zeros(m2, m1);
        if right_first {
            let mut rx = Matrix::zeros(m2, n1);
            gemm_nn_acc(r, &xm, &mut rx, flops);
            gemm_nt_acc(&rx, l, &mut term, flops);
        } else {
            let mut xl = Matrix::zeros(n2, m1);
            gemm_nt_acc(&xm, l, &mut xl, flops);
            gemm_nn_acc(r, &xl, &mut term, flops);
        }
        if i == 0 {
            out = term;
        } else {
            matlin::add_assign(&mut out, &term, flops);
        }
    }
    Ok(out.into_vec())
}

/// `√(Σ_{i>k} σᵢ²)`; zero when `k ≥ sigma.len()`.
pub fn epsilon_trunc(sigma: &[f64], k: usize) -> f64 {
    sigma.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlin::{frob, matmul, vec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn dense_apply(w: &Matrix, x: &[f64]) -> Vec<f64> {
        let xm = Matrix::from_col_major(x.len(), 1, x.to_vec()).unwrap();
        matmul(w, &xm, &mut Flops::new()).unwrap().into_vec()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rearrange_kron_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random(3, 2, &mut rng);
        let r = random(2, 4, &mut rng);
        let shape = KpShape::new(3, 2, 2, 4).unwrap();
        let got = rearrange(&kron(&l, &r), shape).unwrap();
        let expect = Matrix::from_fn(6, 8, |i, j| vec(&l)[i] * vec(&r)[j]);
        assert!(got.max_abs_diff(&expect) <= 1e-14);
    }

    #[test]
    fn rearrange_degenerate_blocks() {
        let w = Matrix::from_rows(&[[1.0, 3.0], [2.0, 4.0]]);
        let got = rearrange(&w, KpShape::new(2, 2, 1, 1).unwrap()).unwrap();
        assert_eq!(got.shape(), (4, 1));
        assert_eq!(got.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rearrange_inverse_by_block_reassembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(6, 6, &mut rng);
        let shape = KpShape::new(2, 3, 3, 2).unwrap();
        let r = rearrange(&w, shape).unwrap();
        // Independent reassembly: row b of r is vec of block (b % m1, b / m1).
        let mut back = Matrix::zeros(6, 6);
        for b in 0..6 {
            let (i1, j1) = (b % 2, b / 2);
            let block = matlin::mat(&r.row(b), 3, 2).unwrap();
            for i2 in 0..3 {
                for j2 in 0..2 {
                    back.set(i1 * 3 + i2, j1 * 2 + j2, block.get(i2, j2));
                }
            }
        }
        assert_eq!(back, w);
        assert_eq!(unrearrange(&r, shape).unwrap(), w);
    }

    #[test]
    fn rearrange_rejects_wrong_shape() {
        let err = rearrange(&Matrix::zeros(5, 4), KpShape::new(2, 2, 2, 2).unwrap());
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn exact_kronecker_input_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = random(3, 4, &mut rng);
        let r = random(2, 5, &mut rng);
        let w = kron(&l, &r);
        let f = kpd_approx(&w, KpShape::new(3, 4, 2, 5).unwrap(), 1).unwrap();
        let err = frob(&f.reconstruct().sub(&w).unwrap());
        assert!(err <= 1e-10 * frob(&w));
    }

    #[test]
    fn two_term_orthogonal_factors() {
        let l1 = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let l2 = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let r1 = Matrix::from_rows(&[[1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        let r2 = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, -1.0, 2.0]]);
        let mut w = kron(&l1, &r1);
        w.axpy(1.0, &kron(&l2, &r2));
        let f = kpd_approx(&w, KpShape::new(2, 2, 2, 3).unwrap(), 2).unwrap();
        let err = frob(&f.reconstruct().sub(&w).unwrap());
        assert!(err <= 1e-9 * frob(&w));
    }

    #[test]
    fn truncation_error_matches_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(4, 4, &mut rng);
        let f = kpd_approx(&w, KpShape::new(2, 2, 2, 2).unwrap(), 1).unwrap();
        let measured = f.reconstruct().sub(&w).unwrap().frob_sq();
        let tail: f64 = f.sigma[1..].iter().map(|s| s * s).sum();
        assert!((measured - tail).abs() <= 1e-9 * tail);
        assert!((epsilon_trunc(&f.sigma, 1).powi(2) - measured).abs() <= 1e-9 * measured);
    }

    #[test]
    fn rank_out_of_range() {
        let w = Matrix::zeros(4, 4);
        let s = KpShape::new(2, 2, 2, 2).unwrap();
        assert!(matches!(kpd_approx(&w, s, 0), Err(Error::Param(_))));
        assert!(matches!(kpd_approx(&w, s, 5), Err(Error::Param(_))));
    }

    #[test]
    fn epsilon_examples() {
        assert!((epsilon_trunc(&[3.0, 2.0, 1.0], 1) - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(epsilon_trunc(&[3.0, 2.0, 1.0], 3), 0.0);
        assert_eq!(epsilon_trunc(&[3.0, 2.0, 1.0], 7), 0.0);
    }

    #[test]
    fn kp_apply_identity() {
        let i2 = Matrix::identity(2);
        let f = KpdFactors {
            shape: KpShape::new(2, 2, 2, 2).unwrap(),
            pairs: vec![(i2.clone(), i2)],
            sigma: vec![2.0, 0.0, 0.0, 0.0],
        };
        let x = [1.0, -2.0, 3.5, 4.0];
        assert_eq!(kp_apply(&f, &x, &mut Flops::new()).unwrap(), x);
    }

    #[test]
    fn kp_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = KpShape::new(3, 4, 2, 5).unwrap();
        let l = random(3, 4, &mut rng);
        let r = random(2, 5, &mut rng);
        let f = KpdFactors {
            shape,
            pairs: vec![(l.clone(), r.clone())],
            sigma: vec![],
        };
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = kp_apply(&f, &x, &mut Flops::new()).unwrap();
        assert!(max_diff(&got, &dense_apply(&kron(&l, &r), &x)) <= 1e-12);

        let shape = KpShape::new(3, 3, 3, 3).unwrap();
        let pairs: Vec<_> = (0..3)
            .map(|_| (random(3, 3, &mut rng), random(3, 3, &mut rng)))
            .collect();
        let f = KpdFactors {
            shape,
            pairs,
            sigma: vec![],
        };
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = kp_apply(&f, &x, &mut Flops::new()).unwrap();
        assert!(max_diff(&got, &dense_apply(&f.reconstruct(), &x)) <= 1e-11);
        assert!(kp_apply(&f, &x[..8], &mut Flops::new()).is_err());
    }

    fn shape_strategy() -> impl Strategy<Value = (usize, usize, usize, usize)> {
        (1usize..=5, 1usize..=5, 1usize..=5, 1usize..=5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fast_apply_identity((m1, n1, m2, n2) in shape_strategy(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random(m1, n1, &mut rng);
            let r = random(m2, n2, &mut rng);
            let x: Vec<f64> = (0..n1 * n2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dense = dense_apply(&kron(&l, &r), &x);
            let xm = matlin::mat(&x, n2, n1).unwrap();
            let mut f = Flops::new();
            let rx = matmul(&r, &xm, &mut f).unwrap();
            let via = vec(&matlin::matmul_nt(&rx, &l, &mut f).unwrap());
            prop_assert!(max_diff(&dense, &via) <= 1e-12);
        }

        #[test]
        fn rearrangement_is_isometry((m1, n1, m2, n2) in shape_strategy(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(m1 * m2, n1 * n2, &mut rng);
            let s = KpShape::new(m1, n1, m2, n2).unwrap();
            let r = rearrange(&w, s).unwrap();
            prop_assert!((frob(&r) - frob(&w)).abs() <= 1e-12);
            prop_assert_eq!(unrearrange(&r, s).unwrap(), w);
        }

        #[test]
        fn epsilon_non_increasing((m1, n1, m2, n2) in shape_strategy(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(m1 * m2, n1 * n2, &mut rng);
            let f = kpd_full(&w, KpShape::new(m1, n1, m2, n2).unwrap()).unwrap();
            for k in 0..f.sigma.len() {
                prop_assert!(epsilon_trunc(&f.sigma, k + 1) <= epsilon_trunc(&f.sigma, k));
            }
        }

        #[test]
        fn factored_apply_is_cheaper((m1, n1, m2, n2) in (2usize..=8, 2usize..=8, 2usize..=8, 2usize..=8)) {
            let shape = KpShape::new(m1, n1, m2, n2).unwrap();
            let f = KpdFactors {
                shape,
                pairs: vec![(Matrix::zeros(m1, n1), Matrix::zeros(m2, n2))],
                sigma: vec![],
            };
            let mut flops = Flops::new();
            kp_apply(&f, &vec![0.0; n1 * n2], &mut flops).unwrap();
            let dense = 2 * (m1 * m2 * n1 * n2) as u64;
            // With every factor dimension equal to 2 both association orders
            // cost exactly as much as the dense product.
            if (m1, n1, m2, n2) == (2, 2, 2, 2) {
                prop_assert_eq!(flops.get(), dense);
            } else {
                prop_assert!(flops.get() < dense);
            }
        }
    }
}

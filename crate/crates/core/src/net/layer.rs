//! Layer parameter sets and their forward maps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matlin::{add_assign, gemm_nn_acc, Flops, Matrix};
use crate::net::arch::Quad;
use crate::net::Activation;

/// How the summands of a Kronecker layer are combined with the outer
/// activation `φ₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Combine {
    /// `Σᵢ φ₁(Z_Rⁱ)`: activate every summand, then add.
    #[default]
    ActivateEach,
    /// `φ₁(Σᵢ Z_Rⁱ)`: add the summands, then activate once. This is the form
    /// under which a truncated dense layer embeds exactly.
    ActivateSum,
}

impl Combine {
    pub fn name(self) -> &'static str {
        match self {
            Combine::ActivateEach => "activate-each",
            Combine::ActivateSum => "activate-sum",
        }
    }
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activate-each" | "each" => Ok(Combine::ActivateEach),
            "activate-sum" | "sum" => Ok(Combine::ActivateSum),
            other => Err(Error::Param(format!(
                "unknown combine mode '{other}' (expected activate-each or activate-sum)"
            ))),
        }
    }
}

/// Affine layer `a ↦ φ(W a + b)` on column vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub w: Matrix,
    /// `out × 1`
    pub b: Matrix,
}

/// One Kronecker summand of a KDL layer mapping `p × q` to `u × v`.
#[derive(Debug, Clone, PartialEq)]
pub struct KdlSummand {
    /// `q × v`
    pub w_l: Matrix,
    /// `p × v`
    pub b_l: Matrix,
    /// `u × p`
    pub w_r: Matrix,
    /// `u × v`
    pub b_r: Matrix,
}

impl KdlSummand {
    pub fn zeros(p: usize, q: usize, u: usize, v: usize) -> Self {
        Self {
            w_l: Matrix::zeros(q, v),
            b_l: Matrix::zeros(p, v),
            w_r: Matrix::zeros(u, p),
            b_r: Matrix::zeros(u, v),
        }
    }
}

/// Kronecker dual layer: `Σᵢ` of `Z_R = W_R φ₂(A W_L + B_L) + B_R`, combined
/// with the outer activation per [`Combine`].
#[derive(Debug, Clone, PartialEq)]
pub struct KdlLayer {
    pub summands: Vec<KdlSummand>,
}

impl KdlLayer {
    pub fn rank(&self) -> usize {
        self.summands.len()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        let s = &self.summands[0];
        (s.b_l.rows(), s.w_l.rows())
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.summands[0].b_r.shape()
    }
}

/// Row-slice parameters of a KML branch (stages one and two).
#[derive(Debug, Clone, PartialEq)]
pub struct KmlRowStage {
    /// `Q2 × V2`
    pub w1: Matrix,
    /// `Q1 × V2`
    pub b1: Matrix,
    /// `V1 × Q1`
    pub w2: Matrix,
    /// `V1 × V2`
    pub b2: Matrix,
}

/// Column-slice parameters of a KML branch (stages three and four).
#[derive(Debug, Clone, PartialEq)]
pub struct KmlColStage {
    /// `P2 × U2`
    pub w3: Matrix,
    /// `P1 × U2`
    pub b3: Matrix,
    /// `U1 × P1`
    pub w4: Matrix,
    /// `U1 × U2`
    pub b4: Matrix,
}

/// One summand of a KML layer with separate parameters for each of the `P`
/// input rows and `V` output columns.
#[derive(Debug, Clone, PartialEq)]
pub struct KmlBranch {
    pub rows: Vec<KmlRowStage>,
    pub cols: Vec<KmlColStage>,
}

/// Kronecker multi-layer mapping a `((P1,P2),(Q1,Q2))` node to a
/// `((U1,U2),(V1,V2))` node through four Kronecker-factored stages.
///
/// For each input row `j`, `M = mat(A(j,:), Q1, Q2)` goes through
/// `Z₁ = M W₁ + B₁`, `Z₂ = W₂ φ₂(Z₁) + B₂` and becomes row `j` of the
/// `P × V` intermediate `A₂ = φ₂(vec Z₂)ᵀ`. For each intermediate column
/// `c`, `N = mat(A₂(:,c), P1, P2)` goes through `Z₃ = N W₃ + B₃`,
/// `Z₄ = W₄ φ₂(Z₃) + B₄`, and `vec Z₄` is column `c` of the branch output.
#[derive(Debug, Clone, PartialEq)]
pub struct KmlLayer {
    pub input: Quad,
    pub output: Quad,
    pub branches: Vec<KmlBranch>,
}

impl KmlLayer {
    pub fn zeros(input: Quad, output: Quad, rank: usize) -> Self {
        let (p1, p2) = input.rows;
        let (q1, q2) = input.cols;
        let (u1, u2) = output.rows;
        let (v1, v2) = output.cols;
        let branch = KmlBranch {
            rows: (0..p1 * p2)
                .map(|_| KmlRowStage {
                    w1: Matrix::zeros(q2, v2),
                    b1: Matrix::zeros(q1, v2),
                    w2: Matrix::zeros(v1, q1),
                    b2: Matrix::zeros(v1, v2),
                })
                .collect(),
            cols: (0..v1 * v2)
                .map(|_| KmlColStage {
                    w3: Matrix::zeros(p2, u2),
                    b3: Matrix::zeros(p1, u2),
                    w4: Matrix::zeros(u1, p1),
                    b4: Matrix::zeros(u1, u2),
                })
                .collect(),
        };
        Self {
            input,
            output,
            branches: vec![branch; rank],
        }
    }

    pub fn rank(&self) -> usize {
        self.branches.len()
    }
}

/// Parameters of one network layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Kdl(KdlLayer),
    Kml(KmlLayer),
}

/// Name and indices identifying one parameter matrix inside a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTag {
    pub name: &'static str,
    pub index: Vec<usize>,
}

impl Layer {
    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            Layer::Dense(d) => (d.w.cols(), 1),
            Layer::Kdl(k) => k.input_shape(),
            Layer::Kml(k) => k.input.shape(),
        }
    }

    pub fn output_shape(&self) -> (usize, usize) {
        match self {
            Layer::Dense(d) => (d.w.rows(), 1),
            Layer::Kdl(k) => k.output_shape(),
            Layer::Kml(k) => k.output.shape(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Layer::Dense(_) => 1,
            Layer::Kdl(k) => k.rank(),
            Layer::Kml(k) => k.rank(),
        }
    }

    /// Visits every parameter matrix in a fixed order together with its
    /// tag and whether it is a weight (as opposed to a bias).
    pub fn visit(&self, mut f: impl FnMut(ParamTag, bool, &Matrix)) {
        let tag = |name, index: &[usize]| ParamTag {
            name,
            index: index.to_vec(),
        };
        match self {
            Layer::Dense(d) => {
                f(tag("W", &[]), true, &d.w);
                f(tag("b", &[]), false, &d.b);
            }
            Layer::Kdl(k) => {
                for (i, s) in k.summands.iter().enumerate() {
                    f(tag("W_L", &[i]), true, &s.w_l);
                    f(tag("B_L", &[i]), false, &s.b_l);
                    f(tag("W_R", &[i]), true, &s.w_r);
                    f(tag("B_R", &[i]), false, &s.b_r);
                }
            }
            Layer::Kml(k) => {
                for (i, br) in k.branches.iter().enumerate() {
                    for (j, r) in br.rows.iter().enumerate() {
                        f(tag("W1", &[i, j]), true, &r.w1);
                        f(tag("B1", &[i, j]), false, &r.b1);
                        f(tag("W2", &[i, j]), true, &r.w2);
                        f(tag("B2", &[i, j]), false, &r.b2);
                    }
                    for (c, s) in br.cols.iter().enumerate() {
                        f(tag("W3", &[i, c]), true, &s.w3);
                        f(tag("B3", &[i, c]), false, &s.b3);
                        f(tag("W4", &[i, c]), true, &s.w4);
                        f(tag("B4", &[i, c]), false, &s.b4);
                    }
                }
            }
        }
    }

    /// Mutable counterpart of [`Layer::visit`], in the same order.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Layer::Dense(d) => vec![&mut d.w, &mut d.b],
            Layer::Kdl(k) => k
                .summands
                .iter_mut()
                .flat_map(|s| [&mut s.w_l, &mut s.b_l, &mut s.w_r, &mut s.b_r])
                .collect(),
            Layer::Kml(k) => {
                let mut out = Vec::new();
                for br in &mut k.branches {
                    for r in &mut br.rows {
                        out.extend([&mut r.w1, &mut r.b1, &mut r.w2, &mut r.b2]);
                    }
                    for s in &mut br.cols {
                        out.extend([&mut s.w3, &mut s.b3, &mut s.w4, &mut s.b4]);
                    }
                }
                out
            }
        }
    }

    /// Parameter matrices in [`Layer::visit`] order.
    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            Layer::Dense(d) => vec![&d.w, &d.b],
            Layer::Kdl(k) => k
                .summands
                .iter()
                .flat_map(|s| [&s.w_l, &s.b_l, &s.w_r, &s.b_r])
                .collect(),
            Layer::Kml(k) => {
                let mut out = Vec::new();
                for br in &k.branches {
                    for r in &br.rows {
                        out.extend([&r.w1, &r.b1, &r.w2, &r.b2]);
                    }
                    for s in &br.cols {
                        out.extend([&s.w3, &s.b3, &s.w4, &s.b4]);
                    }
                }
                out
            }
        }
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> Layer {
        let mut z = self.clone();
        for m in z.params_mut() {
            m.fill(0.0);
        }
        z
    }

    pub fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, m| n += m.len());
        n
    }

    /// Forward map on one sample, retaining intermediates for backprop.
    pub fn forward(
        &self,
        a: &Matrix,
        outer: Activation,
        inner: Activation,
        combine: Combine,
        flops: &mut Flops,
    ) -> Result<(Matrix, Cache)> {
        if a.shape() != self.input_shape() {
            return Err(Error::shape("layer input", a.shape(), self.input_shape()));
        }
        Ok(match self {
            Layer::Dense(d) => {
                let (out, c) = dense_forward(d, a, outer, flops);
                (out, Cache::Dense(c))
            }
            Layer::Kdl(k) => {
                let (out, c) = kdl_forward_impl(k, a, outer, inner, combine, flops);
                (out, Cache::Kdl(c))
            }
            Layer::Kml(k) => {
                let (out, c) = kml_forward_impl(k, a, outer, inner, combine, flops);
                (out, Cache::Kml(c))
            }
        })
    }
}

/// Intermediates of one layer's forward pass on one sample.
#[derive(Debug, Clone)]
pub enum Cache {
    Dense(DenseCache),
    Kdl(KdlCache),
    Kml(KmlCache),
}

impl Cache {
    /// Every pre-activation matrix recorded by the pass.
    pub fn pre_activations(&self) -> Vec<&Matrix> {
        match self {
            Cache::Dense(c) => vec![&c.z],
            Cache::Kdl(c) => c.z_l.iter().chain(&c.z_r).chain(c.z_sum.as_ref()).collect(),
            Cache::Kml(c) => c
                .branches
                .iter()
                .flat_map(|b| b.z1.iter().chain(&b.z2).chain(&b.z3).chain(std::iter::once(&b.z4)))
                .chain(c.z_sum.as_ref())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub a: Matrix,
    pub z: Matrix,
}

#[derive(Debug, Clone)]
pub struct KdlCache {
    pub a: Matrix,
    pub z_l: Vec<Matrix>,
    pub a_l: Vec<Matrix>,
    pub z_r: Vec<Matrix>,
    /// `Σᵢ Z_Rⁱ`, present under [`Combine::ActivateSum`].
    pub z_sum: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct KmlBranchCache {
    pub z1: Vec<Matrix>,
    pub a1: Vec<Matrix>,
    pub z2: Vec<Matrix>,
    /// `P × V` intermediate after stage two.
    pub a2: Matrix,
    pub z3: Vec<Matrix>,
    pub a3: Vec<Matrix>,
    /// `U × V`; column `c` is `vec Z₄` of column slice `c`.
    pub z4: Matrix,
}

#[derive(Debug, Clone)]
pub struct KmlCache {
    pub a: Matrix,
    pub branches: Vec<KmlBranchCache>,
    pub z_sum: Option<Matrix>,
}

/// `b + x·w` with flops for the product and the bias addition.
pub(crate) fn affine_right(x: &Matrix, w: &Matrix, b: &Matrix, flops: &mut Flops) -> Matrix {
    let mut z = b.clone();
    gemm_nn_acc(x, w, &mut z, flops);
    flops.add(z.len());
    z
}

/// `b + w·x` with flops for the product and the bias addition.
pub(crate) fn affine_left(w: &Matrix, x: &Matrix, b: &Matrix, flops: &mut Flops) -> Matrix {
    let mut z = b.clone();
    gemm_nn_acc(w, x, &mut z, flops);
    flops.add(z.len());
    z
}

fn dense_forward(d: &DenseLayer, a: &Matrix, phi: Activation, flops: &mut Flops) -> (Matrix, DenseCache) {
    let z = affine_left(&d.w, a, &d.b, flops);
    let out = phi.apply(&z);
    (out, DenseCache { a: a.clone(), z })
}

/// Combines per-summand pre-activations into the layer output.
fn combine_outputs(z: &[&Matrix], outer: Activation, combine: Combine, flops: &mut Flops) -> (Matrix, Option<Matrix>) {
    match combine {
        Combine::ActivateEach => {
            let mut out = outer.apply(z[0]);
            for zi in &z[1..] {
                add_assign(&mut out, &outer.apply(zi), flops);
            }
            (out, None)
        }
        Combine::ActivateSum => {
            let mut sum = z[0].clone();
            for zi in &z[1..] {
                add_assign(&mut sum, zi, flops);
            }
            (outer.apply(&sum), Some(sum))
        }
    }
}

fn kdl_forward_impl(
    layer: &KdlLayer,
    a: &Matrix,
    outer: Activation,
    inner: Activation,
    combine: Combine,
    flops: &mut Flops,
) -> (Matrix, KdlCache) {
    let k = layer.rank();
    let mut z_l = Vec::with_capacity(k);
    let mut a_l = Vec::with_capacity(k);
    let mut z_r = Vec::with_capacity(k);
    for s in &layer.summands {
        let zl = affine_right(a, &s.w_l, &s.b_l, flops);
        let al = inner.apply(&zl);
        let zr = affine_left(&s.w_r, &al, &s.b_r, flops);
        z_l.push(zl);
        a_l.push(al);
        z_r.push(zr);
    }
    let refs: Vec<&Matrix> = z_r.iter().collect();
    let (out, z_sum) = combine_outputs(&refs, outer, combine, flops);
    (
        out,
        KdlCache {
            a: a.clone(),
            z_l,
            a_l,
            z_r,
            z_sum,
        },
    )
}

/// Row `j` of `a` reshaped column-major to `rows × cols`.
pub(crate) fn row_as_matrix(a: &Matrix, j: usize, rows: usize, cols: usize) -> Matrix {
    let p = a.rows();
    let data: Vec<f64> = (0..a.cols()).map(|c| a.as_slice()[j + c * p]).collect();
    Matrix::from_col_major(rows, cols, data).expect("row length matches reshape")
}

/// Column `c` of `a` reshaped column-major to `rows × cols`.
pub(crate) fn col_as_matrix(a: &Matrix, c: usize, rows: usize, cols: usize) -> Matrix {
    Matrix::from_col_major(rows, cols, a.col(c).to_vec()).expect("column length matches reshape")
}

fn kml_forward_impl(
    layer: &KmlLayer,
    a: &Matrix,
    outer: Activation,
    inner: Activation,
    combine: Combine,
    flops: &mut Flops,
) -> (Matrix, KmlCache) {
    let (p1, p2) = layer.input.rows;
    let (q1, q2) = layer.input.cols;
    let (p, v) = (p1 * p2, layer.output.cols.0 * layer.output.cols.1);
    let u = layer.output.rows.0 * layer.output.rows.1;
    let mut caches = Vec::with_capacity(layer.rank());
    for br in &layer.branches {
        let mut z1 = Vec::with_capacity(p);
        let mut a1 = Vec::with_capacity(p);
        let mut z2 = Vec::with_capacity(p);
        let mut a2 = Matrix::zeros(p, v);
        for (j, st) in br.rows.iter().enumerate() {
            let m = row_as_matrix(a, j, q1, q2);
            let z = affine_right(&m, &st.w1, &st.b1, flops);
            let act = inner.apply(&z);
            let zz = affine_left(&st.w2, &act, &st.b2, flops);
            for (c, &val) in zz.as_slice().iter().enumerate() {
                a2.set(j, c, inner.value(val));
            }
            z1.push(z);
            a1.push(act);
            z2.push(zz);
        }
        let mut z3 = Vec::with_capacity(v);
        let mut a3 = Vec::with_capacity(v);
        let mut z4 = Matrix::zeros(u, v);
        for (c, st) in br.cols.iter().enumerate() {
            let n = col_as_matrix(&a2, c, p1, p2);
            let z = affine_right(&n, &st.w3, &st.b3, flops);
            let act = inner.apply(&z);
            let zz = affine_left(&st.w4, &act, &st.b4, flops);
            z4.col_mut(c).copy_from_slice(zz.as_slice());
            z3.push(z);
            a3.push(act);
        }
        caches.push(KmlBranchCache {
            z1,
            a1,
            z2,
            a2,
            z3,
            a3,
            z4,
        });
    }
    let refs: Vec<&Matrix> = caches.iter().map(|c| &c.z4).collect();
    let (out, z_sum) = combine_outputs(&refs, outer, combine, flops);
    (
        out,
        KmlCache {
            a: a.clone(),
            branches: caches,
            z_sum,
        },
    )
}

/// Forward pass of a single KDL layer on a `p × q` input.
pub fn kdl_forward(
    layer: &KdlLayer,
    a: &Matrix,
    phi1: Activation,
    phi2: Activation,
    combine: Combine,
    flops: &mut Flops,
) -> Result<(Matrix, KdlCache)> {
    if a.shape() != layer.input_shape() {
        return Err(Error::shape("KDL layer input", a.shape(), layer.input_shape()));
    }
    Ok(kdl_forward_impl(layer, a, phi1, phi2, combine, flops))
}

/// Forward pass of a single KML layer.
pub fn kml_forward(
    layer: &KmlLayer,
    a: &Matrix,
    phi1: Activation,
    phi2: Activation,
    combine: Combine,
    flops: &mut Flops,
) -> Result<(Matrix, KmlCache)> {
    if a.shape() != layer.input.shape() {
        return Err(Error::shape("KML layer input", a.shape(), layer.input.shape()));
    }
    Ok(kml_forward_impl(layer, a, phi1, phi2, combine, flops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlin::{kron, matmul, vec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_kdl(p: usize, q: usize, u: usize, v: usize, k: usize, rng: &mut ChaCha8Rng) -> KdlLayer {
        KdlLayer {
            summands: (0..k)
                .map(|_| KdlSummand {
                    w_l: random(q, v, rng),
                    b_l: random(p, v, rng),
                    w_r: random(u, p, rng),
                    b_r: random(u, v, rng),
                })
                .collect(),
        }
    }

    #[test]
    fn zero_kdl_relu_gives_zero() {
        let layer = KdlLayer {
            summands: vec![KdlSummand::zeros(2, 3, 4, 5)],
        };
        let a = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let (out, _) = kdl_forward(
            &layer,
            &a,
            Activation::Relu,
            Activation::Tanh,
            Combine::ActivateEach,
            &mut Flops::new(),
        )
        .unwrap();
        assert_eq!(out, Matrix::zeros(4, 5));
    }

    #[test]
    fn linear_rank_one_is_kronecker_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = random_kdl(3, 4, 2, 5, 1, &mut rng);
        layer.summands[0].b_l.fill(0.0);
        let a = random(3, 4, &mut rng);
        let (out, _) = kdl_forward(
            &layer,
            &a,
            Activation::Linear,
            Activation::Linear,
            Combine::ActivateEach,
            &mut Flops::new(),
        )
        .unwrap();
        let s = &layer.summands[0];
        let k = kron(&s.w_l.transpose(), &s.w_r);
        let x = Matrix::from_col_major(12, 1, vec(&a)).unwrap();
        let mut expect = matmul(&k, &x, &mut Flops::new()).unwrap().into_vec();
        for (e, b) in expect.iter_mut().zip(s.b_r.as_slice()) {
            *e += b;
        }
        let diff = out
            .as_slice()
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12);
    }

    #[test]
    fn rank_two_is_sum_of_rank_one_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let layer = random_kdl(2, 3, 3, 2, 2, &mut rng);
        let a = random(2, 3, &mut rng);
        let mut f = Flops::new();
        let (act, phi) = (Activation::Sigmoid, Activation::Tanh);
        let (both, _) = kdl_forward(&layer, &a, act, phi, Combine::ActivateEach, &mut f).unwrap();
        let mut sum = Matrix::zeros(3, 2);
        for s in &layer.summands {
            let single = KdlLayer {
                summands: vec![s.clone()],
            };
            let (o, _) = kdl_forward(&single, &a, act, phi, Combine::ActivateEach, &mut f).unwrap();
            sum.axpy(1.0, &o);
        }
        assert!(both.max_abs_diff(&sum) <= 1e-14);

        // Summing first instead activates the total pre-activation.
        let (pooled, _) = kdl_forward(&layer, &a, Activation::Linear, phi, Combine::ActivateSum, &mut f).unwrap();
        let (each, _) = kdl_forward(&layer, &a, Activation::Linear, phi, Combine::ActivateEach, &mut f).unwrap();
        assert!(pooled.max_abs_diff(&each) <= 1e-14);
    }

    #[test]
    fn kdl_forward_flops() {
        let layer = KdlLayer {
            summands: vec![KdlSummand::zeros(28, 28, 5, 2)],
        };
        let mut f = Flops::new();
        kdl_forward(
            &layer,
            &Matrix::zeros(28, 28),
            Activation::Tanh,
            Activation::Tanh,
            Combine::ActivateEach,
            &mut f,
        )
        .unwrap();
        assert_eq!(f.get(), 2 * 28 * 28 * 2 + 28 * 2 + 2 * 5 * 28 * 2 + 5 * 2);
    }

    #[test]
    fn kdl_shape_error() {
        let layer = KdlLayer {
            summands: vec![KdlSummand::zeros(2, 3, 4, 5)],
        };
        let err = kdl_forward(
            &layer,
            &Matrix::zeros(3, 2),
            Activation::Tanh,
            Activation::Tanh,
            Combine::ActivateEach,
            &mut Flops::new(),
        );
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    fn quad(r: (usize, usize), c: (usize, usize)) -> Quad {
        Quad { rows: r, cols: c }
    }

    fn randomize(layer: &mut Layer, rng: &mut ChaCha8Rng) {
        for m in layer.params_mut() {
            for x in m.as_mut_slice() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
    }

    #[test]
    fn zero_kml_relu_gives_zero() {
        let layer = KmlLayer::zeros(quad((2, 2), (3, 1)), quad((1, 2), (2, 2)), 2);
        let a = Matrix::from_fn(4, 3, |i, j| (i * j) as f64 + 1.0);
        let (out, _) = kml_forward(
            &layer,
            &a,
            Activation::Relu,
            Activation::Relu,
            Combine::ActivateEach,
            &mut Flops::new(),
        )
        .unwrap();
        assert_eq!(out, Matrix::zeros(2, 4));
    }

    #[test]
    fn degenerate_kml_is_kdl() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (p, q, u, v) = (3, 4, 2, 5);
        let mut kml = KmlLayer::zeros(quad((p, 1), (q, 1)), quad((u, 1), (v, 1)), 2);
        let mut kdl = KdlLayer { summands: Vec::new() };
        for br in &mut kml.branches {
            // Share parameters across slices so the collapse is a plain pair.
            let w1 = rng.random_range(-1.0..1.0);
            let w2 = random(v, q, &mut rng);
            let b2 = random(v, 1, &mut rng);
            let w3 = rng.random_range(-1.0..1.0);
            let w4 = random(u, p, &mut rng);
            let b4 = random(u, 1, &mut rng);
            for st in &mut br.rows {
                st.w1.set(0, 0, w1);
                st.w2 = w2.clone();
                st.b2 = b2.clone();
            }
            for st in &mut br.cols {
                st.w3.set(0, 0, w3);
                st.w4 = w4.clone();
                st.b4 = b4.clone();
            }
            kdl.summands.push(KdlSummand {
                w_l: w2.transpose().scale(w1),
                b_l: Matrix::from_fn(p, v, |_, c| b2.get(c, 0)),
                w_r: w4.scale(w3),
                b_r: Matrix::from_fn(u, v, |i, _| b4.get(i, 0)),
            });
        }
        let a = random(p, q, &mut rng);
        for combine in [Combine::ActivateEach, Combine::ActivateSum] {
            let mut f = Flops::new();
            let (got, _) = kml_forward(&kml, &a, Activation::Tanh, Activation::Linear, combine, &mut f).unwrap();
            let (expect, _) = kdl_forward(&kdl, &a, Activation::Tanh, Activation::Linear, combine, &mut f).unwrap();
            assert!(got.max_abs_diff(&expect) <= 1e-12);
        }
    }

    /// Literal index-loop evaluation of the four-stage recursion.
    #[allow(clippy::needless_range_loop)]
    fn kml_oracle(layer: &KmlLayer, a: &Matrix, outer: Activation, inner: Activation) -> Matrix {
        let (p1, p2) = layer.input.rows;
        let (q1, q2) = layer.input.cols;
        let (u1, u2) = layer.output.rows;
        let (v1, v2) = layer.output.cols;
        let mut out = Matrix::zeros(u1 * u2, v1 * v2);
        for br in &layer.branches {
            let mut a2 = Matrix::zeros(p1 * p2, v1 * v2);
            for (j, st) in br.rows.iter().enumerate() {
                let m = |x: usize, y: usize| a.get(j, x + y * q1);
                let mut a1 = vec![vec![0.0; v2]; q1];
                for x in 0..q1 {
                    for c in 0..v2 {
                        let mut s = st.b1.get(x, c);
                        for y in 0..q2 {
                            s += m(x, y) * st.w1.get(y, c);
                        }
                        a1[x][c] = inner.value(s);
                    }
                }
                for d in 0..v1 {
                    for c in 0..v2 {
                        let mut s = st.b2.get(d, c);
                        for x in 0..q1 {
                            s += st.w2.get(d, x) * a1[x][c];
                        }
                        a2.set(j, d + c * v1, inner.value(s));
                    }
                }
            }
            for (c, st) in br.cols.iter().enumerate() {
                let n = |x: usize, y: usize| a2.get(x + y * p1, c);
                let mut a3 = vec![vec![0.0; u2]; p1];
                for x in 0..p1 {
                    for e in 0..u2 {
                        let mut s = st.b3.get(x, e);
                        for y in 0..p2 {
                            s += n(x, y) * st.w3.get(y, e);
                        }
                        a3[x][e] = inner.value(s);
                    }
                }
                for f in 0..u1 {
                    for e in 0..u2 {
                        let mut s = st.b4.get(f, e);
                        for x in 0..p1 {
                            s += st.w4.get(f, x) * a3[x][e];
                        }
                        let r = f + e * u1;
                        out.set(r, c, out.get(r, c) + outer.value(s));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn kml_matches_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut layer = Layer::Kml(KmlLayer::zeros(quad((2, 2), (3, 2)), quad((2, 1), (2, 3)), 2));
        randomize(&mut layer, &mut rng);
        let Layer::Kml(kml) = layer else { unreachable!() };
        let a = random(4, 6, &mut rng);
        let (got, _) = kml_forward(
            &kml,
            &a,
            Activation::Tanh,
            Activation::Sigmoid,
            Combine::ActivateEach,
            &mut Flops::new(),
        )
        .unwrap();
        let expect = kml_oracle(&kml, &a, Activation::Tanh, Activation::Sigmoid);
        assert!(got.max_abs_diff(&expect) <= 1e-13);
    }
}

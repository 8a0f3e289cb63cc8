use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kpd::{kpd_full, KpShape, KpdFactors};
use crate::matlin::{self, Flops, Matrix};
use crate::net::arch::{ArchKind, ArchSpec, LayerSpec, Node};
use crate::net::layer::{Cache, Combine, DenseLayer, KdlLayer, KdlSummand, KmlLayer, Layer};
use crate::net::Activation;

/// Activation choices of a network: `phi1` is the outer activation of
/// hidden layers, `phi2` the inner activation of Kronecker layers, and
/// `phi_out` the outer activation of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Activations {
    pub phi1: Activation,
    pub phi2: Activation,
    pub phi_out: Activation,
}

impl Activations {
    /// Uses `phi1` for the output layer as well.
    pub fn new(phi1: Activation, phi2: Activation) -> Self {
        Self {
            phi1,
            phi2,
            phi_out: phi1,
        }
    }

    pub fn with_output(mut self, phi_out: Activation) -> Self {
        self.phi_out = phi_out;
        self
    }
}

impl Default for Activations {
    fn default() -> Self {
        Self::new(Activation::default(), Activation::default())
    }
}

/// Ordered layer parameters plus the settings needed to evaluate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ArchSpec,
    pub layers: Vec<Layer>,
    pub acts: Activations,
    pub combine: Combine,
    pub seed: u64,
}

fn zero_layer(input: Node, spec: &LayerSpec) -> Result<Layer> {
    Ok(match (input, *spec) {
        (Node::Vector(n), LayerSpec::Dense { width }) => Layer::Dense(DenseLayer {
            w: Matrix::zeros(width, n),
            b: Matrix::zeros(width, 1),
        }),
        (Node::Matrix(p, q), LayerSpec::Kdl { rows: u, cols: v, rank }) => Layer::Kdl(KdlLayer {
            summands: (0..rank).map(|_| KdlSummand::zeros(p, q, u, v)).collect(),
        }),
        (Node::Quad(a), LayerSpec::Kml { shape, rank }) => Layer::Kml(KmlLayer::zeros(a, shape, rank)),
        (node, spec) => {
            return Err(Error::UnsupportedMix(format!(
                "layer {spec:?} cannot follow node {node}"
            )))
        }
    })
}

/// Uniform on the open interval `(-s, s)` with `s = √(6 / (rows + cols))`.
fn glorot_fill(m: &mut Matrix, rng: &mut ChaCha8Rng) {
    let s = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    for x in m.as_mut_slice() {
        *x = loop {
            let v = rng.random_range(-s..s);
            if v != -s {
                break v;
            }
        };
    }
}

impl Network {
    /// All-zero network with the structure of `spec`.
    pub fn zeros(spec: &ArchSpec, acts: Activations, combine: Combine) -> Result<Self> {
        if spec.layers.iter().any(|l| l.rank() == 0) {
            return Err(Error::Param("Kronecker ranks must be at least 1".into()));
        }
        let nodes = spec.nodes();
        let layers = nodes
            .iter()
            .zip(&spec.layers)
            .map(|(&n, l)| zero_layer(n, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            layers,
            acts,
            combine,
            seed: 0,
        })
    }

    /// Weights drawn uniformly from `(-s, s)`, `s = √(6/(rows+cols))` per
    /// matrix, biases zero, all from a ChaCha8 stream seeded with `seed`.
    pub fn init(spec: &ArchSpec, acts: Activations, combine: Combine, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec, acts, combine)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let mut weights = Vec::new();
            layer.visit(|_, is_weight, _| weights.push(is_weight));
            for (m, is_weight) in layer.params_mut().into_iter().zip(weights) {
                if is_weight {
                    glorot_fill(m, &mut rng);
                }
            }
        }
        Ok(net)
    }

    pub fn kind(&self) -> ArchKind {
        self.spec.kind()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::rank).collect()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.spec.input.shape()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.spec.output().shape()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.len()
    }

    pub fn output_len(&self) -> usize {
        self.spec.output().len()
    }

    /// Number of stored scalars.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::scalar_count).sum()
    }

    /// Outer activation of layer `l`.
    pub fn outer_activation(&self, l: usize) -> Activation {
        if l + 1 == self.layers.len() {
            self.acts.phi_out
        } else {
            self.acts.phi1
        }
    }

    /// Checks that the layers agree with the spec and hold finite values.
    pub fn validate(&self) -> Result<()> {
        let reference = Network::zeros(&self.spec, self.acts, self.combine)?;
        if reference.layers.len() != self.layers.len() {
            return Err(Error::State("layer count differs from spec".into()));
        }
        for (l, (a, b)) in self.layers.iter().zip(&reference.layers).enumerate() {
            let (pa, pb) = (a.params(), b.params());
            if pa.len() != pb.len() || pa.iter().zip(&pb).any(|(x, y)| x.shape() != y.shape()) {
                return Err(Error::State(format!("layer {l} does not match the spec")));
            }
            if pa.iter().any(|m| !m.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {l}")));
            }
        }
        Ok(())
    }

    /// Reshapes a sample to the input node shape, column-major.
    pub fn prepare_input(&self, x: &Matrix) -> Result<Matrix> {
        let (r, c) = self.input_shape();
        if x.shape() == (r, c) {
            return Ok(x.clone());
        }
        if x.len() != r * c {
            return Err(Error::shape("network input (layer 0)", x.shape(), (r, c)));
        }
        x.clone().reshape(r, c)
    }

    /// Forward pass of layer `l` alone.
    pub fn layer_forward(&self, l: usize, a: &Matrix, flops: &mut Flops) -> Result<(Matrix, Cache)> {
        let layer = &self.layers[l];
        if a.shape() != layer.input_shape() {
            return Err(Error::shape(
                format!("input of layer {l}"),
                a.shape(),
                layer.input_shape(),
            ));
        }
        layer.forward(a, self.outer_activation(l), self.acts.phi2, self.combine, flops)
    }

    /// Full forward pass keeping every layer's intermediates.
    pub fn forward_cached(&self, x: &Matrix, flops: &mut Flops) -> Result<(Matrix, Vec<Cache>)> {
        let mut a = self.prepare_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let (out, cache) = self.layer_forward(l, &a, flops)?;
            caches.push(cache);
            a = out;
        }
        Ok((a, caches))
    }

    pub fn forward(&self, x: &Matrix, flops: &mut Flops) -> Result<Matrix> {
        Ok(self.forward_cached(x, flops)?.0)
    }

    /// Forward pass on a flat sample of `input_len()` values.
    pub fn forward_slice(&self, x: &[f64], flops: &mut Flops) -> Result<Matrix> {
        let (r, c) = self.input_shape();
        if x.len() != r * c {
            return Err(Error::shape("network input (layer 0)", (x.len(), 1), (r, c)));
        }
        self.forward(&matlin::mat(x, r, c)?, flops)
    }

    /// Appends one summand to every KDL layer with standard-normal weights
    /// rescaled to Frobenius norm `weight_norm` and zero biases.
    pub fn add_kdl_summand(&mut self, rng: &mut impl Rng, weight_norm: f64) -> Result<()> {
        if self.kind() != ArchKind::Kdl {
            return Err(Error::Param("summand insertion needs a KDL network".into()));
        }
        for (layer, spec) in self.layers.iter_mut().zip(&mut self.spec.layers) {
            let Layer::Kdl(k) = layer else {
                unreachable!("KDL spec holds KDL layers")
            };
            let (p, q) = k.input_shape();
            let (u, v) = k.output_shape();
            let mut s = KdlSummand::zeros(p, q, u, v);
            for w in [&mut s.w_l, &mut s.w_r] {
                for x in w.as_mut_slice() {
                    *x = rng.sample(StandardNormal);
                }
                let n = matlin::frob(w);
                if n > 0.0 {
                    w.scale_in_place(weight_norm / n);
                }
            }
            k.summands.push(s);
            spec.set_rank(k.rank());
        }
        Ok(())
    }
}

/// Builds a network with `phi_out = phi1` and summands activated separately.
pub fn init_network(spec: &ArchSpec, phi1: Activation, phi2: Activation, seed: u64) -> Result<Network> {
    Network::init(spec, Activations::new(phi1, phi2), Combine::ActivateEach, seed)
}

/// Forward pass returning per-layer caches.
pub fn network_forward(net: &Network, x: &Matrix, flops: &mut Flops) -> Result<(Matrix, Vec<Cache>)> {
    net.forward_cached(x, flops)
}

/// A dense network re-expressed as a KDL network by truncated Kronecker
/// decomposition of each weight matrix.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub net: Network,
    /// Per layer, the retained factors with the full rearrangement spectrum.
    pub factors: Vec<KpdFactors>,
}

impl Embedding {
    /// Per-layer truncation tails at the embedded ranks.
    pub fn epsilons(&self) -> Vec<f64> {
        self.factors.iter().map(KpdFactors::epsilon).collect()
    }
}

/// KDL node sequence implied by per-layer factor shapes.
pub fn kdl_spec_for_shapes(shapes: &[KpShape], ranks: &[usize]) -> Result<ArchSpec> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::Param("at least one factor shape is required".into()))?;
    for (l, w) in shapes.windows(2).enumerate() {
        if (w[0].m2, w[0].m1) != (w[1].n2, w[1].n1) {
            return Err(Error::shape(
                format!("factor shapes of layers {l} and {}", l + 1),
                (w[0].m2, w[0].m1),
                (w[1].n2, w[1].n1),
            ));
        }
    }
    Ok(ArchSpec {
        input: Node::Matrix(first.n2, first.n1),
        layers: shapes
            .iter()
            .zip(ranks)
            .map(|(s, &rank)| LayerSpec::Kdl {
                rows: s.m2,
                cols: s.m1,
                rank,
            })
            .collect(),
    })
}

/// Full-rank Kronecker decompositions of every weight matrix of a dense
/// network, computed once so that embeddings at several ranks can share them.
pub fn fnn_factors(fnn: &Network, shapes: &[KpShape]) -> Result<Vec<KpdFactors>> {
    if fnn.kind() != ArchKind::Dense {
        return Err(Error::Param("embedding source must be a dense network".into()));
    }
    if shapes.len() != fnn.layers.len() {
        return Err(Error::Param(format!(
            "{} factor shapes given for {} layers",
            shapes.len(),
            fnn.layers.len()
        )));
    }
    kdl_spec_for_shapes(shapes, &vec![1; shapes.len()])?;
    fnn.layers
        .iter()
        .zip(shapes)
        .enumerate()
        .map(|(l, (layer, &shape))| {
            let Layer::Dense(d) = layer else {
                unreachable!("dense spec holds dense layers")
            };
            if d.w.shape() != shape.full() {
                return Err(Error::shape(
                    format!("weight of layer {l} vs factor shape"),
                    d.w.shape(),
                    shape.full(),
                ));
            }
            kpd_full(&d.w, shape)
        })
        .collect()
}

/// Embeds a dense network at rank `k` (clamped per layer to the largest
/// available rank) from precomputed full factors: `W_Lⁱ = Leftᵢᵀ`,
/// `W_Rⁱ = Rightᵢ`, `B_Lⁱ = 0`, `B_R¹ = mat(b)`, remaining `B_R` zero.
/// Summands are pooled before the outer activation so that the full-rank
/// embedding reproduces the dense map exactly when `phi2` is linear.
pub fn embed_factors(fnn: &Network, full: &[KpdFactors], k: usize, phi2: Activation) -> Result<Embedding> {
    if k == 0 {
        return Err(Error::Param("embedding rank must be at least 1".into()));
    }
    let shapes: Vec<KpShape> = full.iter().map(|f| f.shape).collect();
    let ranks: Vec<usize> = full.iter().map(|f| k.min(f.rank())).collect();
    let spec = kdl_spec_for_shapes(&shapes, &ranks)?;
    let acts = Activations {
        phi1: fnn.acts.phi1,
        phi2,
        phi_out: fnn.acts.phi_out,
    };
    let mut layers = Vec::with_capacity(full.len());
    let mut factors = Vec::with_capacity(full.len());
    for ((layer, f), &r) in fnn.layers.iter().zip(full).zip(&ranks) {
        let Layer::Dense(d) = layer else {
            return Err(Error::Param("embedding source must be a dense network".into()));
        };
        let f = f.truncate(r)?;
        let KpShape { m1, m2, n2, .. } = f.shape;
        let (p, u, v) = (n2, m2, m1);
        let summands = f
            .pairs
            .iter()
            .enumerate()
            .map(|(i, (left, right))| {
                let b_r = if i == 0 {
                    matlin::mat(d.b.as_slice(), u, v)?
                } else {
                    Matrix::zeros(u, v)
                };
                Ok(KdlSummand {
                    w_l: left.transpose(),
                    b_l: Matrix::zeros(p, v),
                    w_r: right.clone(),
                    b_r,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer::Kdl(KdlLayer { summands }));
        factors.push(f);
    }
    Ok(Embedding {
        net: Network {
            spec,
            layers,
            acts,
            combine: Combine::ActivateSum,
            seed: fnn.seed,
        },
        factors,
    })
}

/// Truncation embedding of a dense network into a KDL network of rank `k`.
pub fn fnn_to_kdl(fnn: &Network, shapes: &[KpShape], k: usize, phi2: Activation) -> Result<Embedding> {
    let full = fnn_factors(fnn, shapes)?;
    embed_factors(fnn, &full, k, phi2)
}

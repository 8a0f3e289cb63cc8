//! Architecture notation: parsing, rendering, parameter counting, and
//! derived architectures.
//!
//! ```text
//! spec := item (sep item)+
//! item := INT | '(' INT ',' INT ')' | '(' '(' INT ',' INT ')' ',' '(' INT ',' INT ')' ')'
//! sep  := '|' | '|^' INT
//! ```
//!
//! The integer after `^` is the Kronecker rank of the transition into the
//! item that follows it. Whitespace is insignificant.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kpd::KpShape;

/// Row and column factorizations of a matrix-shaped node refined for a
/// Kronecker multi-layer: `((r1, r2), (c1, c2))` is an `(r1·r2) × (c1·c2)` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quad {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl Quad {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.0 * self.rows.1, self.cols.0 * self.cols.1)
    }
}

/// Shape of one node layer of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Vector(usize),
    Matrix(usize, usize),
    Quad(Quad),
}

impl Node {
    /// Matrix shape of the state held at this node (vectors are columns).
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            Node::Vector(n) => (n, 1),
            Node::Matrix(r, c) => (r, c),
            Node::Quad(q) => q.shape(),
        }
    }

    pub fn len(&self) -> usize {
        let (r, c) = self.shape();
        r * c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Vector(n) => write!(f, "{n}"),
            Node::Matrix(r, c) => write!(f, "({r},{c})"),
            Node::Quad(q) => write!(f, "(({},{}),({},{}))", q.rows.0, q.rows.1, q.cols.0, q.cols.1),
        }
    }
}

/// One transition of the network, described by the node it produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Dense { width: usize },
    Kdl { rows: usize, cols: usize, rank: usize },
    Kml { shape: Quad, rank: usize },
}

impl LayerSpec {
    pub fn output(&self) -> Node {
        match *self {
            LayerSpec::Dense { width } => Node::Vector(width),
            LayerSpec::Kdl { rows, cols, .. } => Node::Matrix(rows, cols),
            LayerSpec::Kml { shape, .. } => Node::Quad(shape),
        }
    }

    pub fn rank(&self) -> usize {
        match *self {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Kdl { rank, .. } | LayerSpec::Kml { rank, .. } => rank,
        }
    }

    pub(crate) fn set_rank(&mut self, k: usize) {
        match self {
            LayerSpec::Dense { .. } => {}
            LayerSpec::Kdl { rank, .. } | LayerSpec::Kml { rank, .. } => *rank = k,
        }
    }
}

/// Layer family of a homogeneous architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Dense,
    Kdl,
    Kml,
}

/// Parameter counting convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Convention {
    /// Every stored weight and bias entry, once.
    UniqueScalars,
    /// Weight edges between node layers plus node biases, with the summed
    /// output bias of a Kronecker layer counted once.
    Connections,
}

/// Parsed architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub input: Node,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Parses the architecture notation.
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).spec()
    }

    /// Builds a dense spec from node widths.
    pub fn dense(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Param(format!(
                "dense spec needs at least two positive widths, got {widths:?}"
            )));
        }
        Ok(Self {
            input: Node::Vector(widths[0]),
            layers: widths[1..].iter().map(|&width| LayerSpec::Dense { width }).collect(),
        })
    }

    pub fn kind(&self) -> ArchKind {
        match self.input {
            Node::Vector(_) => ArchKind::Dense,
            Node::Matrix(..) => ArchKind::Kdl,
            Node::Quad(_) => ArchKind::Kml,
        }
    }

    /// Node shapes from input to output.
    pub fn nodes(&self) -> Vec<Node> {
        std::iter::once(self.input)
            .chain(self.layers.iter().map(LayerSpec::output))
            .collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(LayerSpec::rank).collect()
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub fn output(&self) -> Node {
        self.layers.last().map_or(self.input, LayerSpec::output)
    }

    /// Same architecture with every Kronecker rank replaced by `k`.
    pub fn with_rank(&self, k: usize) -> ArchSpec {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.set_rank(k);
        }
        out
    }

    /// Kronecker factor shapes under which a dense weight matrix for each
    /// transition embeds into this KDL architecture.
    ///
    /// A transition from `p × q` to `u × v` acts on `vec(A)` through
    /// `W_Lᵀ ⊗ W_R`, so its factor shape is `(m1, n1, m2, n2) = (v, q, u, p)`.
    pub fn kp_shapes(&self) -> Result<Vec<KpShape>> {
        if self.kind() != ArchKind::Kdl {
            return Err(Error::Param(
                "Kronecker factor shapes are defined for KDL architectures only".into(),
            ));
        }
        self.nodes()
            .windows(2)
            .map(|w| {
                let (p, q) = w[0].shape();
                let (u, v) = w[1].shape();
                KpShape::new(v, q, u, p)
            })
            .collect()
    }

    /// Dense architecture with the same node counts as this one, where each
    /// KDL transition contributes its `k·p·v` intermediate nodes.
    pub fn extended_fnn(&self) -> Result<ArchSpec> {
        if self.kind() != ArchKind::Kdl {
            return Err(Error::Param(
                "extended dense architectures are derived from KDL specs only".into(),
            ));
        }
        let nodes = self.nodes();
        let mut widths = vec![nodes[0].len()];
        for (w, layer) in nodes.windows(2).zip(&self.layers) {
            let (p, _) = w[0].shape();
            let (u, v) = w[1].shape();
            widths.push(layer.rank() * p * v);
            widths.push(u * v);
        }
        ArchSpec::dense(&widths)
    }

    /// Number of trainable parameters under `convention`.
    pub fn count_params(&self, convention: Convention) -> u64 {
        let nodes = self.nodes();
        let mut total = 0u64;
        for (w, layer) in nodes.windows(2).zip(&self.layers) {
            let k = layer.rank() as u64;
            total += match (w[0], w[1]) {
                (Node::Vector(n), Node::Vector(m)) => (n * m + m) as u64,
                (Node::Matrix(p, q), Node::Matrix(u, v)) => {
                    let (p, q, u, v) = (p as u64, q as u64, u as u64, v as u64);
                    match convention {
                        Convention::UniqueScalars => k * (q * v + p * v + u * p + u * v),
                        Convention::Connections => k * (p * q * v + u * p * v + p * v) + u * v,
                    }
                }
                (Node::Quad(a), Node::Quad(b)) => kml_count(a, b, k, convention),
                _ => unreachable!("parser rejects mixed architectures"),
            };
        }
        total
    }
}

fn kml_count(input: Quad, output: Quad, k: u64, convention: Convention) -> u64 {
    let (p1, p2) = (input.rows.0 as u64, input.rows.1 as u64);
    let (q1, q2) = (input.cols.0 as u64, input.cols.1 as u64);
    let (u1, u2) = (output.rows.0 as u64, output.rows.1 as u64);
    let (v1, v2) = (output.cols.0 as u64, output.cols.1 as u64);
    let (p, v) = (p1 * p2, v1 * v2);
    match convention {
        Convention::UniqueScalars => {
            let row_stage = q2 * v2 + q1 * v2 + v1 * q1 + v1 * v2;
            let col_stage = p2 * u2 + p1 * u2 + u1 * p1 + u1 * u2;
            k * (p * row_stage + v * col_stage)
        }
        Convention::Connections => {
            let row_stage = q1 * q2 * v2 + q1 * v2 + q1 * v1 * v2 + v1 * v2;
            let col_stage = p1 * p2 * u2 + p1 * u2 + p1 * u1 * u2;
            k * (p * row_stage + v * col_stage) + u1 * u2 * v
        }
    }
}

/// Parses architecture notation.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    ArchSpec::parse(text)
}

/// Parameter count of `spec` under `convention`.
pub fn count_params(spec: &ArchSpec, convention: Convention) -> u64 {
    spec.count_params(convention)
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchSpec::parse(s)
    }
}

impl fmt::Display for ArchSpec {
    /// Canonical notation; parsing it yields an equal spec.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input)?;
        for layer in &self.layers {
            match layer.rank() {
                1 => write!(f, "|")?,
                k => write!(f, "|^{k}")?,
            }
            write!(f, "{}", layer.output())?;
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            src: text.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, expected: &str) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            expected: expected.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("'{}'", c as char))
        }
    }

    fn int(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("positive integer");
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        match digits.parse::<usize>() {
            Ok(0) | Err(_) => {
                self.pos = start;
                self.err("positive integer")
            }
            Ok(n) => Ok(n),
        }
    }

    fn pair(&mut self) -> Result<(usize, usize)> {
        self.expect(b'(')?;
        let a = self.int()?;
        self.expect(b',')?;
        let b = self.int()?;
        self.expect(b')')?;
        Ok((a, b))
    }

    fn item(&mut self) -> Result<(Node, usize)> {
        let start = {
            self.skip_ws();
            self.pos
        };
        match self.peek() {
            Some(b'(') => {
                let save = self.pos;
                self.pos += 1;
                if self.peek() == Some(b'(') {
                    self.pos = save;
                    self.expect(b'(')?;
                    let rows = self.pair()?;
                    self.expect(b',')?;
                    let cols = self.pair()?;
                    self.expect(b')')?;
                    Ok((Node::Quad(Quad { rows, cols }), start))
                } else {
                    self.pos = save;
                    let (r, c) = self.pair()?;
                    Ok((Node::Matrix(r, c), start))
                }
            }
            Some(c) if c.is_ascii_digit() => Ok((Node::Vector(self.int()?), start)),
            _ => self.err("integer or '('"),
        }
    }

    fn spec(&mut self) -> Result<ArchSpec> {
        let (input, _) = self.item()?;
        let mut layers = Vec::new();
        loop {
            match self.peek() {
                None => break,
                Some(b'|') => self.pos += 1,
                Some(_) => return self.err("'|' or end of input"),
            }
            let mut rank = None;
            if self.peek() == Some(b'^') {
                let caret = self.pos;
                self.pos += 1;
                let k = self.int()?;
                if matches!(input, Node::Vector(_)) {
                    self.pos = caret;
                    return self.err("'|' without rank (dense layers have no Kronecker rank)");
                }
                rank = Some(k);
            }
            let (node, at) = self.item()?;
            if std::mem::discriminant(&node) != std::mem::discriminant(&input) {
                return Err(Error::UnsupportedMix(format!(
                    "item '{node}' at byte {at} differs in kind from the input item '{input}'"
                )));
            }
            let rank = rank.unwrap_or(1);
            layers.push(match node {
                Node::Vector(width) => LayerSpec::Dense { width },
                Node::Matrix(rows, cols) => LayerSpec::Kdl { rows, cols, rank },
                Node::Quad(shape) => LayerSpec::Kml { shape, rank },
            });
        }
        if layers.is_empty() {
            return self.err("'|'");
        }
        Ok(ArchSpec { input, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unique(s: &str) -> u64 {
        parse_arch(s).unwrap().count_params(Convention::UniqueScalars)
    }

    fn connections(s: &str) -> u64 {
        parse_arch(s).unwrap().count_params(Convention::Connections)
    }

    #[test]
    fn parses_dense() {
        let spec = parse_arch("4|9|9|4").unwrap();
        assert_eq!(spec.kind(), ArchKind::Dense);
        assert_eq!(
            spec.nodes(),
            vec![Node::Vector(4), Node::Vector(9), Node::Vector(9), Node::Vector(4)]
        );
    }

    #[test]
    fn parses_ranked_kdl() {
        let spec = parse_arch("(2,2)|^2(3,3)|^2(3,3)|^2(2,2)").unwrap();
        assert_eq!(spec.kind(), ArchKind::Kdl);
        assert_eq!(spec.ranks(), vec![2, 2, 2]);
        assert_eq!(
            spec.layers[0],
            LayerSpec::Kdl {
                rows: 3,
                cols: 3,
                rank: 2
            }
        );

        let spec = parse_arch(" (2, 4) | (8,8)|(8, 8)|( 1,1 ) ").unwrap();
        assert_eq!(spec.ranks(), vec![1, 1, 1]);
        assert_eq!(spec.input, Node::Matrix(2, 4));
        assert_eq!(spec.output(), Node::Matrix(1, 1));
    }

    #[test]
    fn parses_quads() {
        let spec = parse_arch("((7,4),(7,4))|^2((7,4),(7,4))|((5,1),(2,1))").unwrap();
        assert_eq!(spec.kind(), ArchKind::Kml);
        assert_eq!(spec.output().shape(), (5, 2));
        assert_eq!(spec.ranks(), vec![2, 1]);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match parse_arch("4|9|x") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_arch("4"), Err(Error::Parse { offset: 1, .. })));
        assert!(matches!(parse_arch("4|0"), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(parse_arch("(2,2)|(3,"), Err(Error::Parse { offset: 9, .. })));
        assert!(matches!(parse_arch("4|^2 9"), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(parse_arch("(2,2)|^0(3,3)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_arch("4 9"), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(parse_arch(""), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn mixed_kinds_rejected() {
        assert!(matches!(parse_arch("4|(2,2)"), Err(Error::UnsupportedMix(_))));
        assert!(matches!(parse_arch("(2,2)|4"), Err(Error::UnsupportedMix(_))));
        assert!(matches!(
            parse_arch("(2,2)|((1,2),(1,2))"),
            Err(Error::UnsupportedMix(_))
        ));
    }

    #[test]
    fn small_network_counts() {
        assert_eq!(unique("4|9|9|4"), 175);
        assert_eq!(connections("4|9|9|4"), 175);
        assert_eq!(connections("(2,2)|(3,3)|(3,3)|(2,2)"), 157);
        assert_eq!(unique("(2,2)|(3,3)|(3,3)|(2,2)"), 85);
        assert_eq!(connections("(2,2)|^2(3,3)|^2(3,3)|^2(2,2)"), 292);
        assert_eq!(unique("4|6|9|9|9|6|4"), 361);
        assert_eq!(unique("4|12|9|18|9|12|4"), 700);
    }

    #[test]
    fn benchmark_architecture_counts() {
        assert_eq!(unique("(2,4)|(8,8)|(8,8)|(1,1)"), 409);
        assert_eq!(unique("(2,7)|(8,8)|(8,8)|(1,1)"), 433);
        assert_eq!(unique("(2,7)|^2(8,8)|^2(8,8)|^2(1,1)"), 866);
        assert_eq!(unique("(2,7)|(20,20)|(20,20)|(1,1)"), 2281);
        assert_eq!(unique("(2,7)|^2(20,20)|^2(20,20)|^2(1,1)"), 4562);
        assert_eq!(unique("(20,14)|(20,20)|(20,20)|(1,1)"), 3141);
        assert_eq!(unique("(20,14)|^2(20,20)|^2(20,20)|^2(1,1)"), 6282);
        assert_eq!(unique("(28,28)|(28,28)|(28,28)|(5,2)"), 6534);
        assert_eq!(unique("(28,28)|^2(28,28)|^2(28,28)|^2(5,2)"), 13068);
        assert_eq!(unique("8|64|64|1"), 4801);
        assert_eq!(unique("14|400|400|1"), 166_801);
        assert_eq!(unique("280|400|400|1"), 273_201);
        assert_eq!(unique("784|784|784|10"), 1_238_730);
    }

    #[test]
    fn extended_fnn_node_counts() {
        let kdl = parse_arch("(2,2)|(3,3)|(3,3)|(2,2)").unwrap();
        assert_eq!(kdl.extended_fnn().unwrap().to_string(), "4|6|9|9|9|6|4");
        let kdl2 = parse_arch("(2,2)|^2(3,3)|^2(3,3)|^2(2,2)").unwrap();
        assert_eq!(kdl2.extended_fnn().unwrap().to_string(), "4|12|9|18|9|12|4");
        let mnist = parse_arch("(28,28)|(28,28)|(28,28)|(5,2)").unwrap();
        let e = mnist.extended_fnn().unwrap();
        assert_eq!(e.to_string(), "784|784|784|784|784|56|10");
        assert_eq!(e.count_params(Convention::UniqueScalars), 2_506_290);
        let f = parse_arch("(2,4)|(8,8)|(8,8)|(1,1)").unwrap().extended_fnn().unwrap();
        assert_eq!(f.to_string(), "8|16|64|64|64|8|1");
        assert_eq!(f.count_params(Convention::UniqueScalars), 10_081);
        assert!(parse_arch("4|4").unwrap().extended_fnn().is_err());
    }

    #[test]
    fn quad_counts() {
        // Separate parameters per row (3) and per column (5) slice:
        // 3·(1 + 4 + 20 + 5) + 5·(1 + 3 + 6 + 2).
        let kml = parse_arch("((3,1),(4,1))|((2,1),(5,1))").unwrap();
        assert_eq!(kml.count_params(Convention::UniqueScalars), 150);
        assert_eq!(kml.with_rank(2).count_params(Convention::UniqueScalars), 300);
    }

    #[test]
    fn kp_shapes_follow_transitions() {
        let spec = parse_arch("(2,4)|(8,8)|(1,1)").unwrap();
        let s = spec.kp_shapes().unwrap();
        assert_eq!(s[0], KpShape::new(8, 4, 8, 2).unwrap());
        assert_eq!(s[1], KpShape::new(1, 8, 1, 8).unwrap());
    }

    fn node_strategy(kind: u8) -> BoxedStrategy<Node> {
        match kind {
            0 => (1usize..50).prop_map(Node::Vector).boxed(),
            1 => (1usize..30, 1usize..30).prop_map(|(r, c)| Node::Matrix(r, c)).boxed(),
            _ => ((1usize..6, 1usize..6), (1usize..6, 1usize..6))
                .prop_map(|(rows, cols)| Node::Quad(Quad { rows, cols }))
                .boxed(),
        }
    }

    fn spec_strategy() -> impl Strategy<Value = ArchSpec> {
        (0u8..3).prop_flat_map(|kind| {
            (
                node_strategy(kind),
                prop::collection::vec((node_strategy(kind), 1usize..4), 1..5),
            )
                .prop_map(move |(input, rest)| ArchSpec {
                    input,
                    layers: rest
                        .into_iter()
                        .map(|(node, rank)| match node {
                            Node::Vector(width) => LayerSpec::Dense { width },
                            Node::Matrix(rows, cols) => LayerSpec::Kdl { rows, cols, rank },
                            Node::Quad(shape) => LayerSpec::Kml { shape, rank },
                        })
                        .collect(),
                })
        })
    }

    proptest! {
        #[test]
        fn render_round_trips(spec in spec_strategy()) {
            let text = spec.to_string();
            let again = parse_arch(&text).unwrap();
            prop_assert_eq!(&again, &spec);
            prop_assert_eq!(parse_arch(&again.to_string()).unwrap(), again);
        }
    }
}

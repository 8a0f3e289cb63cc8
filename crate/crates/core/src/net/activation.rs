use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::matlin::Matrix;

/// Pointwise activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    Linear,
    Relu,
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Linear,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
    ];

    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`. ReLU uses 0 at the kink.
    #[inline]
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }

    pub fn apply(self, z: &Matrix) -> Matrix {
        if self == Activation::Linear {
            return z.clone();
        }
        z.map(|v| self.value(v))
    }

    pub fn apply_in_place(self, z: &mut Matrix) {
        if self != Activation::Linear {
            z.as_mut_slice().iter_mut().for_each(|v| *v = self.value(*v));
        }
    }

    /// `g ∘ φ′(z)`, written into `g`.
    pub fn backprop_in_place(self, z: &Matrix, g: &mut Matrix) {
        debug_assert_eq!(z.shape(), g.shape());
        if self == Activation::Linear {
            return;
        }
        for (gv, &zv) in g.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *gv *= self.deriv(zv);
        }
    }

    /// True when the function has a kink where finite differences are unreliable.
    pub fn has_kink(self) -> bool {
        self == Activation::Relu
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "identity" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Param(format!(
                "unknown activation '{other}' (expected linear, relu, tanh or sigmoid)"
            ))),
        }
    }
}

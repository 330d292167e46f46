use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    FanInUniform { fan_in: usize },
    Zeros,
    /// LSTM gate bias laid out `[i, f, o, g]` blocks of `hidden`; the forget block is 1.
    ForgetGateBias { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Every learnable network tensor, in registration order. Building a network
/// only records specs; [`ParamStore::initialize`] allocates the values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter {name}"
        );
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn initialize(&mut self, rng: &mut ChaCha8Rng) {
        self.tensors = self
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::FanInUniform { fan_in } => {
                    let b = (6.0 / fan_in.max(1) as f64).sqrt();
                    let data = (0..s.numel()).map(|_| rng.random_range(-b..b)).collect();
                    Tensor::from_vec(&s.shape, data)
                }
                Init::ForgetGateBias { hidden } => {
                    let mut t = Tensor::zeros(&s.shape);
                    t.data_mut()[hidden..2 * hidden].fill(1.0);
                    t
                }
            })
            .collect();
    }

    pub fn is_initialized(&self) -> bool {
        !self.specs.is_empty() && self.tensors.len() == self.specs.len()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Replaces all values; shapes must match the specs.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<(), String> {
        if tensors.len() != self.specs.len() {
            return Err(format!("expected {} tensors, got {}", self.specs.len(), tensors.len()));
        }
        for (s, t) in self.specs.iter().zip(&tensors) {
            if s.shape != t.shape() {
                return Err(format!("{}: shape {:?} != {:?}", s.name, t.shape(), s.shape));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.specs
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(ParamSpec::numel)
            .sum()
    }

    pub fn numel(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_sq).sum()
    }

    /// Puts every parameter on `g`, differentiable when the graph records.
    pub fn bind(&self, g: &Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.leaf(t.clone())).collect(),
        }
    }
}

/// Parameters placed on one graph.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

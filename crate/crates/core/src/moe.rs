//! Toy mixture-of-experts: a bank of two-layer ReLU experts combined by a
//! gate-weighted sum, `y = sum_i g_i(x) E_i(x)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, Vector};
use crate::rng::{self, Stream};

/// Tolerance on the gate probability sum accepted by [`moe_forward`].
pub const GATE_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MoeError {
    #[error("expected input of dimension {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("gate produced {got} probabilities for {experts} experts")]
    GateLength { experts: usize, got: usize },
    #[error("gate probabilities sum to {sum}, not 1")]
    GateSum { sum: f64 },
    #[error("gate probability {value} at expert {index} is negative or non-finite")]
    GateEntry { index: usize, value: f64 },
    #[error("model needs at least one expert and positive dimensions")]
    EmptyModel,
    #[error("expert {index} does not map R^{dim} to R^{dim}")]
    ExpertShape { index: usize, dim: usize },
    #[error("gate failed: {0}")]
    Gate(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One feed-forward expert, `w2 relu(w1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertNet {
    pub index: usize,
    /// `hidden x d`
    pub w1: Matrix,
    pub b1: Vector,
    /// `d x hidden`
    pub w2: Matrix,
    pub b2: Vector,
}

impl ExpertNet {
    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    fn check_shapes(&self) -> Result<(), MoeError> {
        let d = self.input_dim();
        let h = self.hidden_dim();
        let ok = self.b1.len() == h
            && self.w2.shape() == (d, h)
            && self.b2.len() == d;
        if ok {
            Ok(())
        } else {
            Err(MoeError::ExpertShape {
                index: self.index,
                dim: d,
            })
        }
    }

    /// Multiply-accumulates for one forward pass.
    pub fn macs(&self) -> u64 {
        2 * (self.input_dim() * self.hidden_dim()) as u64
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector, MoeError> {
        expert_forward(self, x)
    }
}

pub fn expert_forward(e: &ExpertNet, x: &Vector) -> Result<Vector, MoeError> {
    if x.len() != e.input_dim() {
        return Err(MoeError::InputDim {
            expected: e.input_dim(),
            got: x.len(),
        });
    }
    let mut h = e.w1.matvec(x)?.add(&e.b1)?;
    h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(e.w2.matvec(&h)?.add(&e.b2)?)
}

/// Anything that maps an input to a length-M probability vector.
pub trait GateFunction {
    fn probabilities(&self, x: &Vector) -> Result<Vector, MoeError>;
}

impl<F> GateFunction for F
where
    F: Fn(&Vector) -> Vector,
{
    fn probabilities(&self, x: &Vector) -> Result<Vector, MoeError> {
        Ok(self(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeModel {
    experts: Vec<ExpertNet>,
    input_dim: usize,
}

impl MoeModel {
    pub fn new(experts: Vec<ExpertNet>) -> Result<Self, MoeError> {
        let input_dim = experts.first().ok_or(MoeError::EmptyModel)?.input_dim();
        for e in &experts {
            e.check_shapes()?;
            if e.input_dim() != input_dim {
                return Err(MoeError::ExpertShape {
                    index: e.index,
                    dim: input_dim,
                });
            }
        }
        Ok(Self { experts, input_dim })
    }

    pub fn experts(&self) -> &[ExpertNet] {
        &self.experts
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Evaluates the gate and combines the expert outputs.
    pub fn forward_gated(&self, x: &Vector, gate: &dyn GateFunction) -> Result<Vector, MoeError> {
        let probs = gate.probabilities(x)?;
        moe_forward(self, x, &probs)
    }
}

/// Gate-weighted sum of expert outputs. Experts with probability exactly
/// zero are never evaluated.
pub fn moe_forward(m: &MoeModel, x: &Vector, gate_probs: &Vector) -> Result<Vector, MoeError> {
    Ok(moe_forward_counted(m, x, gate_probs)?.0)
}

/// Like [`moe_forward`], also returning how many experts were evaluated.
pub fn moe_forward_counted(
    m: &MoeModel,
    x: &Vector,
    gate_probs: &Vector,
) -> Result<(Vector, usize), MoeError> {
    if gate_probs.len() != m.num_experts() {
        return Err(MoeError::GateLength {
            experts: m.num_experts(),
            got: gate_probs.len(),
        });
    }
    if x.len() != m.input_dim {
        return Err(MoeError::InputDim {
            expected: m.input_dim,
            got: x.len(),
        });
    }
    for (index, &value) in gate_probs.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(MoeError::GateEntry { index, value });
        }
    }
    let sum = gate_probs.sum();
    if (sum - 1.0).abs() > GATE_SUM_TOLERANCE {
        return Err(MoeError::GateSum { sum });
    }
    let mut y = Vector::zeros(m.input_dim);
    let mut evaluated = 0;
    for (expert, &g) in m.experts.iter().zip(gate_probs.iter()) {
        if g == 0.0 {
            continue;
        }
        evaluated += 1;
        let out = expert_forward(expert, x)?;
        for (acc, v) in y.as_mut_slice().iter_mut().zip(out.iter()) {
            *acc += g * v;
        }
    }
    Ok((y, evaluated))
}

/// Deterministic model with Gaussian weights scaled by `1/sqrt(fan_in)` and
/// small Gaussian biases.
///
/// # Panics
/// If any count or dimension is zero.
pub fn seeded_model(seed: u64, num_experts: usize, dim: usize, hidden: usize) -> MoeModel {
    assert!(num_experts > 0 && dim > 0 && hidden > 0);
    let mut rng = rng::stream(seed, Stream::ExpertWeights);
    let experts = (0..num_experts)
        .map(|index| {
            let w1 = rng::gaussian_vec(&mut rng, hidden * dim, 1.0 / (dim as f64).sqrt());
            let b1 = rng::gaussian_vec(&mut rng, hidden, 0.1);
            let w2 = rng::gaussian_vec(&mut rng, dim * hidden, 1.0 / (hidden as f64).sqrt());
            let b2 = rng::gaussian_vec(&mut rng, dim, 0.1);
            ExpertNet {
                index,
                w1: Matrix::new(hidden, dim, w1).expect("sized above"),
                b1: Vector::new(b1),
                w2: Matrix::new(dim, hidden, w2).expect("sized above"),
                b2: Vector::new(b2),
            }
        })
        .collect();
    MoeModel::new(experts).expect("shapes are consistent by construction")
}

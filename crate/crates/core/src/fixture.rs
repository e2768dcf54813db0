//! Versioned JSON dump of a complete model: experts, gate and codec.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{fit_projections, CodecError, FeatureBlock, LowRankCodec};
use crate::hlggn::{GateError, GroupGateParams};
use crate::linalg::Matrix;
use crate::moe::{seeded_model, MoeError, MoeModel};
use crate::rng::{self, Stream};

pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture version {found} is not supported (expected {FIXTURE_VERSION})")]
    Version { found: u32 },
    #[error("malformed fixture: {0}")]
    Json(#[from] serde_json::Error),
    #[error("inconsistent fixture: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Moe(#[from] MoeError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Sizes of a generated fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureShape {
    pub num_experts: usize,
    pub num_groups: usize,
    pub top_groups: usize,
    pub dim: usize,
    pub hidden: usize,
    pub block_h: usize,
    pub block_w: usize,
    pub channels: usize,
    pub rank: usize,
    pub calibration_blocks: usize,
}

impl Default for FixtureShape {
    fn default() -> Self {
        Self {
            num_experts: 8,
            num_groups: 4,
            top_groups: 1,
            dim: 8,
            hidden: 12,
            block_h: 12,
            block_w: 10,
            channels: 2,
            rank: 4,
            calibration_blocks: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFixture {
    pub version: u32,
    pub seed: u64,
    pub model: MoeModel,
    pub gate: GroupGateParams,
    pub codec: LowRankCodec,
}

/// Calibration blocks sharing one set of rank-one directions with
/// geometrically decaying weights, so a low-rank codec has something to find.
pub fn calibration_blocks(seed: u64, shape: &FixtureShape) -> Vec<FeatureBlock> {
    let mut rng = rng::stream(seed, Stream::RequestFeatures);
    let (h, w) = (shape.block_h, shape.block_w);
    let terms = h.min(w);
    let left: Vec<Vec<f64>> = (0..terms).map(|_| rng::gaussian_vec(&mut rng, h, 1.0)).collect();
    let right: Vec<Vec<f64>> = (0..terms).map(|_| rng::gaussian_vec(&mut rng, w, 1.0)).collect();
    (0..shape.calibration_blocks)
        .map(|_| {
            let channels = (0..shape.channels)
                .map(|_| {
                    let coeff = rng::gaussian_vec(&mut rng, terms, 1.0);
                    Matrix::from_fn(h, w, |i, j| {
                        (0..terms)
                            .map(|k| 0.5f64.powi(k as i32) * coeff[k] * left[k][i] * right[k][j])
                            .sum()
                    })
                })
                .collect();
            FeatureBlock::new(channels).expect("channels share a shape")
        })
        .collect()
}

impl ModelFixture {
    pub fn generate(seed: u64, shape: &FixtureShape) -> Result<Self, FixtureError> {
        let model = seeded_model(seed, shape.num_experts, shape.dim, shape.hidden);
        let gate = GroupGateParams::seeded(
            seed,
            shape.num_experts,
            shape.num_groups,
            shape.dim,
            shape.top_groups,
        )?;
        let codec = fit_projections(&calibration_blocks(seed, shape), shape.rank)?;
        Ok(Self {
            version: FIXTURE_VERSION,
            seed,
            model,
            gate,
            codec,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixtures always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, FixtureError> {
        #[derive(Deserialize)]
        struct VersionOnly {
            version: u32,
        }
        let v: VersionOnly = serde_json::from_str(s)?;
        if v.version != FIXTURE_VERSION {
            return Err(FixtureError::Version { found: v.version });
        }
        let f: ModelFixture = serde_json::from_str(s)?;
        f.check()?;
        Ok(f)
    }

    fn check(&self) -> Result<(), FixtureError> {
        MoeModel::new(self.model.experts().to_vec())?;
        if self.gate.num_experts() != self.model.num_experts() {
            return Err(FixtureError::Inconsistent(format!(
                "gate covers {} experts, model has {}",
                self.gate.num_experts(),
                self.model.num_experts()
            )));
        }
        if self.gate.input_dim() != self.model.input_dim() {
            return Err(FixtureError::Inconsistent(format!(
                "gate takes dimension {}, model takes {}",
                self.gate.input_dim(),
                self.model.input_dim()
            )));
        }
        let c = &self.codec;
        let r = c.rank;
        if c.u.cols() != r || c.v.cols() != r || c.u_hat.shape() != c.u.shape() || c.v_hat.shape() != c.v.shape() {
            return Err(FixtureError::Inconsistent("codec projections do not match its rank".into()));
        }
        if r == 0 || r > c.u.rows().min(c.v.rows()) {
            return Err(FixtureError::Inconsistent(format!("codec rank {r} out of range")));
        }
        Ok(())
    }
}

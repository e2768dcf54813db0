//! Low-rank feature codec for end-to-cloud transfers.
//!
//! A feature block `X` (`h x w` per channel) is sent as `Z = U^T X V`
//! (`r x r` per channel) and rebuilt as `X_hat = U_hat Z V_hat^T`. The
//! projections are fitted in closed form: `U` spans the leading left
//! singular subspace of all calibration slices laid side by side, `V` the
//! leading right singular subspace of the slices stacked on top of each
//! other. Both have orthonormal columns, so the decoder projections are the
//! same matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::moe::{ExpertNet, MoeError};

/// Bytes in the compressed wire header: `h, w, c, r` as little-endian `u32`.
pub const WIRE_HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("rank {rank} out of range 1..={max}")]
    Rank { rank: usize, max: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("compressed rank {got} does not match codec rank {expected}")]
    RankMismatch { expected: usize, got: usize },
    #[error("feature block needs at least one channel of positive size")]
    EmptyBlock,
    #[error("lambda must be non-negative, got {0}")]
    Lambda(f64),
    #[error("wire payload: {0}")]
    Wire(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Moe(#[from] MoeError),
}

/// A `h x w x c` feature tensor stored as `c` slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    channels: Vec<Matrix>,
}

impl FeatureBlock {
    pub fn new(channels: Vec<Matrix>) -> Result<Self, CodecError> {
        let first = channels.first().ok_or(CodecError::EmptyBlock)?;
        let (h, w) = first.shape();
        if let Some(bad) = channels.iter().find(|c| c.shape() != (h, w)) {
            return Err(CodecError::Shape {
                expected: (h, w, channels.len()),
                got: (bad.rows(), bad.cols(), channels.len()),
            });
        }
        Ok(Self { channels })
    }

    pub fn single(x: Matrix) -> Self {
        Self { channels: vec![x] }
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            channels: (0..c).map(|_| Matrix::zeros(h, w)).collect(),
        }
    }

    /// `(h, w, c)`
    pub fn shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.channels[0].shape();
        (h, w, self.channels.len())
    }

    pub fn channels(&self) -> &[Matrix] {
        &self.channels
    }

    /// Raw `f64` payload size.
    pub fn payload_bytes(&self) -> usize {
        let (h, w, c) = self.shape();
        8 * h * w * c
    }
}

/// `c` slices of `r x r` coefficients plus the shape needed to decode them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedBlock {
    pub channels: Vec<Matrix>,
    pub rank: usize,
    pub original_shape: (usize, usize, usize),
}

impl CompressedBlock {
    /// Coefficient payload size, header excluded.
    pub fn payload_bytes(&self) -> usize {
        8 * self.channels.len() * self.rank * self.rank
    }

    /// Size on the wire: header plus `c r^2` doubles.
    pub fn wire_size(channels: usize, rank: usize) -> usize {
        WIRE_HEADER_BYTES + 8 * channels * rank * rank
    }

    pub fn to_wire_bytes(&self) -> Vec<u8> {
        let (h, w, c) = self.original_shape;
        let mut out = Vec::with_capacity(Self::wire_size(c, self.rank));
        for v in [h, w, c, self.rank] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for z in &self.channels {
            for x in z.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_wire_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < WIRE_HEADER_BYTES {
            return Err(CodecError::Wire(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize
        };
        let (h, w, c, r) = (word(0), word(1), word(2), word(3));
        let expected = Self::wire_size(c, r);
        if bytes.len() != expected {
            return Err(CodecError::Wire(format!(
                "expected {expected} bytes for c={c}, r={r}, got {}",
                bytes.len()
            )));
        }
        if r == 0 || c == 0 {
            return Err(CodecError::Wire("zero rank or channel count".into()));
        }
        let mut floats = bytes[WIRE_HEADER_BYTES..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let channels = (0..c)
            .map(|_| Matrix::new(r, r, floats.by_ref().take(r * r).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            channels,
            rank: r,
            original_shape: (h, w, c),
        })
    }
}

/// Fitted projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankCodec {
    /// `h x r`
    pub u: Matrix,
    /// `w x r`
    pub v: Matrix,
    /// Decoder projections; equal to `u` and `v` for a closed-form fit.
    pub u_hat: Matrix,
    pub v_hat: Matrix,
    pub rank: usize,
}

impl LowRankCodec {
    /// `(h, w)` of the blocks this codec handles.
    pub fn block_dims(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }

    pub fn encode(&self, x: &FeatureBlock) -> Result<CompressedBlock, CodecError> {
        encode(x, self)
    }

    pub fn decode(&self, z: &CompressedBlock) -> Result<FeatureBlock, CodecError> {
        decode(z, self)
    }
}

pub fn fit_projections(calibration: &[FeatureBlock], r: usize) -> Result<LowRankCodec, CodecError> {
    let first = calibration.first().ok_or(CodecError::EmptyCalibration)?;
    let (h, w, _) = first.shape();
    if r == 0 || r > h.min(w) {
        return Err(CodecError::Rank {
            rank: r,
            max: h.min(w),
        });
    }
    let mut slices: Vec<&Matrix> = Vec::new();
    for block in calibration {
        let (bh, bw, bc) = block.shape();
        if (bh, bw) != (h, w) {
            return Err(CodecError::Shape {
                expected: (h, w, bc),
                got: (bh, bw, bc),
            });
        }
        slices.extend(block.channels());
    }
    // [X_1 X_2 ...] has left singular vectors = eigenvectors of sum X X^T.
    let wide = Matrix::hstack(&slices)?;
    let u = linalg::truncated_svd(&wide, r)?.u;
    // [X_1^T X_2^T ...] likewise for sum X^T X.
    let transposed: Vec<Matrix> = slices.iter().map(|x| x.transpose()).collect();
    let refs: Vec<&Matrix> = transposed.iter().collect();
    let v = linalg::truncated_svd(&Matrix::hstack(&refs)?, r)?.u;
    Ok(LowRankCodec {
        u_hat: u.clone(),
        v_hat: v.clone(),
        u,
        v,
        rank: r,
    })
}

/// `Z_c = U^T X_c V` for every channel.
pub fn encode(x: &FeatureBlock, codec: &LowRankCodec) -> Result<CompressedBlock, CodecError> {
    let (h, w, c) = x.shape();
    if (h, w) != codec.block_dims() {
        let (ch, cw) = codec.block_dims();
        return Err(CodecError::Shape {
            expected: (ch, cw, c),
            got: (h, w, c),
        });
    }
    let ut = codec.u.transpose();
    let channels = x
        .channels()
        .iter()
        .map(|xc| ut.matmul(xc)?.matmul(&codec.v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompressedBlock {
        channels,
        rank: codec.rank,
        original_shape: (h, w, c),
    })
}

/// `X_hat_c = U_hat Z_c V_hat^T` for every channel.
pub fn decode(z: &CompressedBlock, codec: &LowRankCodec) -> Result<FeatureBlock, CodecError> {
    if z.rank != codec.rank {
        return Err(CodecError::RankMismatch {
            expected: codec.rank,
            got: z.rank,
        });
    }
    let (h, w, c) = z.original_shape;
    if (h, w) != codec.block_dims() || z.channels.len() != c {
        let (ch, cw) = codec.block_dims();
        return Err(CodecError::Shape {
            expected: (ch, cw, z.channels.len()),
            got: z.original_shape,
        });
    }
    let vt = codec.v_hat.transpose();
    let channels = z
        .channels
        .iter()
        .map(|zc| codec.u_hat.matmul(zc)?.matmul(&vt))
        .collect::<Result<Vec<_>, _>>()?;
    FeatureBlock::new(channels)
}

/// `sum_c ||X_c - X_hat_c||_F^2 + lambda * task_loss`.
pub fn reconstruction_loss(
    x: &FeatureBlock,
    x_hat: &FeatureBlock,
    lambda: f64,
    task_loss: Option<f64>,
) -> Result<f64, CodecError> {
    if !(lambda >= 0.0) {
        return Err(CodecError::Lambda(lambda));
    }
    if x.shape() != x_hat.shape() {
        return Err(CodecError::Shape {
            expected: x.shape(),
            got: x_hat.shape(),
        });
    }
    let mut rec = 0.0;
    for (a, b) in x.channels().iter().zip(x_hat.channels()) {
        let n = a.sub(b)?.frobenius_norm();
        rec += n * n;
    }
    Ok(rec + lambda * task_loss.unwrap_or(0.0))
}

/// Synthetic downstream loss: every row of every channel is fed through
/// `expert`, and the squared output differences are summed.
pub fn expert_task_loss(
    x: &FeatureBlock,
    x_hat: &FeatureBlock,
    expert: &ExpertNet,
) -> Result<f64, CodecError> {
    if x.shape() != x_hat.shape() {
        return Err(CodecError::Shape {
            expected: x.shape(),
            got: x_hat.shape(),
        });
    }
    let mut total = 0.0;
    for (a, b) in x.channels().iter().zip(x_hat.channels()) {
        for i in 0..a.rows() {
            let ya = expert.forward(&Vector::new(a.row(i).to_vec()))?;
            let yb = expert.forward(&Vector::new(b.row(i).to_vec()))?;
            total += ya.iter().zip(yb.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        }
    }
    Ok(total)
}

/// Payload-only compression factor `h w / r^2`.
pub fn compression_ratio(h: usize, w: usize, r: usize) -> f64 {
    (h * w) as f64 / (r * r) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use endcloud_oracle as oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn sq_err(a: &FeatureBlock, b: &FeatureBlock) -> f64 {
        reconstruction_loss(a, b, 0.0, None).unwrap()
    }

    fn roundtrip(x: &FeatureBlock, codec: &LowRankCodec) -> FeatureBlock {
        decode(&encode(x, codec).unwrap(), codec).unwrap()
    }

    #[test]
    fn rank_one_calibration_recovers_subspace() {
        let u = [1.0, 2.0, -1.0, 0.5];
        let v = [0.2, -0.3, 1.0];
        let x = FeatureBlock::single(Matrix::from_fn(4, 3, |i, j| u[i] * v[j]));
        let codec = fit_projections(std::slice::from_ref(&x), 1).unwrap();
        assert!(sq_err(&x, &roundtrip(&x, &codec)).sqrt() < 1e-10);
        // U spans u: |<U, u>| = |u|.
        let un = (u.iter().map(|a| a * a).sum::<f64>()).sqrt();
        let proj: f64 = (0..4).map(|i| codec.u.get(i, 0) * u[i]).sum();
        assert!((proj.abs() - un).abs() < 1e-10);
    }

    #[test]
    fn identity_full_rank_roundtrip() {
        let x = FeatureBlock::single(Matrix::identity(4));
        let codec = fit_projections(std::slice::from_ref(&x), 4).unwrap();
        assert!(sq_err(&x, &roundtrip(&x, &codec)).sqrt() < 1e-12);
    }

    #[test]
    fn single_block_fit_is_eckart_young_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let m = random_matrix(&mut rng, 16, 16);
        let x = FeatureBlock::single(m.clone());
        let codec = fit_projections(std::slice::from_ref(&x), 4).unwrap();
        let err = sq_err(&x, &roundtrip(&x, &codec));
        let optimum = oracle::eckart_young_residual(m.data(), 16, 16, 4);
        assert!((err - optimum).abs() <= 1e-8 * optimum, "{err} vs {optimum}");
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_projections(&[], 1).unwrap_err(), CodecError::EmptyCalibration);
        let x = FeatureBlock::zeros(3, 5, 1);
        assert_eq!(
            fit_projections(std::slice::from_ref(&x), 4).unwrap_err(),
            CodecError::Rank { rank: 4, max: 3 }
        );
        let y = FeatureBlock::zeros(3, 4, 1);
        assert!(matches!(fit_projections(&[x, y], 2), Err(CodecError::Shape { .. })));
    }

    #[test]
    fn encode_zero_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cal = FeatureBlock::single(random_matrix(&mut rng, 6, 5));
        let codec = fit_projections(&[cal], 2).unwrap();
        let z = encode(&FeatureBlock::zeros(6, 5, 3), &codec).unwrap();
        assert!(z.channels.iter().all(|c| c.data().iter().all(|&v| v == 0.0)));
        assert_eq!(z.original_shape, (6, 5, 3));
        let back = decode(&z, &codec).unwrap();
        assert_eq!(back, FeatureBlock::zeros(6, 5, 3));
    }

    #[test]
    fn encode_inverts_in_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cal = FeatureBlock::single(random_matrix(&mut rng, 8, 7));
        let codec = fit_projections(&[cal], 3).unwrap();
        let a = random_matrix(&mut rng, 3, 3);
        let x = codec.u.matmul(&a).unwrap().matmul(&codec.v.transpose()).unwrap();
        let z = encode(&FeatureBlock::single(x.clone()), &codec).unwrap();
        assert!(z.channels[0].sub(&a).unwrap().frobenius_norm() < 1e-12);
        let back = decode(&z, &codec).unwrap();
        assert!(back.channels()[0].sub(&x).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn encode_decode_match_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cal = FeatureBlock::single(random_matrix(&mut rng, 6, 5));
        let codec = fit_projections(&[cal], 2).unwrap();
        let x = random_matrix(&mut rng, 6, 5);
        let z = encode(&FeatureBlock::single(x.clone()), &codec).unwrap();
        let ut = oracle::naive_transpose(codec.u.data(), 6, 2);
        let want = oracle::naive_matmul(
            &oracle::naive_matmul(&ut, 2, 6, x.data(), 5),
            2,
            5,
            codec.v.data(),
            2,
        );
        assert!(z.channels[0].data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));

        let zr = random_matrix(&mut rng, 2, 2);
        let dec = decode(
            &CompressedBlock {
                channels: vec![zr.clone()],
                rank: 2,
                original_shape: (6, 5, 1),
            },
            &codec,
        )
        .unwrap();
        let vt = oracle::naive_transpose(codec.v_hat.data(), 5, 2);
        let want = oracle::naive_matmul(
            &oracle::naive_matmul(codec.u_hat.data(), 6, 2, zr.data(), 2),
            6,
            2,
            &vt,
            5,
        );
        assert!(dec.channels()[0].data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn shape_and_rank_mismatches() {
        let codec = fit_projections(&[FeatureBlock::single(Matrix::identity(4))], 2).unwrap();
        assert!(matches!(
            encode(&FeatureBlock::zeros(4, 3, 1), &codec),
            Err(CodecError::Shape { .. })
        ));
        let z = CompressedBlock {
            channels: vec![Matrix::zeros(3, 3)],
            rank: 3,
            original_shape: (4, 4, 1),
        };
        assert_eq!(
            decode(&z, &codec).unwrap_err(),
            CodecError::RankMismatch {
                expected: 2,
                got: 3
            }
        );
    }

    #[test]
    fn loss_examples() {
        let x = FeatureBlock::single(Matrix::identity(2));
        assert_eq!(reconstruction_loss(&x, &x, 0.0, None).unwrap(), 0.0);
        let zero = FeatureBlock::zeros(2, 2, 1);
        let ones = FeatureBlock::single(Matrix::from_fn(2, 2, |_, _| 1.0));
        assert_eq!(reconstruction_loss(&zero, &ones, 0.0, None).unwrap(), 4.0);
        // rec term 1, lambda 0.5, task loss 2
        let one = FeatureBlock::single(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        assert_eq!(reconstruction_loss(&zero, &one, 0.5, Some(2.0)).unwrap(), 2.0);
        assert!(reconstruction_loss(&zero, &one, -1.0, None).is_err());
        assert!(reconstruction_loss(&zero, &FeatureBlock::zeros(2, 3, 1), 0.0, None).is_err());
    }

    #[test]
    fn expert_task_loss_is_zero_for_perfect_reconstruction() {
        let model = crate::moe::seeded_model(5, 1, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = FeatureBlock::single(random_matrix(&mut rng, 6, 4));
        assert_eq!(expert_task_loss(&x, &x, &model.experts()[0]).unwrap(), 0.0);
        let codec = fit_projections(std::slice::from_ref(&x), 1).unwrap();
        let lossy = roundtrip(&x, &codec);
        let task = expert_task_loss(&x, &lossy, &model.experts()[0]).unwrap();
        assert!(task > 0.0);
        let l0 = reconstruction_loss(&x, &lossy, 0.0, Some(task)).unwrap();
        let l1 = reconstruction_loss(&x, &lossy, 1.0, Some(task)).unwrap();
        assert!(l1 > l0);
    }

    #[test]
    fn compression_ratio_examples() {
        assert_eq!(compression_ratio(16, 16, 4), 16.0);
        assert_eq!(compression_ratio(8, 8, 8), 1.0);
        assert_eq!(compression_ratio(32, 64, 8), 32.0);
    }

    #[test]
    fn wire_layout() {
        let z = CompressedBlock {
            channels: vec![Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(); 2],
            rank: 2,
            original_shape: (16, 8, 2),
        };
        let bytes = z.to_wire_bytes();
        assert_eq!(bytes.len(), CompressedBlock::wire_size(2, 2));
        assert_eq!(bytes.len(), 16 + 64);
        assert_eq!(&bytes[0..4], &16u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &8u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(CompressedBlock::from_wire_bytes(&bytes).unwrap(), z);
        assert!(CompressedBlock::from_wire_bytes(&bytes[..20]).is_err());
        assert!(CompressedBlock::from_wire_bytes(&bytes[..8]).is_err());
    }

    #[test]
    fn compressed_payload_is_smaller() {
        let x = FeatureBlock::zeros(16, 16, 3);
        let codec = fit_projections(std::slice::from_ref(&x), 15).unwrap();
        let z = encode(&x, &codec).unwrap();
        assert!(z.payload_bytes() < x.payload_bytes());
    }

    proptest! {
        #[test]
        fn error_non_increasing_in_rank(seed in any::<u64>(), h in 2usize..9, w in 2usize..9, c in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let block = FeatureBlock::new((0..c).map(|_| random_matrix(&mut rng, h, w)).collect()).unwrap();
            let target = FeatureBlock::new((0..c).map(|_| random_matrix(&mut rng, h, w)).collect()).unwrap();
            let cal = [block.clone(), target.clone()];
            let mut prev = f64::INFINITY;
            for r in 1..=h.min(w) {
                let codec = fit_projections(&cal, r).unwrap();
                let err = sq_err(&target, &roundtrip(&target, &codec));
                prop_assert!(err <= prev + 1e-10 * (1.0 + prev.min(1e6)));
                prev = err;
            }
        }

        #[test]
        fn encode_is_idempotent_through_decode(seed in any::<u64>(), r in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cal = FeatureBlock::single(random_matrix(&mut rng, 6, 6));
            let codec = fit_projections(&[cal], r).unwrap();
            let x = FeatureBlock::new(vec![random_matrix(&mut rng, 6, 6), random_matrix(&mut rng, 6, 6)]).unwrap();
            let z1 = encode(&x, &codec).unwrap();
            let z2 = encode(&decode(&z1, &codec).unwrap(), &codec).unwrap();
            for (a, b) in z1.channels.iter().zip(&z2.channels) {
                prop_assert!(a.sub(b).unwrap().frobenius_norm() < 1e-10);
            }
        }

        #[test]
        fn single_block_matches_discarded_energy(seed in any::<u64>(), r in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 9, 8);
            let x = FeatureBlock::single(m.clone());
            let codec = fit_projections(std::slice::from_ref(&x), r).unwrap();
            let err = sq_err(&x, &roundtrip(&x, &codec));
            let optimum = oracle::eckart_young_residual(m.data(), 9, 8, r);
            prop_assert!((err - optimum).abs() <= 1e-8 * optimum);
        }

        #[test]
        fn loss_monotone_in_lambda(task in 0.001f64..10.0, l1 in 0.0f64..5.0, dl in 0.001f64..5.0) {
            let x = FeatureBlock::single(Matrix::identity(2));
            let y = FeatureBlock::zeros(2, 2, 1);
            let a = reconstruction_loss(&x, &y, l1, Some(task)).unwrap();
            let b = reconstruction_loss(&x, &y, l1 + dl, Some(task)).unwrap();
            prop_assert!(b > a);
        }

        #[test]
        fn wire_roundtrip(seed in any::<u64>(), c in 1usize..4, r in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = CompressedBlock {
                channels: (0..c).map(|_| random_matrix(&mut rng, r, r)).collect(),
                rank: r,
                original_shape: (r + 3, r + 1, c),
            };
            prop_assert_eq!(CompressedBlock::from_wire_bytes(&z.to_wire_bytes()).unwrap(), z);
        }
    }
}

//! Reference computations kept deliberately naive.
//!
//! Everything here works on plain row-major slices and shares no code with
//! `endcloud-core`. The routines are the slow, obvious versions of what the
//! core library does with its own kernels, so a disagreement between the two
//! points at a bug in one of them rather than a shared mistake.

/// Row-major product of an `ar x ac` and an `ac x bc` matrix by triple loop.
pub fn naive_matmul(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    assert_eq!(a.len(), ar * ac);
    assert_eq!(b.len(), ac * bc);
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for j in 0..bc {
            let mut acc = 0.0;
            for k in 0..ac {
                acc += a[i * ac + k] * b[k * bc + j];
            }
            out[i * bc + j] = acc;
        }
    }
    out
}

pub fn naive_transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Plain sum of squared entries.
pub fn sum_of_squares(a: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in a {
        s += x * x;
    }
    s
}

pub fn frobenius_direct(a: &[f64]) -> f64 {
    sum_of_squares(a).sqrt()
}

/// Softmax written as `p_i = 1 / sum_j exp(z_j - z_i)`.
///
/// This avoids the max-subtraction path used by the library kernel.
pub fn softmax_pairwise(z: &[f64]) -> Vec<f64> {
    z.iter()
        .map(|&zi| {
            let denom: f64 = z.iter().map(|&zj| (zj - zi).exp()).sum();
            1.0 / denom
        })
        .collect()
}

/// Eigenvalues and eigenvectors of a symmetric `n x n` matrix by the classic
/// cyclic two-sided Jacobi method.
///
/// Returns eigenvalues sorted in descending order and the matching
/// eigenvectors as columns of a row-major `n x n` matrix.
pub fn jacobi_eigen_symmetric(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = m[i * n + j] * m[i * n + j];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // M <- J^T M J
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y * n + y].total_cmp(&m[x * n + x]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + new_col] = v[k * n + old_col];
        }
    }
    (values, vectors)
}

/// Squared singular values of a `rows x cols` matrix, descending, from the
/// eigenvalues of the smaller Gram matrix. Length is `min(rows, cols)`.
pub fn squared_singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let at = naive_transpose(a, rows, cols);
    let (gram, n) = if rows >= cols {
        (naive_matmul(&at, cols, rows, a, cols), cols)
    } else {
        (naive_matmul(a, rows, cols, &at, rows), rows)
    };
    let (values, _) = jacobi_eigen_symmetric(&gram, n);
    values.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    squared_singular_values(a, rows, cols).into_iter().map(f64::sqrt).collect()
}

/// Best achievable squared Frobenius error of a rank-`r` approximation:
/// the sum of the discarded squared singular values.
pub fn eckart_young_residual(a: &[f64], rows: usize, cols: usize, r: usize) -> f64 {
    squared_singular_values(a, rows, cols).iter().skip(r).sum()
}

/// Two-layer ReLU feed-forward block evaluated with scalar loops.
///
/// `w1` is `hidden x d`, `w2` is `d x hidden`, both row-major.
pub fn expert_forward_scalar(
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    x: &[f64],
) -> Vec<f64> {
    let d = x.len();
    let hidden = b1.len();
    let mut h = vec![0.0; hidden];
    for i in 0..hidden {
        let mut acc = b1[i];
        for k in 0..d {
            acc += w1[i * d + k] * x[k];
        }
        h[i] = if acc > 0.0 { acc } else { 0.0 };
    }
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut acc = b2[i];
        for k in 0..hidden {
            acc += w2[i * hidden + k] * h[k];
        }
        y[i] = acc;
    }
    y
}

/// `sum_i g_i * y_i` over explicitly provided expert outputs.
pub fn weighted_sum(weights: &[f64], outputs: &[Vec<f64>]) -> Vec<f64> {
    let d = outputs.first().map_or(0, Vec::len);
    let mut y = vec![0.0; d];
    for (g, out) in weights.iter().zip(outputs) {
        for k in 0..d {
            y[k] += g * out[k];
        }
    }
    y
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..b.len())
        .map(|i| b[i] + (0..d).map(|k| w[i * d + k] * x[k]).sum::<f64>())
        .collect()
}

/// Full two-stage gate product over every group: `p_group[k] * p_local[k][i]`.
///
/// `groups` holds `(W_k, b_k)` row-major with `b_k.len()` experts each.
pub fn two_stage_gate_probs(
    x: &[f64],
    w_global: &[f64],
    b_global: &[f64],
    groups: &[(Vec<f64>, Vec<f64>)],
) -> Vec<f64> {
    let p_group = softmax_pairwise(&affine(w_global, b_global, x));
    let mut out = Vec::new();
    for (k, (w, b)) in groups.iter().enumerate() {
        let p_local = softmax_pairwise(&affine(w, b, x));
        out.extend(p_local.iter().map(|p| p_group[k] * p));
    }
    out
}

/// First index of the maximum value.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Local expert rule applied by hand: keep experts whose worst resource ratio
/// is within `1 + eps`, then keep at most `ceil(cap * M)` of them by ascending
/// mismatch and index. Returns ascending expert ids.
///
/// `experts` is a list of `(index, flops_cost, memory_cost)`.
pub fn local_expert_rule(
    experts: &[(usize, f64, f64)],
    compute_budget: f64,
    memory_budget: f64,
    eps: f64,
    cap_fraction: f64,
) -> Vec<usize> {
    let ratio = |cost: f64, budget: f64| {
        if budget > 0.0 {
            cost / budget
        } else {
            f64::INFINITY
        }
    };
    let mut fitting: Vec<(f64, usize)> = Vec::new();
    for &(idx, flops, mem) in experts {
        let f = ratio(flops, compute_budget).max(ratio(mem, memory_budget)) - 1.0;
        if f <= eps {
            fitting.push((f, idx));
        }
    }
    // Smallest integer n with n >= cap * M, allowing for float noise in the product.
    let m = experts.len();
    let mut limit = 0;
    while (limit as f64) < cap_fraction * m as f64 - 1e-9 {
        limit += 1;
    }
    fitting.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    fitting.truncate(limit);
    let mut ids: Vec<usize> = fitting.into_iter().map(|(_, i)| i).collect();
    ids.sort_unstable();
    ids
}

/// Replays the threshold placement rule task by task.
///
/// `tasks` holds `(id, compute, comm_bytes)`. Returns `(id, placed_on_end)` in
/// visit order. Priorities are recomputed here from the definition.
pub fn replay_threshold_placement(
    tasks: &[(u64, f64, f64)],
    initial_load_end: f64,
    beta: f64,
    t_end: f64,
    eps: f64,
    link_bits_per_s: f64,
) -> Vec<(u64, bool)> {
    let mut keyed: Vec<(f64, u64, f64)> = tasks
        .iter()
        .map(|&(id, c, comm)| {
            let seconds = comm * 8.0 / link_bits_per_s;
            (c / (seconds + eps), id, c)
        })
        .collect();
    // Higher priority first; equal priorities visit the lower id first.
    for i in 1..keyed.len() {
        let mut j = i;
        while j > 0 {
            let (pa, ia, _) = keyed[j - 1];
            let (pb, ib, _) = keyed[j];
            if pb > pa || (pb == pa && ib < ia) {
                keyed.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    let mut load = initial_load_end;
    let mut out = Vec::with_capacity(keyed.len());
    for (p, id, c) in keyed {
        let end = load + c <= t_end && p >= beta;
        if end {
            load += c;
        }
        out.push((id, end));
    }
    out
}

/// Weighted time objective summed term by term.
///
/// `tasks` holds `(compute, comm_bytes, on_end)`.
pub fn objective_terms(
    tasks: &[(f64, f64, bool)],
    alpha: f64,
    end_rate: f64,
    cloud_rate: f64,
    link_bits_per_s: f64,
) -> f64 {
    let mut total = 0.0;
    for &(c, comm, on_end) in tasks {
        let exec = if on_end { c / end_rate } else { c / cloud_rate };
        let comm_s = if on_end { 0.0 } else { comm * 8.0 / link_bits_per_s };
        total += alpha * exec + (1.0 - alpha) * comm_s;
    }
    total
}

/// Time to push `bytes` through a link whose rate (bits/s) is `rate(t)`,
/// starting at `t_start`, by fixed-step accumulation with linear
/// interpolation inside the final step.
pub fn integrate_transfer_fine(
    bytes: f64,
    t_start: f64,
    dt: f64,
    rate: impl Fn(f64) -> f64,
) -> f64 {
    let mut remaining = bytes * 8.0;
    if remaining <= 0.0 {
        return 0.0;
    }
    let mut t = t_start;
    loop {
        let r = rate(t + 0.5 * dt);
        let step_bits = r * dt;
        if step_bits >= remaining {
            return t + remaining / r - t_start;
        }
        remaining -= step_bits;
        t += dt;
    }
}

/// Nearest-rank percentile of an unsorted sample.
pub fn nearest_rank_percentile(sample: &[f64], pct: f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = ((pct / 100.0) * n as f64).ceil().max(1.0) as usize;
    v[rank.min(n) - 1]
}

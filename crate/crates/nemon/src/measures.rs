//! Weighted vector/matrix norms, matrix measures (logarithmic norms), weak
//! pairings, and the step-size / parametrization lemmas that the rest of the
//! library is built on.
//!
//! Three norm families are supported, selected by [`NormSpec`]:
//!
//! * diagonally weighted `l_inf`: `|x| = max_i |x_i| / eta_i`,
//! * diagonally weighted `l_1`:   `|x| = sum_i eta_i |x_i|`,
//! * weighted `l_2`:              `|x| = sqrt(x^T P x)` with `P` symmetric
//!   positive definite.
//!
//! The induced matrix norms and measures have closed forms for the diagonal
//! weights (max weighted row/column sums) and reduce to symmetric eigenvalue
//! problems for the `l_2` case, which we solve with a cyclic Jacobi sweep.

use crate::error::{NemonError, Result};
use crate::linalg::Matrix;

/// Selects one of the supported weighted norms.
///
/// For `L1Weighted`/`LinfWeighted` the weight is a strictly positive vector
/// `eta`; for `L2Weighted` it is a symmetric positive-definite matrix `P`.
#[derive(Debug, Clone)]
pub enum NormSpec {
    L1Weighted { eta: Vec<f64> },
    LinfWeighted { eta: Vec<f64> },
    L2Weighted { p_matrix: Matrix },
}

impl NormSpec {
    /// Unweighted `l_inf` spec of dimension `n`.
    pub fn linf(n: usize) -> Self {
        NormSpec::LinfWeighted { eta: vec![1.0; n] }
    }

    /// Weighted `l_inf` spec.
    pub fn linf_weighted(eta: Vec<f64>) -> Self {
        NormSpec::LinfWeighted { eta }
    }

    /// Dimension the spec applies to.
    pub fn dim(&self) -> usize {
        match self {
            NormSpec::L1Weighted { eta } | NormSpec::LinfWeighted { eta } => eta.len(),
            NormSpec::L2Weighted { p_matrix } => p_matrix.rows(),
        }
    }

    /// Validates positivity / symmetry / positive-definiteness of the weights.
    pub fn validate(&self) -> Result<()> {
        match self {
            NormSpec::L1Weighted { eta } | NormSpec::LinfWeighted { eta } => check_eta(eta),
            NormSpec::L2Weighted { p_matrix } => {
                check_symmetric(p_matrix)?;
                let (evals, _) = jacobi_eigen(p_matrix, 1e-12, false)?;
                let min = evals.iter().cloned().fold(f64::INFINITY, f64::min);
                if min <= 0.0 {
                    return Err(NemonError::InvalidArgument(format!(
                        "p_matrix is not positive definite (min eigenvalue {min:e})"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn check_eta(eta: &[f64]) -> Result<()> {
    if eta.is_empty() {
        return Err(NemonError::InvalidArgument("eta must be non-empty".into()));
    }
    if eta.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(NemonError::InvalidArgument(
            "eta must be strictly positive and finite".into(),
        ));
    }
    Ok(())
}

fn check_symmetric(p: &Matrix) -> Result<()> {
    if !p.is_square() {
        return Err(NemonError::DimensionMismatch("p_matrix must be square".into()));
    }
    let scale = p.max_abs().max(1.0);
    for i in 0..p.rows() {
        for j in (i + 1)..p.cols() {
            if (p.get(i, j) - p.get(j, i)).abs() > 1e-12 * scale {
                return Err(NemonError::InvalidArgument(
                    "p_matrix is not symmetric within 1e-12".into(),
                ));
            }
        }
    }
    Ok(())
}

fn check_square_dims(a: &Matrix, ns: &NormSpec) -> Result<()> {
    if !a.is_square() {
        return Err(NemonError::DimensionMismatch(format!(
            "matrix must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != ns.dim() {
        return Err(NemonError::DimensionMismatch(format!(
            "matrix order {} does not match norm dimension {}",
            a.rows(),
            ns.dim()
        )));
    }
    Ok(())
}

/// Weighted vector norm `|x|` per the selected [`NormSpec`].
pub fn vector_norm(x: &[f64], ns: &NormSpec) -> Result<f64> {
    if x.len() != ns.dim() {
        return Err(NemonError::DimensionMismatch(format!(
            "vector length {} does not match norm dimension {}",
            x.len(),
            ns.dim()
        )));
    }
    match ns {
        NormSpec::LinfWeighted { eta } => {
            check_eta(eta)?;
            Ok(x.iter()
                .zip(eta)
                .fold(0.0_f64, |m, (xi, ei)| m.max(xi.abs() / ei)))
        }
        NormSpec::L1Weighted { eta } => {
            check_eta(eta)?;
            Ok(x.iter().zip(eta).map(|(xi, ei)| ei * xi.abs()).sum())
        }
        NormSpec::L2Weighted { p_matrix } => {
            check_symmetric(p_matrix)?;
            let px = p_matrix.matvec(x);
            let q = crate::linalg::dot(x, &px);
            if q < -1e-12 {
                return Err(NemonError::InvalidArgument(
                    "p_matrix is not positive semidefinite on this vector".into(),
                ));
            }
            Ok(q.max(0.0).sqrt())
        }
    }
}

/// Induced matrix norm per the selected [`NormSpec`].
///
/// Closed forms: the weighted `l_inf` norm is the max weighted row abs-sum
/// `max_i sum_j (eta_j / eta_i) |a_ij|`, the weighted `l_1` norm is the max
/// weighted column abs-sum `max_j sum_i (eta_i / eta_j) |a_ij|`, and the
/// `l_2` norm is the largest singular value of `Q A Q^{-1}` with `Q = P^{1/2}`
/// (computed through a symmetric eigensolve of the Gram matrix).
pub fn matrix_norm(a: &Matrix, ns: &NormSpec) -> Result<f64> {
    check_square_dims(a, ns)?;
    let n = a.rows();
    match ns {
        NormSpec::LinfWeighted { eta } => {
            check_eta(eta)?;
            let mut best = 0.0_f64;
            for i in 0..n {
                let row = a.row(i);
                let mut s = 0.0;
                for j in 0..n {
                    s += row[j].abs() * eta[j];
                }
                best = best.max(s / eta[i]);
            }
            Ok(best)
        }
        NormSpec::L1Weighted { eta } => {
            check_eta(eta)?;
            let mut best = 0.0_f64;
            for j in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += a.get(i, j).abs() * eta[i];
                }
                best = best.max(s / eta[j]);
            }
            Ok(best)
        }
        NormSpec::L2Weighted { p_matrix } => {
            let (q, q_inv) = spd_sqrt(p_matrix)?;
            let m = q.matmul(a)?.matmul(&q_inv)?;
            let gram = m.transpose().matmul(&m)?;
            let (evals, _) = jacobi_eigen(&gram, 1e-12, false)?;
            let max = evals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(max.max(0.0).sqrt())
        }
    }
}

/// Matrix measure (logarithmic norm) `mu(A)` per the selected [`NormSpec`].
///
/// Closed forms: weighted `l_inf` is `max_i (a_ii + sum_{j!=i} (eta_j/eta_i)
/// |a_ij|)`, weighted `l_1` is `max_j (a_jj + sum_{i!=j} (eta_i/eta_j)
/// |a_ij|)`, and the `l_2` case is the largest eigenvalue of the symmetric
/// part of `Q A Q^{-1}` with `Q = P^{1/2}`.
pub fn matrix_measure(a: &Matrix, ns: &NormSpec) -> Result<f64> {
    check_square_dims(a, ns)?;
    let n = a.rows();
    match ns {
        NormSpec::LinfWeighted { eta } => {
            check_eta(eta)?;
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                let row = a.row(i);
                let mut s = row[i];
                for j in 0..n {
                    if j != i {
                        s += row[j].abs() * eta[j] / eta[i];
                    }
                }
                best = best.max(s);
            }
            Ok(best)
        }
        NormSpec::L1Weighted { eta } => {
            check_eta(eta)?;
            let mut best = f64::NEG_INFINITY;
            for j in 0..n {
                let mut s = a.get(j, j);
                for i in 0..n {
                    if i != j {
                        s += a.get(i, j).abs() * eta[i] / eta[j];
                    }
                }
                best = best.max(s);
            }
            Ok(best)
        }
        NormSpec::L2Weighted { p_matrix } => {
            let (q, q_inv) = spd_sqrt(p_matrix)?;
            let m = q.matmul(a)?.matmul(&q_inv)?;
            let mt = m.transpose();
            let mut sym = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    sym.set(i, j, 0.5 * (m.get(i, j) + mt.get(i, j)));
                }
            }
            let (evals, _) = jacobi_eigen(&sym, 1e-12, false)?;
            Ok(evals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

/// One-sided difference quotient `(|I + hA| - 1) / h`, which converges to the
/// matrix measure as `h -> 0+`. Test oracle: independent of the closed forms
/// used by [`matrix_measure`] except for sharing the induced-norm code.
pub fn measure_limit_oracle(a: &Matrix, ns: &NormSpec, h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(NemonError::InvalidArgument("h must be positive".into()));
    }
    let shifted = a.map(|v| v * h).plus_scaled_identity(1.0);
    Ok((matrix_norm(&shifted, ns)? - 1.0) / h)
}

/// Index set `I_inf(x) = { i : |x_i| = |x|_inf }` used by the weak pairing.
/// Ties are kept in full; comparison is exact on the computed quotients.
fn argmax_set_inf(x: &[f64], eta: &[f64]) -> (f64, Vec<usize>) {
    let mut m = 0.0_f64;
    let scaled: Vec<f64> = x.iter().zip(eta).map(|(xi, ei)| xi.abs() / ei).collect();
    for &v in &scaled {
        m = m.max(v);
    }
    let idx = scaled
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == m)
        .map(|(i, _)| i)
        .collect();
    (m, idx)
}

/// Weak pairing for the weighted `l_inf` norm:
/// `[[x, y]] = max_{i in I_inf([eta]^{-1} y)} eta_i^{-2} y_i x_i`.
///
/// For `y = 0` the pairing is defined here as 0 (every index is tied and all
/// products vanish); callers should not rely on `y = 0` behavior beyond that.
pub fn weak_pairing_inf(x: &[f64], y: &[f64], eta: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() != eta.len() {
        return Err(NemonError::DimensionMismatch(
            "weak_pairing_inf requires equal dimensions".into(),
        ));
    }
    check_eta(eta)?;
    let (m, idx) = argmax_set_inf(y, eta);
    if m == 0.0 {
        return Ok(0.0);
    }
    let mut best = f64::NEG_INFINITY;
    for i in idx {
        best = best.max(y[i] * x[i] / (eta[i] * eta[i]));
    }
    Ok(best)
}

/// Brute-force evaluation of the Lumer equality for the weighted `l_inf`
/// measure: maximizes the weak pairing `[[Ax, x]]` over the vertices
/// `x_j = +/- eta_j` of the unit ball. Exponential in `n`; restricted to
/// `n <= 10` and intended purely as a test oracle for [`matrix_measure`].
pub fn lumer_bruteforce_inf(a: &Matrix, eta: &[f64]) -> Result<f64> {
    let ns = NormSpec::LinfWeighted { eta: eta.to_vec() };
    check_square_dims(a, &ns)?;
    check_eta(eta)?;
    let n = a.rows();
    if n > 10 {
        return Err(NemonError::InvalidArgument(
            "lumer_bruteforce_inf supports n <= 10 only".into(),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    let mut x = vec![0.0; n];
    for mask in 0u32..(1u32 << n) {
        for j in 0..n {
            let sign = if mask & (1 << j) != 0 { -1.0 } else { 1.0 };
            x[j] = sign * eta[j];
        }
        let ax = a.matvec(&x);
        // At a vertex every index attains the max, so the pairing scans all i.
        for i in 0..n {
            best = best.max(x[i] * ax[i] / (eta[i] * eta[i]));
        }
    }
    Ok(best)
}

/// Evaluates `|I + alpha*A|` in the weighted `l_inf` norm and checks the
/// exact identity `|I + alpha*A| = 1 + alpha * mu(A)` that holds for
/// `0 <= alpha <= 1 / max_i |a_ii|` (any `alpha >= 0` when the diagonal is
/// all zero). Note the identity genuinely requires `alpha >= 0`: for
/// `alpha < 0` the off-diagonal contribution enters with `|alpha|` and the
/// right-hand side would need `mu(-A)` instead.
pub fn norm_of_average_identity(a: &Matrix, eta: &[f64], alpha: f64) -> Result<f64> {
    let ns = NormSpec::LinfWeighted { eta: eta.to_vec() };
    check_square_dims(a, &ns)?;
    check_eta(eta)?;
    let max_diag = (0..a.rows()).fold(0.0_f64, |m, i| m.max(a.get(i, i).abs()));
    if alpha < 0.0 || (max_diag > 0.0 && alpha > 1.0 / max_diag) {
        return Err(NemonError::InvalidArgument(format!(
            "alpha = {alpha} outside the admissible range [0, {}]",
            if max_diag > 0.0 {
                (1.0 / max_diag).to_string()
            } else {
                "inf".into()
            }
        )));
    }
    let shifted = a.map(|v| v * alpha).plus_scaled_identity(1.0);
    let norm = matrix_norm(&shifted, &ns)?;
    let predicted = 1.0 + alpha * matrix_measure(a, &ns)?;
    if (norm - predicted).abs() > 1e-12 * norm.abs().max(1.0) {
        return Err(NemonError::Numerical(format!(
            "norm identity violated: |I+aA| = {norm}, 1 + a*mu = {predicted}"
        )));
    }
    Ok(norm)
}

/// Exact minimizer of `alpha -> |I + alpha*A|` over `alpha >= 0` in the
/// weighted `l_inf` norm.
///
/// The objective is the max of `2n` affine functions of `alpha` (per row `i`:
/// `1 + alpha*(a_ii + r_i)` and `-1 + alpha*(r_i - a_ii)` with `r_i` the
/// weighted off-diagonal abs-sum), hence convex piecewise-linear. We solve
/// the one-dimensional LP exactly by evaluating `alpha = 0` and every
/// pairwise intersection of the lines, returning the smallest minimizer.
pub fn optimal_alpha_norm_min(a: &Matrix, eta: &[f64]) -> Result<(f64, f64)> {
    let ns = NormSpec::LinfWeighted { eta: eta.to_vec() };
    check_square_dims(a, &ns)?;
    check_eta(eta)?;
    let n = a.rows();
    // Collect the (intercept, slope) pairs of the 2n constraint lines.
    let mut lines: Vec<(f64, f64)> = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut r = 0.0;
        for j in 0..n {
            if j != i {
                r += a.get(i, j).abs() * eta[j] / eta[i];
            }
        }
        let d = a.get(i, i);
        lines.push((1.0, d + r));
        lines.push((-1.0, r - d));
    }
    let eval = |alpha: f64| -> f64 {
        lines
            .iter()
            .fold(f64::NEG_INFINITY, |m, &(b, s)| m.max(b + s * alpha))
    };
    let mut candidates = vec![0.0];
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let (b1, s1) = lines[i];
            let (b2, s2) = lines[j];
            if s1 != s2 {
                let alpha = (b2 - b1) / (s1 - s2);
                if alpha > 0.0 && alpha.is_finite() {
                    candidates.push(alpha);
                }
            }
        }
    }
    candidates.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut best_alpha = 0.0;
    let mut best_val = eval(0.0);
    for &alpha in &candidates {
        let v = eval(alpha);
        if v < best_val {
            best_val = v;
            best_alpha = alpha;
        }
    }
    Ok((best_alpha, best_val))
}

/// Unconstrained parametrization of matrices with bounded `l_inf` measure:
/// `A = T - diag(|T| 1) + gamma*I`. For any real `T` the result satisfies
/// `mu_inf(A) <= gamma` (each row telescopes to `gamma + t_ii - |t_ii|`).
pub fn parametrize_bounded_measure(t: &Matrix, gamma: f64) -> Matrix {
    assert!(t.is_square(), "parametrization needs a square T");
    let n = t.rows();
    let mut a = t.clone();
    for i in 0..n {
        let abs_sum: f64 = t.row(i).iter().map(|v| v.abs()).sum();
        let v = a.get(i, i) - abs_sum + gamma;
        a.set(i, i, v);
    }
    a
}

/// Inverse of [`parametrize_bounded_measure`] on its image: given `A` with
/// `mu_inf(A) <= gamma`, returns `T` with off-diagonal entries copied and
/// `t_ii = (a_ii + sum_{j!=i} |a_ij| - gamma) / 2 <= 0`, so that
/// `parametrize_bounded_measure(T, gamma) = A` elementwise.
pub fn recover_parametrization(a: &Matrix, gamma: f64) -> Result<Matrix> {
    let ns = NormSpec::linf(a.rows());
    let mu = matrix_measure(a, &ns)?;
    if mu > gamma + 1e-9 {
        return Err(NemonError::InvalidArgument(format!(
            "recover_parametrization requires mu_inf(A) <= gamma, got mu = {mu}, gamma = {gamma}"
        )));
    }
    let n = a.rows();
    let mut t = a.clone();
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += a.get(i, j).abs();
            }
        }
        t.set(i, i, 0.5 * (a.get(i, i) + off - gamma));
    }
    Ok(t)
}

/// Perron-Frobenius eigenvalue `lambda_pf(|A|)` of the entrywise absolute
/// value, computed by shifted power iteration (the spectral shift keeps the
/// iteration convergent on periodic/reducible patterns and is subtracted off
/// exactly at the end). Used as the baseline well-posedness diagnostic.
pub fn perron_frobenius_abs(a: &Matrix, tol: f64) -> Result<f64> {
    if !a.is_square() {
        return Err(NemonError::DimensionMismatch(
            "perron_frobenius_abs needs a square matrix".into(),
        ));
    }
    let n = a.rows();
    let m = a.map(f64::abs);
    let max_entry = m.max_abs();
    if max_entry == 0.0 {
        return Ok(0.0);
    }
    let shift = 1e-3 * max_entry;
    let mut v = vec![1.0 / n as f64; n];
    let mut lambda = 0.0_f64;
    for _ in 0..200_000 {
        let mut w = m.matvec(&v);
        for i in 0..n {
            w[i] += shift * v[i];
        }
        let norm = crate::linalg::max_abs(&w);
        if norm == 0.0 {
            return Ok(0.0);
        }
        for wi in &mut w {
            *wi /= norm;
        }
        let delta = (norm - lambda).abs();
        lambda = norm;
        v = w;
        if delta <= tol * lambda.max(1.0) {
            break;
        }
    }
    Ok(lambda - shift)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and, when requested, the matching
/// orthonormal eigenvectors as matrix columns. Convergence criterion: the
/// off-diagonal Frobenius norm drops below `tol * max(1, |M|_F)`.
pub fn jacobi_eigen(m: &Matrix, tol: f64, with_vectors: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
    if !m.is_square() {
        return Err(NemonError::DimensionMismatch(
            "jacobi_eigen needs a square matrix".into(),
        ));
    }
    check_symmetric(m)?;
    let n = m.rows();
    let mut a = m.clone();
    let mut v = if with_vectors {
        Some(Matrix::identity(n))
    } else {
        None
    };
    let fro: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = tol * fro.max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if (2.0 * off).sqrt() <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= threshold / (n * n) as f64 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                if let Some(vm) = v.as_mut() {
                    for k in 0..n {
                        let vkp = vm.get(k, p);
                        let vkq = vm.get(k, q);
                        vm.set(k, p, c * vkp - s * vkq);
                        vm.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let evals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let evecs = v.map(|vm| {
        let mut sorted = Matrix::zeros(n, n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for k in 0..n {
                sorted.set(k, new_col, vm.get(k, old_col));
            }
        }
        sorted
    });
    Ok((evals, evecs))
}

/// Square root `Q = P^{1/2}` and inverse square root of an SPD matrix,
/// via the Jacobi eigendecomposition.
fn spd_sqrt(p: &Matrix) -> Result<(Matrix, Matrix)> {
    check_symmetric(p)?;
    let n = p.rows();
    let (evals, evecs) = jacobi_eigen(p, 1e-12, true)?;
    let v = evecs.expect("eigenvectors requested");
    let min = evals[0];
    if min <= 0.0 {
        return Err(NemonError::InvalidArgument(format!(
            "p_matrix is not positive definite (min eigenvalue {min:e})"
        )));
    }
    let mut q = Matrix::zeros(n, n);
    let mut q_inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            let mut si = 0.0;
            for k in 0..n {
                let w = v.get(i, k) * v.get(j, k);
                s += w * evals[k].sqrt();
                si += w / evals[k].sqrt();
            }
            q.set(i, j, s);
            q_inv.set(i, j, si);
        }
    }
    Ok((q, q_inv))
}

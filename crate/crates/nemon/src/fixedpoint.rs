//! Averaged (Krasnosel'skii-Mann) fixed-point iteration and the step-size /
//! contraction-factor calculus that makes it fast: the general one-sided
//! Lipschitz analysis, the accelerated `l_inf` step size, and the
//! perturbed-fixed-point sensitivity bound.

use crate::error::{NemonError, Result};
use crate::linalg;
use crate::measures::{vector_norm, NormSpec};

/// Parameters of one averaged-iteration run.
#[derive(Debug, Clone)]
pub struct IterationConfig {
    /// Averaging step in (0, 1]; `alpha = 1` is the plain Picard iteration.
    pub alpha: f64,
    /// Residual threshold in the caller's norm.
    pub tol: f64,
    /// Iteration budget.
    pub max_iter: usize,
}

impl IterationConfig {
    pub fn new(alpha: f64, tol: f64, max_iter: usize) -> Result<Self> {
        let cfg = Self { alpha, tol, max_iter };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(NemonError::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(NemonError::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(NemonError::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for IterationConfig {
    /// Residual tolerance 1e-6 with a 500-iteration budget; `alpha` must be
    /// chosen by the caller (1.0 here, i.e. Picard, as a neutral default).
    fn default() -> Self {
        Self {
            alpha: 1.0,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// Residual cap beyond which an iteration is declared divergent.
pub const DIVERGENCE_CAP: f64 = 1e12;

/// Record of one averaged fixed-point run.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// Final iterate (may be non-finite when `converged` is false).
    pub iterate: Vec<f64>,
    /// Residual `|x_{k+1} - x_k|` per step, in the run's norm.
    pub residuals: Vec<f64>,
    /// True iff the last residual is at or below the tolerance.
    pub converged: bool,
    /// Number of steps taken (equals `residuals.len()`).
    pub iterations: usize,
}

impl IterationTrace {
    pub fn last_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Lipschitz / one-sided Lipschitz summary of a map, with the condition
/// numbers used by the step-size theory.
#[derive(Debug, Clone, Copy)]
pub struct ContractionConstants {
    /// One-sided Lipschitz constant osL(F).
    pub osl: f64,
    /// Lipschitz constant Lip(F).
    pub lip: f64,
    /// Lower bound on Jacobian diagonals, diagL(F) (nonpositive by clamping).
    pub diagl: f64,
    /// kappa = (1 + lip) / (1 - osl)  (infinite when osl >= 1).
    pub kappa: f64,
    /// kappa_inf = (1 - diagl) / (1 - osl) <= kappa.
    pub kappa_inf: f64,
}

impl ContractionConstants {
    pub fn new(osl: f64, lip: f64, diagl: f64) -> Self {
        let (kappa, kappa_inf) = if osl < 1.0 {
            ((1.0 + lip) / (1.0 - osl), (1.0 - diagl) / (1.0 - osl))
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        Self {
            osl,
            lip,
            diagl,
            kappa,
            kappa_inf,
        }
    }
}

/// Runs the averaged iteration `x_{k+1} = (1 - alpha) x_k + alpha F(x_k)`
/// until the residual `|x_{k+1} - x_k|` (measured in `ns`) drops to
/// `cfg.tol`, the budget `cfg.max_iter` is exhausted, or divergence is
/// detected (non-finite iterate or residual above [`DIVERGENCE_CAP`]).
/// Divergence is reported through `converged = false`, never as a panic.
pub fn average_iteration<F>(
    mut f: F,
    x0: &[f64],
    cfg: &IterationConfig,
    ns: &NormSpec,
) -> Result<IterationTrace>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    cfg.validate()?;
    if x0.len() != ns.dim() {
        return Err(NemonError::DimensionMismatch(format!(
            "iterate length {} does not match norm dimension {}",
            x0.len(),
            ns.dim()
        )));
    }
    let mut x = x0.to_vec();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let fx = f(&x);
        debug_assert_eq!(fx.len(), x.len(), "map changed dimension");
        let mut next = vec![0.0; x.len()];
        for i in 0..x.len() {
            next[i] = (1.0 - cfg.alpha) * x[i] + cfg.alpha * fx[i];
        }
        let diff = linalg::sub(&next, &x);
        // A non-finite iterate would poison the norm; compute it first and
        // let NaN/inf fall through the divergence branch below.
        let residual = if linalg::all_finite(&next) {
            vector_norm(&diff, ns)?
        } else {
            f64::NAN
        };
        residuals.push(residual);
        x = next;
        if residual <= cfg.tol {
            converged = true;
            break;
        }
        if !residual.is_finite() || residual > DIVERGENCE_CAP {
            break;
        }
    }
    let iterations = residuals.len();
    Ok(IterationTrace {
        iterate: x,
        residuals,
        converged,
        iterations,
    })
}

/// Contraction factor `gamma_{l,c}(alpha)` of the averaged map under a
/// Lipschitz bound `l` and one-sided constant `osl = 1 - c`:
/// `gamma = (1 + alpha*c - alpha^2 (l+1)^2 / (1 - alpha (l+1)))^{-1}`,
/// valid on the open interval `0 < alpha < c / ((c + l + 1)(l + 1))`.
pub fn gamma_contraction_factor(alpha: f64, lip: f64, c: f64) -> Result<f64> {
    if !(lip >= 0.0) {
        return Err(NemonError::InvalidArgument("lip must be nonnegative".into()));
    }
    if !(c > 0.0) {
        return Err(NemonError::InvalidArgument("c must be positive".into()));
    }
    let s = lip + 1.0;
    let upper = c / ((c + s) * s);
    if !(alpha > 0.0 && alpha < upper) {
        return Err(NemonError::InvalidArgument(format!(
            "alpha = {alpha} outside the open domain (0, {upper})"
        )));
    }
    let xi = 1.0 + alpha * c - alpha * alpha * s * s / (1.0 - alpha * s);
    Ok(1.0 / xi)
}

/// Optimal averaging step for the general (norm-agnostic) analysis: given
/// `Lip(F) = lip` and `osL(F) = osl < 1`, returns the minimizer `alpha*` of
/// the contraction factor together with the factor itself.
///
/// With `c = 1 - osl` and `s = lip + 1`, stationarity of
/// `xi(alpha) = 1 + alpha c - alpha^2 s^2 / (1 - alpha s)` gives
/// `alpha* = (1/s)(1 - sqrt(s / (c + s)))`, which always lies strictly
/// inside the admissible interval; tests validate it against grid search
/// and against the large-kappa series `1 - 1/(4 kappa^2) + O(kappa^{-3})`.
pub fn optimal_alpha_general(lip: f64, osl: f64) -> Result<(f64, f64)> {
    if !(lip >= 0.0) {
        return Err(NemonError::InvalidArgument("lip must be nonnegative".into()));
    }
    if !(osl < 1.0) {
        return Err(NemonError::InvalidArgument(format!(
            "optimal_alpha_general requires osl < 1, got {osl}"
        )));
    }
    let c = 1.0 - osl;
    let s = lip + 1.0;
    let alpha_star = (1.0 - (s / (c + s)).sqrt()) / s;
    let factor = gamma_contraction_factor(alpha_star, lip, c)?;
    debug_assert!(alpha_star > 0.0 && alpha_star < c / ((c + s) * s));
    debug_assert!(factor > 0.0 && factor < 1.0);
    Ok((alpha_star, factor))
}

/// Optimal averaging step for the `l_inf` analysis: `alpha* = 1 / (1 -
/// diagl)` (clamped to 1) with contraction factor `1 - alpha*(1 - osl)`,
/// i.e. `1 - 1/kappa_inf` when the clamp is inactive.
pub fn optimal_alpha_linf(osl: f64, diagl: f64) -> Result<(f64, f64)> {
    if !(osl < 1.0) {
        return Err(NemonError::InvalidArgument(format!(
            "optimal_alpha_linf requires osl < 1, got {osl}"
        )));
    }
    if diagl > osl {
        return Err(NemonError::InvalidArgument(format!(
            "diagl = {diagl} must not exceed osl = {osl}"
        )));
    }
    let alpha_star = (1.0 / (1.0 - diagl)).min(1.0);
    let factor = 1.0 - alpha_star * (1.0 - osl);
    Ok((alpha_star, factor))
}

/// Sensitivity of a parametrized fixed point to its parameter: if the map is
/// `lip_u`-Lipschitz in `u` and one-sided `osl_x < 1` in `x`, then
/// `|x*_u - x*_v| <= lip_u / (1 - osl_x) * |u - v|`.
pub fn perturbed_fixed_point_bound(lip_u: f64, osl_x: f64, input_distance: f64) -> Result<f64> {
    if !(lip_u >= 0.0) || !(input_distance >= 0.0) {
        return Err(NemonError::InvalidArgument(
            "lip_u and input_distance must be nonnegative".into(),
        ));
    }
    if !(osl_x < 1.0) {
        return Err(NemonError::InvalidArgument(format!(
            "perturbed_fixed_point_bound requires osl_x < 1, got {osl_x}"
        )));
    }
    Ok(lip_u / (1.0 - osl_x) * input_distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve_linear, Matrix};
    use crate::measures::{matrix_measure, matrix_norm, parametrize_bounded_measure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_linear_contraction_halves_residuals() {
        let cfg = IterationConfig::new(1.0, 1e-8, 200).unwrap();
        let ns = NormSpec::linf(1);
        let trace = average_iteration(|x| vec![0.5 * x[0]], &[1.0], &cfg, &ns).unwrap();
        assert!(trace.converged);
        assert!(trace.iterate[0].abs() < 1e-8);
        for w in trace.residuals.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-9, "ratio should be exactly 0.5");
        }
    }

    #[test]
    fn identity_map_converges_immediately() {
        let cfg = IterationConfig::new(0.7, 1e-10, 50).unwrap();
        let ns = NormSpec::linf(3);
        let x0 = [1.0, -2.0, 3.0];
        let trace = average_iteration(|x| x.to_vec(), &x0, &cfg, &ns).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations, 1);
        assert_eq!(trace.residuals, vec![0.0]);
        assert_eq!(trace.iterate, x0.to_vec());
    }

    #[test]
    fn affine_map_fixed_point_matches_direct_solve() {
        // F(x) = Ax + b with mu_inf(A) = 0.5; fixed point solves (I - A)x = b.
        let a = Matrix::from_rows(&[vec![0.25, 0.25], vec![0.1, 0.4]]).unwrap();
        assert_eq!(matrix_measure(&a, &NormSpec::linf(2)).unwrap(), 0.5);
        let b = [1.0, -2.0];
        let i_minus_a = a.map(|v| -v).plus_scaled_identity(1.0);
        let direct = solve_linear(&i_minus_a, &b).unwrap();
        let cfg = IterationConfig::new(1.0, 1e-12, 2000).unwrap();
        let ns = NormSpec::linf(2);
        let trace = average_iteration(
            |x| {
                let mut fx = a.matvec(x);
                fx[0] += b[0];
                fx[1] += b[1];
                fx
            },
            &[0.0, 0.0],
            &cfg,
            &ns,
        )
        .unwrap();
        assert!(trace.converged);
        for i in 0..2 {
            assert!((trace.iterate[i] - direct[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_is_reported_not_panicked() {
        let cfg = IterationConfig::new(1.0, 1e-8, 100).unwrap();
        let ns = NormSpec::linf(1);
        let trace = average_iteration(|x| vec![3.0 * x[0] + 1.0], &[1.0], &cfg, &ns).unwrap();
        assert!(!trace.converged);
        // Residuals triple each step until the cap trips.
        assert!(trace.iterations < 100, "cap should fire before the budget");
        let trace = average_iteration(|_| vec![f64::NAN], &[1.0], &cfg, &ns).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.iterations, 1);
    }

    #[test]
    fn residual_ratios_respect_certified_contraction_factor() {
        // Affine nets built by the bounded-measure parametrization; alpha
        // from the l_inf rule must contract at least at the certified rate.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 6;
            let t_data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = Matrix::new(n, n, t_data).unwrap();
            let a = parametrize_bounded_measure(&t, 0.8);
            let ns = NormSpec::linf(n);
            let mu = matrix_measure(&a, &ns).unwrap();
            let diagl = (0..n).fold(0.0_f64, |m, i| m.min(a.get(i, i)));
            let (alpha, factor) = optimal_alpha_linf(mu.max(0.0), diagl).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cfg = IterationConfig::new(alpha, 1e-10, 5000).unwrap();
            let trace = average_iteration(
                |x| {
                    let mut fx = a.matvec(x);
                    for i in 0..n {
                        fx[i] += b[i];
                    }
                    fx
                },
                &vec![0.0; n],
                &cfg,
                &ns,
            )
            .unwrap();
            assert!(trace.converged);
            for w in trace.residuals.windows(2) {
                assert!(
                    w[1] <= factor * w[0] + 1e-9,
                    "ratio {} exceeded certified factor {factor}",
                    w[1] / w[0]
                );
            }
        }
    }

    #[test]
    fn picard_diverges_where_averaging_converges() {
        // mu_inf(A) = 0.9 but |A|_inf = 6.9 with strongly negative diagonal:
        // Picard explodes, the accelerated step contracts.
        let a = Matrix::from_rows(&[vec![-3.0, 3.9], vec![3.9, -3.0]]).unwrap();
        let ns = NormSpec::linf(2);
        assert!((matrix_measure(&a, &ns).unwrap() - 0.9).abs() < 1e-12);
        assert!(matrix_norm(&a, &ns).unwrap() >= 3.0);
        let relu = |z: f64| z.max(0.0);
        let b = [1.0, 0.1];
        let map = |x: &[f64]| {
            let mut fx = a.matvec(x);
            fx[0] = relu(fx[0] + b[0]);
            fx[1] = relu(fx[1] + b[1]);
            fx
        };
        let picard = IterationConfig::new(1.0, 1e-8, 50).unwrap();
        let trace = average_iteration(map, &[0.0, 0.0], &picard, &ns).unwrap();
        assert!(!trace.converged, "Picard should diverge on this instance");
        let first = trace.residuals[0];
        assert!(
            trace.last_residual() > 10.0 * first,
            "residual should blow up by 10x within 50 steps"
        );
        let (alpha, _) = optimal_alpha_linf(0.9, -3.0).unwrap();
        let avg = IterationConfig::new(alpha, 1e-8, 20_000).unwrap();
        let trace = average_iteration(map, &[0.0, 0.0], &avg, &ns).unwrap();
        assert!(trace.converged, "averaged iteration should converge");
    }

    #[test]
    fn gamma_contraction_factor_examples() {
        // alpha -> 0+ drives the factor to 1.
        let g = gamma_contraction_factor(1e-12, 1.0, 0.5).unwrap();
        assert!((g - 1.0).abs() < 1e-9);
        // Closed-form check: l=1, c=0.5, alpha=0.05 gives exactly 72/73.
        let g = gamma_contraction_factor(0.05, 1.0, 0.5).unwrap();
        assert!((g - 72.0 / 73.0).abs() < 1e-12);
        // Domain endpoints are rejected.
        assert!(gamma_contraction_factor(0.1, 1.0, 0.5).is_err());
        assert!(gamma_contraction_factor(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn optimal_alpha_general_matches_known_point_and_series() {
        let (alpha, factor) = optimal_alpha_general(1.0, 0.5).unwrap();
        // alpha* = (1/2)(1 - sqrt(0.8)).
        let expected_alpha = 0.5 * (1.0 - 0.8_f64.sqrt());
        assert!((alpha - expected_alpha).abs() < 1e-15);
        assert!((alpha - 0.0527864).abs() < 1e-6);
        assert!((factor - 0.98626).abs() < 1e-4);
        // Strictly inside the admissible interval.
        let upper = 0.5 / ((0.5 + 2.0) * 2.0);
        assert!(alpha > 0.0 && alpha < upper);
        // Series agreement at kappa = 4.
        let kappa: f64 = 4.0;
        let series = 1.0 - 1.0 / (4.0 * kappa * kappa) + 1.0 / (8.0 * kappa * kappa * kappa);
        assert!((factor - series).abs() < 5e-4);
        assert!(optimal_alpha_general(1.0, 1.0).is_err());
    }

    #[test]
    fn optimal_alpha_general_beats_grid_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let lip = rng.gen_range(0.0..4.0);
            let osl = rng.gen_range(-2.0..0.95);
            let (alpha_star, factor) = optimal_alpha_general(lip, osl).unwrap();
            let c = 1.0 - osl;
            let s = lip + 1.0;
            let upper = c / ((c + s) * s);
            assert!(alpha_star > 0.0 && alpha_star < upper);
            for k in 1..1000 {
                let alpha = upper * k as f64 / 1000.0;
                if let Ok(g) = gamma_contraction_factor(alpha, lip, c) {
                    assert!(
                        factor <= g + 1e-12,
                        "grid alpha {alpha} got factor {g} below optimum {factor}"
                    );
                }
            }
        }
    }

    #[test]
    fn optimal_alpha_linf_examples() {
        let (alpha, factor) = optimal_alpha_linf(0.5, -3.5).unwrap();
        assert!((alpha - 2.0 / 9.0).abs() < 1e-15);
        assert!((factor - 8.0 / 9.0).abs() < 1e-15);
        let (alpha, factor) = optimal_alpha_linf(0.0, 0.0).unwrap();
        assert_eq!((alpha, factor), (1.0, 0.0));
        let (alpha, factor) = optimal_alpha_linf(0.9, -1.0).unwrap();
        assert!((alpha - 0.5).abs() < 1e-15);
        assert!((factor - 0.95).abs() < 1e-15);
        assert!(optimal_alpha_linf(1.0, -1.0).is_err());
    }

    #[test]
    fn perturbed_bound_examples() {
        assert!((perturbed_fixed_point_bound(2.0, 0.5, 0.1).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(perturbed_fixed_point_bound(0.0, 0.5, 1.0).unwrap(), 0.0);
        assert!(perturbed_fixed_point_bound(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn iteration_config_validation() {
        assert!(IterationConfig::new(0.0, 1e-6, 10).is_err());
        assert!(IterationConfig::new(1.1, 1e-6, 10).is_err());
        assert!(IterationConfig::new(0.5, 0.0, 10).is_err());
        assert!(IterationConfig::new(0.5, 1e-6, 0).is_err());
        assert!(IterationConfig::new(1.0, 1e-6, 1).is_ok());
    }

    #[test]
    fn contraction_constants_condition_numbers() {
        let cc = ContractionConstants::new(0.5, 5.5, -3.5);
        assert!((cc.kappa - 13.0).abs() < 1e-12);
        assert!((cc.kappa_inf - 9.0).abs() < 1e-12);
        assert!(cc.kappa_inf <= cc.kappa);
        let bad = ContractionConstants::new(1.5, 2.0, -1.0);
        assert!(bad.kappa.is_infinite());
    }
}

//! Continuous D-optimal design over candidate feature vectors.
//!
//! `solve_doptimal` runs a multiplicative weight iteration from uniform:
//! each step rescales every weight by its leverage φᵀM(ω)⁻¹φ and
//! renormalizes. That update never decreases log det M(ω) (it is a growth
//! transform for the determinant polynomial, whose coefficients are mixed
//! discriminants of PSD matrices and hence non-negative — the ridge term
//! included), so the objective is asserted monotone per step. Convergence is
//! certified by the Kiefer–Wolfowitz equivalence condition: at the optimum
//! the maximum leverage equals the feature dimension d, so we stop when
//! `max_i ℓ_i ≤ d·(1 + tolerance)`.
//!
//! The information matrix always carries a small trace-scaled ridge. Real
//! candidate sets contain near-duplicates, so the ridgeless matrix is
//! rank-deficient in practice; the ridge keeps the solve well-posed while
//! leverages — which only probe spanned directions — are essentially
//! unchanged. Because the ridge scales with the trace, rescaling every
//! feature vector by a common factor reproduces the identical iterate
//! sequence.

use nalgebra::{Cholesky, DMatrix, Dyn};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MAX_ITERATIONS: usize = 5000;
/// Default coreset threshold 𝒯; configs may drop to 5e-3 when nothing clears it.
pub const DEFAULT_THRESHOLD: f64 = 1e-2;
pub const DEFAULT_MIN_CORESET: usize = 10;

/// Weights above this count toward the reported support size.
const SUPPORT_EPS: f64 = 1e-6;
const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("candidate feature matrix is empty")]
    Empty,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("weight vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weights are not a probability vector: {detail}")]
    InvalidWeights { detail: String },
    #[error("information matrix is singular even after ridging")]
    SingularInformation,
}

/// Solver output: the design ω plus the convergence certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignWeights {
    /// One weight per candidate row; non-negative, sums to 1 within 1e-9.
    pub weights: Vec<f64>,
    /// Final equivalence gap max_i φᵀM⁻¹φ; equals d at the exact optimum.
    pub gap: f64,
    /// log det M(ω) of the ridged information matrix at the returned ω.
    pub log_det: f64,
    pub iterations: usize,
    /// Ridge λ actually used (fixed from the uniform-init trace).
    pub ridge: f64,
    /// Whether the gap condition was met before `max_iterations`.
    pub converged: bool,
    /// Number of weights above 1e-6. Values beyond d(d+1)/2 are worth a log
    /// line but are not an error: the relaxation has no hard support bound.
    pub support_size: usize,
}

/// Thresholded coreset 𝒦(T): candidates whose weight strictly exceeds the
/// threshold, padded back up to `min_size` with the heaviest excluded ones.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoresetSelection {
    /// Selected candidate uids, sorted by descending weight (ties: lower uid).
    pub indices: Vec<u64>,
    pub threshold_used: f64,
    pub min_size: usize,
}

fn check_features(features: &DMatrix<f64>) -> Result<(), DesignError> {
    if features.nrows() == 0 || features.ncols() == 0 {
        return Err(DesignError::Empty);
    }
    for col in 0..features.ncols() {
        for row in 0..features.nrows() {
            if !features[(row, col)].is_finite() {
                return Err(DesignError::NonFiniteFeature { row, col });
            }
        }
    }
    Ok(())
}

/// Σ_i ω_i φ_i φ_iᵀ without the ridge.
fn information_matrix(features: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut scaled = features.clone();
    for (i, &w) in weights.iter().enumerate() {
        let s = w.max(0.0).sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    scaled.transpose() * scaled
}

pub(crate) fn cholesky_ridged(
    m: &DMatrix<f64>,
    ridge: f64,
) -> Result<Cholesky<f64, Dyn>, DesignError> {
    // A handful of ridge bumps covers pathologically conditioned inputs;
    // with any positive ridge the matrix is PD in exact arithmetic.
    let mut lambda = ridge;
    for _ in 0..8 {
        let mut ridged = m.clone();
        for k in 0..ridged.nrows() {
            ridged[(k, k)] += lambda;
        }
        if let Some(chol) = Cholesky::new(ridged) {
            return Ok(chol);
        }
        lambda = if lambda > 0.0 { lambda * 10.0 } else { 1e-300 };
    }
    Err(DesignError::SingularInformation)
}

fn log_det_of(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Leverages ℓ_i = φ_iᵀ M⁻¹ φ_i for every row, via one multi-RHS solve.
fn leverages(features: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> Vec<f64> {
    let ft = features.transpose();
    let solved = chol.solve(&ft);
    (0..features.nrows())
        .map(|i| ft.column(i).dot(&solved.column(i)))
        .collect()
}

/// Maximizes log det M(ω) over the simplex, starting uniform. Stops when the
/// equivalence gap reaches `d·(1 + tolerance)` or after `max_iterations`
/// multiplicative updates, whichever comes first.
pub fn solve_doptimal(
    features: &DMatrix<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<DesignWeights, DesignError> {
    check_features(features)?;
    let (n, d) = (features.nrows(), features.ncols());
    let mut weights = vec![1.0 / n as f64; n];

    let m0 = information_matrix(features, &weights);
    let trace0 = m0.diagonal().sum();
    if trace0 <= 0.0 {
        // All-zero feature matrix: every design is equally (un)informative.
        return Ok(DesignWeights {
            weights,
            gap: 0.0,
            log_det: f64::NEG_INFINITY,
            iterations: 0,
            ridge: 0.0,
            converged: true,
            support_size: 0,
        });
    }
    // Fixed for the whole solve so the objective never shifts under us.
    let ridge = RIDGE_SCALE * trace0 / d as f64;
    let stop_gap = d as f64 * (1.0 + tolerance);

    let mut iterations = 0;
    let mut converged = false;
    let mut log_det = f64::NEG_INFINITY;
    let mut gap;

    loop {
        let m = information_matrix(features, &weights);
        let chol = cholesky_ridged(&m, ridge)?;
        let last_log_det = log_det;
        log_det = log_det_of(&chol);
        debug_assert!(
            log_det >= last_log_det - 1e-9 * (1.0 + last_log_det.abs()),
            "objective decreased: {last_log_det} -> {log_det}",
        );

        let lev = leverages(features, &chol);
        gap = lev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if gap <= stop_gap {
            converged = true;
            break;
        }
        if iterations >= max_iterations {
            break;
        }

        // Growth transform: ω_i ∝ ω_i·ℓ_i. The normalizer Σωℓ equals d only
        // in the ridgeless case, so compute it.
        let total: f64 = weights.iter().zip(&lev).map(|(w, l)| w * l).sum();
        debug_assert!(total > 0.0);
        for (w, l) in weights.iter_mut().zip(&lev) {
            *w *= l / total;
        }
        iterations += 1;
    }

    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    let support_size = weights.iter().filter(|&&w| w > SUPPORT_EPS).count();

    Ok(DesignWeights { weights, gap, log_det, iterations, ridge, converged, support_size })
}

/// Kiefer–Wolfowitz equivalence gap max_i φ_iᵀ M(ω)⁻¹ φ_i for arbitrary
/// valid weights, with the same trace-scaled ridge policy as the solver.
pub fn equivalence_gap(features: &DMatrix<f64>, weights: &[f64]) -> Result<f64, DesignError> {
    check_features(features)?;
    if weights.len() != features.nrows() {
        return Err(DesignError::DimensionMismatch {
            expected: features.nrows(),
            got: weights.len(),
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < -1e-12) || (sum - 1.0).abs() > 1e-6 {
        return Err(DesignError::InvalidWeights {
            detail: format!("sum = {sum}, entries must be non-negative"),
        });
    }
    let m = information_matrix(features, weights);
    let trace = m.diagonal().sum();
    if trace <= 0.0 {
        return Err(DesignError::SingularInformation);
    }
    let ridge = RIDGE_SCALE * trace / features.ncols() as f64;
    let chol = cholesky_ridged(&m, ridge)?;
    Ok(leverages(features, &chol).into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Applies the strict threshold filter ω > T, then pads with the
/// highest-weight excluded candidates (ties broken toward lower uid) until
/// `min_size` is reached or everything is included. `uids[i]` labels row i.
pub fn extract_coreset(
    design: &DesignWeights,
    uids: &[u64],
    threshold: f64,
    min_size: usize,
) -> Result<CoresetSelection, DesignError> {
    if uids.len() != design.weights.len() {
        return Err(DesignError::DimensionMismatch {
            expected: design.weights.len(),
            got: uids.len(),
        });
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut excluded: Vec<usize> = Vec::new();
    for (i, &w) in design.weights.iter().enumerate() {
        if w > threshold {
            selected.push(i);
        } else {
            excluded.push(i);
        }
    }
    if selected.len() < min_size {
        excluded.sort_by(|&a, &b| {
            design.weights[b]
                .partial_cmp(&design.weights[a])
                .unwrap()
                .then(uids[a].cmp(&uids[b]))
        });
        let need = (min_size - selected.len()).min(excluded.len());
        selected.extend(excluded.into_iter().take(need));
    }
    selected.sort_by(|&a, &b| {
        design.weights[b]
            .partial_cmp(&design.weights[a])
            .unwrap()
            .then(uids[a].cmp(&uids[b]))
    });
    Ok(CoresetSelection {
        indices: selected.into_iter().map(|i| uids[i]).collect(),
        threshold_used: threshold,
        min_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn orthonormal_basis_is_already_optimal() {
        let features = DMatrix::<f64>::identity(4, 4);
        let out = solve_doptimal(&features, 1e-3, 100).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0, "uniform on an orthonormal basis is the optimum");
        for w in &out.weights {
            assert!((w - 0.25).abs() < 1e-12);
        }
        assert!((out.gap - 4.0).abs() < 1e-6);
    }

    #[test]
    fn identical_vectors_keep_uniform_weights() {
        let features = DMatrix::from_element(6, 1, 2.0);
        let out = solve_doptimal(&features, 1e-3, 100).unwrap();
        assert!(out.converged);
        for w in &out.weights {
            assert!((w - 1.0 / 6.0).abs() < 1e-12, "ties stay uniform");
        }
        assert!((out.gap - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weights_form_a_probability_vector() {
        let features = random_features(5, 40, 5);
        let out = solve_doptimal(&features, 1e-3, 5000).unwrap();
        assert!(out.converged, "gap {} after {} iterations", out.gap, out.iterations);
        assert!(out.gap <= 5.0 * 1.001 + 1e-12);
        let sum: f64 = out.weights.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
        assert!(out.weights.iter().all(|&w| w >= 0.0));
        assert!(out.support_size <= 40);
    }

    /// Exhaustive simplex-grid oracle on small instances: no grid point may
    /// beat the solver by more than 1e-6 in log det (same ridge).
    #[test]
    fn no_grid_design_beats_the_solver() {
        for seed in 0..4u64 {
            let n = 3 + (seed as usize % 2); // 3 or 4 keeps the grid small
            let d = 1 + (seed as usize % 3);
            let features = random_features(100 + seed, n, d);
            let out = solve_doptimal(&features, 1e-9, 300_000).unwrap();
            assert!(out.converged, "tight solve should converge on tiny instances");

            let mut best = f64::NEG_INFINITY;
            let units = 50; // grid step 0.02
            let mut partial = vec![0usize; n];
            grid_walk(&mut partial, 0, units, &mut |parts| {
                let w: Vec<f64> = parts.iter().map(|&u| u as f64 / units as f64).collect();
                let m = information_matrix(&features, &w);
                if let Ok(chol) = cholesky_ridged(&m, out.ridge) {
                    best = best.max(log_det_of(&chol));
                }
            });
            assert!(
                out.log_det >= best - 1e-6,
                "seed {seed}: solver {} vs grid best {best}",
                out.log_det
            );
        }
    }

    fn grid_walk(partial: &mut Vec<usize>, i: usize, left: usize, f: &mut impl FnMut(&[usize])) {
        if i + 1 == partial.len() {
            partial[i] = left;
            f(partial);
            return;
        }
        for take in 0..=left {
            partial[i] = take;
            grid_walk(partial, i + 1, left - take, f);
        }
    }

    #[test]
    fn rescaling_all_features_changes_nothing() {
        let features = random_features(9, 25, 4);
        let scaled = features.map(|v| v * 37.5);
        let a = solve_doptimal(&features, 1e-3, 5000).unwrap();
        let b = solve_doptimal(&scaled, 1e-3, 5000).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let features = random_features(13, 30, 4);
        let a = solve_doptimal(&features, 1e-3, 5000).unwrap();
        let b = solve_doptimal(&features, 1e-3, 5000).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.gap, b.gap);
    }

    #[test]
    fn rank_deficient_features_still_converge() {
        // third column identically zero: the span has dimension 2 of 3
        let mut features = random_features(21, 20, 3);
        for i in 0..20 {
            features[(i, 2)] = 0.0;
        }
        let out = solve_doptimal(&features, 1e-3, 5000).unwrap();
        // leverages only probe spanned directions, so the gap settles near
        // the rank, comfortably under d(1+tol)
        assert!(out.converged);
        assert!(out.gap <= 3.0 * 1.001);
        assert!(equivalence_gap(&features, &out.weights).is_ok());
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            solve_doptimal(&DMatrix::<f64>::zeros(0, 3), 1e-3, 10),
            Err(DesignError::Empty)
        ));
        let mut bad = random_features(1, 4, 2);
        bad[(2, 1)] = f64::NAN;
        assert!(matches!(
            solve_doptimal(&bad, 1e-3, 10),
            Err(DesignError::NonFiniteFeature { row: 2, col: 1 })
        ));
        let features = random_features(2, 4, 2);
        assert!(matches!(
            equivalence_gap(&features, &[0.5, 0.5]),
            Err(DesignError::DimensionMismatch { expected: 4, got: 2 })
        ));
        assert!(matches!(
            equivalence_gap(&features, &[0.7, 0.5, -0.1, -0.1]),
            Err(DesignError::InvalidWeights { .. })
        ));
        let zeros = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(
            equivalence_gap(&zeros, &uniform(3)),
            Err(DesignError::SingularInformation)
        ));
    }

    #[test]
    fn all_zero_features_fall_back_to_uniform() {
        let out = solve_doptimal(&DMatrix::<f64>::zeros(5, 3), 1e-3, 10).unwrap();
        assert!(out.converged);
        assert_eq!(out.gap, 0.0);
        for w in &out.weights {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn gap_on_orthonormal_uniform_equals_dimension() {
        let features = DMatrix::<f64>::identity(3, 3);
        let gap = equivalence_gap(&features, &uniform(3)).unwrap();
        assert!((gap - 3.0).abs() < 1e-6);
    }

    #[test]
    fn gap_on_skewed_points_exceeds_dimension() {
        // three points in the plane, far from any optimal spread
        let features = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.9, 0.1, 0.1, 2.0]);
        let gap = equivalence_gap(&features, &uniform(3)).unwrap();
        // independent check: M = (1/3)ΣφφᵀM, leverage of the outlier row
        let m = information_matrix(&features, &uniform(3));
        let inv = m.clone().try_inverse().unwrap();
        let expected = (0..3)
            .map(|i| {
                let phi = features.row(i).transpose();
                (phi.transpose() * &inv * &phi)[(0, 0)]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(gap > 2.0);
        assert!((gap - expected).abs() < 1e-6 * expected);
    }

    fn design_with(weights: Vec<f64>) -> DesignWeights {
        DesignWeights {
            weights,
            gap: 0.0,
            log_det: 0.0,
            iterations: 0,
            ridge: 0.0,
            converged: true,
            support_size: 0,
        }
    }

    #[test]
    fn coreset_threshold_is_strict() {
        let design = design_with(vec![0.5, 0.3, 0.1, 0.1]);
        let uids = [10, 11, 12, 13];
        let sel = extract_coreset(&design, &uids, 0.1, 0).unwrap();
        assert_eq!(sel.indices, vec![10, 11], "exactly-at-threshold rows stay out");
    }

    #[test]
    fn coreset_pads_to_min_size_by_weight_then_uid() {
        let design = design_with(vec![0.05, 0.5, 0.05, 0.3, 0.1]);
        let uids = [20, 21, 22, 23, 24];
        let sel = extract_coreset(&design, &uids, 0.2, 4).unwrap();
        // 21, 23 pass; padding takes 0.1 (uid 24) then the 0.05 tie -> lower uid 20
        assert_eq!(sel.indices, vec![21, 23, 24, 20]);
    }

    #[test]
    fn coreset_all_below_threshold_takes_top_by_weight() {
        let mut weights: Vec<f64> = (0..64).map(|i| (i as f64 + 1.0) * 1e-4).collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        let uids: Vec<u64> = (0..64).collect();
        let sel = extract_coreset(&design_with(weights), &uids, 0.9, 10).unwrap();
        assert_eq!(sel.indices.len(), 10);
        assert_eq!(sel.indices, (54..64).rev().collect::<Vec<u64>>());
    }

    #[test]
    fn coreset_zero_threshold_keeps_positive_weights() {
        let design = design_with(vec![0.6, 0.0, 0.4]);
        let sel = extract_coreset(&design, &[1, 2, 3], 0.0, 0).unwrap();
        assert_eq!(sel.indices, vec![1, 3]);
    }

    #[test]
    fn coreset_requires_matching_uid_count() {
        let design = design_with(vec![1.0]);
        assert!(matches!(
            extract_coreset(&design, &[1, 2], 0.0, 0),
            Err(DesignError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Solve from uniform: the objective can only improve, the output is
        /// a probability vector, and the pre-padding coreset shrinks as the
        /// threshold grows.
        #[test]
        fn solver_invariants(seed in 0u64..10_000, n in 2usize..24, d in 1usize..6) {
            let features = random_features(seed, n, d);
            let out = solve_doptimal(&features, 1e-3, 2000).unwrap();
            let sum: f64 = out.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(out.weights.iter().all(|&w| w >= 0.0 && w.is_finite()));
            prop_assert!(out.gap.is_finite() && out.gap > 0.0);

            let m_uniform = information_matrix(&features, &uniform(n));
            let chol = cholesky_ridged(&m_uniform, out.ridge).unwrap();
            prop_assert!(out.log_det >= log_det_of(&chol) - 1e-9);

            let uids: Vec<u64> = (0..n as u64).collect();
            let lo = extract_coreset(&out, &uids, 0.05, 0).unwrap();
            let hi = extract_coreset(&out, &uids, 0.2, 0).unwrap();
            for uid in &hi.indices {
                prop_assert!(lo.indices.contains(uid), "monotone threshold pre-padding");
            }
        }

        /// Padding never overshoots and never duplicates.
        #[test]
        fn coreset_padding_is_exact(
            raw in proptest::collection::vec(0.0f64..1.0, 1..40),
            threshold in 0.0f64..0.5,
            min_size in 0usize..20,
        ) {
            let sum: f64 = raw.iter().sum::<f64>().max(1e-12);
            let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
            let n = weights.len();
            let uids: Vec<u64> = (0..n as u64).map(|u| u * 3 + 5).collect();
            let base = weights.iter().filter(|&&w| w > threshold).count();
            let sel = extract_coreset(&design_with(weights.clone()), &uids, threshold, min_size).unwrap();
            prop_assert_eq!(sel.indices.len(), base.max(min_size.min(n)).min(n).max(base));
            let mut dedup = sel.indices.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), sel.indices.len(), "no duplicates");
            // descending weight order
            let weight_of = |uid: u64| weights[uids.iter().position(|&u| u == uid).unwrap()];
            for pair in sel.indices.windows(2) {
                prop_assert!(weight_of(pair[0]) >= weight_of(pair[1]));
            }
        }
    }
}

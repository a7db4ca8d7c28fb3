//! Density-level distances and the measured constants behind the bounds.
//!
//! The central quantity is the variational distance
//! `d_V(P, Q) = sup_A |P(A) - Q(A)| = (1/2) int |p - q|`, computed here by
//! two deliberately different routes:
//!
//! * [`variational_distance`] integrates `|p - q| / 2` directly;
//! * [`scheffe_distance`] integrates the positive part `(p - q)^+`, i.e. the
//!   mass difference on the comparison set `{p > q}`.
//!
//! The two must agree to quadrature accuracy; the acceptance suite leans on
//! that agreement, so neither route may be expressed through the other.
//!
//! For exponential families the module also provides relative entropy (again
//! via two routes: the pointwise log-ratio integral and the natural-parameter
//! form through the log-normalizer and the mean statistic), a Pinsker
//! consistency check, the locality bound on divergence growth, and the
//! sup-norm/L2 ratio of the statistic span that controls how comparison sets
//! can oscillate.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::{euclidean_distance, FamilyKind, ParameterVector, SourceFamily};
use crate::quad::{integrate, scan_points, QuadConfig};

/// Which route produced a distance value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceMethod {
    /// Direct integral of `|p - q| / 2`.
    L1Integral,
    /// Integral of `(p - q)^+` (mass difference on the comparison set).
    PositivePart,
}

/// A distance value together with its cubature error estimate.
#[derive(Clone, Copy, Debug)]
pub struct DistanceReport {
    pub value: f64,
    pub error_estimate: f64,
    pub method: DistanceMethod,
}

/// A divergence value together with its cubature error estimate.
#[derive(Clone, Copy, Debug)]
pub struct DivergenceReport {
    pub value: f64,
    pub error_estimate: f64,
}

/// Variational distance with the default accuracy target.
pub fn variational_distance(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
) -> Result<DistanceReport> {
    variational_distance_with(family, theta, eta, &QuadConfig::default())
}

/// Variational distance via `(1/2) int |p_theta - p_eta|`.
pub fn variational_distance_with(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
    cfg: &QuadConfig,
) -> Result<DistanceReport> {
    let p = family.evaluator(theta)?;
    let q = family.evaluator(eta)?;
    if theta.coords() == eta.coords() {
        return Ok(DistanceReport {
            value: 0.0,
            error_estimate: 0.0,
            method: DistanceMethod::L1Integral,
        });
    }
    let integral = integrate(
        &|x: &[f64]| 0.5 * (p(x) - q(x)).abs(),
        family.support(),
        &family.breakpoints(),
        cfg,
    )?;
    Ok(DistanceReport {
        value: integral.value.clamp(0.0, 1.0),
        error_estimate: integral.error_estimate,
        method: DistanceMethod::L1Integral,
    })
}

/// Variational distance with the default accuracy target, positive-part route.
pub fn scheffe_distance(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
) -> Result<DistanceReport> {
    scheffe_distance_with(family, theta, eta, &QuadConfig::default())
}

/// Variational distance via `int (p_theta - p_eta)^+`, the probability the
/// member `theta` assigns to the set `{p_theta > p_eta}` minus the
/// probability `eta` assigns to it. Requires distinct parameters: for equal
/// ones the comparison set is empty and the route degenerates.
pub fn scheffe_distance_with(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
    cfg: &QuadConfig,
) -> Result<DistanceReport> {
    if theta.coords() == eta.coords() {
        return Err(Error::Parameter(
            "the positive-part route needs distinct parameters".into(),
        ));
    }
    let p = family.evaluator(theta)?;
    let q = family.evaluator(eta)?;
    let integral = integrate(
        &|x: &[f64]| (p(x) - q(x)).max(0.0),
        family.support(),
        &family.breakpoints(),
        cfg,
    )?;
    Ok(DistanceReport {
        value: integral.value.clamp(0.0, 1.0),
        error_estimate: integral.error_estimate,
        method: DistanceMethod::PositivePart,
    })
}

/// Relative entropy `D(P_theta || P_eta)` for exponential-family members,
/// computed as the direct integral of `p_theta ln(p_theta / p_eta)` with the
/// log-ratio taken pointwise from the two density evaluations.
pub fn relative_entropy(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
) -> Result<DivergenceReport> {
    relative_entropy_with(family, theta, eta, &QuadConfig::default())
}

pub fn relative_entropy_with(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
    cfg: &QuadConfig,
) -> Result<DivergenceReport> {
    if family.kind() != FamilyKind::Exponential {
        return Err(Error::UnsupportedFamily(
            "relative entropy is provided for exponential families, whose members \
             share support and keep the log-ratio bounded"
                .into(),
        ));
    }
    let p = family.evaluator(theta)?;
    let q = family.evaluator(eta)?;
    let integral = integrate(
        &|x: &[f64]| {
            let pv = p(x);
            let qv = q(x);
            if pv <= 0.0 {
                0.0
            } else {
                pv * (pv / qv).ln()
            }
        },
        family.support(),
        &family.breakpoints(),
        cfg,
    )?;
    Ok(DivergenceReport {
        value: integral.value,
        error_estimate: integral.error_estimate,
    })
}

/// Relative entropy via the natural-parameter identity
/// `D = g(eta) - g(theta) - (eta - theta) . E_theta[h]`, with the mean
/// statistic estimated by cubature. Cross-checks [`relative_entropy`].
pub fn relative_entropy_natural(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
) -> Result<DivergenceReport> {
    relative_entropy_natural_with(family, theta, eta, &QuadConfig::default())
}

pub fn relative_entropy_natural_with(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
    cfg: &QuadConfig,
) -> Result<DivergenceReport> {
    if family.kind() != FamilyKind::Exponential {
        return Err(Error::UnsupportedFamily(
            "relative entropy is provided for exponential families".into(),
        ));
    }
    let g_theta = family.log_partition(theta)?;
    let g_eta = family.log_partition(eta)?;
    let p = family.evaluator(theta)?;
    let k = family.param_dim();
    let mut value = g_eta - g_theta;
    let mut error = 0.0;
    for j in 0..k {
        let weight = eta[j] - theta[j];
        if weight == 0.0 {
            continue;
        }
        let mean_j = integrate(
            &|x: &[f64]| {
                let stats = family.stat_vector(x).expect("exponential family");
                p(x) * stats[j]
            },
            family.support(),
            &family.breakpoints(),
            cfg,
        )?;
        value -= weight * mean_j.value;
        error += weight.abs() * mean_j.error_estimate;
    }
    Ok(DivergenceReport {
        value,
        error_estimate: error,
    })
}

/// Outcome of the Pinsker consistency check `d_V <= sqrt(D / 2)`.
#[derive(Clone, Copy, Debug)]
pub struct PinskerReport {
    /// Whether the inequality holds within the combined numeric tolerance.
    pub holds: bool,
    /// `sqrt(D/2) - d_V`, the room the inequality has (tolerance excluded).
    pub slack: f64,
    pub distance: DistanceReport,
    pub divergence: DivergenceReport,
}

/// Check `d_V(P_theta, P_eta) <= sqrt(D(P_theta || P_eta) / 2)` with both
/// sides evaluated numerically and their error estimates folded into the
/// verdict.
pub fn pinsker_check(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
) -> Result<PinskerReport> {
    pinsker_check_with(family, theta, eta, &QuadConfig::default())
}

pub fn pinsker_check_with(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
    cfg: &QuadConfig,
) -> Result<PinskerReport> {
    let distance = variational_distance_with(family, theta, eta, cfg)?;
    let divergence = relative_entropy_with(family, theta, eta, cfg)?;
    let bound = (divergence.value.max(0.0) / 2.0).sqrt();
    let bound_high = ((divergence.value + divergence.error_estimate).max(0.0) / 2.0).sqrt();
    let holds = distance.value <= bound_high + distance.error_estimate + 1e-12;
    Ok(PinskerReport {
        holds,
        slack: bound - distance.value,
        distance,
        divergence,
    })
}

/// Locality bound on divergence growth for exponential families:
/// `D(P_theta || P_eta) <= (1/2) e^L e^{2 A r} r^2` with `r = |theta - eta|`,
/// `A` the statistic-span sup-norm ratio, and `L` a uniform bound on the
/// log-ratio between members. `A` and `L` are passed in because they are
/// family-level constants the caller typically measures once.
pub fn divergence_growth_bound(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
    sup_norm_ratio: f64,
    log_ratio_bound: f64,
) -> Result<f64> {
    if family.kind() != FamilyKind::Exponential {
        return Err(Error::UnsupportedFamily(
            "the divergence growth bound applies to exponential families".into(),
        ));
    }
    family.validate_theta(theta)?;
    family.validate_theta(eta)?;
    if !(sup_norm_ratio.is_finite() && sup_norm_ratio >= 0.0) {
        return Err(Error::Parameter(format!(
            "sup-norm ratio must be finite and non-negative, got {sup_norm_ratio}"
        )));
    }
    if !(log_ratio_bound.is_finite() && log_ratio_bound >= 0.0) {
        return Err(Error::Parameter(format!(
            "log-ratio bound must be finite and non-negative, got {log_ratio_bound}"
        )));
    }
    let r = euclidean_distance(theta, eta);
    Ok(0.5 * log_ratio_bound.exp() * (2.0 * sup_norm_ratio * r).exp() * r * r)
}

/// Certified bound on `sup_x |ln(p_theta(x) / p_eta(x))|` over the support
/// of an exponential family: the log-ratio is
/// `(theta - eta) . h(x) - (g(theta) - g(eta))`, whose linear part is
/// bounded per axis on a dense grid with a Lipschitz padding.
pub fn log_ratio_sup(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
) -> Result<f64> {
    if family.kind() != FamilyKind::Exponential {
        return Err(Error::UnsupportedFamily(
            "log-ratio bounds are provided for exponential families".into(),
        ));
    }
    family.validate_theta(theta)?;
    family.validate_theta(eta)?;
    let delta: Vec<f64> = theta.iter().zip(eta.iter()).map(|(a, b)| a - b).collect();
    let minus_delta: Vec<f64> = delta.iter().map(|d| -d).collect();
    let dg = family.log_partition(theta)? - family.log_partition(eta)?;
    // sup |u - dg| = max(sup u - dg, sup(-u) + dg).
    let up = family.linear_stat_sup(&delta) - dg;
    let down = family.linear_stat_sup(&minus_delta) + dg;
    Ok(up.max(down).max(0.0))
}

/// Maximum of [`log_ratio_sup`] over all ordered pairs of grid points: the
/// uniform log-ratio constant of a parameter grid.
pub fn pairwise_log_ratio_sup(
    family: &SourceFamily,
    points: &[ParameterVector],
) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Parameter(
            "a pairwise bound needs at least two grid points".into(),
        ));
    }
    let mut best: f64 = 0.0;
    for (i, theta) in points.iter().enumerate() {
        for eta in points.iter().skip(i + 1) {
            best = best.max(log_ratio_sup(family, theta, eta)?);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Sup-norm / L2 ratio of the statistic span
// ---------------------------------------------------------------------------

/// Result of the statistic-span ratio computation. The value is certified
/// from below (a maximum over scan points); the scan resolution is reported
/// alongside so callers can judge the certification.
#[derive(Clone, Debug)]
pub struct SupNormReport {
    pub value: f64,
    pub scan_points: usize,
    /// Accuracy target used for the moment-matrix entries.
    pub moment_target: f64,
}

/// Sup-norm-to-L2 ratio of the span of `{1, h_1, ..., h_k}` under the
/// carrier: `sup_x sqrt(phi(x)^T G^{-1} phi(x))` with `G` the moment matrix
/// `G_ij = int phi_i phi_j q`. Controls the oscillation of comparison sets
/// and enters the divergence growth bound.
pub fn sup_norm_ratio(family: &SourceFamily) -> Result<SupNormReport> {
    let per_axis = match family.data_dim() {
        1 => 4097,
        2 => 129,
        _ => 33,
    };
    sup_norm_ratio_with(family, per_axis, 1e-13)
}

pub fn sup_norm_ratio_with(
    family: &SourceFamily,
    scan_per_axis: usize,
    moment_target: f64,
) -> Result<SupNormReport> {
    if family.kind() != FamilyKind::Exponential {
        return Err(Error::UnsupportedFamily(
            "the statistic-span ratio applies to exponential families".into(),
        ));
    }
    let carrier = family.carrier().expect("exponential family");
    let m = family.param_dim() + 1;
    let phi = |x: &[f64]| -> Vec<f64> {
        let mut values = Vec::with_capacity(m);
        values.push(1.0);
        values.extend(family.stat_vector(x).expect("exponential family"));
        values
    };

    // Moment matrix of the span under the carrier.
    let cfg = QuadConfig {
        target_abs_error: moment_target,
        ..QuadConfig::default()
    };
    let breakpoints = family.breakpoints();
    let mut gram = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let entry = integrate(
                &|x: &[f64]| {
                    let values = phi(x);
                    carrier.pdf(x) * values[i] * values[j]
                },
                family.support(),
                &breakpoints,
                &cfg,
            )?;
            gram[i][j] = entry.value;
            gram[j][i] = entry.value;
        }
    }

    let chol = cholesky(&gram).ok_or_else(|| {
        Error::LinearDependence(
            "the moment matrix of {1, h_1, ..., h_k} under the carrier is singular".into(),
        )
    })?;

    let points = scan_points(family.support(), &breakpoints, scan_per_axis);
    let mut best: f64 = 0.0;
    for x in &points {
        let values = phi(x);
        let solved = cholesky_solve(&chol, &values);
        let square: f64 = values.iter().zip(&solved).map(|(a, b)| a * b).sum();
        best = best.max(square.max(0.0).sqrt());
    }
    Ok(SupNormReport {
        value: best,
        scan_points: points.len(),
        moment_target,
    })
}

/// Lower-triangular Cholesky factor, or `None` when a pivot degenerates.
fn cholesky(matrix: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = matrix.len();
    let scale = matrix
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut lower = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = lower[i][..j].iter().zip(&lower[j][..j]).map(|(a, b)| a * b).sum();
            let sum = matrix[i][j] - dot;
            if i == j {
                if sum <= 1e-12 * scale {
                    return None;
                }
                lower[i][j] = sum.sqrt();
            } else {
                lower[i][j] = sum / lower[j][j];
            }
        }
    }
    Some(lower)
}

/// Solve `L L^T y = b` by forward and back substitution.
fn cholesky_solve(lower: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = lower.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= lower[i][k] * y[k];
        }
        y[i] = sum / lower[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= lower[k][i] * x[k];
        }
        x[i] = sum / lower[i][i];
    }
    x
}

// ---------------------------------------------------------------------------
// Measured local Lipschitz constant of the distance in the parameter
// ---------------------------------------------------------------------------

/// Measured local Lipschitz constant of `theta -> P_theta` in variational
/// distance over a point set.
#[derive(Clone, Copy, Debug)]
pub struct LipschitzReport {
    /// Largest observed `d_V / |theta - eta|`.
    pub max_ratio: f64,
    /// Number of point pairs that entered the maximum.
    pub pairs_used: usize,
}

/// Scan all pairs of `points` at separation `<= max_separation` and return
/// the largest ratio of variational distance to parameter distance. This is
/// the empirical counterpart of the smoothness constant that converts
/// parameter-grid resolution into distance resolution.
pub fn measured_distance_lipschitz(
    family: &SourceFamily,
    points: &[ParameterVector],
    max_separation: f64,
    cfg: &QuadConfig,
) -> Result<LipschitzReport> {
    if !(max_separation > 0.0 && max_separation.is_finite()) {
        return Err(Error::Parameter(format!(
            "max separation must be positive and finite, got {max_separation}"
        )));
    }
    let mut pairs = Vec::new();
    for (i, theta) in points.iter().enumerate() {
        for eta in points.iter().skip(i + 1) {
            let r = euclidean_distance(theta, eta);
            if r > 0.0 && r <= max_separation {
                pairs.push((theta, eta, r));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Parameter(format!(
            "no point pairs at separation <= {max_separation}"
        )));
    }
    let ratios = pairs
        .par_iter()
        .map(|(theta, eta, r)| {
            variational_distance_with(family, theta, eta, cfg).map(|report| report.value / r)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LipschitzReport {
        max_ratio: ratios.iter().fold(0.0f64, |a, &b| a.max(b)),
        pairs_used: pairs.len(),
    })
}

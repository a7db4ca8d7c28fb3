//! Parametric families of i.i.d. vector sources.
//!
//! Two family shapes are supported, both over a compact axis-aligned support
//! box in `R^d`:
//!
//! * **finite mixtures** — `p_theta = sum_i theta_i q_i` for fixed product
//!   densities `q_i`, with `theta` ranging over the probability simplex;
//! * **truncated exponential families** — `p_theta(x) = q(x) exp(theta .
//!   h(x) - g(theta))` for a fixed carrier `q`, monomial statistics `h`, and
//!   `theta` ranging over a bounded box, where `g` is the log-normalizer.
//!
//! Members are cheap to evaluate pointwise, sampleable by inverse-CDF or
//! rejection, and identified by a content hash over their exact defining
//! numbers, so caches and serialized streams can detect configuration
//! mismatches.

mod axis;
mod parse;

pub use axis::{AxisDensity, ProductDensity};
pub use parse::{load_family, parse_family_str};

use std::ops::Deref;

use dashmap::DashMap;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quad::{integrate, AxisBox, QuadConfig};
use crate::rng::{f64_slice_bytes, StreamKey};

/// A parameter vector. Finiteness is checked at construction; membership in
/// a family's parameter set is checked by the operation that uses it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Parameter("parameter vector must be nonempty".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Parameter(format!(
                "parameter coordinate {bad} is not finite"
            )));
        }
        Ok(ParameterVector(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean distance between coordinate slices of equal length.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Parameter sets
// ---------------------------------------------------------------------------

/// The set the parameter vector ranges over.
#[derive(Clone, Debug, PartialEq)]
pub enum ThetaSpace {
    /// Probability vectors of the given length.
    Simplex { dim: usize },
    /// An axis-aligned box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// Membership tolerance for parameter validation.
const THETA_TOL: f64 = 1e-12;

impl ThetaSpace {
    pub fn dim(&self) -> usize {
        match self {
            ThetaSpace::Simplex { dim } => *dim,
            ThetaSpace::Box { lo, .. } => lo.len(),
        }
    }

    /// Membership up to a 1e-12 tolerance on each constraint.
    pub fn contains(&self, theta: &[f64]) -> bool {
        if theta.len() != self.dim() {
            return false;
        }
        match self {
            ThetaSpace::Simplex { .. } => {
                theta.iter().all(|&c| c >= -THETA_TOL)
                    && (theta.iter().sum::<f64>() - 1.0).abs() <= THETA_TOL
            }
            ThetaSpace::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&c, (&a, &b))| c >= a - THETA_TOL && c <= b + THETA_TOL),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        match self {
            ThetaSpace::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&c, (&a, &b))| c.clamp(a, b))
                .collect(),
            ThetaSpace::Simplex { dim } => {
                // Sort-based projection onto the probability simplex.
                let k = *dim;
                let mut sorted = v.to_vec();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let mut cumulative = 0.0;
                let mut threshold = 0.0;
                for (j, &u) in sorted.iter().enumerate() {
                    cumulative += u;
                    let candidate = (cumulative - 1.0) / (j + 1) as f64;
                    if u - candidate > 0.0 {
                        threshold = candidate;
                    }
                }
                let _ = k;
                v.iter().map(|&c| (c - threshold).max(0.0)).collect()
            }
        }
    }

    /// A canonical interior point.
    pub fn centroid(&self) -> Vec<f64> {
        match self {
            ThetaSpace::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
            ThetaSpace::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| 0.5 * (a + b))
                .collect(),
        }
    }

    /// The smallest axis-aligned box containing the set.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ThetaSpace::Simplex { dim } => (vec![0.0; *dim], vec![1.0; *dim]),
            ThetaSpace::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// A coordinate statistic for exponential families. Distinct monomials on a
/// box with nonempty interior are automatically linearly independent, so
/// construction-time validation reduces to a duplicate check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Statistic {
    /// `x[axis]^power` with `power >= 1`.
    Monomial { axis: usize, power: u32 },
}

impl Statistic {
    pub fn monomial(axis: usize, power: u32) -> Result<Self> {
        if power == 0 {
            return Err(Error::Parameter(
                "a degree-zero statistic is constant and redundant with normalization".into(),
            ));
        }
        if power > 16 {
            return Err(Error::Parameter(format!(
                "statistic degree {power} exceeds the supported maximum 16"
            )));
        }
        Ok(Statistic::Monomial { axis, power })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Statistic::Monomial { axis, power } => x[axis].powi(power as i32),
        }
    }
}

// ---------------------------------------------------------------------------
// The family
// ---------------------------------------------------------------------------

/// Discriminates the two supported family shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    Mixture,
    Exponential,
}

#[derive(Debug)]
enum Shape {
    Mixture {
        components: Vec<ProductDensity>,
    },
    Exponential {
        carrier: ProductDensity,
        stats: Vec<Statistic>,
        /// Log-normalizer cache keyed by the exact parameter bits.
        log_partition: DashMap<Vec<u64>, f64>,
    },
}

/// A parametric family of densities on a compact support box.
#[derive(Debug)]
pub struct SourceFamily {
    data_dim: usize,
    param_dim: usize,
    support: AxisBox,
    theta: ThetaSpace,
    shape: Shape,
    hash: [u8; 32],
}

/// Tolerance for the construction-time normalization audit.
const NORMALIZATION_TOL: f64 = 1e-8;

/// Rejection sampling refuses to run below this acceptance rate.
const MIN_ACCEPTANCE_RATE: f64 = 1e-4;

impl PartialEq for SourceFamily {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}

impl SourceFamily {
    /// Build a finite mixture family. The parameter is the vector of mixture
    /// weights on the probability simplex.
    pub fn mixture(support: AxisBox, components: Vec<ProductDensity>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::Parameter(
                "a mixture family needs at least two components".into(),
            ));
        }
        let d = support.dim();
        for (i, comp) in components.iter().enumerate() {
            if comp.dim() != d {
                return Err(Error::Shape(format!(
                    "component {i} has dimension {}, support has {d}",
                    comp.dim()
                )));
            }
            for (axis, density) in comp.axes().iter().enumerate() {
                let (lo, hi) = density.support();
                if lo < support.lo()[axis] - 1e-12 || hi > support.hi()[axis] + 1e-12 {
                    return Err(Error::Config(format!(
                        "component {i} axis {axis} has support [{lo}, {hi}] outside the family box"
                    )));
                }
            }
        }
        let param_dim = components.len();
        let theta = ThetaSpace::Simplex { dim: param_dim };
        let shape = Shape::Mixture { components };
        let family = SourceFamily {
            data_dim: d,
            param_dim,
            support,
            theta,
            hash: [0; 32],
            shape,
        };
        family.audit_normalization()?;
        Ok(SourceFamily {
            hash: family.compute_hash(),
            ..family
        })
    }

    /// Build a truncated exponential family. The carrier must span the whole
    /// support box on each axis so that members stay positive on the open
    /// box (log-ratios between members are then finite everywhere the
    /// cubature looks).
    pub fn exponential(
        support: AxisBox,
        carrier: ProductDensity,
        stats: Vec<Statistic>,
        theta_lo: Vec<f64>,
        theta_hi: Vec<f64>,
    ) -> Result<Self> {
        let d = support.dim();
        if carrier.dim() != d {
            return Err(Error::Shape(format!(
                "carrier has dimension {}, support has {d}",
                carrier.dim()
            )));
        }
        for (axis, density) in carrier.axes().iter().enumerate() {
            let (lo, hi) = density.support();
            let scale = (support.hi()[axis] - support.lo()[axis]).max(1.0);
            if (lo - support.lo()[axis]).abs() > 1e-12 * scale
                || (hi - support.hi()[axis]).abs() > 1e-12 * scale
            {
                return Err(Error::Config(format!(
                    "carrier axis {axis} support [{lo}, {hi}] must match the family box exactly"
                )));
            }
        }
        if stats.is_empty() {
            return Err(Error::Parameter(
                "an exponential family needs at least one statistic".into(),
            ));
        }
        for stat in &stats {
            let Statistic::Monomial { axis, .. } = stat;
            if *axis >= d {
                return Err(Error::Parameter(format!(
                    "statistic references axis {axis}, data dimension is {d}"
                )));
            }
        }
        for i in 0..stats.len() {
            for j in (i + 1)..stats.len() {
                if stats[i] == stats[j] {
                    return Err(Error::LinearDependence(format!(
                        "statistics {i} and {j} are identical"
                    )));
                }
            }
        }
        let k = stats.len();
        if theta_lo.len() != k || theta_hi.len() != k {
            return Err(Error::Shape(format!(
                "parameter box has {} / {} bounds for {k} statistics",
                theta_lo.len(),
                theta_hi.len()
            )));
        }
        for (i, (&a, &b)) in theta_lo.iter().zip(&theta_hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::Parameter(format!(
                    "parameter axis {i}: need finite lo < hi, got [{a}, {b}]"
                )));
            }
        }
        let family = SourceFamily {
            data_dim: d,
            param_dim: k,
            support,
            theta: ThetaSpace::Box {
                lo: theta_lo,
                hi: theta_hi,
            },
            hash: [0; 32],
            shape: Shape::Exponential {
                carrier,
                stats,
                log_partition: DashMap::new(),
            },
        };
        family.audit_normalization()?;
        Ok(SourceFamily {
            hash: family.compute_hash(),
            ..family
        })
    }

    fn audit_normalization(&self) -> Result<()> {
        let cfg = QuadConfig::with_target(1e-10);
        let breakpoints = self.breakpoints();
        let densities: Vec<&ProductDensity> = match &self.shape {
            Shape::Mixture { components } => components.iter().collect(),
            Shape::Exponential { carrier, .. } => vec![carrier],
        };
        for (i, q) in densities.into_iter().enumerate() {
            let mass = integrate(&|x: &[f64]| q.pdf(x), &self.support, &breakpoints, &cfg)?;
            if (mass.value - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Numerical {
                    context: format!("component {i} integrates to {:.12} over the support", mass.value),
                    achieved: (mass.value - 1.0).abs(),
                });
            }
        }
        Ok(())
    }

    fn compute_hash(&self) -> [u8; 32] {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"uvq-family-v1");
        bytes.extend_from_slice(&(self.data_dim as u64).to_le_bytes());
        bytes.extend_from_slice(&f64_slice_bytes(self.support.lo()));
        bytes.extend_from_slice(&f64_slice_bytes(self.support.hi()));
        match &self.shape {
            Shape::Mixture { components } => {
                bytes.push(1);
                bytes.extend_from_slice(&(components.len() as u64).to_le_bytes());
                for comp in components {
                    comp.hash_bytes(&mut bytes);
                }
            }
            Shape::Exponential { carrier, stats, .. } => {
                bytes.push(2);
                carrier.hash_bytes(&mut bytes);
                bytes.extend_from_slice(&(stats.len() as u64).to_le_bytes());
                for stat in stats {
                    let Statistic::Monomial { axis, power } = stat;
                    bytes.extend_from_slice(&(*axis as u64).to_le_bytes());
                    bytes.extend_from_slice(&(*power as u64).to_le_bytes());
                }
                if let ThetaSpace::Box { lo, hi } = &self.theta {
                    bytes.extend_from_slice(&f64_slice_bytes(lo));
                    bytes.extend_from_slice(&f64_slice_bytes(hi));
                }
            }
        }
        Sha256::digest(&bytes).into()
    }

    // -- accessors ---------------------------------------------------------

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn support(&self) -> &AxisBox {
        &self.support
    }

    pub fn theta_space(&self) -> &ThetaSpace {
        &self.theta
    }

    pub fn kind(&self) -> FamilyKind {
        match self.shape {
            Shape::Mixture { .. } => FamilyKind::Mixture,
            Shape::Exponential { .. } => FamilyKind::Exponential,
        }
    }

    pub fn content_hash(&self) -> &[u8; 32] {
        &self.hash
    }

    pub fn hash_hex(&self) -> String {
        self.hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Mixture components, if this is a mixture family.
    pub fn components(&self) -> Option<&[ProductDensity]> {
        match &self.shape {
            Shape::Mixture { components } => Some(components),
            Shape::Exponential { .. } => None,
        }
    }

    /// Statistics, if this is an exponential family.
    pub fn statistics(&self) -> Option<&[Statistic]> {
        match &self.shape {
            Shape::Exponential { stats, .. } => Some(stats),
            Shape::Mixture { .. } => None,
        }
    }

    /// Carrier density, if this is an exponential family.
    pub fn carrier(&self) -> Option<&ProductDensity> {
        match &self.shape {
            Shape::Exponential { carrier, .. } => Some(carrier),
            Shape::Mixture { .. } => None,
        }
    }

    /// Per-axis kink positions of every component, merged.
    pub fn breakpoints(&self) -> Vec<Vec<f64>> {
        let mut per_axis = vec![Vec::new(); self.data_dim];
        let mut merge = |comp: &ProductDensity| {
            for (axis, pts) in comp.breakpoints().into_iter().enumerate() {
                per_axis[axis].extend(pts);
            }
        };
        match &self.shape {
            Shape::Mixture { components } => components.iter().for_each(&mut merge),
            Shape::Exponential { carrier, .. } => merge(carrier),
        }
        for pts in &mut per_axis {
            pts.sort_by(f64::total_cmp);
            pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
        }
        per_axis
    }

    /// Check that `theta` is a valid parameter for this family.
    pub fn validate_theta(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.param_dim {
            return Err(Error::Shape(format!(
                "parameter has length {}, family expects {}",
                theta.len(),
                self.param_dim
            )));
        }
        if !self.theta.contains(theta) {
            return Err(Error::Parameter(format!(
                "parameter {:?} lies outside the family's parameter set",
                theta.coords()
            )));
        }
        Ok(())
    }

    // -- density evaluation -------------------------------------------------

    /// Density of the member `theta` at `x`. Validates both arguments.
    pub fn density(&self, theta: &ParameterVector, x: &[f64]) -> Result<f64> {
        self.validate_theta(theta)?;
        if x.len() != self.data_dim {
            return Err(Error::Shape(format!(
                "point has dimension {}, family expects {}",
                x.len(),
                self.data_dim
            )));
        }
        if !self.support.contains(x) {
            return Err(Error::Domain(format!(
                "point {x:?} lies outside the support box"
            )));
        }
        match &self.shape {
            Shape::Mixture { .. } => Ok(self.pdf_mixture(theta, x)),
            Shape::Exponential { .. } => {
                let g = self.log_partition_value(theta)?;
                Ok(self.pdf_exponential(theta, g, x))
            }
        }
    }

    fn pdf_mixture(&self, theta: &[f64], x: &[f64]) -> f64 {
        let Shape::Mixture { components } = &self.shape else {
            unreachable!()
        };
        components
            .iter()
            .zip(theta)
            .map(|(comp, &w)| w * comp.pdf(x))
            .sum()
    }

    fn pdf_exponential(&self, theta: &[f64], g: f64, x: &[f64]) -> f64 {
        let Shape::Exponential { carrier, stats, .. } = &self.shape else {
            unreachable!()
        };
        let dot: f64 = stats.iter().zip(theta).map(|(h, &t)| t * h.eval(x)).sum();
        carrier.pdf(x) * (dot - g).exp()
    }

    /// Value of each statistic at `x` (exponential families).
    pub fn stat_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.shape {
            Shape::Exponential { stats, .. } => Ok(stats.iter().map(|h| h.eval(x)).collect()),
            Shape::Mixture { .. } => Err(Error::UnsupportedFamily(
                "statistics are defined only for exponential families".into(),
            )),
        }
    }

    /// A validated, allocation-free density evaluator for hot loops. The
    /// log-normalizer is resolved once up front.
    pub fn evaluator<'a>(
        &'a self,
        theta: &'a ParameterVector,
    ) -> Result<impl Fn(&[f64]) -> f64 + Sync + 'a> {
        self.validate_theta(theta)?;
        let g = match &self.shape {
            Shape::Mixture { .. } => 0.0,
            Shape::Exponential { .. } => self.log_partition_value(theta)?,
        };
        Ok(move |x: &[f64]| match &self.shape {
            Shape::Mixture { .. } => self.pdf_mixture(theta, x),
            Shape::Exponential { .. } => self.pdf_exponential(theta, g, x),
        })
    }

    // -- log-normalizer ------------------------------------------------------

    /// Log-normalizer `g(theta) = ln int exp(theta . h(x)) q(x) dx` of an
    /// exponential family, cached per exact parameter value.
    pub fn log_partition(&self, theta: &ParameterVector) -> Result<f64> {
        match self.shape {
            Shape::Exponential { .. } => {
                self.validate_theta(theta)?;
                self.log_partition_value(theta)
            }
            Shape::Mixture { .. } => Err(Error::UnsupportedFamily(
                "the log-normalizer is defined only for exponential families".into(),
            )),
        }
    }

    fn log_partition_value(&self, theta: &[f64]) -> Result<f64> {
        let Shape::Exponential {
            carrier,
            stats,
            log_partition,
        } = &self.shape
        else {
            unreachable!()
        };
        let key: Vec<u64> = theta.iter().map(|c| c.to_bits()).collect();
        if let Some(hit) = log_partition.get(&key) {
            return Ok(*hit);
        }
        // Shift by the certified sup of theta . h so the integrand stays in
        // (0, 1] and the absolute cubature target translates into a relative
        // one for the normalizer itself.
        let shift = self.linear_stat_sup(theta);
        let integrand = |x: &[f64]| {
            let dot: f64 = stats.iter().zip(theta).map(|(h, &t)| t * h.eval(x)).sum();
            carrier.pdf(x) * (dot - shift).exp()
        };
        let reduced = integrate(
            &integrand,
            &self.support,
            &self.breakpoints(),
            &QuadConfig::with_target(1e-12),
        )?;
        let value = shift + reduced.value.ln();
        log_partition.insert(key, value);
        Ok(value)
    }

    /// Certified upper bound on `sup_x theta . h(x)` over the support,
    /// computed per axis on a dense grid with a Lipschitz padding. Serves as
    /// the rejection-sampling envelope exponent and the log-partition shift.
    pub fn linear_stat_sup(&self, theta: &[f64]) -> f64 {
        let Shape::Exponential { stats, .. } = &self.shape else {
            return 0.0;
        };
        const GRID: usize = 4096;
        let mut total = 0.0;
        for axis in 0..self.data_dim {
            let on_axis: Vec<(f64, u32)> = stats
                .iter()
                .zip(theta)
                .filter_map(|(h, &t)| {
                    let Statistic::Monomial { axis: a, power } = h;
                    (*a == axis).then_some((t, *power))
                })
                .collect();
            if on_axis.is_empty() {
                continue;
            }
            let lo = self.support.lo()[axis];
            let hi = self.support.hi()[axis];
            let radius = lo.abs().max(hi.abs());
            let lipschitz: f64 = on_axis
                .iter()
                .map(|&(t, p)| t.abs() * p as f64 * radius.powi(p as i32 - 1))
                .sum();
            let step = (hi - lo) / GRID as f64;
            let mut best = f64::NEG_INFINITY;
            for i in 0..=GRID {
                let x = lo + step * i as f64;
                let value: f64 = on_axis.iter().map(|&(t, p)| t * x.powi(p as i32)).sum();
                best = best.max(value);
            }
            total += best + lipschitz * step / 2.0;
        }
        total
    }

    // -- sampling -------------------------------------------------------------

    /// Draw an i.i.d. block of `n` letters from the member `theta` on the
    /// stream `seed_label`. Output is byte-identical for identical
    /// `(family, theta, n, seed_label)` regardless of thread count or call
    /// order.
    pub fn sample_block(&self, theta: &ParameterVector, n: usize, seed_label: u64) -> Result<SampleBlock> {
        if n == 0 {
            return Err(Error::Parameter("block length must be positive".into()));
        }
        self.validate_theta(theta)?;
        let mut rng = StreamKey::root(seed_label)
            .tagged("sample-block")
            .bytes(self.content_hash())
            .bytes(&f64_slice_bytes(theta))
            .indexed(n as u64)
            .rng();
        let d = self.data_dim;
        let mut values = vec![0.0; n * d];
        match &self.shape {
            Shape::Mixture { components } => {
                for letter in values.chunks_exact_mut(d) {
                    let u: f64 = rng.random();
                    let mut cumulative = 0.0;
                    let mut index = components.len() - 1;
                    for (i, &w) in theta.iter().enumerate() {
                        cumulative += w;
                        if u < cumulative {
                            index = i;
                            break;
                        }
                    }
                    components[index].sample_into(&mut rng, letter);
                }
            }
            Shape::Exponential { carrier, stats, .. } => {
                let envelope = self.linear_stat_sup(theta);
                let g = self.log_partition_value(theta)?;
                let acceptance = (g - envelope).exp();
                if acceptance < MIN_ACCEPTANCE_RATE {
                    return Err(Error::Efficiency(format!(
                        "rejection acceptance rate {acceptance:.3e} under the envelope \
                         exp(sup theta.h) = exp({envelope:.6}); tighten the parameter box \
                         or rescale the statistics"
                    )));
                }
                let max_attempts = (200.0 / acceptance).ceil() as usize;
                for letter in values.chunks_exact_mut(d) {
                    let mut accepted = false;
                    for _ in 0..max_attempts {
                        carrier.sample_into(&mut rng, letter);
                        let dot: f64 =
                            stats.iter().zip(theta.iter()).map(|(h, &t)| t * h.eval(letter)).sum();
                        let u: f64 = rng.random();
                        if u.ln() <= dot - envelope {
                            accepted = true;
                            break;
                        }
                    }
                    if !accepted {
                        return Err(Error::Efficiency(format!(
                            "rejection sampler exceeded {max_attempts} attempts per letter \
                             (envelope exponent {envelope:.6})"
                        )));
                    }
                }
            }
        }
        Ok(SampleBlock {
            values,
            block_len: n,
            data_dim: d,
            seed_label,
        })
    }

    /// The Lipschitz coefficient of the variational distance in the mixture
    /// weights: `d_V(P_a, P_b) <= (sqrt k / 2) |a - b|_2`.
    pub fn mixture_lipschitz_bound(
        &self,
        theta: &ParameterVector,
        eta: &ParameterVector,
    ) -> Result<f64> {
        if self.kind() != FamilyKind::Mixture {
            return Err(Error::UnsupportedFamily(
                "the weight-Lipschitz bound applies to mixture families".into(),
            ));
        }
        self.validate_theta(theta)?;
        self.validate_theta(eta)?;
        let k = self.param_dim as f64;
        Ok(0.5 * k.sqrt() * euclidean_distance(theta, eta))
    }
}

// ---------------------------------------------------------------------------
// Sample blocks
// ---------------------------------------------------------------------------

/// An i.i.d. block of `block_len` letters in `R^data_dim`, stored row-major,
/// remembering the stream label it was drawn on.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBlock {
    values: Vec<f64>,
    block_len: usize,
    data_dim: usize,
    seed_label: u64,
}

impl SampleBlock {
    /// Wrap externally produced letters (file input, test fixtures). The
    /// seed label is zero since no stream produced the data.
    pub fn from_values(values: Vec<f64>, block_len: usize, data_dim: usize) -> Result<Self> {
        if block_len == 0 || data_dim == 0 {
            return Err(Error::Parameter(
                "block length and data dimension must be positive".into(),
            ));
        }
        if values.len() != block_len * data_dim {
            return Err(Error::Shape(format!(
                "{} values cannot form {} letters of dimension {}",
                values.len(),
                block_len,
                data_dim
            )));
        }
        Ok(SampleBlock {
            values,
            block_len,
            data_dim,
            seed_label: 0,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn seed_label(&self) -> u64 {
        self.seed_label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn letter(&self, i: usize) -> &[f64] {
        &self.values[i * self.data_dim..(i + 1) * self.data_dim]
    }

    pub fn letters(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.data_dim)
    }
}

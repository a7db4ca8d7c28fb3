//! One-dimensional density components and their product combinations.
//!
//! A product component is a vector of independent per-axis densities; the
//! supported axis shapes are uniform, triangular, and truncated Gaussian.
//! All three admit exact inverse-CDF sampling, which keeps the draw count
//! per letter fixed and the streams schedule-independent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::{erf, erf_inv};

use crate::error::{Error, Result};
use crate::quad::{integrate, AxisBox, QuadConfig};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF. Accuracy follows the underlying `erf` (~1e-11),
/// which is ample for sampling; normalizing constants that enter densities
/// are computed by cubature instead.
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

fn normal_quantile(p: f64) -> f64 {
    SQRT_2 * erf_inv(2.0 * p - 1.0)
}

/// A single-axis density with compact support.
#[derive(Clone, Debug, PartialEq)]
pub enum AxisDensity {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Triangular {
        lo: f64,
        mode: f64,
        hi: f64,
    },
    TruncatedGaussian {
        mean: f64,
        std: f64,
        lo: f64,
        hi: f64,
        /// Mass of N(mean, std^2) on [lo, hi]; fixed at construction by
        /// cubature so the pdf normalization is exact to ~1e-14.
        norm: f64,
    },
}

impl AxisDensity {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        check_interval(lo, hi)?;
        Ok(AxisDensity::Uniform { lo, hi })
    }

    pub fn triangular(lo: f64, mode: f64, hi: f64) -> Result<Self> {
        check_interval(lo, hi)?;
        if !(mode >= lo && mode <= hi) {
            return Err(Error::Parameter(format!(
                "triangular mode {mode} outside [{lo}, {hi}]"
            )));
        }
        Ok(AxisDensity::Triangular { lo, mode, hi })
    }

    pub fn truncated_gaussian(mean: f64, std: f64, lo: f64, hi: f64) -> Result<Self> {
        check_interval(lo, hi)?;
        if !(std.is_finite() && std > 0.0 && mean.is_finite()) {
            return Err(Error::Parameter(format!(
                "truncated gaussian needs finite mean and positive std, got mean {mean}, std {std}"
            )));
        }
        let domain = AxisBox::new(vec![lo], vec![hi])?;
        let phi = move |x: &[f64]| {
            let z = (x[0] - mean) / std;
            (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
        };
        let mass = integrate(&phi, &domain, &[], &QuadConfig::with_target(1e-14))?;
        if mass.value < 1e-12 {
            return Err(Error::Parameter(format!(
                "truncated gaussian keeps mass {:.3e} on [{lo}, {hi}]; widen the window",
                mass.value
            )));
        }
        Ok(AxisDensity::TruncatedGaussian {
            mean,
            std,
            lo,
            hi,
            norm: mass.value,
        })
    }

    /// Support interval (closed).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            AxisDensity::Uniform { lo, hi }
            | AxisDensity::Triangular { lo, hi, .. }
            | AxisDensity::TruncatedGaussian { lo, hi, .. } => (lo, hi),
        }
    }

    /// Density value; zero outside the support.
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            AxisDensity::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            AxisDensity::Triangular { lo, mode, hi } => {
                if x < lo || x > hi {
                    0.0
                } else if x <= mode {
                    if mode > lo {
                        2.0 * (x - lo) / ((hi - lo) * (mode - lo))
                    } else {
                        // Mode at the left edge: density starts at its peak.
                        2.0 * (hi - x) / ((hi - lo) * (hi - mode))
                    }
                } else if mode < hi {
                    2.0 * (hi - x) / ((hi - lo) * (hi - mode))
                } else {
                    2.0 * (x - lo) / ((hi - lo) * (mode - lo))
                }
            }
            AxisDensity::TruncatedGaussian {
                mean,
                std,
                lo,
                hi,
                norm,
            } => {
                if x >= lo && x <= hi {
                    let z = (x - mean) / std;
                    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt() * norm)
                } else {
                    0.0
                }
            }
        }
    }

    /// Inverse CDF at `u` in [0, 1); exact for uniform and triangular,
    /// erf-accurate for the truncated Gaussian. Always lands in the support.
    pub fn inv_cdf(&self, u: f64) -> f64 {
        match *self {
            AxisDensity::Uniform { lo, hi } => lo + u * (hi - lo),
            AxisDensity::Triangular { lo, mode, hi } => {
                let split = (mode - lo) / (hi - lo);
                if u <= split {
                    lo + (u * (hi - lo) * (mode - lo)).sqrt()
                } else {
                    hi - ((1.0 - u) * (hi - lo) * (hi - mode)).sqrt()
                }
            }
            AxisDensity::TruncatedGaussian {
                mean, std, lo, hi, ..
            } => {
                let c_lo = normal_cdf((lo - mean) / std);
                let c_hi = normal_cdf((hi - mean) / std);
                let x = mean + std * normal_quantile(c_lo + u * (c_hi - c_lo));
                x.clamp(lo, hi)
            }
        }
    }

    /// Axis positions where the density is not smooth (support edges and
    /// the triangular mode); used to pre-split integration domains.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            AxisDensity::Uniform { lo, hi } => vec![lo, hi],
            AxisDensity::Triangular { lo, mode, hi } => vec![lo, mode, hi],
            AxisDensity::TruncatedGaussian { lo, hi, .. } => vec![lo, hi],
        }
    }

    /// Canonical bytes for content hashing.
    pub fn hash_bytes(&self, out: &mut Vec<u8>) {
        match *self {
            AxisDensity::Uniform { lo, hi } => {
                out.push(1);
                out.extend_from_slice(&lo.to_bits().to_le_bytes());
                out.extend_from_slice(&hi.to_bits().to_le_bytes());
            }
            AxisDensity::Triangular { lo, mode, hi } => {
                out.push(2);
                out.extend_from_slice(&lo.to_bits().to_le_bytes());
                out.extend_from_slice(&mode.to_bits().to_le_bytes());
                out.extend_from_slice(&hi.to_bits().to_le_bytes());
            }
            AxisDensity::TruncatedGaussian {
                mean, std, lo, hi, ..
            } => {
                out.push(3);
                out.extend_from_slice(&mean.to_bits().to_le_bytes());
                out.extend_from_slice(&std.to_bits().to_le_bytes());
                out.extend_from_slice(&lo.to_bits().to_le_bytes());
                out.extend_from_slice(&hi.to_bits().to_le_bytes());
            }
        }
    }
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "need finite lo < hi, got [{lo}, {hi}]"
        )))
    }
}

/// A product of independent per-axis densities over `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductDensity {
    axes: Vec<AxisDensity>,
}

impl ProductDensity {
    pub fn new(axes: Vec<AxisDensity>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Parameter(
                "a product density needs at least one axis".into(),
            ));
        }
        Ok(ProductDensity { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[AxisDensity] {
        &self.axes
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.axes
            .iter()
            .zip(x)
            .map(|(axis, &v)| axis.pdf(v))
            .product()
    }

    /// Draw one letter into `out` by per-axis inverse CDF. Consumes exactly
    /// `dim` uniforms from the generator.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (slot, axis) in out.iter_mut().zip(&self.axes) {
            *slot = axis.inv_cdf(rng.random::<f64>());
        }
    }

    /// Per-axis kink positions.
    pub fn breakpoints(&self) -> Vec<Vec<f64>> {
        self.axes.iter().map(AxisDensity::breakpoints).collect()
    }

    pub fn hash_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.axes.len() as u64).to_le_bytes());
        for axis in &self.axes {
            axis.hash_bytes(out);
        }
    }
}

//! Minimum-distance parameter estimation over a finite net.
//!
//! For a parametric family `{p_theta}` the comparison sets
//! `A(a, b) = {x : p_a(x) > p_b(x)}`, collected over ordered pairs of
//! parameters, form the Yatracos class of the family.  Density comparisons
//! on these sets attain the variational distance, which makes the class the
//! natural yardstick for density estimation from samples: the deviation of a
//! block `z` at a candidate parameter `theta` is
//!
//! ```text
//! Delta_theta(z) = max over pairs (a, b) of |P_theta(A(a,b)) - P_z(A(a,b))|
//! ```
//!
//! where `P_z` is the empirical measure of the block, and the
//! minimum-distance estimate is the net point minimizing `Delta`.  Over a
//! finite net the minimizer satisfies the deterministic inequality
//! `d_V(P_theta, P_estimate) <= 2 Delta_theta(z)` whenever the true `theta`
//! lies on the net; audits add `3/(2n)` head-room for configurations that
//! carry an explicit selection slack.
//!
//! Set probabilities `P_theta(A(a,b))` are cubature integrals cached in a
//! [`YatracosTable`], deduplicated across pairs that induce the same set and
//! optionally persisted to disk keyed by the family and net content hashes.
//! The module also houses VC-type tail bounds for the uniform deviation of
//! empirical measures over the class, and a brute-force shattering probe
//! that counts label patterns realized on a small point configuration.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::family::{
    euclidean_distance, FamilyKind, ParameterVector, SampleBlock, SourceFamily, ThetaSpace,
};
use crate::quad::{self, QuadConfig};
use crate::rng::StreamKey;

// ---------------------------------------------------------------------------
// Parameter nets
// ---------------------------------------------------------------------------

/// Smallest integer `r >= 1` with `r * r >= n`.
///
/// This is the block-length-to-grid-resolution map shared by the estimator
/// net constraints and the parameter grid of the two-stage code.
pub fn ceil_sqrt(n: u64) -> u64 {
    assert!(n >= 1, "ceil_sqrt is defined for n >= 1");
    let mut r = (n as f64).sqrt() as u64 + 1;
    while r > 1 && (r - 1) as u128 * (r - 1) as u128 >= n as u128 {
        r -= 1;
    }
    r
}

/// A finite, ordered set of candidate parameters inside the parameter space.
///
/// The `mesh` is an upper bound on the covering radius: no point of the
/// parameter space is farther than `mesh` from the net.  Lattice
/// constructors certify it; [`ParameterNet::explicit`] trusts the caller's
/// bound and only validates it for positivity.
#[derive(Clone, Debug)]
pub struct ParameterNet {
    points: Vec<ParameterVector>,
    mesh: f64,
    hash: [u8; 32],
}

/// Guard against accidentally requesting an astronomically fine lattice.
const MAX_NET_POINTS: usize = 200_000;

impl ParameterNet {
    /// Net from an explicit point list with a caller-supplied covering
    /// radius bound.
    pub fn explicit(
        space: &ThetaSpace,
        points: Vec<ParameterVector>,
        mesh: f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter("a parameter net needs at least one point".into()));
        }
        if !(mesh > 0.0 && mesh.is_finite()) {
            return Err(Error::Parameter(format!(
                "net mesh must be a positive real, got {mesh}"
            )));
        }
        let dim = points[0].len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Shape(format!(
                    "net point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if !space.contains(p.coords()) {
                return Err(Error::Domain(format!(
                    "net point {i} lies outside the parameter space"
                )));
            }
        }
        for a in 0..points.len() {
            for b in (a + 1)..points.len() {
                if points[a].coords() == points[b].coords() {
                    return Err(Error::Parameter(format!(
                        "net points {a} and {b} coincide"
                    )));
                }
            }
        }
        Ok(Self::assemble(points, mesh))
    }

    /// All probability vectors of length `dim` whose coordinates are
    /// multiples of `1/denom`, in lexicographic order of the integer
    /// composition.
    ///
    /// The mesh is certified by measuring the covering radius against an
    /// 8x finer reference lattice and padding with that lattice's own
    /// rounding bound `sqrt(dim)/(8 denom)`.
    pub fn simplex_lattice(dim: usize, denom: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Parameter(
                "a simplex lattice needs at least two weight coordinates".into(),
            ));
        }
        if denom == 0 {
            return Err(Error::Parameter("simplex lattice denominator must be >= 1".into()));
        }
        let points = compositions(dim, denom)?;
        let reference = compositions(dim, denom.saturating_mul(8))?;
        let mut measured = 0.0_f64;
        for r in &reference {
            let mut best = f64::INFINITY;
            for p in &points {
                best = best.min(euclidean_distance(r, p));
            }
            measured = measured.max(best);
        }
        let mesh = measured + (dim as f64).sqrt() / (8.0 * denom as f64);
        let points = points
            .into_iter()
            .map(ParameterVector::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(points, mesh))
    }

    /// Product lattice on an axis-aligned box, row-major with the last axis
    /// fastest.  An axis with one point contributes the box midpoint; an
    /// axis with `c >= 2` points spans endpoint to endpoint.  The mesh is
    /// the exact covering radius of the product grid.
    pub fn box_lattice(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != counts.len() {
            return Err(Error::Shape(
                "box lattice needs matching nonempty lo/hi/counts vectors".into(),
            ));
        }
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(lo.len());
        let mut mesh_sq = 0.0_f64;
        let mut total = 1usize;
        for j in 0..lo.len() {
            let (l, h, c) = (lo[j], hi[j], counts[j]);
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::Parameter(format!(
                    "box lattice axis {j} needs finite lo < hi, got [{l}, {h}]"
                )));
            }
            if c == 0 {
                return Err(Error::Parameter(format!("box lattice axis {j} has zero points")));
            }
            let (ticks, radius) = if c == 1 {
                (vec![0.5 * (l + h)], 0.5 * (h - l))
            } else {
                let step = (h - l) / (c - 1) as f64;
                let ticks = (0..c)
                    .map(|i| if i + 1 == c { h } else { l + step * i as f64 })
                    .collect();
                (ticks, 0.5 * step)
            };
            mesh_sq += radius * radius;
            total = total.saturating_mul(c);
            axes.push(ticks);
        }
        if total > MAX_NET_POINTS {
            return Err(Error::Parameter(format!(
                "box lattice would hold {total} points, above the {MAX_NET_POINTS} cap"
            )));
        }
        let mut points = Vec::with_capacity(total);
        let mut index = vec![0usize; axes.len()];
        loop {
            let coords: Vec<f64> = index.iter().zip(&axes).map(|(&i, t)| t[i]).collect();
            points.push(ParameterVector::new(coords)?);
            // Odometer increment, last axis fastest.
            let mut j = axes.len();
            loop {
                if j == 0 {
                    break;
                }
                j -= 1;
                index[j] += 1;
                if index[j] < axes[j].len() {
                    break;
                }
                index[j] = 0;
            }
            if index.iter().all(|&i| i == 0) {
                break;
            }
        }
        Ok(Self::assemble(points, mesh_sq.sqrt()))
    }

    fn assemble(points: Vec<ParameterVector>, mesh: f64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"uvq-net-v1");
        hasher.update((points.len() as u64).to_le_bytes());
        hasher.update((points[0].len() as u64).to_le_bytes());
        for p in &points {
            for &c in p.coords() {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
        hasher.update(mesh.to_bits().to_le_bytes());
        let hash = hasher.finalize().into();
        ParameterNet { points, mesh, hash }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[ParameterVector] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &ParameterVector {
        &self.points[i]
    }

    /// Certified covering radius bound.
    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn content_hash(&self) -> &[u8; 32] {
        &self.hash
    }

    pub fn hash_hex(&self) -> String {
        self.hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Whether the net is fine enough for block length `n`: the covering
    /// radius must not exceed `1/(2 ceil(sqrt(n)))`, so that net
    /// quantization error is dominated by the parameter-grid term of the
    /// two-stage code.
    pub fn supports_block_len(&self, n: u64) -> bool {
        n >= 1 && self.mesh <= 1.0 / (2.0 * ceil_sqrt(n) as f64)
    }

    /// Index of the net point closest to `theta`, ties to the lowest index.
    pub fn nearest_index(&self, theta: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = euclidean_distance(p.coords(), theta);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Integer compositions of `denom` into `dim` parts, lexicographic, scaled
/// to weight vectors.
fn compositions(dim: usize, denom: u64) -> Result<Vec<Vec<f64>>> {
    fn count(dim: usize, denom: u64) -> Option<usize> {
        // C(denom + dim - 1, dim - 1) with overflow care at desk scales.
        let mut c: u128 = 1;
        for j in 1..dim as u128 {
            c = c.checked_mul(denom as u128 + j)?.checked_div(j)?;
            if c > MAX_NET_POINTS as u128 * 1024 {
                return None;
            }
        }
        usize::try_from(c).ok()
    }
    let total = count(dim, denom).filter(|&c| c <= MAX_NET_POINTS).ok_or_else(|| {
        Error::Parameter(format!(
            "simplex lattice with dim {dim}, denominator {denom} exceeds the point cap"
        ))
    })?;
    let mut out = Vec::with_capacity(total);
    let mut current = vec![0u64; dim];
    fn recurse(j: usize, remaining: u64, denom: u64, current: &mut [u64], out: &mut Vec<Vec<f64>>) {
        if j + 1 == current.len() {
            current[j] = remaining;
            out.push(current.iter().map(|&i| i as f64 / denom as f64).collect());
            return;
        }
        for i in 0..=remaining {
            current[j] = i;
            recurse(j + 1, remaining - i, denom, current, out);
        }
    }
    recurse(0, denom, denom, &mut current, &mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Yatracos set-probability table
// ---------------------------------------------------------------------------

/// Build options for [`YatracosTable`].
#[derive(Clone, Debug)]
pub struct TableConfig {
    /// Cubature target for each set probability.  One-dimensional supports
    /// reach `1e-8` cheaply; multi-dimensional indicator boundaries converge
    /// slowly and warrant looser targets.
    pub target_set_probability_error: f64,
    /// Directory for the persistent cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig { target_set_probability_error: 1e-8, cache_dir: None }
    }
}

/// Cached probabilities of every net point on every distinct comparison set.
///
/// Ordered net pairs `(a, b)` with the same normalized density-comparison
/// geometry induce the same set; the table stores one exemplar pair per
/// distinct set, a dense `pair -> set` map, and the matrix
/// `probs[point][set] = P_point(set)` in point-major order.
#[derive(Clone, Debug)]
pub struct YatracosTable {
    family_hash: [u8; 32],
    net_hash: [u8; 32],
    target_error: f64,
    n_points: usize,
    /// Exemplar ordered pair for each distinct set.
    pairs: Vec<(u32, u32)>,
    /// Flattened `a * n_points + b` to set id; diagonal entries unused.
    pair_to_set: Vec<u32>,
    /// `probs[i * pairs.len() + s] = P_{theta_i}(A_s)`.
    probs: Vec<f64>,
    /// Largest cubature error estimate across all entries.
    max_error: f64,
}

const TABLE_MAGIC: &[u8; 8] = b"UVQYTAB1";
const TABLE_VERSION: u16 = 1;
const UNSET: u32 = u32::MAX;

/// Dedup key of a comparison set: the normalized comparison direction and
/// threshold, rounded to 1e-9.  Mixture sets are linear in the component
/// densities with threshold zero; exponential-family sets are half-spaces in
/// statistic space with threshold `(g(a) - g(b)) / |a - b|`.
type SetSignature = (Vec<i64>, i64);

fn quantize_1e9(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

impl YatracosTable {
    /// Build the table, consulting and refreshing the on-disk cache when a
    /// directory is configured.
    pub fn build(family: &SourceFamily, net: &ParameterNet, cfg: &TableConfig) -> Result<Self> {
        if net.len() > u32::MAX as usize {
            return Err(Error::Parameter("net too large for a set-probability table".into()));
        }
        if !(cfg.target_set_probability_error > 0.0 && cfg.target_set_probability_error.is_finite())
        {
            return Err(Error::Parameter(format!(
                "set-probability target must be a positive real, got {}",
                cfg.target_set_probability_error
            )));
        }
        if let Some(dir) = &cfg.cache_dir {
            if let Some(table) = Self::load_cached(dir, family, net, cfg) {
                return Ok(table);
            }
        }
        let table = Self::build_fresh(family, net, cfg)?;
        if let Some(dir) = &cfg.cache_dir {
            table.store(dir)?;
        }
        Ok(table)
    }

    fn build_fresh(family: &SourceFamily, net: &ParameterNet, cfg: &TableConfig) -> Result<Self> {
        let n = net.len();
        let log_norms: Vec<f64> = match family.kind() {
            FamilyKind::Exponential => net
                .points()
                .iter()
                .map(|p| family.log_partition(p))
                .collect::<Result<Vec<_>>>()?,
            FamilyKind::Mixture => vec![0.0; n],
        };
        let mut signatures: HashMap<SetSignature, u32> = HashMap::new();
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        let mut pair_to_set = vec![UNSET; n * n];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let pa = net.point(a).coords();
                let pb = net.point(b).coords();
                let beta: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x - y).collect();
                let norm = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
                let direction: Vec<i64> = beta.iter().map(|v| quantize_1e9(v / norm)).collect();
                let threshold = match family.kind() {
                    FamilyKind::Mixture => 0,
                    FamilyKind::Exponential => {
                        quantize_1e9((log_norms[a] - log_norms[b]) / norm)
                    }
                };
                let next = pairs.len() as u32;
                let id = *signatures.entry((direction, threshold)).or_insert_with(|| {
                    pairs.push((a as u32, b as u32));
                    next
                });
                pair_to_set[a * n + b] = id;
            }
        }

        let evals = net
            .points()
            .iter()
            .map(|p| family.evaluator(p))
            .collect::<Result<Vec<_>>>()?;
        let domain = family.support();
        let breakpoints = family.breakpoints();
        let qcfg = QuadConfig::with_target(cfg.target_set_probability_error);
        let n_sets = pairs.len();
        let entries: Vec<(f64, f64)> = (0..n * n_sets)
            .into_par_iter()
            .map(|t| {
                let i = t / n_sets;
                let (a, b) = pairs[t % n_sets];
                let f = |x: &[f64]| {
                    if evals[a as usize](x) > evals[b as usize](x) {
                        evals[i](x)
                    } else {
                        0.0
                    }
                };
                let integral = quad::integrate(&f, domain, &breakpoints, &qcfg)?;
                Ok((integral.value.clamp(0.0, 1.0), integral.error_estimate))
            })
            .collect::<Result<Vec<_>>>()?;
        let probs = entries.iter().map(|e| e.0).collect();
        let max_error = entries.iter().map(|e| e.1).fold(0.0, f64::max);
        Ok(YatracosTable {
            family_hash: *family.content_hash(),
            net_hash: *net.content_hash(),
            target_error: cfg.target_set_probability_error,
            n_points: n,
            pairs,
            pair_to_set,
            probs,
            max_error,
        })
    }

    /// Number of distinct comparison sets.
    pub fn set_count(&self) -> usize {
        self.pairs.len()
    }

    /// Number of net points the table was built for.
    pub fn point_count(&self) -> usize {
        self.n_points
    }

    /// Exemplar ordered pair `(a, b)` realizing set `s`.
    pub fn exemplar(&self, s: usize) -> (usize, usize) {
        let (a, b) = self.pairs[s];
        (a as usize, b as usize)
    }

    /// `P_{theta_point}(A_set)`, if both indices are in range.
    pub fn probability(&self, point: usize, set: usize) -> Option<f64> {
        (point < self.n_points && set < self.pairs.len())
            .then(|| self.probs[point * self.pairs.len() + set])
    }

    /// `(P_a(A(a,b)), P_b(A(a,b)))` for an ordered pair of net indices, or
    /// `None` on the diagonal / out of range.  Their difference equals the
    /// variational distance between the two members (Scheffe identity), which
    /// the tests audit against the direct cubature route.
    pub fn pair_probabilities(&self, a: usize, b: usize) -> Option<(f64, f64)> {
        if a >= self.n_points || b >= self.n_points || a == b {
            return None;
        }
        let s = self.pair_to_set[a * self.n_points + b];
        if s == UNSET {
            return None;
        }
        let s = s as usize;
        Some((self.probs[a * self.pairs.len() + s], self.probs[b * self.pairs.len() + s]))
    }

    /// Largest cubature error estimate across the table entries.
    pub fn max_error(&self) -> f64 {
        self.max_error
    }

    /// Cubature target the table was built with.
    pub fn target_error(&self) -> f64 {
        self.target_error
    }

    fn check_binding(&self, family: &SourceFamily, net: &ParameterNet) -> Result<()> {
        if &self.family_hash != family.content_hash() {
            return Err(Error::Compatibility(format!(
                "set-probability table was built for family {}, not {}",
                hex16(&self.family_hash),
                hex16(family.content_hash()),
            )));
        }
        if &self.net_hash != net.content_hash() || self.n_points != net.len() {
            return Err(Error::Compatibility(format!(
                "set-probability table was built for net {}, not {}",
                hex16(&self.net_hash),
                hex16(net.content_hash()),
            )));
        }
        Ok(())
    }

    // -- persistent cache ----------------------------------------------------

    fn cache_file_name(family_hash: &[u8; 32], net_hash: &[u8; 32], target: f64) -> String {
        format!("ytab-{}-{}-{target:e}.bin", hex16(family_hash), hex16(net_hash))
    }

    fn load_cached(
        dir: &Path,
        family: &SourceFamily,
        net: &ParameterNet,
        cfg: &TableConfig,
    ) -> Option<Self> {
        let path = dir.join(Self::cache_file_name(
            family.content_hash(),
            net.content_hash(),
            cfg.target_set_probability_error,
        ));
        let bytes = fs::read(path).ok()?;
        let table = Self::from_bytes(&bytes)?;
        let binds = &table.family_hash == family.content_hash()
            && &table.net_hash == net.content_hash()
            && table.n_points == net.len()
            && table.target_error.to_bits() == cfg.target_set_probability_error.to_bits();
        binds.then_some(table)
    }

    fn store(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let name = Self::cache_file_name(&self.family_hash, &self.net_hash, self.target_error);
        let tmp = dir.join(format!("{name}.tmp-{}", std::process::id()));
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, dir.join(name))?;
        Ok(())
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(TABLE_MAGIC);
        buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.family_hash);
        buf.extend_from_slice(&self.net_hash);
        buf.extend_from_slice(&self.target_error.to_le_bytes());
        buf.extend_from_slice(&(self.n_points as u64).to_le_bytes());
        buf.extend_from_slice(&(self.pairs.len() as u64).to_le_bytes());
        for &(a, b) in &self.pairs {
            buf.extend_from_slice(&a.to_le_bytes());
            buf.extend_from_slice(&b.to_le_bytes());
        }
        for &s in &self.pair_to_set {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for &p in &self.probs {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        buf.extend_from_slice(&self.max_error.to_le_bytes());
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 4 {
            return None;
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().ok()?);
        if crc32fast::hash(body) != stored {
            return None;
        }
        let mut r = ByteReader { buf: body, pos: 0 };
        if r.take(8)? != TABLE_MAGIC {
            return None;
        }
        if r.u16()? != TABLE_VERSION {
            return None;
        }
        let family_hash: [u8; 32] = r.take(32)?.try_into().ok()?;
        let net_hash: [u8; 32] = r.take(32)?.try_into().ok()?;
        let target_error = r.f64()?;
        let n_points = usize::try_from(r.u64()?).ok()?;
        let n_sets = usize::try_from(r.u64()?).ok()?;
        let mut pairs = Vec::with_capacity(n_sets);
        for _ in 0..n_sets {
            pairs.push((r.u32()?, r.u32()?));
        }
        let mut pair_to_set = Vec::with_capacity(n_points.checked_mul(n_points)?);
        for _ in 0..n_points * n_points {
            pair_to_set.push(r.u32()?);
        }
        let mut probs = Vec::with_capacity(n_points.checked_mul(n_sets)?);
        for _ in 0..n_points * n_sets {
            probs.push(r.f64()?);
        }
        let max_error = r.f64()?;
        if r.pos != body.len() {
            return None;
        }
        Some(YatracosTable {
            family_hash,
            net_hash,
            target_error,
            n_points,
            pairs,
            pair_to_set,
            probs,
            max_error,
        })
    }
}

fn hex16(hash: &[u8; 32]) -> String {
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

// ---------------------------------------------------------------------------
// Empirical measures and deviations
// ---------------------------------------------------------------------------

/// Fraction of block letters on which `p_theta_a` strictly exceeds
/// `p_theta_b`.  Letters outside the support evaluate both densities to zero
/// and never land in the set, and identical parameters produce ties
/// everywhere, hence zero.
pub fn empirical_measure(
    family: &SourceFamily,
    z: &SampleBlock,
    theta_a: &ParameterVector,
    theta_b: &ParameterVector,
) -> Result<f64> {
    if z.data_dim() != family.data_dim() {
        return Err(Error::Shape(format!(
            "block letters have dimension {}, family expects {}",
            z.data_dim(),
            family.data_dim()
        )));
    }
    let pa = family.evaluator(theta_a)?;
    let pb = family.evaluator(theta_b)?;
    let hits = z.letters().filter(|x| pa(x) > pb(x)).count();
    Ok(hits as f64 / z.block_len() as f64)
}

/// Empirical probability of every distinct table set on one block.
fn empirical_profile(
    family: &SourceFamily,
    z: &SampleBlock,
    net: &ParameterNet,
    table: &YatracosTable,
) -> Result<Vec<f64>> {
    let evals = net
        .points()
        .iter()
        .map(|p| family.evaluator(p))
        .collect::<Result<Vec<_>>>()?;
    let n = z.block_len() as f64;
    let mut profile = Vec::with_capacity(table.pairs.len());
    for &(a, b) in &table.pairs {
        let (pa, pb) = (&evals[a as usize], &evals[b as usize]);
        let hits = z.letters().filter(|x| pa(x) > pb(x)).count();
        profile.push(hits as f64 / n);
    }
    Ok(profile)
}

/// Deviation profile of a block over the net, with the minimizing point.
#[derive(Clone, Debug)]
pub struct DeviationResult {
    deltas: Vec<f64>,
    argmin: usize,
    slack: f64,
}

impl DeviationResult {
    /// `Delta_theta(z)` for every net point, in net order.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Index of the selected net point: the first whose deviation is within
    /// `slack` of the minimum (the exact minimizer when slack is zero).
    pub fn argmin(&self) -> usize {
        self.argmin
    }

    /// Selection slack the profile was resolved with.
    pub fn slack(&self) -> f64 {
        self.slack
    }

    /// Smallest deviation over the net.
    pub fn min_delta(&self) -> f64 {
        self.deltas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Deviations of the block at every net point with zero selection slack.
pub fn deviations(
    family: &SourceFamily,
    z: &SampleBlock,
    net: &ParameterNet,
    table: &YatracosTable,
) -> Result<DeviationResult> {
    deviations_with_slack(family, z, net, table, 0.0)
}

/// Deviations with an explicit selection slack: the reported argmin is the
/// lowest net index whose deviation is within `slack` of the minimum.  A
/// slack of `1/n` reproduces the classical near-minimizer selection rule;
/// the default of zero takes the exact minimum, which a finite net attains.
pub fn deviations_with_slack(
    family: &SourceFamily,
    z: &SampleBlock,
    net: &ParameterNet,
    table: &YatracosTable,
    slack: f64,
) -> Result<DeviationResult> {
    if !(slack >= 0.0 && slack.is_finite()) {
        return Err(Error::Parameter(format!(
            "selection slack must be a finite nonnegative real, got {slack}"
        )));
    }
    table.check_binding(family, net)?;
    if z.data_dim() != family.data_dim() {
        return Err(Error::Shape(format!(
            "block letters have dimension {}, family expects {}",
            z.data_dim(),
            family.data_dim()
        )));
    }
    let profile = empirical_profile(family, z, net, table)?;
    let n_sets = table.pairs.len();
    let deltas: Vec<f64> = (0..net.len())
        .map(|i| {
            profile
                .iter()
                .enumerate()
                .map(|(s, emp)| (table.probs[i * n_sets + s] - emp).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let min = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let argmin = deltas
        .iter()
        .position(|&d| d <= min + slack)
        .expect("a nonempty net has a minimizing deviation");
    Ok(DeviationResult { deltas, argmin, slack })
}

/// `Delta_theta(z)` at a single net point.
pub fn deviation(
    family: &SourceFamily,
    z: &SampleBlock,
    net: &ParameterNet,
    table: &YatracosTable,
    point_index: usize,
) -> Result<f64> {
    if point_index >= net.len() {
        return Err(Error::Index(format!(
            "net point index {point_index} out of range for a net of {} points",
            net.len()
        )));
    }
    Ok(deviations(family, z, net, table)?.deltas[point_index])
}

/// The minimum-distance estimate: the net point whose model probabilities
/// are uniformly closest to the empirical measure over the comparison sets.
/// Ties break to the lowest net index.
pub fn min_distance_estimate(
    family: &SourceFamily,
    z: &SampleBlock,
    net: &ParameterNet,
    table: &YatracosTable,
) -> Result<ParameterVector> {
    let result = deviations(family, z, net, table)?;
    Ok(net.point(result.argmin()).clone())
}

// ---------------------------------------------------------------------------
// VC tail bounds
// ---------------------------------------------------------------------------

/// Uniform-deviation tail bound `8 n^V exp(-n eps^2 / 32)` for a set class
/// of VC dimension at most `V`.  The value may exceed one; probability
/// consumers clamp it.
pub fn vc_tail_bound(n: u64, v: u32, eps: f64) -> Result<f64> {
    vc_domain_check(n, v, eps)?;
    Ok((8.0_f64.ln() + v as f64 * (n as f64).ln() - n as f64 * eps * eps / 32.0).exp())
}

/// Companion tail bound for identification through a quantized parameter:
/// `8 n^V exp(-n max(eps - gamma sqrt(1/n), 0)^2 / 128)`.  The offset
/// `gamma` absorbs the grid-quantization and empirical-measure slack; the
/// exponent clamps at zero where the offset swallows `eps`, leaving the
/// trivial polynomial envelope.
pub fn vc_identification_bound(n: u64, v: u32, eps: f64, gamma: f64) -> Result<f64> {
    vc_domain_check(n, v, eps)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!(
            "identification offset gamma must be a finite nonnegative real, got {gamma}"
        )));
    }
    let eff = (eps - gamma / (n as f64).sqrt()).max(0.0);
    Ok((8.0_f64.ln() + v as f64 * (n as f64).ln() - n as f64 * eff * eff / 128.0).exp())
}

/// Offset for [`vc_identification_bound`] from a measured distance-to-
/// parameter Lipschitz constant: `3/2 + beta_prime sqrt(k)`.
pub fn identification_gamma(beta_prime: f64, param_dim: usize) -> f64 {
    1.5 + beta_prime * (param_dim as f64).sqrt()
}

fn vc_domain_check(n: u64, v: u32, eps: f64) -> Result<()> {
    if n < 1 {
        return Err(Error::Domain("tail bound needs a sample size n >= 1".into()));
    }
    if v < 2 {
        return Err(Error::Domain(format!(
            "tail bound needs a VC dimension V >= 2, got {v}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!(
            "tail bound needs a finite eps > 0, got {eps}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shattering probe
// ---------------------------------------------------------------------------

/// Count the distinct in/out label patterns that comparison sets realize on
/// a point configuration, enumerating every ordered net pair plus `trials`
/// random parameter pairs drawn from the seeded stream.  A class that
/// shatters `m` points realizes all `2^m` patterns; the probe brute-forces
/// an empirical lower bound on the realized count.
pub fn shatter_probe(
    family: &SourceFamily,
    net: &ParameterNet,
    points: &[Vec<f64>],
    trials: u64,
    seed_label: u64,
) -> Result<usize> {
    if points.len() > 64 {
        return Err(Error::Parameter(format!(
            "the shattering probe labels at most 64 points, got {}",
            points.len()
        )));
    }
    for (i, x) in points.iter().enumerate() {
        if x.len() != family.data_dim() {
            return Err(Error::Shape(format!(
                "probe point {i} has dimension {}, family expects {}",
                x.len(),
                family.data_dim()
            )));
        }
        if !family.support().contains(x) {
            return Err(Error::Domain(format!(
                "probe point {i} lies outside the support box"
            )));
        }
    }
    if points.is_empty() {
        return Ok(1);
    }
    let mut patterns: HashSet<u64> = HashSet::new();
    let evals = net
        .points()
        .iter()
        .map(|p| family.evaluator(p))
        .collect::<Result<Vec<_>>>()?;
    for a in 0..net.len() {
        for b in 0..net.len() {
            if a != b {
                patterns.insert(pattern_mask(&evals[a], &evals[b], points));
            }
        }
    }
    let mut rng = StreamKey::root(seed_label)
        .tagged("shatter-probe")
        .bytes(family.content_hash())
        .rng();
    let space = family.theta_space();
    for _ in 0..trials {
        let ta = draw_parameter(space, &mut rng);
        let tb = draw_parameter(space, &mut rng);
        if ta.coords() == tb.coords() {
            continue;
        }
        let pa = family.evaluator(&ta)?;
        let pb = family.evaluator(&tb)?;
        patterns.insert(pattern_mask(&pa, &pb, points));
    }
    Ok(patterns.len())
}

fn pattern_mask(
    pa: &(impl Fn(&[f64]) -> f64 + ?Sized),
    pb: &(impl Fn(&[f64]) -> f64 + ?Sized),
    points: &[Vec<f64>],
) -> u64 {
    let mut mask = 0u64;
    for (i, x) in points.iter().enumerate() {
        if pa(x) > pb(x) {
            mask |= 1 << i;
        }
    }
    mask
}

/// Uniform random parameter in the space: normalized exponentials on the
/// simplex, per-axis uniform on a box.
fn draw_parameter(space: &ThetaSpace, rng: &mut ChaCha8Rng) -> ParameterVector {
    match space {
        ThetaSpace::Simplex { dim } => loop {
            let mut w: Vec<f64> =
                (0..*dim).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 && total.is_finite() {
                for v in &mut w {
                    *v /= total;
                }
                return ParameterVector::new(w).expect("normalized weights are finite");
            }
        },
        ThetaSpace::Box { lo, hi } => {
            let w: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| l + rng.random::<f64>() * (h - l))
                .collect();
            ParameterVector::new(w).expect("box draws are finite")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{AxisDensity, ProductDensity, Statistic};
    use crate::metrics;
    use crate::quad::AxisBox;

    fn pv(coords: &[f64]) -> ParameterVector {
        ParameterVector::new(coords.to_vec()).unwrap()
    }

    fn uniform_halves() -> SourceFamily {
        SourceFamily::mixture(
            AxisBox::new(vec![0.0], vec![1.0]).unwrap(),
            vec![
                ProductDensity::new(vec![AxisDensity::uniform(0.0, 0.5).unwrap()]).unwrap(),
                ProductDensity::new(vec![AxisDensity::uniform(0.5, 1.0).unwrap()]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn linear_expfam() -> SourceFamily {
        SourceFamily::exponential(
            AxisBox::new(vec![0.0], vec![1.0]).unwrap(),
            ProductDensity::new(vec![AxisDensity::uniform(0.0, 1.0).unwrap()]).unwrap(),
            vec![Statistic::monomial(0, 1).unwrap()],
            vec![-2.0],
            vec![2.0],
        )
        .unwrap()
    }

    fn corner_net() -> ParameterNet {
        // The two simplex corners; every simplex point is within sqrt(2)/2.
        ParameterNet::explicit(
            &ThetaSpace::Simplex { dim: 2 },
            vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])],
            (2.0_f64).sqrt() / 2.0,
        )
        .unwrap()
    }

    fn block(values: &[f64]) -> SampleBlock {
        SampleBlock::from_values(values.to_vec(), values.len(), 1).unwrap()
    }

    #[test]
    fn empirical_measure_counts_strict_density_wins() {
        let family = uniform_halves();
        let z = block(&[0.1, 0.2, 0.6, 0.9]);
        // Set {p_(0,1) > p_(1,0)} is the open upper half of the support.
        let m = empirical_measure(&family, &z, &pv(&[0.0, 1.0]), &pv(&[1.0, 0.0])).unwrap();
        assert_eq!(m, 0.5);
        // Identical parameters tie everywhere: the set is empty.
        let m = empirical_measure(&family, &z, &pv(&[0.5, 0.5]), &pv(&[0.5, 0.5])).unwrap();
        assert_eq!(m, 0.0);
        // Letters outside the support evaluate both densities to zero.
        let z = block(&[1.5, 2.0, -1.0, 7.0]);
        let m = empirical_measure(&family, &z, &pv(&[0.0, 1.0]), &pv(&[1.0, 0.0])).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn deviation_separates_disjoint_uniform_parameters() {
        let family = uniform_halves();
        let net = corner_net();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        // Two opposite half-interval sets.
        assert_eq!(table.set_count(), 2);
        let (pa, pb) = table.pair_probabilities(0, 1).unwrap();
        assert!((pa - 1.0).abs() < 1e-8 && pb.abs() < 1e-8);

        let z = block(&[0.1, 0.2, 0.3, 0.45]);
        let result = deviations(&family, &z, &net, &table).unwrap();
        assert!(result.deltas()[0].abs() < 1e-8);
        assert!((result.deltas()[1] - 1.0).abs() < 1e-8);
        assert_eq!(result.argmin(), 0);
        let estimate = min_distance_estimate(&family, &z, &net, &table).unwrap();
        assert_eq!(estimate.coords(), &[1.0, 0.0]);
        assert_eq!(deviation(&family, &z, &net, &table, 1).unwrap(), result.deltas()[1]);
        assert!(matches!(
            deviation(&family, &z, &net, &table, 2),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn single_point_net_has_zero_deviation() {
        let family = uniform_halves();
        let net = ParameterNet::explicit(
            &ThetaSpace::Simplex { dim: 2 },
            vec![pv(&[0.25, 0.75])],
            1.0,
        )
        .unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        assert_eq!(table.set_count(), 0);
        let z = block(&[0.1, 0.9]);
        let result = deviations(&family, &z, &net, &table).unwrap();
        assert_eq!(result.deltas(), &[0.0]);
        let estimate = min_distance_estimate(&family, &z, &net, &table).unwrap();
        assert_eq!(estimate.coords(), &[0.25, 0.75]);
    }

    #[test]
    fn table_satisfies_the_scheffe_identity() {
        let family = uniform_halves();
        let net = ParameterNet::simplex_lattice(2, 4).unwrap();
        assert_eq!(net.len(), 5);
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        for a in 0..net.len() {
            for b in 0..net.len() {
                if a == b {
                    continue;
                }
                let (pa, pb) = table.pair_probabilities(a, b).unwrap();
                let dv = metrics::variational_distance(&family, net.point(a), net.point(b))
                    .unwrap()
                    .value;
                assert!(
                    ((pa - pb) - dv).abs() < 1e-6,
                    "pair ({a},{b}): {} vs {dv}",
                    pa - pb
                );
            }
        }
    }

    #[test]
    fn mindist_inequality_holds_with_the_truth_on_the_net() {
        let family = uniform_halves();
        let net = ParameterNet::simplex_lattice(2, 8).unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        let theta = pv(&[0.375, 0.625]);
        let theta_idx = net
            .points()
            .iter()
            .position(|p| p.coords() == theta.coords())
            .expect("theta lies on the net");
        let n = 256usize;
        let mut distance_cache: HashMap<usize, f64> = HashMap::new();
        for trial in 0..20u64 {
            let z = family
                .sample_block(&theta, n, crate::rng::stream_label(7, "mindist", &[trial]))
                .unwrap();
            let result = deviations(&family, &z, &net, &table).unwrap();
            let delta_true = result.deltas()[theta_idx];
            let est = result.argmin();
            let dv = *distance_cache.entry(est).or_insert_with(|| {
                metrics::variational_distance(&family, &theta, net.point(est))
                    .unwrap()
                    .value
            });
            assert!(
                dv <= 2.0 * delta_true + 1.5 / n as f64 + 1e-6,
                "trial {trial}: d_V {dv} exceeds 2*{delta_true} + 3/(2n)"
            );
        }
    }

    #[test]
    fn deviation_mean_shrinks_with_block_length() {
        // Fixed two-set class: the deviation scales like 1/sqrt(n), so the
        // 64 -> 1024 mean ratio concentrates near 4 and must beat 2.
        let family = uniform_halves();
        let net = ParameterNet::simplex_lattice(2, 10).unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        let theta = pv(&[0.3, 0.7]);
        let theta_idx = net
            .points()
            .iter()
            .position(|p| p.coords() == theta.coords())
            .unwrap();
        let mut means = Vec::new();
        for (ni, &n) in [64usize, 1024].iter().enumerate() {
            let mut total = 0.0;
            let trials = 60u64;
            for trial in 0..trials {
                let label =
                    crate::rng::stream_label(11, "deviation-scaling", &[ni as u64, trial]);
                let z = family.sample_block(&theta, n, label).unwrap();
                total += deviations(&family, &z, &net, &table).unwrap().deltas()[theta_idx];
            }
            means.push(total / trials as f64);
        }
        assert!(
            means[0] / means[1] >= 2.0,
            "mean deviation ratio {} below 2",
            means[0] / means[1]
        );
    }

    #[test]
    fn min_distance_estimate_is_permutation_invariant() {
        let family = uniform_halves();
        let net = ParameterNet::simplex_lattice(2, 8).unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        let z = family.sample_block(&pv(&[0.4, 0.6]), 64, 99).unwrap();
        let mut shuffled = z.values().to_vec();
        shuffled.reverse();
        shuffled.swap(3, 40);
        let permuted = SampleBlock::from_values(shuffled, z.block_len(), 1).unwrap();
        let a = deviations(&family, &z, &net, &table).unwrap();
        let b = deviations(&family, &permuted, &net, &table).unwrap();
        assert_eq!(a.deltas(), b.deltas());
        assert_eq!(a.argmin(), b.argmin());
    }

    #[test]
    fn deviations_respect_the_selection_slack() {
        let family = uniform_halves();
        let net = corner_net();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        let z = block(&[0.6, 0.7, 0.8, 0.9]);
        // The exact minimizer is the second corner ...
        let exact = deviations(&family, &z, &net, &table).unwrap();
        assert_eq!(exact.argmin(), 1);
        assert_eq!(exact.slack(), 0.0);
        // ... but a unit slack admits the first net point.
        let slacked = deviations_with_slack(&family, &z, &net, &table, 1.0).unwrap();
        assert_eq!(slacked.argmin(), 0);
        assert!(matches!(
            deviations_with_slack(&family, &z, &net, &table, -0.1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn foreign_tables_are_rejected() {
        let family = uniform_halves();
        let net = ParameterNet::simplex_lattice(2, 4).unwrap();
        let other = ParameterNet::simplex_lattice(2, 3).unwrap();
        let table = YatracosTable::build(&family, &other, &TableConfig::default()).unwrap();
        let z = block(&[0.1, 0.9]);
        assert!(matches!(
            deviations(&family, &z, &net, &table),
            Err(Error::Compatibility(_))
        ));
    }

    #[test]
    fn vc_tail_bound_matches_the_frozen_oracle() {
        // 8 * 100^2 * exp(-100 * 0.25/32) to extended precision.
        let v = vc_tail_bound(100, 2, 0.5).unwrap();
        assert!((v - 36626.66894172914).abs() < 1e-6 * v);
        // Monotone decreasing in eps.
        let mut last = f64::INFINITY;
        for i in 1..40 {
            let b = vc_tail_bound(100, 2, 0.1 * i as f64).unwrap();
            assert!(b < last);
            last = b;
        }
        // Large eps drives the bound to zero.
        assert!(vc_tail_bound(100, 2, 50.0).unwrap() < 1e-200);
        // Eventually decreasing in n once the exponential term dominates.
        assert!(vc_tail_bound(2000, 2, 0.5).unwrap() > vc_tail_bound(4000, 2, 0.5).unwrap());
        // Domain checks.
        assert!(matches!(vc_tail_bound(0, 2, 0.5), Err(Error::Domain(_))));
        assert!(matches!(vc_tail_bound(100, 1, 0.5), Err(Error::Domain(_))));
        assert!(matches!(vc_tail_bound(100, 2, 0.0), Err(Error::Domain(_))));
        assert!(matches!(vc_tail_bound(100, 2, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn vc_identification_bound_handles_the_offset() {
        // Zero offset reduces to the /128 exponent: 8 * 100^2 * exp(-25/128).
        let v = vc_identification_bound(100, 2, 0.5, 0.0).unwrap();
        assert!((v - 65806.20499189317).abs() < 1e-6 * v);
        // Frozen value with an active offset: eff = 0.5 - 2/20 = 0.4.
        let v = vc_identification_bound(400, 2, 0.5, 2.0).unwrap();
        assert!((v - 776359.2444321708).abs() < 1e-6 * v);
        // The offset can swallow eps entirely, leaving the polynomial.
        let v = vc_identification_bound(100, 2, 0.05, 1.0).unwrap();
        assert!((v - 8.0e4).abs() < 1e-9 * v);
        assert!(matches!(
            vc_identification_bound(100, 2, 0.5, -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn identification_tail_schedule_is_summable() {
        // Any schedule strictly above sqrt(128 V ln n / n) + gamma sqrt(1/n)
        // keeps the bound summable; this one clears the threshold by a
        // constant factor so the tail is numerically negligible by n = 1e5.
        let v = 2u32;
        let gamma = 2.0;
        let mut partial = 0.0f64;
        let mut at_half = 0.0f64;
        let mut last = 0.0f64;
        for n in 1..=100_000u64 {
            let nf = n as f64;
            let threshold = (128.0 * v as f64 * nf.ln() / nf).sqrt() + gamma / nf.sqrt();
            let eps = (128.0 * (v as f64 + 3.5) * nf.ln() / nf).sqrt() + gamma / nf.sqrt();
            assert!(eps >= threshold);
            partial += vc_identification_bound(n, v, eps, gamma).unwrap();
            assert!(partial >= last && partial.is_finite());
            last = partial;
            if n == 50_000 {
                at_half = partial;
            }
        }
        assert!(
            partial - at_half <= 1e-9,
            "tail mass {} above 1e-9",
            partial - at_half
        );
    }

    #[test]
    fn shatter_probe_matches_label_pattern_counts() {
        let family = uniform_halves();
        let net = corner_net();
        // No points: only the empty labeling.
        assert_eq!(shatter_probe(&family, &net, &[], 10, 1).unwrap(), 1);
        // One point: in and out are both realized by the two orderings.
        assert_eq!(shatter_probe(&family, &net, &[vec![0.25]], 0, 1).unwrap(), 2);
        // Three points for a two-component mixture: strictly fewer than
        // 2^3 patterns, whatever the random pair budget.
        let points = vec![vec![0.2], vec![0.4], vec![0.8]];
        let count = shatter_probe(&family, &net, &points, 300, 5).unwrap();
        assert!((2..8).contains(&count), "pattern count {count}");
        // Deterministic under the seed.
        assert_eq!(count, shatter_probe(&family, &net, &points, 300, 5).unwrap());
        // Out-of-support probe points are rejected.
        assert!(matches!(
            shatter_probe(&family, &net, &[vec![1.5]], 0, 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn table_cache_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let family = uniform_halves();
        let net = ParameterNet::simplex_lattice(2, 4).unwrap();
        let cfg = TableConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..TableConfig::default()
        };
        let first = YatracosTable::build(&family, &net, &cfg).unwrap();
        let cache_file = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("ytab-") && n.ends_with(".bin"))
            })
            .expect("cache file written");
        let second = YatracosTable::build(&family, &net, &cfg).unwrap();
        let bits = |t: &YatracosTable| t.probs.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&first), bits(&second));
        assert_eq!(first.pairs, second.pairs);
        assert_eq!(first.max_error.to_bits(), second.max_error.to_bits());

        // A corrupted cache is ignored and silently rebuilt.
        let mut bytes = fs::read(&cache_file).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&cache_file, &bytes).unwrap();
        let third = YatracosTable::build(&family, &net, &cfg).unwrap();
        assert_eq!(bits(&first), bits(&third));
        // The rebuild restored a loadable file.
        let restored = fs::read(&cache_file).unwrap();
        assert!(YatracosTable::from_bytes(&restored).is_some());
    }

    #[test]
    fn expfam_tables_use_halfspace_signatures() {
        let family = linear_expfam();
        let net = ParameterNet::box_lattice(&[-2.0], &[2.0], &[5]).unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        // One-dimensional natural parameters give threshold sets
        // {x : sign * x > c}: distinct thresholds per pair magnitude plus
        // the two signs, but always more than the two mixture directions.
        assert!(table.set_count() > 2);
        for a in 0..net.len() {
            for b in 0..net.len() {
                if a == b {
                    continue;
                }
                let (pa, pb) = table.pair_probabilities(a, b).unwrap();
                let dv = metrics::variational_distance(&family, net.point(a), net.point(b))
                    .unwrap()
                    .value;
                assert!(((pa - pb) - dv).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parameter_net_constructors_validate() {
        let net = ParameterNet::simplex_lattice(2, 4).unwrap();
        assert_eq!(net.len(), 5);
        assert_eq!(net.point(1).coords(), &[0.25, 0.75]);
        assert_eq!(net.nearest_index(&[0.26, 0.74]), 1);

        // Mesh certification against the block-length rule.
        let fine = ParameterNet::simplex_lattice(2, 64).unwrap();
        assert!(fine.supports_block_len(1024));
        assert!(!fine.supports_block_len(4096));

        let grid = ParameterNet::box_lattice(&[0.0], &[1.0], &[5]).unwrap();
        assert_eq!(grid.len(), 5);
        assert_eq!(grid.point(2).coords(), &[0.5]);
        assert!((grid.mesh() - 0.125).abs() < 1e-12);

        let space = ThetaSpace::Simplex { dim: 2 };
        assert!(matches!(
            ParameterNet::explicit(&space, vec![pv(&[1.0, 0.0]), pv(&[1.0, 0.0])], 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            ParameterNet::explicit(&space, vec![pv(&[0.9, 0.3])], 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            ParameterNet::explicit(&space, vec![pv(&[1.0, 0.0])], 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn ceil_sqrt_is_exact() {
        assert_eq!(ceil_sqrt(1), 1);
        assert_eq!(ceil_sqrt(2), 2);
        assert_eq!(ceil_sqrt(4), 2);
        assert_eq!(ceil_sqrt(5), 3);
        assert_eq!(ceil_sqrt(16), 4);
        assert_eq!(ceil_sqrt(17), 5);
        assert_eq!(ceil_sqrt(1024), 32);
        assert_eq!(ceil_sqrt(1 << 32), 1 << 16);
        assert_eq!(ceil_sqrt((1 << 32) + 1), (1 << 16) + 1);
    }
}

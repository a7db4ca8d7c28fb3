//! Fixed-rate block vector quantization under a bounded per-letter
//! distortion.
//!
//! A rate-`R` quantizer for `n`-blocks of `d`-dimensional letters carries
//! `2^{nR}` codevectors in `R^{n d}` and encodes by exhaustive
//! minimum-distortion search.  The per-letter distortion is the clamped
//! squared error `rho(x, y) = min(|x - y|^2, K)`, which is bounded by
//! construction and vanishes on the diagonal; block distortion is the sum
//! of letter distortions.
//!
//! Codebooks are trained with a generalized Lloyd iteration on sample
//! blocks drawn from the source: nearest-codevector partition under `rho`,
//! then Euclidean-mean centroid updates.  The mean is the exact clamped-SE
//! centroid wherever the clamp is inactive, which is everywhere when `K`
//! is at least the squared support diameter (the default); a guard reverts
//! the final update if an active clamp ever pushes the measured distortion
//! up, so logged training histories are non-increasing in every run.  The
//! design is a pure function of its provenance tuple — family, parameter,
//! seed, training size, iteration budget, tolerance — regardless of thread
//! count, so encoder and decoder can derive identical codebooks
//! independently.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::family::{ParameterVector, SourceFamily};
use crate::metrics;
use crate::quad::AxisBox;
use crate::rng::{f64_slice_bytes, StreamKey};

// ---------------------------------------------------------------------------
// Distortion
// ---------------------------------------------------------------------------

/// Clamped squared-error distortion with per-letter cap `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionSpec {
    bound: f64,
}

impl DistortionSpec {
    /// `rho(x, y) = min(|x - y|^2, K)` with cap `K > 0`.
    pub fn clamped_squared_error(bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::Parameter(format!(
                "distortion cap must be a positive real, got {bound}"
            )));
        }
        Ok(DistortionSpec { bound })
    }

    /// Default cap: the squared diameter of the support box, so the bound
    /// is real but never binds on in-support data.
    pub fn for_support(support: &AxisBox) -> Self {
        DistortionSpec { bound: support.diameter_sq() }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Serialization tag of the distortion kind (clamped squared error).
    pub fn kind_tag(&self) -> u8 {
        1
    }

    /// Rebuild from a serialized `(kind, bound)` pair.
    pub fn from_tag(tag: u8, bound: f64) -> Result<Self> {
        if tag != 1 {
            return Err(Error::Compatibility(format!(
                "unknown distortion kind tag {tag}"
            )));
        }
        Self::clamped_squared_error(bound)
    }

    /// Distortion of a single letter pair.
    pub fn letter(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut sq = 0.0;
        for (a, b) in x.iter().zip(y) {
            let diff = a - b;
            sq += diff * diff;
        }
        sq.min(self.bound)
    }

    /// Total distortion of a block pair: the sum of letter distortions.
    pub fn block(&self, x: &[f64], y: &[f64], data_dim: usize) -> f64 {
        x.chunks_exact(data_dim)
            .zip(y.chunks_exact(data_dim))
            .map(|(a, b)| self.letter(a, b))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Rates
// ---------------------------------------------------------------------------

/// A rational rate in bits per letter, stored in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u32,
    den: u32,
}

impl Rate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 {
            return Err(Error::Parameter("rate denominator must be at least 1".into()));
        }
        let g = gcd(num.max(1), den);
        Ok(Rate { num: num / g, den: den / g })
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn bits_per_letter(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact bit budget `n R` for an `n`-block; the product must be an
    /// integer.
    pub fn bits_for_block(&self, n: u64) -> Result<u64> {
        let total = n * self.num as u64;
        if !total.is_multiple_of(self.den as u64) {
            return Err(Error::Config(format!(
                "rate {self} times block length {n} is not an integer bit budget"
            )));
        }
        Ok(total / self.den as u64)
    }
}

impl std::fmt::Display for Rate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

// ---------------------------------------------------------------------------
// Codebooks
// ---------------------------------------------------------------------------

/// Everything that determines a designed codebook bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub family_hash: [u8; 32],
    pub theta: Vec<f64>,
    pub block_len: u32,
    pub data_dim: u32,
    pub rate: Rate,
    pub distortion_bound: f64,
    pub master_seed: u64,
    pub training_blocks: u32,
    pub max_iterations: u32,
    pub tolerance: f64,
}

impl Provenance {
    /// Content hash of the provenance tuple; because the design procedure
    /// is deterministic, this also names the resulting codebook.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"uvq-codebook-v1");
        hasher.update(self.family_hash);
        hasher.update((self.theta.len() as u64).to_le_bytes());
        hasher.update(f64_slice_bytes(&self.theta));
        hasher.update(self.block_len.to_le_bytes());
        hasher.update(self.data_dim.to_le_bytes());
        hasher.update(self.rate.num.to_le_bytes());
        hasher.update(self.rate.den.to_le_bytes());
        hasher.update(self.distortion_bound.to_bits().to_le_bytes());
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(self.training_blocks.to_le_bytes());
        hasher.update(self.max_iterations.to_le_bytes());
        hasher.update(self.tolerance.to_bits().to_le_bytes());
        hasher.finalize().into()
    }
}

/// Diagnostics of one Lloyd design run.
#[derive(Clone, Debug)]
pub struct DesignReport {
    /// Mean per-letter training distortion measured at each assignment
    /// pass; non-increasing in every run.
    pub history: Vec<f64>,
    /// Centroid updates performed.
    pub iterations: usize,
    /// Whether the run stopped on the improvement tolerance rather than
    /// the iteration cap.
    pub converged: bool,
    /// Training could not seed every codevector distinctly (e.g. all
    /// blocks identical); the codebook contains repeats.
    pub degenerate: bool,
}

/// A fixed-rate block codebook with its design provenance.
#[derive(Clone, Debug)]
pub struct Codebook {
    block_len: usize,
    data_dim: usize,
    rate: Rate,
    vectors: Vec<f64>,
    provenance: Provenance,
    report: DesignReport,
}

const CODEBOOK_MAGIC: &[u8; 8] = b"UVQCBK1\0";
const CODEBOOK_VERSION: u16 = 1;

impl Codebook {
    /// Number of codevectors, exactly `2^{nR}`.
    pub fn len(&self) -> usize {
        self.vectors.len() / (self.block_len * self.data_dim)
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn rate(&self) -> Rate {
        self.rate
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn design_report(&self) -> &DesignReport {
        &self.report
    }

    /// Minimum-distortion encoding: the index whose codevector minimizes
    /// the block distortion, ties to the lowest index.
    pub fn nn_encode(&self, x: &[f64], spec: &DistortionSpec) -> Result<u32> {
        let nd = self.block_len * self.data_dim;
        if x.len() != nd {
            return Err(Error::Shape(format!(
                "block has {} values, codebook expects {nd}",
                x.len()
            )));
        }
        let mut best = 0u32;
        let mut best_dist = f64::INFINITY;
        for (i, v) in self.vectors.chunks_exact(nd).enumerate() {
            let dist = spec.block(x, v, self.data_dim);
            if dist < best_dist {
                best_dist = dist;
                best = i as u32;
            }
        }
        Ok(best)
    }

    /// The codevector at `index`.
    pub fn decode(&self, index: u32) -> Result<&[f64]> {
        let nd = self.block_len * self.data_dim;
        let start = index as usize * nd;
        self.vectors.get(start..start + nd).ok_or_else(|| {
            Error::Index(format!(
                "codevector index {index} out of range for {} entries",
                self.len()
            ))
        })
    }

    // -- file format ---------------------------------------------------------

    /// File name under the provenance digest: `cbk-<hex16>.bin`.
    pub fn file_name(&self) -> String {
        Self::file_name_for(&self.provenance)
    }

    /// File name a design with this provenance would be stored under.
    pub fn file_name_for(provenance: &Provenance) -> String {
        let digest = provenance.digest();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("cbk-{hex}.bin")
    }

    /// Persist to `dir` atomically; returns the final path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let name = self.file_name();
        let tmp = dir.join(format!("{name}.tmp-{}", std::process::id()));
        std::fs::write(&tmp, self.to_bytes())?;
        let path = dir.join(name);
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CODEBOOK_MAGIC);
        buf.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
        let p = &self.provenance;
        buf.extend_from_slice(&p.family_hash);
        buf.extend_from_slice(&(p.theta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&f64_slice_bytes(&p.theta));
        buf.extend_from_slice(&p.block_len.to_le_bytes());
        buf.extend_from_slice(&p.data_dim.to_le_bytes());
        buf.extend_from_slice(&p.rate.num.to_le_bytes());
        buf.extend_from_slice(&p.rate.den.to_le_bytes());
        buf.extend_from_slice(&p.distortion_bound.to_le_bytes());
        buf.extend_from_slice(&p.master_seed.to_le_bytes());
        buf.extend_from_slice(&p.training_blocks.to_le_bytes());
        buf.extend_from_slice(&p.max_iterations.to_le_bytes());
        buf.extend_from_slice(&p.tolerance.to_le_bytes());
        let r = &self.report;
        buf.push(r.converged as u8);
        buf.push(r.degenerate as u8);
        buf.extend_from_slice(&(r.iterations as u32).to_le_bytes());
        buf.extend_from_slice(&(r.history.len() as u32).to_le_bytes());
        buf.extend_from_slice(&f64_slice_bytes(&r.history));
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&f64_slice_bytes(&self.vectors));
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).ok_or_else(|| {
            Error::Compatibility(format!(
                "codebook file {} is corrupt, truncated, or from another version",
                path.display()
            ))
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 4 {
            return None;
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc_bytes.try_into().ok()?) {
            return None;
        }
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
            let end = pos.checked_add(n)?;
            let slice = body.get(*pos..end)?;
            *pos = end;
            Some(slice)
        };
        if take(&mut pos, 8)? != CODEBOOK_MAGIC {
            return None;
        }
        if u16::from_le_bytes(take(&mut pos, 2)?.try_into().ok()?) != CODEBOOK_VERSION {
            return None;
        }
        let family_hash: [u8; 32] = take(&mut pos, 32)?.try_into().ok()?;
        let theta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
        let theta = read_f64s(take(&mut pos, theta_len * 8)?);
        let block_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?);
        let data_dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?);
        let num = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?);
        let den = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?);
        let rate = Rate::new(num, den).ok()?;
        let distortion_bound = f64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?);
        let master_seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?);
        let training_blocks = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?);
        let max_iterations = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?);
        let tolerance = f64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?);
        let converged = take(&mut pos, 1)?[0] != 0;
        let degenerate = take(&mut pos, 1)?[0] != 0;
        let iterations = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
        let history_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
        let history = read_f64s(take(&mut pos, history_len * 8)?);
        let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?) as usize;
        let nd = (block_len as usize).checked_mul(data_dim as usize)?;
        let vectors = read_f64s(take(&mut pos, count.checked_mul(nd)?.checked_mul(8)?)?);
        if pos != body.len() || block_len == 0 || data_dim == 0 {
            return None;
        }
        Some(Codebook {
            block_len: block_len as usize,
            data_dim: data_dim as usize,
            rate,
            vectors,
            provenance: Provenance {
                family_hash,
                theta,
                block_len,
                data_dim,
                rate,
                distortion_bound,
                master_seed,
                training_blocks,
                max_iterations,
                tolerance,
            },
            report: DesignReport { history, iterations, converged, degenerate },
        })
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

// ---------------------------------------------------------------------------
// Design
// ---------------------------------------------------------------------------

/// Training knobs for the Lloyd design.
#[derive(Clone, Copy, Debug)]
pub struct DesignParams {
    pub training_blocks: usize,
    pub max_iterations: usize,
    /// Stop once the relative distortion improvement falls below this.
    pub tolerance: f64,
    /// Largest admissible codevector count; keeps the exhaustive
    /// nearest-neighbor search exact.
    pub codebook_cap: u32,
}

impl Default for DesignParams {
    fn default() -> Self {
        DesignParams {
            training_blocks: 4096,
            max_iterations: 200,
            tolerance: 1e-6,
            codebook_cap: 1 << 12,
        }
    }
}

/// The seed labels the design draws its training blocks with, exposed so
/// audits can regenerate the exact training set.
pub fn training_labels(
    family: &SourceFamily,
    theta: &ParameterVector,
    master_seed: u64,
    count: usize,
) -> Vec<u64> {
    (0..count)
        .map(|t| {
            StreamKey::root(master_seed)
                .tagged("lloyd-training")
                .bytes(family.content_hash())
                .bytes(&f64_slice_bytes(theta.coords()))
                .indexed(t as u64)
                .label()
        })
        .collect()
}

/// Train a `2^{nR}`-codevector codebook for the source `P_theta` with a
/// generalized Lloyd iteration.
///
/// Initial codevectors are the first distinct training blocks; empty cells
/// are re-seeded from the highest-distortion cell (deterministic order) by
/// promoting its farthest member.  The run stops when the relative
/// improvement of the mean training distortion drops below the tolerance,
/// or at the iteration cap.  Identical arguments produce bit-identical
/// codebooks regardless of thread count.
pub fn design_codebook(
    family: &SourceFamily,
    theta: &ParameterVector,
    n: usize,
    rate: Rate,
    spec: &DistortionSpec,
    params: &DesignParams,
    master_seed: u64,
) -> Result<Codebook> {
    family.validate_theta(theta)?;
    if n == 0 {
        return Err(Error::Parameter("block length must be at least 1".into()));
    }
    if params.training_blocks == 0 {
        return Err(Error::Parameter("codebook design needs at least one training block".into()));
    }
    let bits = rate.bits_for_block(n as u64)?;
    if bits >= 32 || (1u64 << bits) > params.codebook_cap as u64 {
        return Err(Error::Parameter(format!(
            "codebook of 2^{bits} codevectors exceeds the cap of {}",
            params.codebook_cap
        )));
    }
    let size = 1usize << bits;
    let d = family.data_dim();
    let nd = n * d;

    let labels = training_labels(family, theta, master_seed, params.training_blocks);
    let mut training = Vec::with_capacity(params.training_blocks * nd);
    for &label in &labels {
        training.extend_from_slice(family.sample_block(theta, n, label)?.values());
    }

    let provenance = Provenance {
        family_hash: *family.content_hash(),
        theta: theta.coords().to_vec(),
        block_len: n as u32,
        data_dim: d as u32,
        rate,
        distortion_bound: spec.bound(),
        master_seed,
        training_blocks: params.training_blocks as u32,
        max_iterations: params.max_iterations as u32,
        tolerance: params.tolerance,
    };

    // Initialize from the first distinct training blocks.
    let mut vectors: Vec<f64> = Vec::with_capacity(size * nd);
    let mut seen: std::collections::HashSet<Vec<u64>> = std::collections::HashSet::new();
    for block in training.chunks_exact(nd) {
        if vectors.len() == size * nd {
            break;
        }
        if seen.insert(block.iter().map(|v| v.to_bits()).collect()) {
            vectors.extend_from_slice(block);
        }
    }
    let distinct = vectors.len() / nd;
    let degenerate = distinct < size;
    if distinct == 1 && size > 1 {
        // The scan could not fill the codebook, so it visited every block
        // and found one value: all training blocks are identical.  The
        // mean is that block, and every codevector repeats it.
        let block = vectors[..nd].to_vec();
        let mut repeated = Vec::with_capacity(size * nd);
        for _ in 0..size {
            repeated.extend_from_slice(&block);
        }
        return Ok(Codebook {
            block_len: n,
            data_dim: d,
            rate,
            vectors: repeated,
            provenance,
            report: DesignReport {
                history: vec![0.0],
                iterations: 0,
                converged: true,
                degenerate: true,
            },
        });
    }
    if distinct < size {
        // Cyclic fill; re-seeding cannot conjure unseen data, so flag it.
        let prefix = vectors.clone();
        let mut i = 0usize;
        while vectors.len() < size * nd {
            vectors.extend_from_slice(&prefix[(i % distinct) * nd..][..nd]);
            i += 1;
        }
    }

    let t_blocks = params.training_blocks;
    let letters = (t_blocks * n) as f64;
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut prev_mean: Option<f64> = None;
    let mut prev_vectors: Option<Vec<f64>> = None;

    loop {
        // Assignment pass (parallel, order-preserving).
        let assignments: Vec<(u32, f64)> = training
            .par_chunks_exact(nd)
            .map(|block| {
                let mut best = 0u32;
                let mut best_dist = f64::INFINITY;
                for (i, v) in vectors.chunks_exact(nd).enumerate() {
                    let dist = spec.block(block, v, d);
                    if dist < best_dist {
                        best_dist = dist;
                        best = i as u32;
                    }
                }
                (best, best_dist)
            })
            .collect();
        let mean = assignments.iter().map(|a| a.1).sum::<f64>() / letters;

        // An update can only raise the measured distortion when the clamp
        // is active (the mean is not the clamped centroid there); revert
        // it and stop so the logged history stays non-increasing.
        if let (Some(prev), Some(pv)) = (prev_mean, prev_vectors.as_ref()) {
            if mean > prev + 1e-12 * prev.max(1.0) {
                vectors = pv.clone();
                converged = true;
                break;
            }
        }
        history.push(mean);

        let mut counts = vec![0usize; size];
        for &(c, _) in &assignments {
            counts[c as usize] += 1;
        }
        let has_empty = counts.contains(&0);
        let donor_available = counts.iter().any(|&c| c > 1);
        if !has_empty || !donor_available {
            if let Some(prev) = prev_mean {
                if prev <= f64::MIN_POSITIVE || (prev - mean) / prev < params.tolerance {
                    converged = true;
                    break;
                }
            }
        }
        if iterations >= params.max_iterations {
            break;
        }

        prev_mean = Some(mean);
        prev_vectors = Some(vectors.clone());

        // Centroid update: Euclidean mean per nonempty cell (sequential
        // accumulation in block order for bit-exact reproducibility).
        let mut sums = vec![0.0f64; size * nd];
        for (block, &(c, _)) in training.chunks_exact(nd).zip(&assignments) {
            let base = c as usize * nd;
            for (j, &v) in block.iter().enumerate() {
                sums[base + j] += v;
            }
        }
        for c in 0..size {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..nd {
                    vectors[c * nd + j] = sums[c * nd + j] * inv;
                }
            }
        }

        // Re-seed empty cells by splitting the highest-distortion cell:
        // promote its farthest member (ties to the lowest block index).
        if has_empty {
            let mut cell_dist = vec![0.0f64; size];
            for &(c, dist) in &assignments {
                cell_dist[c as usize] += dist;
            }
            let mut cell_count = counts.clone();
            for e in 0..size {
                if cell_count[e] > 0 {
                    continue;
                }
                let donor = (0..size)
                    .filter(|&c| cell_count[c] > 1)
                    .max_by(|&a, &b| cell_dist[a].total_cmp(&cell_dist[b]).then(b.cmp(&a)));
                let Some(donor) = donor else { break };
                let center = vectors[donor * nd..donor * nd + nd].to_vec();
                let mut far: Option<(usize, f64)> = None;
                for (bi, (block, &(c, _))) in
                    training.chunks_exact(nd).zip(&assignments).enumerate()
                {
                    if c as usize != donor {
                        continue;
                    }
                    let dist = spec.block(block, &center, d);
                    if far.is_none_or(|(_, best)| dist > best) {
                        far = Some((bi, dist));
                    }
                }
                let Some((bi, _)) = far else { break };
                vectors[e * nd..e * nd + nd].copy_from_slice(&training[bi * nd..bi * nd + nd]);
                cell_count[e] = 1;
                cell_count[donor] -= 1;
                cell_dist[donor] = 0.0;
            }
        }
        iterations += 1;
    }

    Ok(Codebook {
        block_len: n,
        data_dim: d,
        rate,
        vectors,
        provenance,
        report: DesignReport { history, iterations, converged, degenerate },
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo evaluation
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of mean per-letter distortion.
#[derive(Clone, Copy, Debug)]
pub struct DistortionEstimate {
    /// Mean per-letter distortion, in `[0, K]`.
    pub mean: f64,
    /// Standard error of the mean; `None` for a single trial.
    pub stderr: Option<f64>,
    pub trials: usize,
}

/// Estimate `D_theta(C)`: the mean per-letter distortion of encoding fresh
/// blocks from `P_theta` with the codebook.
pub fn estimate_distortion(
    family: &SourceFamily,
    theta: &ParameterVector,
    code: &Codebook,
    spec: &DistortionSpec,
    trials: usize,
    stream_label: u64,
) -> Result<DistortionEstimate> {
    if trials == 0 {
        return Err(Error::Parameter("distortion estimation needs at least one trial".into()));
    }
    if code.data_dim() != family.data_dim() {
        return Err(Error::Compatibility(format!(
            "codebook letters have dimension {}, family produces {}",
            code.data_dim(),
            family.data_dim()
        )));
    }
    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let label = StreamKey::root(stream_label)
                .tagged("distortion-trial")
                .indexed(t as u64)
                .label();
            let block = family.sample_block(theta, code.block_len(), label)?;
            let index = code.nn_encode(block.values(), spec)?;
            let reproduction = code.decode(index)?;
            Ok(spec.block(block.values(), reproduction, code.data_dim())
                / code.block_len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&per_trial))
}

fn summarize(per_trial: &[f64]) -> DistortionEstimate {
    let trials = per_trial.len();
    let mean = per_trial.iter().sum::<f64>() / trials as f64;
    let stderr = (trials > 1).then(|| {
        let var =
            per_trial.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    });
    DistortionEstimate { mean, stderr, trials }
}

/// Measured mismatch gap against its variational-distance bound.
#[derive(Clone, Debug)]
pub struct MismatchReport {
    /// `D_theta(C_eta) - D_theta(C_theta)`, paired over shared blocks.
    pub gap: f64,
    /// Standard error of the paired per-trial differences.
    pub gap_stderr: Option<f64>,
    /// `4 K d_V(P_theta, P_eta)`.
    pub bound: f64,
    /// The variational distance used in the bound.
    pub distance: f64,
    pub matched: DistortionEstimate,
    pub mismatched: DistortionEstimate,
}

/// Design matched and mismatched codebooks and measure the distortion gap
/// of serving `P_theta` with the code trained for `P_eta`, alongside the
/// bound `4 K d_V(P_theta, P_eta)`.
///
/// Both codebooks are evaluated on the same fresh blocks, so the gap is a
/// paired estimate with its own (much smaller) standard error.
#[allow(clippy::too_many_arguments)]
pub fn mismatch_gap(
    family: &SourceFamily,
    theta: &ParameterVector,
    eta: &ParameterVector,
    n: usize,
    rate: Rate,
    spec: &DistortionSpec,
    params: &DesignParams,
    trials: usize,
    master_seed: u64,
) -> Result<MismatchReport> {
    if trials == 0 {
        return Err(Error::Parameter("mismatch evaluation needs at least one trial".into()));
    }
    let matched_code = design_codebook(family, theta, n, rate, spec, params, master_seed)?;
    let mismatched_code = design_codebook(family, eta, n, rate, spec, params, master_seed)?;
    let rows: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let label = StreamKey::root(master_seed)
                .tagged("mismatch-eval")
                .bytes(family.content_hash())
                .bytes(&f64_slice_bytes(theta.coords()))
                .indexed(t as u64)
                .label();
            let block = family.sample_block(theta, n, label)?;
            let values = block.values();
            let scale = n as f64;
            let m = matched_code.decode(matched_code.nn_encode(values, spec)?)?;
            let x = mismatched_code.decode(mismatched_code.nn_encode(values, spec)?)?;
            Ok((
                spec.block(values, m, family.data_dim()) / scale,
                spec.block(values, x, family.data_dim()) / scale,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let matched_vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mismatched_vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diffs: Vec<f64> = rows.iter().map(|r| r.1 - r.0).collect();
    let gap_summary = summarize(&diffs);
    let distance = metrics::variational_distance(family, theta, eta)?.value;
    Ok(MismatchReport {
        gap: gap_summary.mean,
        gap_stderr: gap_summary.stderr,
        bound: 4.0 * spec.bound() * distance,
        distance,
        matched: summarize(&matched_vals),
        mismatched: summarize(&mismatched_vals),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{AxisDensity, ProductDensity};
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

    fn unit_spec() -> DistortionSpec {
        DistortionSpec::clamped_squared_error(1.0).unwrap()
    }

    #[test]
    fn distortion_spec_clamps_and_validates() {
        let spec = DistortionSpec::clamped_squared_error(0.25).unwrap();
        assert_eq!(spec.letter(&[0.0], &[0.0]), 0.0);
        assert_eq!(spec.letter(&[0.0], &[0.3]), 0.09);
        // The cap binds for distant letters.
        assert_eq!(spec.letter(&[0.0], &[2.0]), 0.25);
        // Block distortion sums letters.
        assert_eq!(spec.block(&[0.0, 0.0], &[0.3, 2.0], 1), 0.09 + 0.25);
        assert!(matches!(
            DistortionSpec::clamped_squared_error(0.0),
            Err(Error::Parameter(_))
        ));
        // Default cap is the squared support diameter.
        let support = AxisBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(DistortionSpec::for_support(&support).bound(), 5.0);
        // Serialization tag round-trip.
        let spec = unit_spec();
        assert_eq!(DistortionSpec::from_tag(spec.kind_tag(), spec.bound()).unwrap(), spec);
        assert!(matches!(DistortionSpec::from_tag(9, 1.0), Err(Error::Compatibility(_))));
    }

    #[test]
    fn rate_arithmetic_is_exact() {
        let half = Rate::new(1, 2).unwrap();
        assert_eq!(half.bits_for_block(4).unwrap(), 2);
        assert!(matches!(half.bits_for_block(3), Err(Error::Config(_))));
        // Lowest terms are canonical.
        assert_eq!(Rate::new(2, 4).unwrap(), half);
        assert_eq!(format!("{}", Rate::new(6, 4).unwrap()), "3/2");
        assert_eq!(Rate::new(0, 7).unwrap().bits_for_block(100).unwrap(), 0);
        assert!(matches!(Rate::new(1, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn one_center_design_is_the_training_mean() {
        let family = uniform_halves();
        let theta = pv(&[0.5, 0.5]);
        let params = DesignParams { training_blocks: 512, ..DesignParams::default() };
        let code = design_codebook(
            &family,
            &theta,
            1,
            Rate::new(0, 1).unwrap(),
            &unit_spec(),
            &params,
            42,
        )
        .unwrap();
        assert_eq!(code.len(), 1);
        // Recompute the training mean from the published label schedule.
        let labels = training_labels(&family, &theta, 42, 512);
        let mut mean = 0.0;
        for &label in &labels {
            mean += family.sample_block(&theta, 1, label).unwrap().values()[0];
        }
        mean /= labels.len() as f64;
        assert!((code.vectors()[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn known_two_level_quantizer_on_uniform() {
        // theta = (1/2, 1/2) makes the mixture exactly Uniform[0, 1]; the
        // optimal one-letter two-level quantizer is {1/4, 3/4} with mean
        // distortion 1/48.
        let family = uniform_halves();
        let theta = pv(&[0.5, 0.5]);
        let code = design_codebook(
            &family,
            &theta,
            1,
            Rate::new(1, 1).unwrap(),
            &unit_spec(),
            &DesignParams::default(),
            7,
        )
        .unwrap();
        let mut levels = code.vectors().to_vec();
        levels.sort_by(f64::total_cmp);
        assert!((levels[0] - 0.25).abs() < 0.02, "low level {}", levels[0]);
        assert!((levels[1] - 0.75).abs() < 0.02, "high level {}", levels[1]);
        let est =
            estimate_distortion(&family, &theta, &code, &unit_spec(), 2000, 99).unwrap();
        let target = 1.0 / 48.0;
        assert!(
            (est.mean - target).abs() < 0.15 * target,
            "distortion {} vs 1/48",
            est.mean
        );
        assert!(est.stderr.unwrap() > 0.0);
    }

    #[test]
    fn lloyd_history_is_monotone_and_logged() {
        let family = uniform_halves();
        let code = design_codebook(
            &family,
            &pv(&[0.3, 0.7]),
            2,
            Rate::new(1, 1).unwrap(),
            &unit_spec(),
            &DesignParams { training_blocks: 512, ..DesignParams::default() },
            3,
        )
        .unwrap();
        let report = code.design_report();
        assert!(report.history.len() >= 2);
        for w in report.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "history increased: {} -> {}", w[0], w[1]);
        }
        assert!(report.converged);
        assert!(!report.degenerate);
        assert!(report.iterations <= 200);
        assert_eq!(code.len(), 4);
    }

    #[test]
    fn design_is_deterministic_in_the_provenance() {
        let family = uniform_halves();
        let theta = pv(&[0.3, 0.7]);
        let params = DesignParams { training_blocks: 256, ..DesignParams::default() };
        let rate = Rate::new(1, 1).unwrap();
        let a = design_codebook(&family, &theta, 2, rate, &unit_spec(), &params, 5).unwrap();
        let b = design_codebook(&family, &theta, 2, rate, &unit_spec(), &params, 5).unwrap();
        let bits =
            |c: &Codebook| c.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.provenance(), b.provenance());
        assert_eq!(a.provenance().digest(), b.provenance().digest());
        // A different seed almost surely lands elsewhere.
        let c = design_codebook(&family, &theta, 2, rate, &unit_spec(), &params, 6).unwrap();
        assert_ne!(bits(&a), bits(&c));
        assert_ne!(a.provenance().digest(), c.provenance().digest());
    }

    #[test]
    fn nn_encode_matches_brute_force() {
        let family = uniform_halves();
        let spec = unit_spec();
        let code = design_codebook(
            &family,
            &pv(&[0.4, 0.6]),
            2,
            Rate::new(1, 1).unwrap(),
            &spec,
            &DesignParams { training_blocks: 256, ..DesignParams::default() },
            11,
        )
        .unwrap();
        let theta = pv(&[0.4, 0.6]);
        for t in 0..50u64 {
            let block = family.sample_block(&theta, 2, 1000 + t).unwrap();
            let chosen = code.nn_encode(block.values(), &spec).unwrap();
            let chosen_dist =
                spec.block(block.values(), code.decode(chosen).unwrap(), 1);
            for i in 0..code.len() as u32 {
                let other = spec.block(block.values(), code.decode(i).unwrap(), 1);
                assert!(chosen_dist <= other);
            }
        }
        // Shape and range errors.
        assert!(matches!(code.nn_encode(&[0.1], &spec), Err(Error::Shape(_))));
        assert!(matches!(code.decode(4), Err(Error::Index(_))));
    }

    #[test]
    fn estimate_distortion_saturates_at_the_clamp() {
        let family = uniform_halves();
        let theta = pv(&[0.5, 0.5]);
        let code = design_codebook(
            &family,
            &theta,
            1,
            Rate::new(1, 1).unwrap(),
            &unit_spec(),
            &DesignParams { training_blocks: 128, ..DesignParams::default() },
            13,
        )
        .unwrap();
        // A cap far below any achievable squared error binds on every
        // letter, so the mean saturates at K exactly.
        let tiny = DistortionSpec::clamped_squared_error(1e-9).unwrap();
        let est = estimate_distortion(&family, &theta, &code, &tiny, 64, 17).unwrap();
        assert!((est.mean - 1e-9).abs() < 1e-22);
        // trials = 1 reports no standard error.
        let single = estimate_distortion(&family, &theta, &code, &unit_spec(), 1, 17).unwrap();
        assert!(single.stderr.is_none());
        assert!(matches!(
            estimate_distortion(&family, &theta, &code, &unit_spec(), 0, 17),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn mismatch_gap_respects_the_distance_bound() {
        let family = uniform_halves();
        let spec = unit_spec();
        let params = DesignParams { training_blocks: 512, ..DesignParams::default() };
        let rate = Rate::new(1, 1).unwrap();
        let report = mismatch_gap(
            &family,
            &pv(&[0.8, 0.2]),
            &pv(&[0.2, 0.8]),
            4,
            rate,
            &spec,
            &params,
            400,
            23,
        )
        .unwrap();
        let stderr = report.gap_stderr.unwrap();
        assert!(report.gap >= -3.0 * stderr, "gap {} below noise", report.gap);
        assert!(
            report.gap <= report.bound + 3.0 * stderr,
            "gap {} above bound {}",
            report.gap,
            report.bound
        );
        // d_V((0.8,0.2), (0.2,0.8)) = 0.6 for the disjoint mixture.
        assert!((report.distance - 0.6).abs() < 1e-7);
        // Identical parameters share the codebook: the gap is exactly zero.
        let same = mismatch_gap(
            &family,
            &pv(&[0.8, 0.2]),
            &pv(&[0.8, 0.2]),
            4,
            rate,
            &spec,
            &params,
            50,
            23,
        )
        .unwrap();
        assert_eq!(same.gap, 0.0);
        assert_eq!(same.bound, 0.0);
    }

    #[test]
    fn codebook_files_round_trip() {
        let family = uniform_halves();
        let code = design_codebook(
            &family,
            &pv(&[0.3, 0.7]),
            2,
            Rate::new(1, 1).unwrap(),
            &unit_spec(),
            &DesignParams { training_blocks: 256, ..DesignParams::default() },
            31,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = code.save(dir.path()).unwrap();
        assert!(path
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .starts_with("cbk-"));
        let loaded = Codebook::load(&path).unwrap();
        assert_eq!(
            code.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            loaded.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(code.provenance(), loaded.provenance());
        assert_eq!(code.design_report().history, loaded.design_report().history);
        // Corruption is detected.
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Codebook::load(&path), Err(Error::Compatibility(_))));
    }

    #[test]
    fn design_rejects_oversized_and_fractional_budgets() {
        let family = uniform_halves();
        let theta = pv(&[0.5, 0.5]);
        assert!(matches!(
            design_codebook(
                &family,
                &theta,
                16,
                Rate::new(1, 1).unwrap(),
                &unit_spec(),
                &DesignParams::default(),
                1,
            ),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            design_codebook(
                &family,
                &theta,
                3,
                Rate::new(1, 2).unwrap(),
                &unit_spec(),
                &DesignParams::default(),
                1,
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn thin_training_sets_are_flagged_degenerate() {
        let family = uniform_halves();
        let theta = pv(&[0.5, 0.5]);
        // One training block cannot seed two distinct codevectors.
        let params = DesignParams { training_blocks: 1, ..DesignParams::default() };
        let code = design_codebook(
            &family,
            &theta,
            1,
            Rate::new(1, 1).unwrap(),
            &unit_spec(),
            &params,
            3,
        )
        .unwrap();
        assert!(code.design_report().degenerate);
        assert_eq!(code.len(), 2);
        assert_eq!(code.decode(0).unwrap(), code.decode(1).unwrap());
    }
}

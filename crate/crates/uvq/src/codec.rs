//! The two-stage `(n, n)`-block code: parameter grid, header/body bit
//! packing, deterministic per-cell codebook derivation, and the stream
//! encode/decode entry points with joint identification output.
//!
//! Each block of the stream carries a fixed-width header naming a cell of
//! a cubic partition of the parameter set (side `1/ceil(sqrt(n))` inside a
//! bounding cube of integer side `J`), followed by the body: the
//! nearest-codevector index of the current block under the codebook
//! trained for that cell's representative parameter.  The header of block
//! `t` is computed from block `t - 1` (block one uses a designated initial
//! cell), so identification rides along at a rate cost of exactly
//! `header_bits / n` bits per letter.
//!
//! Codebooks are never transmitted: both ends derive them with the same
//! deterministic design keyed by (cell representative, configuration,
//! master seed), and cache them in memory and optionally on disk.  The
//! whole encode/decode pipeline is a pure function of the input blocks,
//! the configuration, and the master seed.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use dashmap::DashMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{self, ceil_sqrt, ParameterNet, YatracosTable};
use crate::family::{ParameterVector, SampleBlock, SourceFamily, ThetaSpace};
use crate::quantizer::{
    design_codebook, Codebook, DesignParams, DistortionSpec, Provenance, Rate,
};

/// Hard ceiling on enumerable grid cells; keeps the dense reindex tables
/// in memory at every admissible configuration.
const MAX_GRID_CELLS: u128 = 1 << 22;

/// Absolute slack for boundary classification, scaled by the cell count.
const CELL_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Bit packing (MSB-first, byte-padded at the stream end only)
// ---------------------------------------------------------------------------

struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { bytes: Vec::new(), bit_len: 0 }
    }

    fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width == 64 || value < (1u64 << width));
        for i in (0..width).rev() {
            let byte = (self.bit_len / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                self.bytes[byte] |= 1 << (7 - (self.bit_len % 8));
            }
            self.bit_len += 1;
        }
    }

    fn bit_len(&self) -> u64 {
        self.bit_len
    }

    fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
    limit: u64,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8], limit_bits: u64) -> Self {
        BitReader { bytes, pos: 0, limit: limit_bits.min(bytes.len() as u64 * 8) }
    }

    fn read(&mut self, width: u32) -> Option<u64> {
        if self.pos + width as u64 > self.limit {
            return None;
        }
        let mut value = 0u64;
        for _ in 0..width {
            let bit = (self.bytes[(self.pos / 8) as usize] >> (7 - (self.pos % 8))) & 1;
            value = (value << 1) | bit as u64;
            self.pos += 1;
        }
        Some(value)
    }
}

/// Fixed header width for a grid of `cells_per_axis^k` cells: the smallest
/// bit count addressing every cell, `ceil(k log2(J ceil(sqrt(n))))`.
fn header_width(cells_per_axis: u64, param_dim: u32) -> Result<u32> {
    let total = (cells_per_axis as u128).checked_pow(param_dim).ok_or_else(|| {
        Error::Config(format!(
            "a grid of {cells_per_axis}^{param_dim} cells is too large to index"
        ))
    })?;
    if total <= 1 {
        return Ok(0);
    }
    Ok(128 - (total - 1).leading_zeros())
}

// ---------------------------------------------------------------------------
// Parameter grid
// ---------------------------------------------------------------------------

struct GridCell {
    coords: Vec<u32>,
    representative: ParameterVector,
}

/// A cubic partition of the parameter set with dense indices over the
/// cells that intersect it.
///
/// The bounding cube has integer side `J`, anchored at the lower corner of
/// the parameter set's bounding box; every axis is split into
/// `J * ceil(sqrt(n))` cells of side exactly `1 / ceil(sqrt(n))`.  Cells
/// are half-open with the top face closed on the last cell of each axis,
/// so they partition the cube exactly.  A cell intersects the parameter
/// set iff it contains a net point or the projection of its center onto
/// the set lies inside it; intersecting cells get consecutive indices in
/// lexicographic axis order, and each carries a representative parameter
/// inside the cell (the lowest-index net point, else the center
/// projection).
pub struct ParameterGrid {
    space: ThetaSpace,
    param_dim: usize,
    block_len: usize,
    j_side: u32,
    grid_side: u64,
    cells_per_axis: u64,
    header_bits: u32,
    origin: Vec<f64>,
    cells: Vec<GridCell>,
    raw_to_dense: Vec<u32>,
    initial_cell: u32,
    net_hash: [u8; 32],
}

const DENSE_UNSET: u32 = u32::MAX;

/// Build the grid for block length `n` over `space`, indexing the cells
/// that intersect it as witnessed by `net` and center projections.
pub fn build_grid(
    space: &ThetaSpace,
    param_dim: usize,
    j_side: u32,
    n: usize,
    net: &ParameterNet,
) -> Result<ParameterGrid> {
    if param_dim != space.dim() {
        return Err(Error::Shape(format!(
            "grid dimension {param_dim} does not match the parameter space dimension {}",
            space.dim()
        )));
    }
    if net.point(0).coords().len() != param_dim {
        return Err(Error::Shape(format!(
            "net points have dimension {}, grid expects {param_dim}",
            net.point(0).coords().len()
        )));
    }
    if j_side == 0 {
        return Err(Error::Parameter("bounding cube side must be a positive integer".into()));
    }
    if n == 0 {
        return Err(Error::Parameter("block length must be at least 1".into()));
    }
    let (lo, hi) = space.bounding_box();
    for axis in 0..param_dim {
        if hi[axis] - lo[axis] > j_side as f64 + CELL_TOL {
            return Err(Error::Config(format!(
                "parameter space spans {} on axis {axis}, exceeding the bounding cube side {j_side}",
                hi[axis] - lo[axis]
            )));
        }
    }

    let grid_side = ceil_sqrt(n as u64);
    let cells_per_axis = grid_side * j_side as u64;
    let header_bits = header_width(cells_per_axis, param_dim as u32)?;
    let total = (cells_per_axis as u128).pow(param_dim as u32);
    if total > MAX_GRID_CELLS {
        return Err(Error::Config(format!(
            "grid of {total} cells exceeds the enumeration limit of {MAX_GRID_CELLS}"
        )));
    }
    let total = total as usize;

    let mut grid = ParameterGrid {
        space: space.clone(),
        param_dim,
        block_len: n,
        j_side,
        grid_side,
        cells_per_axis,
        header_bits,
        origin: lo,
        cells: Vec::new(),
        raw_to_dense: vec![DENSE_UNSET; total],
        initial_cell: 0,
        net_hash: *net.content_hash(),
    };

    // Lowest-index net point per raw cell.
    let mut net_witness: Vec<u32> = vec![u32::MAX; total];
    for i in 0..net.len() {
        let point = net.point(i);
        let coords = grid.raw_coords_of(point.coords()).ok_or_else(|| {
            Error::Config(format!(
                "net point {i} lies outside the side-{j_side} bounding cube"
            ))
        })?;
        let raw = grid.raw_index(&coords) as usize;
        if net_witness[raw] == u32::MAX {
            net_witness[raw] = i as u32;
        }
    }

    // Enumerate raw cells in lexicographic axis order and keep the ones
    // that intersect the parameter set.
    let mut coords = vec![0u32; param_dim];
    for (raw, &witness) in net_witness.iter().enumerate() {
        let representative = if witness != u32::MAX {
            Some(net.point(witness as usize).clone())
        } else {
            let center: Vec<f64> = (0..param_dim)
                .map(|a| grid.origin[a] + (coords[a] as f64 + 0.5) / grid_side as f64)
                .collect();
            let projection = space.project(&center);
            match grid.raw_coords_of(&projection) {
                Some(c) if c == coords => Some(ParameterVector::new(projection)?),
                _ => None,
            }
        };
        if let Some(representative) = representative {
            let dense = grid.cells.len() as u32;
            grid.raw_to_dense[raw] = dense;
            grid.cells.push(GridCell { coords: coords.clone(), representative });
        }
        // Odometer, last axis fastest.
        for axis in (0..param_dim).rev() {
            coords[axis] += 1;
            if (coords[axis] as u64) < cells_per_axis {
                break;
            }
            coords[axis] = 0;
        }
    }
    debug_assert!(!grid.cells.is_empty(), "a nonempty net always flags its own cells");

    // Designated first-block cell: the cell holding the centroid of the
    // parameter set, or the nearest net point's cell when the centroid's
    // cell was not indexed.
    let centroid = space.centroid();
    grid.initial_cell = match grid.cell_index_of(&centroid) {
        Some(cell) => cell,
        None => {
            let nearest = net.point(net.nearest_index(&centroid));
            grid.cell_index_of(nearest.coords()).ok_or_else(|| {
                Error::Index("internal: a net point's cell is always indexed".into())
            })?
        }
    };
    Ok(grid)
}

impl ParameterGrid {
    /// Number of indexed (intersecting) cells.
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Fixed header width in bits; covers the dense cell count.
    pub fn header_bits(&self) -> u32 {
        self.header_bits
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn j_side(&self) -> u32 {
        self.j_side
    }

    /// Cells along each axis: `J * ceil(sqrt(n))`.
    pub fn cells_per_axis(&self) -> u64 {
        self.cells_per_axis
    }

    /// Cell side length `1 / ceil(sqrt(n))`.
    pub fn cell_side(&self) -> f64 {
        1.0 / self.grid_side as f64
    }

    /// The parameter space the grid partitions.
    pub fn space(&self) -> &ThetaSpace {
        &self.space
    }

    pub fn net_hash(&self) -> &[u8; 32] {
        &self.net_hash
    }

    /// The designated cell for the first block of a stream.
    pub fn initial_cell(&self) -> u32 {
        self.initial_cell
    }

    /// Representative parameter of a dense cell; always inside the cell
    /// and the parameter set.
    pub fn representative(&self, cell: u32) -> Result<&ParameterVector> {
        self.cells
            .get(cell as usize)
            .map(|c| &c.representative)
            .ok_or_else(|| {
                Error::Index(format!(
                    "cell index {cell} out of range for {} indexed cells",
                    self.cells.len()
                ))
            })
    }

    /// Integer coordinates of a dense cell.
    pub fn cell_coords(&self, cell: u32) -> Result<&[u32]> {
        self.cells
            .get(cell as usize)
            .map(|c| c.coords.as_slice())
            .ok_or_else(|| {
                Error::Index(format!(
                    "cell index {cell} out of range for {} indexed cells",
                    self.cells.len()
                ))
            })
    }

    /// The `[lo, hi)` bounds of a dense cell (top face closed on the last
    /// cell per axis).
    pub fn cell_bounds(&self, cell: u32) -> Result<(Vec<f64>, Vec<f64>)> {
        let coords = self.cell_coords(cell)?;
        let side = self.grid_side as f64;
        let lo = coords
            .iter()
            .enumerate()
            .map(|(a, &c)| self.origin[a] + c as f64 / side)
            .collect();
        let hi = coords
            .iter()
            .enumerate()
            .map(|(a, &c)| self.origin[a] + (c as f64 + 1.0) / side)
            .collect();
        Ok((lo, hi))
    }

    /// Dense index of the cell containing `theta`, or `None` when `theta`
    /// falls outside the cube or in a non-indexed cell.
    pub fn cell_index_of(&self, theta: &[f64]) -> Option<u32> {
        let coords = self.raw_coords_of(theta)?;
        let dense = self.raw_to_dense[self.raw_index(&coords) as usize];
        (dense != DENSE_UNSET).then_some(dense)
    }

    fn raw_coords_of(&self, theta: &[f64]) -> Option<Vec<u32>> {
        if theta.len() != self.param_dim {
            return None;
        }
        let m = self.cells_per_axis;
        let tol = CELL_TOL * m as f64;
        let mut coords = Vec::with_capacity(self.param_dim);
        for (axis, &x) in theta.iter().enumerate() {
            let t = (x - self.origin[axis]) * self.grid_side as f64;
            if !t.is_finite() || t < -tol || t > m as f64 + tol {
                return None;
            }
            let c = t.floor();
            let c = if c < 0.0 {
                0
            } else if c as u64 >= m {
                // Top face closes the last cell.
                m - 1
            } else {
                c as u64
            };
            coords.push(c as u32);
        }
        Some(coords)
    }

    fn raw_index(&self, coords: &[u32]) -> u64 {
        let mut raw = 0u64;
        for &c in coords {
            raw = raw * self.cells_per_axis + c as u64;
        }
        raw
    }
}

// ---------------------------------------------------------------------------
// First-stage encoder
// ---------------------------------------------------------------------------

fn estimate_and_cell(
    family: &SourceFamily,
    z: &SampleBlock,
    grid: &ParameterGrid,
    net: &ParameterNet,
    table: &YatracosTable,
) -> Result<(ParameterVector, u32)> {
    let theta = estimator::min_distance_estimate(family, z, net, table)?;
    let cell = grid.cell_index_of(theta.coords()).ok_or_else(|| {
        Error::Index("internal: the minimum-distance estimate is a net point, whose cell is always indexed".into())
    })?;
    Ok((theta, cell))
}

/// First-stage encoder: the cell index of the minimum-distance estimate
/// computed from `z`.
pub fn first_stage_encode(
    family: &SourceFamily,
    z: &SampleBlock,
    grid: &ParameterGrid,
    net: &ParameterNet,
    table: &YatracosTable,
) -> Result<u32> {
    if *grid.net_hash() != *net.content_hash() {
        return Err(Error::Compatibility(
            "grid was built over a different parameter net".into(),
        ));
    }
    if z.block_len() != grid.block_len() {
        return Err(Error::Shape(format!(
            "block length {} does not match the grid block length {}",
            z.block_len(),
            grid.block_len()
        )));
    }
    Ok(estimate_and_cell(family, z, grid, net, table)?.1)
}

// ---------------------------------------------------------------------------
// Codebook provider
// ---------------------------------------------------------------------------

/// Derives, caches, and serves the per-cell codebooks shared by encoder
/// and decoder.  In-memory caching is per provider; the optional disk
/// cache is keyed by provenance digest, so processes with the same
/// configuration share designs.
pub struct CodebookProvider<'a> {
    family: &'a SourceFamily,
    block_len: usize,
    rate: Rate,
    spec: DistortionSpec,
    params: DesignParams,
    master_seed: u64,
    body_bits: u32,
    cache: DashMap<u32, Arc<Codebook>>,
    disk: Option<PathBuf>,
}

impl<'a> CodebookProvider<'a> {
    /// Validate the configuration: the body must carry a whole, positive
    /// number of bits (`n R >= 1`) within the codebook cap.
    pub fn new(
        family: &'a SourceFamily,
        block_len: usize,
        rate: Rate,
        spec: DistortionSpec,
        params: DesignParams,
        master_seed: u64,
    ) -> Result<Self> {
        if block_len == 0 {
            return Err(Error::Parameter("block length must be at least 1".into()));
        }
        let bits = rate.bits_for_block(block_len as u64)?;
        if bits == 0 {
            return Err(Error::Config(format!(
                "a two-stage block needs at least one body bit: n = {block_len} at rate {rate} carries none"
            )));
        }
        if bits >= 32 || (1u64 << bits) > params.codebook_cap as u64 {
            return Err(Error::Parameter(format!(
                "codebook of 2^{bits} codevectors exceeds the cap of {}",
                params.codebook_cap
            )));
        }
        Ok(CodebookProvider {
            family,
            block_len,
            rate,
            spec,
            params,
            master_seed,
            body_bits: bits as u32,
            cache: DashMap::new(),
            disk: None,
        })
    }

    /// Persist designed codebooks under `dir`, keyed by provenance digest.
    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.disk = Some(dir.into());
        self
    }

    pub fn family(&self) -> &'a SourceFamily {
        self.family
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn rate(&self) -> Rate {
        self.rate
    }

    pub fn distortion(&self) -> &DistortionSpec {
        &self.spec
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Body width in bits, `n R`.
    pub fn body_bits(&self) -> u32 {
        self.body_bits
    }

    /// The provenance tuple a design for `representative` would carry.
    pub fn provenance_for(&self, representative: &ParameterVector) -> Provenance {
        Provenance {
            family_hash: *self.family.content_hash(),
            theta: representative.coords().to_vec(),
            block_len: self.block_len as u32,
            data_dim: self.family.data_dim() as u32,
            rate: self.rate,
            distortion_bound: self.spec.bound(),
            master_seed: self.master_seed,
            training_blocks: self.params.training_blocks as u32,
            max_iterations: self.params.max_iterations as u32,
            tolerance: self.params.tolerance,
        }
    }

    /// The codebook for a grid cell: from memory, then disk, then a fresh
    /// deterministic design (persisted back when a cache directory is set).
    pub fn codebook(&self, grid: &ParameterGrid, cell: u32) -> Result<Arc<Codebook>> {
        if let Some(hit) = self.cache.get(&cell) {
            return Ok(hit.clone());
        }
        let representative = grid.representative(cell)?;
        let provenance = self.provenance_for(representative);
        if let Some(dir) = &self.disk {
            let path = dir.join(Codebook::file_name_for(&provenance));
            if let Ok(loaded) = Codebook::load(&path) {
                if *loaded.provenance() == provenance {
                    return Ok(self.cache.entry(cell).or_insert(Arc::new(loaded)).clone());
                }
            }
        }
        let designed = design_codebook(
            self.family,
            representative,
            self.block_len,
            self.rate,
            &self.spec,
            &self.params,
            self.master_seed,
        )?;
        if let Some(dir) = &self.disk {
            // Best-effort persistence; a failed write only costs a redesign.
            let _ = designed.save(dir);
        }
        Ok(self.cache.entry(cell).or_insert_with(|| Arc::new(designed)).clone())
    }
}

// ---------------------------------------------------------------------------
// Streams and traces
// ---------------------------------------------------------------------------

/// Per-block identification output.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTrace {
    /// Dense grid cell named by the block header.
    pub cell: u32,
    /// The minimum-distance estimate behind the header; `None` for the
    /// first block (designated cell) and on the decoder side.
    pub theta_tilde: Option<ParameterVector>,
    /// The cell representative: the decoder's parameter identification.
    pub theta_hat: ParameterVector,
    /// `d_V(P_theta, P_theta_hat)` when the true parameter is known;
    /// filled by experiment drivers, never by the codec.
    pub distance_to_truth: Option<f64>,
}

/// Identification output for a whole stream, one entry per block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdentificationTrace {
    pub blocks: Vec<BlockTrace>,
}

impl IdentificationTrace {
    /// The identified parameter sequence.
    pub fn identified(&self) -> Vec<&ParameterVector> {
        self.blocks.iter().map(|b| &b.theta_hat).collect()
    }
}

const STREAM_MAGIC: &[u8; 8] = b"UVQ2STG\0";
const STREAM_VERSION: u16 = 1;
/// Bytes before the payload: magic, version, family hash, n, k, J, rate,
/// seed, distortion kind and cap, block count.
const STREAM_HEADER_LEN: usize = 8 + 2 + 32 + 4 + 4 + 4 + 4 + 4 + 8 + 1 + 8 + 8;

/// A serialized two-stage stream: self-describing header, then per block
/// `header_bits` of cell index and `n R` body bits, MSB-first, byte-padded
/// at the stream end only, closed by a CRC32 trailer.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoStageStream {
    family_hash: [u8; 32],
    block_len: u32,
    param_dim: u32,
    j_side: u32,
    rate: Rate,
    master_seed: u64,
    distortion: DistortionSpec,
    block_count: u64,
    header_bits: u32,
    body_bits: u32,
    payload: Vec<u8>,
}

impl TwoStageStream {
    pub fn family_hash(&self) -> &[u8; 32] {
        &self.family_hash
    }

    pub fn block_len(&self) -> usize {
        self.block_len as usize
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim as usize
    }

    pub fn j_side(&self) -> u32 {
        self.j_side
    }

    pub fn rate(&self) -> Rate {
        self.rate
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn distortion(&self) -> &DistortionSpec {
        &self.distortion
    }

    pub fn block_count(&self) -> u64 {
        self.block_count
    }

    pub fn header_bits(&self) -> u32 {
        self.header_bits
    }

    pub fn body_bits(&self) -> u32 {
        self.body_bits
    }

    /// Payload bits: exactly `block_count * (header_bits + n R)`.
    pub fn payload_bits(&self) -> u64 {
        self.block_count * (self.header_bits + self.body_bits) as u64
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Total rate in bits per letter: `R + header_bits / n`.
    pub fn bits_per_letter(&self) -> f64 {
        self.rate.bits_per_letter() + self.header_bits as f64 / self.block_len as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(STREAM_HEADER_LEN + self.payload.len() + 4);
        buf.extend_from_slice(STREAM_MAGIC);
        buf.extend_from_slice(&STREAM_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.family_hash);
        buf.extend_from_slice(&self.block_len.to_le_bytes());
        buf.extend_from_slice(&self.param_dim.to_le_bytes());
        buf.extend_from_slice(&self.j_side.to_le_bytes());
        buf.extend_from_slice(&self.rate.num().to_le_bytes());
        buf.extend_from_slice(&self.rate.den().to_le_bytes());
        buf.extend_from_slice(&self.master_seed.to_le_bytes());
        buf.push(self.distortion.kind_tag());
        buf.extend_from_slice(&self.distortion.bound().to_le_bytes());
        buf.extend_from_slice(&self.block_count.to_le_bytes());
        buf.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    /// Parse and validate a serialized stream.  Truncation yields a
    /// framing error locating the first incomplete block; unknown magic,
    /// version, or semantically impossible header fields yield
    /// compatibility errors.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Framing {
                block: 0,
                message: "stream shorter than its magic and version".into(),
            });
        }
        if &bytes[..8] != STREAM_MAGIC {
            return Err(Error::Compatibility("not a two-stage stream (bad magic)".into()));
        }
        let version = u16::from_le_bytes(bytes[8..10].try_into().expect("2 bytes"));
        if version != STREAM_VERSION {
            return Err(Error::Compatibility(format!(
                "unknown stream version {version} (expected {STREAM_VERSION})"
            )));
        }
        if bytes.len() < STREAM_HEADER_LEN + 4 {
            return Err(Error::Framing {
                block: 0,
                message: "stream truncated inside its header".into(),
            });
        }
        fn take<'b>(bytes: &'b [u8], pos: &mut usize, n: usize) -> &'b [u8] {
            let slice = &bytes[*pos..*pos + n];
            *pos += n;
            slice
        }
        let mut pos = 10usize;
        let family_hash: [u8; 32] = take(bytes, &mut pos, 32).try_into().expect("32 bytes");
        let block_len = u32::from_le_bytes(take(bytes, &mut pos, 4).try_into().expect("4 bytes"));
        let param_dim = u32::from_le_bytes(take(bytes, &mut pos, 4).try_into().expect("4 bytes"));
        let j_side = u32::from_le_bytes(take(bytes, &mut pos, 4).try_into().expect("4 bytes"));
        let num = u32::from_le_bytes(take(bytes, &mut pos, 4).try_into().expect("4 bytes"));
        let den = u32::from_le_bytes(take(bytes, &mut pos, 4).try_into().expect("4 bytes"));
        let master_seed =
            u64::from_le_bytes(take(bytes, &mut pos, 8).try_into().expect("8 bytes"));
        let kind = take(bytes, &mut pos, 1)[0];
        let bound = f64::from_le_bytes(take(bytes, &mut pos, 8).try_into().expect("8 bytes"));
        let block_count =
            u64::from_le_bytes(take(bytes, &mut pos, 8).try_into().expect("8 bytes"));
        debug_assert_eq!(pos, STREAM_HEADER_LEN);

        if block_len == 0 || param_dim == 0 || j_side == 0 || block_count == 0 {
            return Err(Error::Compatibility(
                "stream header declares a zero block length, dimension, cube side, or block count"
                    .into(),
            ));
        }
        let rate = Rate::new(num, den).map_err(|_| {
            Error::Compatibility("stream header declares a zero rate denominator".into())
        })?;
        let distortion = DistortionSpec::from_tag(kind, bound).map_err(|e| match e {
            Error::Compatibility(m) => Error::Compatibility(m),
            _ => Error::Compatibility(format!(
                "stream header declares an invalid distortion cap {bound}"
            )),
        })?;
        let cells_per_axis = ceil_sqrt(block_len as u64) * j_side as u64;
        let header_bits = header_width(cells_per_axis, param_dim).map_err(|_| {
            Error::Compatibility("stream header describes an unindexable grid".into())
        })?;
        let body_bits = rate.bits_for_block(block_len as u64).map_err(|_| {
            Error::Compatibility(format!(
                "stream rate {rate} gives a fractional bit budget at block length {block_len}"
            ))
        })?;
        if body_bits == 0 || body_bits > 32 {
            return Err(Error::Compatibility(format!(
                "stream body budget of {body_bits} bits per block is outside [1, 32]"
            )));
        }
        let body_bits = body_bits as u32;

        let per_block = (header_bits + body_bits) as u128;
        let needed_bits = block_count as u128 * per_block;
        let needed_bytes = needed_bits.div_ceil(8);
        let available = (bytes.len() - STREAM_HEADER_LEN - 4) as u128;
        if available < needed_bytes {
            let block = (available * 8 / per_block).min(block_count as u128 - 1) as u64;
            return Err(Error::Framing {
                block,
                message: format!(
                    "stream truncated: {available} payload bytes for {block_count} blocks needing {needed_bytes}"
                ),
            });
        }
        if available > needed_bytes {
            return Err(Error::Framing {
                block: block_count,
                message: format!(
                    "{} trailing bytes after the last block",
                    available - needed_bytes
                ),
            });
        }
        let crc_stored =
            u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..bytes.len() - 4]) != crc_stored {
            return Err(Error::Framing { block: 0, message: "stream checksum mismatch".into() });
        }
        Ok(TwoStageStream {
            family_hash,
            block_len,
            param_dim,
            j_side,
            rate,
            master_seed,
            distortion,
            block_count,
            header_bits,
            body_bits,
            payload: bytes[STREAM_HEADER_LEN..STREAM_HEADER_LEN + needed_bytes as usize].to_vec(),
        })
    }
}

// ---------------------------------------------------------------------------
// Encode / decode
// ---------------------------------------------------------------------------

/// Encoder output: the serialized stream, the identification trace, and
/// the encoder-side reproduction blocks.
pub struct EncodeOutput {
    pub stream: TwoStageStream,
    pub trace: IdentificationTrace,
    pub reproductions: Vec<Vec<f64>>,
}

/// Decoder output: reproduction blocks and the identification trace.
pub struct DecodeOutput {
    pub reproductions: Vec<Vec<f64>>,
    pub trace: IdentificationTrace,
}

/// Encode source blocks into a two-stage stream.  Block one is coded in
/// the grid's designated initial cell; block `t > 1` in the cell selected
/// by the first-stage encoder from block `t - 1`.
pub fn encode_stream(
    blocks: &[SampleBlock],
    grid: &ParameterGrid,
    net: &ParameterNet,
    table: &YatracosTable,
    provider: &CodebookProvider<'_>,
) -> Result<EncodeOutput> {
    let family = provider.family();
    if blocks.is_empty() {
        return Err(Error::Parameter("a stream needs at least one source block".into()));
    }
    if *grid.net_hash() != *net.content_hash() {
        return Err(Error::Compatibility(
            "grid was built over a different parameter net".into(),
        ));
    }
    if grid.block_len() != provider.block_len() {
        return Err(Error::Compatibility(format!(
            "grid block length {} does not match the provider block length {}",
            grid.block_len(),
            provider.block_len()
        )));
    }
    if grid.param_dim() != family.param_dim() {
        return Err(Error::Compatibility(format!(
            "grid dimension {} does not match the family parameter dimension {}",
            grid.param_dim(),
            family.param_dim()
        )));
    }
    let n = grid.block_len();
    for (t, block) in blocks.iter().enumerate() {
        if block.block_len() != n || block.data_dim() != family.data_dim() {
            return Err(Error::Shape(format!(
                "source block {t} has shape {}x{}, the stream needs {n}x{}",
                block.block_len(),
                block.data_dim(),
                family.data_dim()
            )));
        }
    }

    // First-stage pass: the header of block t + 1 comes from block t.
    let preceding: Vec<(ParameterVector, u32)> = blocks[..blocks.len() - 1]
        .par_iter()
        .map(|z| estimate_and_cell(family, z, grid, net, table))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(blocks.len());
    let mut estimates: Vec<Option<ParameterVector>> = Vec::with_capacity(blocks.len());
    cells.push(grid.initial_cell());
    estimates.push(None);
    for (theta, cell) in preceding {
        cells.push(cell);
        estimates.push(Some(theta));
    }

    // Derive every needed codebook once, in deterministic order.
    let distinct: BTreeSet<u32> = cells.iter().copied().collect();
    for &cell in &distinct {
        provider.codebook(grid, cell)?;
    }

    // Body pass: independent given the cell sequence.
    let encoded: Vec<(u32, Vec<f64>)> = (0..blocks.len())
        .into_par_iter()
        .map(|t| {
            let code = provider.codebook(grid, cells[t])?;
            let index = code.nn_encode(blocks[t].values(), provider.distortion())?;
            Ok((index, code.decode(index)?.to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;

    let header_bits = grid.header_bits();
    let body_bits = provider.body_bits();
    let mut writer = BitWriter::new();
    for (t, &cell) in cells.iter().enumerate() {
        writer.write(cell as u64, header_bits);
        writer.write(encoded[t].0 as u64, body_bits);
    }
    debug_assert_eq!(
        writer.bit_len(),
        blocks.len() as u64 * (header_bits + body_bits) as u64
    );

    let stream = TwoStageStream {
        family_hash: *family.content_hash(),
        block_len: n as u32,
        param_dim: grid.param_dim() as u32,
        j_side: grid.j_side(),
        rate: provider.rate(),
        master_seed: provider.master_seed(),
        distortion: *provider.distortion(),
        block_count: blocks.len() as u64,
        header_bits,
        body_bits,
        payload: writer.into_bytes(),
    };
    let trace_blocks = cells
        .iter()
        .zip(estimates)
        .map(|(&cell, theta_tilde)| {
            Ok(BlockTrace {
                cell,
                theta_tilde,
                theta_hat: grid.representative(cell)?.clone(),
                distance_to_truth: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodeOutput {
        stream,
        trace: IdentificationTrace { blocks: trace_blocks },
        reproductions: encoded.into_iter().map(|(_, r)| r).collect(),
    })
}

/// Decode a two-stage stream, rederiving the encoder's codebooks.  The
/// reproductions are bit-identical to the encoder side; the trace reports
/// the identified parameter per block.
pub fn decode_stream(
    stream: &TwoStageStream,
    grid: &ParameterGrid,
    provider: &CodebookProvider<'_>,
) -> Result<DecodeOutput> {
    let family = provider.family();
    if stream.family_hash() != family.content_hash() {
        return Err(Error::Compatibility(
            "stream was written for a different source family".into(),
        ));
    }
    if stream.block_len() != provider.block_len()
        || stream.rate() != provider.rate()
        || stream.master_seed() != provider.master_seed()
        || stream.distortion() != provider.distortion()
    {
        return Err(Error::Compatibility(
            "stream configuration (block length, rate, seed, or distortion) does not match the provider".into(),
        ));
    }
    if grid.block_len() != stream.block_len()
        || grid.param_dim() != stream.param_dim()
        || grid.j_side() != stream.j_side()
        || grid.header_bits() != stream.header_bits()
    {
        return Err(Error::Compatibility(
            "grid geometry does not match the stream header".into(),
        ));
    }

    let mut reader = BitReader::new(stream.payload(), stream.payload_bits());
    let mut reproductions = Vec::with_capacity(stream.block_count() as usize);
    let mut trace_blocks = Vec::with_capacity(stream.block_count() as usize);
    for t in 0..stream.block_count() {
        let exhausted = || Error::Framing {
            block: t,
            message: "payload exhausted before the last block".into(),
        };
        let raw_cell = reader.read(stream.header_bits()).ok_or_else(exhausted)?;
        // A corrupted header may name a code point beyond the dense cell
        // count; decode it to the last cell rather than failing the block.
        let cell = (raw_cell as u32).min(grid.cell_count() as u32 - 1);
        let body = reader.read(stream.body_bits()).ok_or_else(exhausted)? as u32;
        let code = provider.codebook(grid, cell)?;
        reproductions.push(code.decode(body)?.to_vec());
        trace_blocks.push(BlockTrace {
            cell,
            theta_tilde: None,
            theta_hat: grid.representative(cell)?.clone(),
            distance_to_truth: None,
        });
    }
    Ok(DecodeOutput { reproductions, trace: IdentificationTrace { blocks: trace_blocks } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{TableConfig, YatracosTable};
    use crate::family::{AxisDensity, ProductDensity, Statistic};
    use crate::metrics;
    use crate::quad::AxisBox;
    use std::collections::HashMap;

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

    fn quick_params() -> DesignParams {
        DesignParams { training_blocks: 512, ..DesignParams::default() }
    }

    fn unit_interval_grid(n: usize) -> (ParameterGrid, ParameterNet) {
        let space = ThetaSpace::Box { lo: vec![0.0], hi: vec![1.0] };
        let net = ParameterNet::box_lattice(&[0.0], &[1.0], &[9]).unwrap();
        let grid = build_grid(&space, 1, 1, n, &net).unwrap();
        (grid, net)
    }

    #[test]
    fn grid_matches_the_hand_worked_examples() {
        let (grid, _) = unit_interval_grid(4);
        assert_eq!(grid.cell_count(), 2);
        assert_eq!(grid.header_bits(), 1);
        assert_eq!(grid.cell_side(), 0.5);
        assert_eq!(grid.cell_bounds(0).unwrap(), (vec![0.0], vec![0.5]));
        assert_eq!(grid.cell_bounds(1).unwrap(), (vec![0.5], vec![1.0]));
        // Containment: 0.7 lands in the upper cell.
        assert_eq!(grid.cell_index_of(&[0.7]), Some(1));
        // Half-open boundaries: 0.5 belongs to the upper cell, the top
        // face to the last cell.
        assert_eq!(grid.cell_index_of(&[0.5]), Some(1));
        assert_eq!(grid.cell_index_of(&[1.0]), Some(1));
        assert_eq!(grid.cell_index_of(&[0.0]), Some(0));

        let (grid, _) = unit_interval_grid(16);
        assert_eq!(grid.cell_count(), 4);
        assert_eq!(grid.header_bits(), 2);
    }

    #[test]
    fn grid_representatives_live_in_their_cells() {
        let space = ThetaSpace::Simplex { dim: 2 };
        let net = ParameterNet::simplex_lattice(2, 8).unwrap();
        let grid = build_grid(&space, 2, 1, 16, &net).unwrap();
        assert!(grid.cell_count() > 0);
        for cell in 0..grid.cell_count() as u32 {
            let rep = grid.representative(cell).unwrap();
            assert!(space.contains(rep.coords()), "representative outside the space");
            assert_eq!(
                grid.cell_index_of(rep.coords()),
                Some(cell),
                "representative outside its own cell"
            );
        }
        // Quantization error is bounded by the cell diameter sqrt(k)/s.
        let bound = 2.0_f64.sqrt() / 4.0 + 1e-12;
        for i in 0..net.len() {
            let p = net.point(i);
            let cell = grid.cell_index_of(p.coords()).expect("net cells are indexed");
            let rep = grid.representative(cell).unwrap();
            let dist = crate::family::euclidean_distance(p.coords(), rep.coords());
            assert!(dist <= bound, "|net point - representative| = {dist}");
        }
    }

    #[test]
    fn grid_rejects_misfits() {
        let wide = ThetaSpace::Box { lo: vec![0.0], hi: vec![2.0] };
        let net = ParameterNet::box_lattice(&[0.0], &[2.0], &[5]).unwrap();
        assert!(matches!(build_grid(&wide, 1, 1, 4, &net), Err(Error::Config(_))));
        assert!(build_grid(&wide, 1, 2, 4, &net).is_ok());
        // Dimension mismatch between the declared k and the space.
        assert!(matches!(build_grid(&wide, 2, 2, 4, &net), Err(Error::Shape(_))));
        // Net from a different space dimension.
        let simplex_net = ParameterNet::simplex_lattice(2, 4).unwrap();
        assert!(matches!(build_grid(&wide, 1, 2, 4, &simplex_net), Err(Error::Shape(_))));
    }

    #[test]
    fn initial_cell_holds_the_centroid() {
        let (grid, _) = unit_interval_grid(4);
        // Centroid 0.5 lies in the upper cell by the half-open convention.
        assert_eq!(grid.initial_cell(), grid.cell_index_of(&[0.5]).unwrap());

        let space = ThetaSpace::Simplex { dim: 2 };
        let net = ParameterNet::simplex_lattice(2, 8).unwrap();
        let grid = build_grid(&space, 2, 1, 16, &net).unwrap();
        let centroid = space.centroid();
        match grid.cell_index_of(&centroid) {
            Some(cell) => assert_eq!(grid.initial_cell(), cell),
            None => {
                let nearest = net.point(net.nearest_index(&centroid));
                assert_eq!(grid.initial_cell(), grid.cell_index_of(nearest.coords()).unwrap());
            }
        }
    }

    #[test]
    fn first_stage_finds_the_active_component() {
        let family = uniform_halves();
        let space = family.theta_space().clone();
        let theta_a = pv(&[0.875, 0.125]);
        let theta_b = pv(&[0.125, 0.875]);
        let net =
            ParameterNet::explicit(&space, vec![theta_a.clone(), theta_b.clone()], 0.2).unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        let grid = build_grid(&space, 2, 1, 64, &net).unwrap();
        let z = family.sample_block(&theta_a, 64, 2024).unwrap();
        let cell = first_stage_encode(&family, &z, &grid, &net, &table).unwrap();
        assert_eq!(Some(cell), grid.cell_index_of(theta_a.coords()));
        assert_eq!(grid.representative(cell).unwrap(), &theta_a);
    }

    #[test]
    fn provider_caches_and_persists_codebooks() {
        let family = uniform_halves();
        let space = family.theta_space().clone();
        let net = ParameterNet::simplex_lattice(2, 8).unwrap();
        let grid = build_grid(&space, 2, 1, 4, &net).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let spec = DistortionSpec::for_support(family.support());
        let provider = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            77,
        )
        .unwrap()
        .with_cache_dir(dir.path());
        let first = provider.codebook(&grid, 0).unwrap();
        let again = provider.codebook(&grid, 0).unwrap();
        assert!(Arc::ptr_eq(&first, &again), "in-memory cache must hit");
        // A fresh provider with the same configuration loads the persisted
        // design bit-exactly instead of retraining.
        let other = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            77,
        )
        .unwrap()
        .with_cache_dir(dir.path());
        let loaded = provider.codebook(&grid, 0).unwrap();
        let reloaded = other.codebook(&grid, 0).unwrap();
        assert_eq!(loaded.provenance(), reloaded.provenance());
        assert_eq!(
            loaded.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            reloaded.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            loaded.provenance().digest(),
            provider.provenance_for(grid.representative(0).unwrap()).digest()
        );
    }

    #[test]
    fn provider_rejects_bodiless_configurations() {
        let family = uniform_halves();
        let spec = DistortionSpec::for_support(family.support());
        // n = 1 at rate 0 carries no body bit.
        assert!(matches!(
            CodebookProvider::new(&family, 1, Rate::new(0, 1).unwrap(), spec, quick_params(), 1),
            Err(Error::Config(_))
        ));
        // Fractional budget.
        assert!(matches!(
            CodebookProvider::new(&family, 3, Rate::new(1, 2).unwrap(), spec, quick_params(), 1),
            Err(Error::Config(_))
        ));
        // Oversized codebook.
        assert!(matches!(
            CodebookProvider::new(&family, 16, Rate::new(1, 1).unwrap(), spec, quick_params(), 1),
            Err(Error::Parameter(_))
        ));
        // n = 1 with R >= 1 is admissible.
        assert!(CodebookProvider::new(
            &family,
            1,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            1
        )
        .is_ok());
    }

    /// Shared fixture: a six-block uniform-halves stream at n = 4, R = 1.
    fn mixture_pipeline(
        family: &SourceFamily,
        block_count: usize,
        theta: &ParameterVector,
    ) -> (ParameterGrid, ParameterNet, YatracosTable, Vec<SampleBlock>) {
        let space = family.theta_space().clone();
        let net = ParameterNet::simplex_lattice(2, 8).unwrap();
        let table = YatracosTable::build(family, &net, &TableConfig::default()).unwrap();
        let grid = build_grid(&space, 2, 1, 4, &net).unwrap();
        let blocks: Vec<SampleBlock> = (0..block_count)
            .map(|t| family.sample_block(theta, 4, 31_000 + t as u64).unwrap())
            .collect();
        (grid, net, table, blocks)
    }

    #[test]
    fn streams_round_trip_bit_exactly() {
        let family = uniform_halves();
        let theta = pv(&[0.375, 0.625]);
        let (grid, net, table, blocks) = mixture_pipeline(&family, 6, &theta);
        let spec = DistortionSpec::for_support(family.support());
        let provider = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            2718,
        )
        .unwrap();
        let encoded = encode_stream(&blocks, &grid, &net, &table, &provider).unwrap();

        // Exact rate accounting: payload = T (header_bits + n R) bits and
        // the per-letter rate is R + header_bits / n.
        assert_eq!(grid.header_bits(), 2);
        assert_eq!(encoded.stream.payload_bits(), 6 * (2 + 4));
        assert_eq!(encoded.stream.payload().len(), 5);
        assert_eq!(encoded.stream.bits_per_letter(), 1.0 + 2.0 / 4.0);
        assert_eq!(encoded.trace.blocks[0].cell, grid.initial_cell());
        assert!(encoded.trace.blocks[0].theta_tilde.is_none());
        assert!(encoded.trace.blocks[1].theta_tilde.is_some());

        let bytes = encoded.stream.to_bytes();
        let parsed = TwoStageStream::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, encoded.stream);
        assert_eq!(parsed.to_bytes(), bytes);

        let decoded = decode_stream(&parsed, &grid, &provider).unwrap();
        assert_eq!(decoded.reproductions.len(), blocks.len());
        for (enc, dec) in encoded.reproductions.iter().zip(&decoded.reproductions) {
            assert_eq!(
                enc.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                dec.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "reproductions must agree bit-exactly"
            );
        }
        // Header round-trip: the identified parameter sequence matches.
        for (e, d) in encoded.trace.blocks.iter().zip(&decoded.trace.blocks) {
            assert_eq!(e.cell, d.cell);
            assert_eq!(e.theta_hat, d.theta_hat);
            assert!(d.theta_tilde.is_none());
        }
    }

    #[test]
    fn single_block_streams_have_the_exact_size() {
        let family = uniform_halves();
        let theta = pv(&[0.375, 0.625]);
        let (grid, net, table, mut blocks) = mixture_pipeline(&family, 1, &theta);
        blocks.truncate(1);
        let spec = DistortionSpec::for_support(family.support());
        let provider = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            1,
        )
        .unwrap();
        let encoded = encode_stream(&blocks, &grid, &net, &table, &provider).unwrap();
        assert_eq!(encoded.stream.payload_bits(), (2 + 4) as u64);
        assert_eq!(encoded.stream.payload().len(), 1);
        assert_eq!(encoded.stream.to_bytes().len(), STREAM_HEADER_LEN + 1 + 4);
    }

    #[test]
    fn truncated_streams_report_the_block_position() {
        let family = uniform_halves();
        let theta = pv(&[0.375, 0.625]);
        let (grid, net, table, blocks) = mixture_pipeline(&family, 4, &theta);
        let spec = DistortionSpec::for_support(family.support());
        let provider = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            5,
        )
        .unwrap();
        let bytes =
            encode_stream(&blocks, &grid, &net, &table, &provider).unwrap().stream.to_bytes();
        // 4 blocks x 6 bits = 24 bits = 3 payload bytes.  Keeping one
        // payload byte (the parser still needs 4 trailer bytes) leaves 8
        // bits: block 1 is the first incomplete one.
        let cut = &bytes[..STREAM_HEADER_LEN + 1 + 4];
        match TwoStageStream::from_bytes(cut) {
            Err(Error::Framing { block, .. }) => assert_eq!(block, 1),
            other => panic!("expected a framing error, got {other:?}"),
        }
        // Dropping a single byte cuts into block 2.
        match TwoStageStream::from_bytes(&bytes[..bytes.len() - 1]) {
            Err(Error::Framing { block, .. }) => assert_eq!(block, 2),
            other => panic!("expected a framing error, got {other:?}"),
        }
        // Cutting inside the header reports block 0.
        match TwoStageStream::from_bytes(&bytes[..40]) {
            Err(Error::Framing { block, .. }) => assert_eq!(block, 0),
            other => panic!("expected a framing error, got {other:?}"),
        }
        // Trailing garbage is framing too.
        let mut long = bytes.clone();
        long.insert(long.len() - 4, 0);
        match TwoStageStream::from_bytes(&long) {
            Err(Error::Framing { block, .. }) => assert_eq!(block, 4),
            other => panic!("expected a framing error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_and_foreign_streams_are_rejected() {
        let family = uniform_halves();
        let theta = pv(&[0.375, 0.625]);
        let (grid, net, table, blocks) = mixture_pipeline(&family, 3, &theta);
        let spec = DistortionSpec::for_support(family.support());
        let provider = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            5,
        )
        .unwrap();
        let bytes =
            encode_stream(&blocks, &grid, &net, &table, &provider).unwrap().stream.to_bytes();

        // A flipped byte without a checksum fix is caught.
        let mut corrupt = bytes.clone();
        corrupt[STREAM_HEADER_LEN] ^= 0x10;
        match TwoStageStream::from_bytes(&corrupt) {
            Err(Error::Framing { message, .. }) => {
                assert!(message.contains("checksum"), "message: {message}")
            }
            other => panic!("expected a checksum framing error, got {other:?}"),
        }

        // Bad magic and unknown version are compatibility errors.
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xFF;
        assert!(matches!(
            TwoStageStream::from_bytes(&bad_magic),
            Err(Error::Compatibility(_))
        ));
        let mut bad_version = bytes.clone();
        bad_version[8] = 0xEE;
        let fixed = fix_crc(bad_version);
        assert!(matches!(TwoStageStream::from_bytes(&fixed), Err(Error::Compatibility(_))));

        // A stream written for a different family parses but will not
        // decode against this provider.
        let mut foreign = bytes.clone();
        foreign[10] ^= 0xFF;
        let foreign = fix_crc(foreign);
        let parsed = TwoStageStream::from_bytes(&foreign).unwrap();
        assert!(matches!(
            decode_stream(&parsed, &grid, &provider),
            Err(Error::Compatibility(_))
        ));
    }

    fn fix_crc(mut bytes: Vec<u8>) -> Vec<u8> {
        let len = bytes.len();
        let crc = crc32fast::hash(&bytes[..len - 4]);
        bytes[len - 4..].copy_from_slice(&crc.to_le_bytes());
        bytes
    }

    #[test]
    fn payload_bit_flips_stay_local() {
        // The expfam parameter interval [-2, 2] in a side-4 cube at n = 4
        // gives 8 cells, all intersecting: every header pattern is a valid
        // cell, so each single-bit corruption decodes to exactly one
        // changed block and never a framing error.
        let family = linear_expfam();
        let space = family.theta_space().clone();
        let net = ParameterNet::box_lattice(&[-2.0], &[2.0], &[17]).unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        let grid = build_grid(&space, 1, 4, 4, &net).unwrap();
        assert_eq!(grid.cell_count(), 8);
        assert_eq!(grid.header_bits(), 3);
        let theta = pv(&[0.5]);
        let blocks: Vec<SampleBlock> =
            (0..5).map(|t| family.sample_block(&theta, 4, 600 + t).unwrap()).collect();
        let spec = DistortionSpec::for_support(family.support());
        let provider = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            12,
        )
        .unwrap();
        let encoded = encode_stream(&blocks, &grid, &net, &table, &provider).unwrap();
        let baseline = decode_stream(&encoded.stream, &grid, &provider).unwrap();
        let bytes = encoded.stream.to_bytes();
        let payload_bits = encoded.stream.payload_bits();
        assert_eq!(payload_bits, 5 * (3 + 4));

        for bit in 0..payload_bits {
            let mut mutated = bytes.clone();
            let byte = STREAM_HEADER_LEN + (bit / 8) as usize;
            mutated[byte] ^= 1 << (7 - (bit % 8));
            let mutated = fix_crc(mutated);
            let stream = TwoStageStream::from_bytes(&mutated)
                .unwrap_or_else(|e| panic!("bit {bit} broke framing: {e}"));
            let decoded = decode_stream(&stream, &grid, &provider).unwrap();
            let changed: Vec<usize> = (0..blocks.len())
                .filter(|&t| {
                    decoded.reproductions[t] != baseline.reproductions[t]
                        || decoded.trace.blocks[t].cell != baseline.trace.blocks[t].cell
                })
                .collect();
            assert_eq!(
                changed.len(),
                1,
                "bit {bit} changed blocks {changed:?} instead of exactly one"
            );
            assert_eq!(changed[0] as u64, bit / 7, "bit {bit} escaped its own block");
        }
    }

    #[test]
    fn stream_distortion_matches_the_conditional_law() {
        // The average distortion of the pipeline must match the mixture of
        // per-cell codebook distortions weighted by the emitted cells:
        // block t's data is independent of its header (which came from
        // block t - 1), so conditioning on the cell index is exact.
        let family = uniform_halves();
        let theta = pv(&[0.375, 0.625]);
        let (grid, net, table, blocks) = mixture_pipeline(&family, 400, &theta);
        let spec = DistortionSpec::for_support(family.support());
        let params = DesignParams { training_blocks: 1024, ..DesignParams::default() };
        let provider =
            CodebookProvider::new(&family, 4, Rate::new(1, 1).unwrap(), spec, params, 99)
                .unwrap();
        let encoded = encode_stream(&blocks, &grid, &net, &table, &provider).unwrap();

        let per_block: Vec<f64> = blocks
            .iter()
            .zip(&encoded.reproductions)
            .map(|(x, r)| spec.block(x.values(), r, 1) / 4.0)
            .collect();
        let t = per_block.len() as f64;
        let pipeline_mean = per_block.iter().sum::<f64>() / t;
        let pipeline_var = per_block
            .iter()
            .map(|v| (v - pipeline_mean) * (v - pipeline_mean))
            .sum::<f64>()
            / (t - 1.0);
        let pipeline_stderr = (pipeline_var / t).sqrt();

        let mut counts: HashMap<u32, usize> = HashMap::new();
        for b in &encoded.trace.blocks {
            *counts.entry(b.cell).or_default() += 1;
        }
        let mut conditional_mean = 0.0;
        let mut conditional_stderr = 0.0;
        for (&cell, &count) in &counts {
            let weight = count as f64 / t;
            let code = provider.codebook(&grid, cell).unwrap();
            let oracle = crate::quantizer::estimate_distortion(
                &family,
                &theta,
                &code,
                &spec,
                400,
                7_000 + cell as u64,
            )
            .unwrap();
            conditional_mean += weight * oracle.mean;
            conditional_stderr += weight * oracle.stderr.unwrap();
        }
        let tolerance = 3.0 * (pipeline_stderr + conditional_stderr);
        assert!(
            (pipeline_mean - conditional_mean).abs() <= tolerance,
            "pipeline {pipeline_mean} vs conditional {conditional_mean} (tolerance {tolerance})"
        );
    }

    #[test]
    fn identification_chain_holds_on_the_net() {
        // Deterministic chain per simulated block: the distance from the
        // truth to the identified parameter is controlled by twice the
        // measured deviation, the finite-net slack 3/(2n), and the
        // Lipschitz image of the quantization step.
        let family = uniform_halves();
        let space = family.theta_space().clone();
        let net = ParameterNet::simplex_lattice(2, 8).unwrap();
        let table = YatracosTable::build(&family, &net, &TableConfig::default()).unwrap();
        let n = 16usize;
        let grid = build_grid(&space, 2, 1, n, &net).unwrap();
        let theta = pv(&[0.375, 0.625]);
        let theta_index = (0..net.len())
            .find(|&i| net.point(i) == &theta)
            .expect("theta lies on the denominator-8 lattice");
        // beta' for this family: d_V is (sqrt(k)/2)-Lipschitz in theta.
        let beta_prime = family.mixture_lipschitz_bound(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0]))
            .unwrap()
            / crate::family::euclidean_distance(&[1.0, 0.0], &[0.0, 1.0]);
        let quantization = beta_prime * (2.0_f64).sqrt() / ceil_sqrt(n as u64) as f64;
        let mut distance_cache: HashMap<Vec<u64>, f64> = HashMap::new();
        for trial in 0..25u64 {
            let z = family.sample_block(&theta, n, 90_000 + trial).unwrap();
            let delta = estimator::deviation(&family, &z, &net, &table, theta_index).unwrap();
            let cell = first_stage_encode(&family, &z, &grid, &net, &table).unwrap();
            let theta_hat = grid.representative(cell).unwrap();
            let key: Vec<u64> = theta_hat.coords().iter().map(|v| v.to_bits()).collect();
            let distance = *distance_cache.entry(key).or_insert_with(|| {
                metrics::variational_distance(&family, &theta, theta_hat).unwrap().value
            });
            let bound = 2.0 * delta + 3.0 / (2.0 * n as f64) + quantization + 5e-7;
            assert!(
                distance <= bound,
                "trial {trial}: d_V = {distance} exceeds the chain bound {bound}"
            );
        }
    }

    #[test]
    fn foreign_pipeline_combinations_are_rejected() {
        let family = uniform_halves();
        let theta = pv(&[0.375, 0.625]);
        let (grid, net, table, blocks) = mixture_pipeline(&family, 2, &theta);
        let spec = DistortionSpec::for_support(family.support());
        let provider = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            5,
        )
        .unwrap();
        // Grid over a different net.
        let other_net = ParameterNet::simplex_lattice(2, 4).unwrap();
        let other_grid =
            build_grid(family.theta_space(), 2, 1, 4, &other_net).unwrap();
        assert!(matches!(
            encode_stream(&blocks, &other_grid, &net, &table, &provider),
            Err(Error::Compatibility(_))
        ));
        // Provider at a different block length.
        let short = CodebookProvider::new(
            &family,
            2,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            5,
        )
        .unwrap();
        assert!(matches!(
            encode_stream(&blocks, &grid, &net, &table, &short),
            Err(Error::Compatibility(_))
        ));
        // Decoding with a mismatched seed is refused.
        let encoded = encode_stream(&blocks, &grid, &net, &table, &provider).unwrap();
        let reseeded = CodebookProvider::new(
            &family,
            4,
            Rate::new(1, 1).unwrap(),
            spec,
            quick_params(),
            6,
        )
        .unwrap();
        assert!(matches!(
            decode_stream(&encoded.stream, &grid, &reseeded),
            Err(Error::Compatibility(_))
        ));
    }
}

//! Raw sample files: little-endian f64 values, row-major (block by block,
//! letter by letter, axis by axis), with a `<file>.dims` sidecar that
//! carries the shape as a `key = value` document.

use std::fs;
use std::path::{Path, PathBuf};

use uvq::family::SampleBlock;

use crate::config::{parse_u64, CfgResult, ConfigError, KvDoc};

/// Shape of a sample file as recorded in its sidecar.  The block count is
/// validated against the file length and recovered from the parsed vector.
#[derive(Clone, Copy, Debug)]
pub struct SampleDims {
    pub block_len: usize,
    pub data_dim: usize,
}

/// Sidecar path: the data file name with `.dims` appended.
pub fn dims_path(data: &Path) -> PathBuf {
    let mut name = data.as_os_str().to_os_string();
    name.push(".dims");
    PathBuf::from(name)
}

/// Write blocks as raw little-endian f64 plus the sidecar.  Every block
/// must have `block_len * data_dim` values.
pub fn write_blocks<'a>(
    path: &Path,
    blocks: impl IntoIterator<Item = &'a [f64]>,
    block_len: usize,
    data_dim: usize,
) -> CfgResult<usize> {
    let mut bytes: Vec<u8> = Vec::new();
    let per_block = block_len * data_dim;
    let mut count = 0usize;
    for block in blocks {
        if block.len() != per_block {
            return Err(ConfigError::new(
                "samples",
                format!(
                    "block {count} holds {} values, expected {per_block} ({block_len} letters x {data_dim} axes)",
                    block.len()
                ),
            ));
        }
        for v in block {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        count += 1;
    }
    let write = |p: &Path, data: &[u8]| {
        fs::write(p, data)
            .map_err(|e| ConfigError::new("samples", format!("cannot write `{}`: {e}", p.display())))
    };
    write(path, &bytes)?;
    let sidecar = format!(
        "version = 1\nblocks = {count}\nblock-len = {block_len}\ndata-dim = {data_dim}\n"
    );
    write(&dims_path(path), sidecar.as_bytes())?;
    Ok(count)
}

/// Read a sample file and its sidecar into blocks.
pub fn read_blocks(path: &Path) -> CfgResult<(Vec<SampleBlock>, SampleDims)> {
    let side = dims_path(path);
    let text = fs::read_to_string(&side).map_err(|e| {
        ConfigError::new(
            "dims",
            format!("cannot read the sidecar `{}`: {e}", side.display()),
        )
    })?;
    let mut doc = KvDoc::parse(&text)?;
    let version = parse_u64("dims.version", &doc.take_required("version")?)?;
    if version != 1 {
        return Err(ConfigError::new(
            "dims.version",
            format!("unsupported sidecar version {version} (this build reads version 1)"),
        ));
    }
    let blocks = parse_u64("dims.blocks", &doc.take_required("blocks")?)? as usize;
    let block_len = parse_u64("dims.block-len", &doc.take_required("block-len")?)? as usize;
    let data_dim = parse_u64("dims.data-dim", &doc.take_required("data-dim")?)? as usize;
    doc.finish()
        .map_err(|e| ConfigError::new(format!("dims.{}", e.path), e.message))?;
    if blocks == 0 || block_len == 0 || data_dim == 0 {
        return Err(ConfigError::new(
            "dims",
            "blocks, block-len, and data-dim must all be at least 1",
        ));
    }
    let dims = SampleDims { block_len, data_dim };

    let bytes = fs::read(path)
        .map_err(|e| ConfigError::new("samples", format!("cannot read `{}`: {e}", path.display())))?;
    let expected = blocks * block_len * data_dim * 8;
    if bytes.len() != expected {
        return Err(ConfigError::new(
            "samples",
            format!(
                "`{}` holds {} bytes, expected {expected} ({blocks} blocks x {block_len} letters x {data_dim} axes x 8)",
                path.display(),
                bytes.len()
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(ConfigError::new(
            "samples",
            format!("value {bad} is not finite"),
        ));
    }
    let per_block = block_len * data_dim;
    let parsed = values
        .chunks_exact(per_block)
        .map(|chunk| {
            SampleBlock::from_values(chunk.to_vec(), block_len, data_dim)
                .map_err(|e| ConfigError::new("samples", e.to_string()))
        })
        .collect::<CfgResult<Vec<_>>>()?;
    Ok((parsed, dims))
}

//! Subcommand drivers: sampling, coding, identification, experiments, and
//! report rendering, plus the user-facing schema reference.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;

use uvq::codec::{
    build_grid, decode_stream, encode_stream, first_stage_encode, CodebookProvider,
    IdentificationTrace, TwoStageStream,
};
use uvq::estimator::{TableConfig, YatracosTable};
use uvq::family::ParameterVector;
use uvq::rng::StreamKey;

use crate::config::{self, check_mesh, ConfigError, ExperimentConfig};
use crate::experiments::{self, ExperimentOutput};
use crate::plot;
use crate::records;
use crate::samples;

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

pub fn cmd_sample(
    config_path: &Path,
    theta_coords: &[f64],
    blocks: usize,
    block_len: usize,
    output: &Path,
) -> Result<()> {
    if blocks == 0 {
        return Err(ConfigError::new("--blocks", "must be at least 1").into());
    }
    if block_len == 0 {
        return Err(ConfigError::new("--block-len", "must be at least 1").into());
    }
    let cfg = config::load_config(config_path)?;
    let theta = ParameterVector::new(theta_coords.to_vec())
        .map_err(|e| ConfigError::new("--theta", e.to_string()))?;
    cfg.family
        .validate_theta(&theta)
        .map_err(|e| ConfigError::new("--theta", e.to_string()))?;
    let sampled = (0..blocks)
        .map(|t| {
            let label = StreamKey::root(cfg.seed)
                .tagged("sample")
                .bytes(&(block_len as u64).to_le_bytes())
                .indexed(t as u64)
                .label();
            cfg.family.sample_block(&theta, block_len, label)
        })
        .collect::<uvq::Result<Vec<_>>>()?;
    samples::write_blocks(
        output,
        sampled.iter().map(|b| b.values()),
        block_len,
        cfg.family.data_dim(),
    )?;
    println!(
        "wrote {blocks} blocks of {block_len} letters (data dimension {}) to `{}`",
        cfg.family.data_dim(),
        output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// encode / decode
// ---------------------------------------------------------------------------

struct CodingContext<'a> {
    grid: uvq::codec::ParameterGrid,
    table: YatracosTable,
    provider: CodebookProvider<'a>,
}

fn coding_context<'a>(
    cfg: &'a ExperimentConfig,
    block_len: usize,
    cache: Option<&Path>,
) -> Result<CodingContext<'a>> {
    check_mesh(&cfg.net, block_len, cfg.net_field)?;
    let grid = build_grid(
        cfg.family.theta_space(),
        cfg.family.param_dim(),
        cfg.j_side,
        block_len,
        &cfg.net,
    )?;
    let table = YatracosTable::build(&cfg.family, &cfg.net, &TableConfig::default())?;
    let mut provider = CodebookProvider::new(
        &cfg.family,
        block_len,
        cfg.rate,
        cfg.distortion,
        cfg.design,
        cfg.seed,
    )?;
    if let Some(dir) = cache {
        fs::create_dir_all(dir)?;
        provider = provider.with_cache_dir(dir);
    }
    Ok(CodingContext { grid, table, provider })
}

fn trace_csv(trace: &IdentificationTrace) -> String {
    let mut out = String::from("block,cell,theta\n");
    for (t, block) in trace.blocks.iter().enumerate() {
        let coords: Vec<String> =
            block.theta_hat.coords().iter().map(|c| c.to_string()).collect();
        out.push_str(&format!("{t},{},{}\n", block.cell, coords.join(" ")));
    }
    out
}

pub fn cmd_encode(
    config_path: &Path,
    input: &Path,
    output: &Path,
    reproduction: Option<&Path>,
    trace: Option<&Path>,
    cache: Option<&Path>,
) -> Result<()> {
    let cfg = config::load_config(config_path)?;
    let (blocks, dims) = samples::read_blocks(input)?;
    if dims.data_dim != cfg.family.data_dim() {
        return Err(ConfigError::new(
            "dims.data-dim",
            format!(
                "sample file has {} axes, the configured family has {}",
                dims.data_dim,
                cfg.family.data_dim()
            ),
        )
        .into());
    }
    let ctx = coding_context(&cfg, dims.block_len, cache)?;
    let encoded = encode_stream(&blocks, &ctx.grid, &cfg.net, &ctx.table, &ctx.provider)?;
    fs::write(output, encoded.stream.to_bytes())?;
    if let Some(path) = reproduction {
        samples::write_blocks(
            path,
            encoded.reproductions.iter().map(|r| r.as_slice()),
            dims.block_len,
            dims.data_dim,
        )?;
    }
    if let Some(path) = trace {
        fs::write(path, trace_csv(&encoded.trace))?;
    }
    println!(
        "encoded {} blocks at n = {}: {} header + {} body bits per block, {} bits per letter",
        encoded.stream.block_count(),
        dims.block_len,
        encoded.stream.header_bits(),
        encoded.stream.body_bits(),
        encoded.stream.bits_per_letter()
    );
    println!("stream: `{}` ({} payload bits)", output.display(), encoded.stream.payload_bits());
    Ok(())
}

pub fn cmd_decode(
    config_path: &Path,
    input: &Path,
    output: &Path,
    trace: Option<&Path>,
    cache: Option<&Path>,
) -> Result<()> {
    let cfg = config::load_config(config_path)?;
    let stream = TwoStageStream::from_bytes(&fs::read(input)?)?;
    let ctx = coding_context(&cfg, stream.block_len(), cache)?;
    let decoded = decode_stream(&stream, &ctx.grid, &ctx.provider)?;
    samples::write_blocks(
        output,
        decoded.reproductions.iter().map(|r| r.as_slice()),
        stream.block_len(),
        cfg.family.data_dim(),
    )?;
    if let Some(path) = trace {
        fs::write(path, trace_csv(&decoded.trace))?;
    }
    println!(
        "decoded {} blocks at n = {} to `{}`",
        stream.block_count(),
        stream.block_len(),
        output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

pub fn cmd_identify(config_path: &Path, input: &Path, output: Option<&Path>) -> Result<()> {
    let cfg = config::load_config(config_path)?;
    let (blocks, dims) = samples::read_blocks(input)?;
    if dims.data_dim != cfg.family.data_dim() {
        return Err(ConfigError::new(
            "dims.data-dim",
            format!(
                "sample file has {} axes, the configured family has {}",
                dims.data_dim,
                cfg.family.data_dim()
            ),
        )
        .into());
    }
    check_mesh(&cfg.net, dims.block_len, cfg.net_field)?;
    let grid = build_grid(
        cfg.family.theta_space(),
        cfg.family.param_dim(),
        cfg.j_side,
        dims.block_len,
        &cfg.net,
    )?;
    let table = YatracosTable::build(&cfg.family, &cfg.net, &TableConfig::default())?;
    let mut out = String::from("block,cell,theta\n");
    for (t, block) in blocks.iter().enumerate() {
        let cell = first_stage_encode(&cfg.family, block, &grid, &cfg.net, &table)?;
        let theta = grid.representative(cell)?;
        let coords: Vec<String> = theta.coords().iter().map(|c| c.to_string()).collect();
        out.push_str(&format!("{t},{cell},{}\n", coords.join(" ")));
    }
    match output {
        Some(path) => {
            fs::write(path, out)?;
            println!("identified {} blocks to `{}`", blocks.len(), path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

#[derive(Copy, Clone, PartialEq, Eq)]
pub enum ExperimentId {
    Identification,
    Redundancy,
    BoundsAudit,
}

impl ExperimentId {
    pub fn dir_name(self) -> &'static str {
        match self {
            ExperimentId::Identification => "identification",
            ExperimentId::Redundancy => "redundancy",
            ExperimentId::BoundsAudit => "bounds-audit",
        }
    }
}

pub fn cmd_experiment(id: ExperimentId, config_path: &Path) -> Result<()> {
    let start = Instant::now();
    let cfg = config::load_config(config_path)?;
    let output: ExperimentOutput = match id {
        ExperimentId::Identification => experiments::run_identification(&cfg)?,
        ExperimentId::Redundancy => experiments::run_redundancy(&cfg)?,
        ExperimentId::BoundsAudit => experiments::run_bounds_audit(&cfg)?,
    };

    let dir = cfg.output.join(id.dir_name());
    let plots_dir = dir.join("plots");
    fs::create_dir_all(&plots_dir)?;
    let records_path = dir.join("records.csv");
    records::write_records(&records_path, &output.records)?;
    let summaries = plot::plot_records(&output.records, &plots_dir)?;
    let plotted = summaries.iter().filter(|s| s.file.is_some()).count();

    let file_name = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };
    let mut manifest: Vec<(String, String)> = vec![
        ("version".to_string(), "1".to_string()),
        ("experiment".to_string(), id.dir_name().to_string()),
        ("config".to_string(), file_name(&cfg.source)),
        ("config-sha256".to_string(), cfg.config_sha256.clone()),
        ("family".to_string(), file_name(&cfg.family_path)),
        ("family-hash".to_string(), cfg.family.hash_hex()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("rate".to_string(), format!("{}", cfg.rate)),
        ("records".to_string(), output.records.len().to_string()),
        ("plots".to_string(), plotted.to_string()),
    ];
    manifest.extend(output.notes.clone());
    manifest.push(("wall-ms".to_string(), start.elapsed().as_millis().to_string()));
    records::write_manifest(&dir.join("manifest.txt"), &manifest)?;

    println!("{}: {} records -> `{}`", id.dir_name(), output.records.len(), records_path.display());
    for line in &output.summary {
        println!("{line}");
    }
    println!("plots: {plotted} in `{}`", plots_dir.display());
    println!("manifest: `{}`", dir.join("manifest.txt").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(records_path: &Path, output: &Path) -> Result<()> {
    let records = records::read_records(records_path)?;
    if records.is_empty() {
        return Err(ConfigError::new("records", "no data rows to plot").into());
    }
    fs::create_dir_all(output)?;
    let summaries = plot::plot_records(&records, output)?;
    println!("{} records from `{}`", records.len(), records_path.display());
    for s in &summaries {
        let slope = s
            .log_log_slope
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".to_string());
        let extra = s
            .regressor_slope
            .map(|v| format!(", slope vs sqrt(log n / n) = {v:.4}"))
            .unwrap_or_default();
        match &s.file {
            Some(file) => println!(
                "{} / {}: {} points, log-log slope = {slope}{extra} -> `{}`",
                s.experiment,
                s.metric,
                s.points,
                output.join(file).display()
            ),
            None => println!(
                "{} / {}: {} points, skipped (needs two distinct block lengths)",
                s.experiment, s.metric, s.points
            ),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// schema
// ---------------------------------------------------------------------------

pub const SCHEMA_HELP: &str = r#"uvq configuration reference (schema version 1)

Experiment configuration: UTF-8 text, one `key = value` pair per line.
`#` starts a comment, blank lines are ignored, keys appear at most once,
and unknown keys are rejected.  Paths are resolved relative to the
directory containing the configuration file.

Required keys
  version                 schema version; must be 1
  family                  path of the family description file
  output                  directory experiment artifacts are written under
  seed                    master seed (unsigned 64-bit integer)
  rate                    body rate R in bits per letter: `num/den` or integer
  grid.j                  side J of the parameter bounding cube (integer >= 1)
  net.denom               simplex families: lattice denominator of the net
  net.counts              box families: whitespace-separated per-axis counts

Optional keys
  distortion.bound        `auto` (squared support diameter) or a positive real
  design.training-blocks  Lloyd training set size          (default 4096)
  design.max-iterations   Lloyd iteration cap              (default 200)
  design.tolerance        relative improvement stop        (default 1e-6)
  design.codebook-cap     largest codebook size            (default 4096)

Experiment sections (only needed by `uvq experiment <id>`)
  identification.schedule   block lengths, strictly increasing, each >= 2
  identification.trials     Monte Carlo trials per block length (>= 1)
  identification.theta      true parameter; must lie on the net
  redundancy.schedule       block lengths, strictly increasing
  redundancy.trials         blocks per encoded stream (>= 1)
  redundancy.theta          true parameter
  audit.block-len           block length of the bounds audit
  audit.trials              trials for the deviation and mismatch phases
  audit.pairs               random parameter pairs for the bound checks
  audit.theta               true parameter; must lie on the net

Validation: n*R must be an integer for every scheduled block length;
codebook-training schedules (redundancy, audit) must carry at least one
body bit per block and keep 2^(nR) within design.codebook-cap; the net
mesh must satisfy mesh <= 1/(2*ceil(sqrt(n))) at the largest scheduled n;
identification and audit parameters must lie on the net.

Family description file: whitespace-separated `key value...` lines.
  kind       mixture | exponential
  dim        data dimension d
  support    <lo> <hi>                  one line per axis, in order
  component  <shape> ...                mixture: one line per component (>= 2)
  carrier    <shape> ...                exponential: exactly one
  statistic  pow <axis> <power>         exponential: one per parameter
  theta      <lo> <hi>                  exponential: one per parameter
A shape is `uniform <lo> <hi>`, `triangular <lo> <mode> <hi>`, or
`tgauss <mean> <std> <lo> <hi>`; component/carrier lines concatenate one
shape per data axis.  Mixture parameters are the component weights and
live on the probability simplex.

Sample files: raw little-endian f64 values, row-major (block by block,
letter by letter, axis by axis), with a `<file>.dims` sidecar:
  version = 1
  blocks = <count>
  block-len = <n>
  data-dim = <d>

records.csv: first line `# uvq records schema v1`, then the header
`experiment,n,metric,value,stderr,trials,wall_ms`, one row per
(experiment, block length, metric).  `stderr` is empty when the metric
carries no standard error (exact values, quantiles, counts); wall_ms is
the only nondeterministic column.

Exit codes: 0 success; 1 validation or usage error; 2 runtime error
(I/O, malformed streams, incompatible inputs, numerical failure).
"#;

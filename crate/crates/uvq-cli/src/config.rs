//! Experiment configuration files.
//!
//! A configuration is a plain-text `key = value` document: one pair per
//! line, `#` starts a comment, blank lines are ignored, every key appears
//! at most once, and unknown keys are rejected.  Relative paths are
//! resolved against the directory containing the configuration file.
//! Validation failures carry the dotted path of the offending field.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use uvq::estimator::{ceil_sqrt, ParameterNet};
use uvq::family::{self, ParameterVector, SourceFamily, ThetaSpace};
use uvq::quantizer::{DesignParams, DistortionSpec, Rate};

/// A validation failure: the dotted field path plus a human message.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub type CfgResult<T> = std::result::Result<T, ConfigError>;

// ---------------------------------------------------------------------------
// Key/value document
// ---------------------------------------------------------------------------

/// Parsed `key = value` document with strict consumption: every key must be
/// taken by the loader, and leftovers are reported as unknown keys.
#[derive(Debug)]
pub struct KvDoc {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> CfgResult<Self> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::new(
                    format!("line {line}"),
                    format!("expected `key = value`, got `{content}`"),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::new(format!("line {line}"), "empty key"));
            }
            if value.is_empty() {
                return Err(ConfigError::new(key, format!("empty value at line {line}")));
            }
            if let Some((_, first)) = entries.get(&key) {
                return Err(ConfigError::new(
                    key,
                    format!("duplicate key at line {line} (first set at line {first})"),
                ));
            }
            entries.insert(key, (value, line));
        }
        Ok(KvDoc { entries })
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(value, _)| value)
    }

    pub fn take_required(&mut self, key: &str) -> CfgResult<String> {
        self.take(key)
            .ok_or_else(|| ConfigError::new(key, "missing required key"))
    }

    /// True when any key with the given dotted prefix is still present.
    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries
            .keys()
            .any(|k| k == prefix || k.starts_with(&format!("{prefix}.")))
    }

    /// Reject leftovers; call after all known keys were taken.
    pub fn finish(self) -> CfgResult<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(ConfigError::new(key, format!("unknown key (line {line})")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Typed field parsers
// ---------------------------------------------------------------------------

pub fn parse_u64(path: &str, value: &str) -> CfgResult<u64> {
    value
        .parse::<u64>()
        .map_err(|_| ConfigError::new(path, format!("`{value}` is not an unsigned integer")))
}

pub fn parse_u32(path: &str, value: &str) -> CfgResult<u32> {
    value
        .parse::<u32>()
        .map_err(|_| ConfigError::new(path, format!("`{value}` is not an unsigned 32-bit integer")))
}

pub fn parse_usize(path: &str, value: &str) -> CfgResult<usize> {
    value
        .parse::<usize>()
        .map_err(|_| ConfigError::new(path, format!("`{value}` is not an unsigned integer")))
}

pub fn parse_f64(path: &str, value: &str) -> CfgResult<f64> {
    let v = value
        .parse::<f64>()
        .map_err(|_| ConfigError::new(path, format!("`{value}` is not a number")))?;
    if !v.is_finite() {
        return Err(ConfigError::new(path, format!("`{value}` is not finite")));
    }
    Ok(v)
}

pub fn parse_f64_list(path: &str, value: &str) -> CfgResult<Vec<f64>> {
    value
        .split_whitespace()
        .map(|tok| parse_f64(path, tok))
        .collect()
}

pub fn parse_usize_list(path: &str, value: &str) -> CfgResult<Vec<usize>> {
    value
        .split_whitespace()
        .map(|tok| parse_usize(path, tok))
        .collect()
}

/// A rate written `num/den` or as a bare integer (denominator one).
pub fn parse_rate(path: &str, value: &str) -> CfgResult<Rate> {
    let (num, den) = match value.split_once('/') {
        Some((n, d)) => (parse_u32(path, n.trim())?, parse_u32(path, d.trim())?),
        None => (parse_u32(path, value)?, 1),
    };
    Rate::new(num, den).map_err(|e| ConfigError::new(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct IdentificationPlan {
    pub schedule: Vec<usize>,
    pub trials: usize,
    pub theta: ParameterVector,
}

#[derive(Debug)]
pub struct RedundancyPlan {
    pub schedule: Vec<usize>,
    pub trials: usize,
    pub theta: ParameterVector,
}

#[derive(Debug)]
pub struct AuditPlan {
    pub block_len: usize,
    pub trials: usize,
    pub pairs: usize,
    pub theta: ParameterVector,
}

#[derive(Debug)]
pub struct ExperimentConfig {
    pub source: PathBuf,
    pub config_sha256: String,
    pub family: SourceFamily,
    pub family_path: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    pub rate: Rate,
    pub j_side: u32,
    pub net: ParameterNet,
    pub net_field: &'static str,
    pub distortion: DistortionSpec,
    pub design: DesignParams,
    pub identification: Option<IdentificationPlan>,
    pub redundancy: Option<RedundancyPlan>,
    pub audit: Option<AuditPlan>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Load and validate an experiment configuration.
pub fn load_config(path: &Path) -> CfgResult<ExperimentConfig> {
    let bytes = fs::read(path).map_err(|e| {
        ConfigError::new("config", format!("cannot read `{}`: {e}", path.display()))
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| ConfigError::new("config", "file is not valid UTF-8"))?;
    let config_sha256 = hex(&Sha256::digest(&bytes));
    let mut doc = KvDoc::parse(&text)?;

    let version = parse_u64("version", &doc.take_required("version")?)?;
    if version != 1 {
        return Err(ConfigError::new(
            "version",
            format!("unsupported schema version {version} (this build reads version 1)"),
        ));
    }

    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let family_path = base.join(doc.take_required("family")?);
    let family = family::load_family(&family_path)
        .map_err(|e| ConfigError::new("family", format!("`{}`: {e}", family_path.display())))?;

    let output = base.join(doc.take_required("output")?);
    let seed = parse_u64("seed", &doc.take_required("seed")?)?;
    let rate = parse_rate("rate", &doc.take_required("rate")?)?;

    let j_side = parse_u32("grid.j", &doc.take_required("grid.j")?)?;
    if j_side == 0 {
        return Err(ConfigError::new("grid.j", "the bounding cube side must be at least 1"));
    }
    let (lo, hi) = family.theta_space().bounding_box();
    for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
        if h - l > j_side as f64 + 1e-9 {
            return Err(ConfigError::new(
                "grid.j",
                format!(
                    "parameter axis {axis} spans {}, exceeding the bounding cube side {j_side}",
                    h - l
                ),
            ));
        }
    }

    let (net, net_field) = match family.theta_space() {
        ThetaSpace::Simplex { dim } => {
            if doc.take("net.counts").is_some() {
                return Err(ConfigError::new(
                    "net.counts",
                    "not used for a simplex parameter space; set net.denom",
                ));
            }
            let denom = parse_u64("net.denom", &doc.take_required("net.denom")?)?;
            let net = ParameterNet::simplex_lattice(*dim, denom)
                .map_err(|e| ConfigError::new("net.denom", e.to_string()))?;
            (net, "net.denom")
        }
        ThetaSpace::Box { lo, hi } => {
            if doc.take("net.denom").is_some() {
                return Err(ConfigError::new(
                    "net.denom",
                    "not used for a box parameter space; set net.counts",
                ));
            }
            let counts = parse_usize_list("net.counts", &doc.take_required("net.counts")?)?;
            if counts.len() != lo.len() {
                return Err(ConfigError::new(
                    "net.counts",
                    format!("{} counts for a {}-axis parameter box", counts.len(), lo.len()),
                ));
            }
            let net = ParameterNet::box_lattice(lo, hi, &counts)
                .map_err(|e| ConfigError::new("net.counts", e.to_string()))?;
            (net, "net.counts")
        }
    };

    let distortion = match doc.take("distortion.bound") {
        None => DistortionSpec::for_support(family.support()),
        Some(v) if v == "auto" => DistortionSpec::for_support(family.support()),
        Some(v) => {
            let bound = parse_f64("distortion.bound", &v)?;
            DistortionSpec::clamped_squared_error(bound)
                .map_err(|e| ConfigError::new("distortion.bound", e.to_string()))?
        }
    };

    let mut design = DesignParams::default();
    if let Some(v) = doc.take("design.training-blocks") {
        design.training_blocks = parse_usize("design.training-blocks", &v)?;
        if design.training_blocks == 0 {
            return Err(ConfigError::new("design.training-blocks", "must be at least 1"));
        }
    }
    if let Some(v) = doc.take("design.max-iterations") {
        design.max_iterations = parse_usize("design.max-iterations", &v)?;
        if design.max_iterations == 0 {
            return Err(ConfigError::new("design.max-iterations", "must be at least 1"));
        }
    }
    if let Some(v) = doc.take("design.tolerance") {
        design.tolerance = parse_f64("design.tolerance", &v)?;
        if design.tolerance <= 0.0 {
            return Err(ConfigError::new("design.tolerance", "must be positive"));
        }
    }
    if let Some(v) = doc.take("design.codebook-cap") {
        design.codebook_cap = parse_u32("design.codebook-cap", &v)?;
        if design.codebook_cap < 2 {
            return Err(ConfigError::new("design.codebook-cap", "must be at least 2"));
        }
    }

    let identification = take_section(&mut doc, "identification", |doc| {
        let schedule = take_schedule(doc, "identification.schedule")?;
        for &n in &schedule {
            if n < 2 {
                return Err(ConfigError::new(
                    "identification.schedule",
                    "block lengths must be at least 2 (the scaling regressor needs log n > 0)",
                ));
            }
        }
        let trials = take_count(doc, "identification.trials")?;
        let theta = take_theta(doc, "identification.theta", &family)?;
        Ok(IdentificationPlan { schedule, trials, theta })
    })?;

    let redundancy = take_section(&mut doc, "redundancy", |doc| {
        let schedule = take_schedule(doc, "redundancy.schedule")?;
        let trials = take_count(doc, "redundancy.trials")?;
        let theta = take_theta(doc, "redundancy.theta", &family)?;
        Ok(RedundancyPlan { schedule, trials, theta })
    })?;

    let audit = take_section(&mut doc, "audit", |doc| {
        let block_len = parse_usize("audit.block-len", &doc.take_required("audit.block-len")?)?;
        if block_len == 0 {
            return Err(ConfigError::new("audit.block-len", "must be at least 1"));
        }
        let trials = take_count(doc, "audit.trials")?;
        let pairs = take_count(doc, "audit.pairs")?;
        let theta = take_theta(doc, "audit.theta", &family)?;
        Ok(AuditPlan { block_len, trials, pairs, theta })
    })?;

    doc.finish()?;

    let mut cfg = ExperimentConfig {
        source: path.to_path_buf(),
        config_sha256,
        family,
        family_path,
        output,
        seed,
        rate,
        j_side,
        net,
        net_field,
        distortion,
        design,
        identification,
        redundancy,
        audit,
    };
    validate(&mut cfg)?;
    Ok(cfg)
}

/// Parse a section if any of its keys are present; error when some keys of
/// the section exist but required ones are missing.
fn take_section<T>(
    doc: &mut KvDoc,
    prefix: &str,
    parse: impl FnOnce(&mut KvDoc) -> CfgResult<T>,
) -> CfgResult<Option<T>> {
    if doc.has_prefix(prefix) {
        parse(doc).map(Some)
    } else {
        Ok(None)
    }
}

fn take_schedule(doc: &mut KvDoc, path: &str) -> CfgResult<Vec<usize>> {
    let schedule = parse_usize_list(path, &doc.take_required(path)?)?;
    if schedule.is_empty() {
        return Err(ConfigError::new(path, "the schedule needs at least one block length"));
    }
    for window in schedule.windows(2) {
        if window[1] <= window[0] {
            return Err(ConfigError::new(path, "block lengths must be strictly increasing"));
        }
    }
    if schedule[0] == 0 {
        return Err(ConfigError::new(path, "block lengths must be at least 1"));
    }
    Ok(schedule)
}

fn take_count(doc: &mut KvDoc, path: &str) -> CfgResult<usize> {
    let count = parse_usize(path, &doc.take_required(path)?)?;
    if count == 0 {
        return Err(ConfigError::new(path, "must be at least 1"));
    }
    Ok(count)
}

fn take_theta(doc: &mut KvDoc, path: &str, family: &SourceFamily) -> CfgResult<ParameterVector> {
    let coords = parse_f64_list(path, &doc.take_required(path)?)?;
    let theta = ParameterVector::new(coords).map_err(|e| ConfigError::new(path, e.to_string()))?;
    family
        .validate_theta(&theta)
        .map_err(|e| ConfigError::new(path, e.to_string()))?;
    Ok(theta)
}

/// Snap a parameter that must lie on the net onto its exact lattice point;
/// error when it is farther than the snap tolerance.
fn snap_to_net(net: &ParameterNet, theta: &ParameterVector, path: &str) -> CfgResult<ParameterVector> {
    let idx = net.nearest_index(theta.coords());
    let point = net.point(idx);
    let dist = family::euclidean_distance(theta.coords(), point.coords());
    if dist > 1e-9 {
        return Err(ConfigError::new(
            path,
            format!(
                "must lie on the parameter net; the nearest net point is at distance {dist:.3e}"
            ),
        ));
    }
    Ok(point.clone())
}

/// Cross-field validation, shared by every subcommand that loads a config.
fn validate(cfg: &mut ExperimentConfig) -> CfgResult<()> {
    let mut all_lengths: Vec<(usize, &'static str)> = Vec::new();
    let mut coding_lengths: Vec<(usize, &'static str)> = Vec::new();
    if let Some(plan) = &cfg.identification {
        for &n in &plan.schedule {
            all_lengths.push((n, "identification.schedule"));
        }
    }
    if let Some(plan) = &cfg.redundancy {
        for &n in &plan.schedule {
            all_lengths.push((n, "redundancy.schedule"));
            coding_lengths.push((n, "redundancy.schedule"));
        }
    }
    if let Some(plan) = &cfg.audit {
        all_lengths.push((plan.block_len, "audit.block-len"));
        coding_lengths.push((plan.block_len, "audit.block-len"));
    }

    // n R must be an integer for every scheduled block length.
    for &(n, path) in &all_lengths {
        if !(n as u64 * cfg.rate.num() as u64).is_multiple_of(cfg.rate.den() as u64) {
            return Err(ConfigError::new(
                path,
                format!("block length {n} makes n·R fractional at rate {}", cfg.rate),
            ));
        }
    }

    // Codebook-training schedules must carry at least one body bit and stay
    // within the codebook cap.  Identification trains no codebooks.
    for &(n, path) in &coding_lengths {
        let bits = (n as u64 * cfg.rate.num() as u64) / cfg.rate.den() as u64;
        if bits == 0 {
            return Err(ConfigError::new(
                path,
                format!("block length {n} at rate {} carries no body bit", cfg.rate),
            ));
        }
        if bits >= 32 || (1u64 << bits) > cfg.design.codebook_cap as u64 {
            return Err(ConfigError::new(
                path,
                format!(
                    "block length {n} at rate {} needs 2^{bits} codevectors, over the cap of {}",
                    cfg.rate, cfg.design.codebook_cap
                ),
            ));
        }
    }

    // The net must resolve parameters at the finest scheduled block length.
    if let Some(&(n, _)) = all_lengths.iter().max_by_key(|&&(n, _)| n) {
        check_mesh(&cfg.net, n, cfg.net_field)?;
    }

    // Identification and audit need the true parameter on the net.
    if let Some(plan) = &mut cfg.identification {
        plan.theta = snap_to_net(&cfg.net, &plan.theta, "identification.theta")?;
    }
    if let Some(plan) = &mut cfg.audit {
        plan.theta = snap_to_net(&cfg.net, &plan.theta, "audit.theta")?;
    }
    Ok(())
}

/// Field-pathed version of the net-resolution requirement
/// `mesh <= 1 / (2 ceil(sqrt(n)))`.
pub fn check_mesh(net: &ParameterNet, n: usize, field: &str) -> CfgResult<()> {
    if !net.supports_block_len(n as u64) {
        let bound = 1.0 / (2.0 * ceil_sqrt(n as u64) as f64);
        return Err(ConfigError::new(
            field,
            format!(
                "net mesh {:.6} exceeds the resolution 1/(2·ceil(sqrt(n))) = {bound:.6} required at block length {n}",
                net.mesh()
            ),
        ));
    }
    Ok(())
}

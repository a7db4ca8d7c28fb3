//! The three configuration-driven experiments: identification error versus
//! block length, two-stage redundancy versus matched codebooks, and the
//! bounds audit that counts violations of the library's inequalities.
//!
//! Per-trial random streams are keyed by (experiment, block length, trial),
//! so results are independent of thread schedule; aggregation is ordered.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use anyhow::Result;
use rand::Rng;
use rayon::prelude::*;

use uvq::codec::{build_grid, encode_stream, first_stage_encode, CodebookProvider};
use uvq::estimator::{deviations, TableConfig, YatracosTable};
use uvq::family::{FamilyKind, ParameterVector, ThetaSpace};
use uvq::metrics::{
    divergence_growth_bound, log_ratio_sup, measured_distance_lipschitz, pairwise_log_ratio_sup,
    pinsker_check, sup_norm_ratio, variational_distance,
};
use uvq::quad::QuadConfig;
use uvq::quantizer::{design_codebook, mismatch_gap};
use uvq::rng::StreamKey;

use crate::config::{ConfigError, ExperimentConfig};
use crate::plot::fit_identification_slope;
use crate::records::{quantile, summarize, ExperimentRecord};

/// Records plus manifest notes and human summary lines.
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub notes: Vec<(String, String)>,
    pub summary: Vec<String>,
}

fn note(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn schedule_note(schedule: &[usize]) -> String {
    schedule.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// Identification
// ---------------------------------------------------------------------------

/// For each scheduled block length, identify the source from fresh blocks
/// and record the mean, the 0.99 quantile, and the mean minimum deviation of
/// the distance to the truth; fit the decay slope against `sqrt(log n / n)`.
pub fn run_identification(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let plan = cfg.identification.as_ref().ok_or_else(|| {
        ConfigError::new("identification.schedule", "the identification experiment needs this section")
    })?;
    let family = &cfg.family;
    let table = YatracosTable::build(family, &cfg.net, &TableConfig::default())?;

    let mut records = Vec::new();
    let mut summary = Vec::new();
    let mut mean_points: Vec<(f64, f64)> = Vec::new();
    for &n in &plan.schedule {
        let start = Instant::now();
        let grid = build_grid(family.theta_space(), family.param_dim(), cfg.j_side, n, &cfg.net)?;
        let trials: Vec<(u32, f64)> = (0..plan.trials)
            .into_par_iter()
            .map(|t| -> uvq::Result<(u32, f64)> {
                let label = StreamKey::root(cfg.seed)
                    .tagged("identification")
                    .bytes(&(n as u64).to_le_bytes())
                    .indexed(t as u64)
                    .label();
                let z = family.sample_block(&plan.theta, n, label)?;
                let cell = first_stage_encode(family, &z, &grid, &cfg.net, &table)?;
                let dev = deviations(family, &z, &cfg.net, &table)?;
                Ok((cell, dev.min_delta()))
            })
            .collect::<uvq::Result<Vec<_>>>()?;

        // One distance oracle call per distinct identified cell.
        let distinct: BTreeSet<u32> = trials.iter().map(|r| r.0).collect();
        let mut cell_distance: BTreeMap<u32, f64> = BTreeMap::new();
        for &cell in &distinct {
            let report = variational_distance(family, &plan.theta, grid.representative(cell)?)?;
            cell_distance.insert(cell, report.value);
        }
        let distances: Vec<f64> = trials.iter().map(|r| cell_distance[&r.0]).collect();
        let min_deltas: Vec<f64> = trials.iter().map(|r| r.1).collect();

        let wall_ms = start.elapsed().as_millis() as u64;
        let (dv_mean, dv_stderr, _) = summarize(&distances);
        let dv_q99 = quantile(&distances, 0.99);
        let (delta_mean, delta_stderr, _) = summarize(&min_deltas);
        let push = |records: &mut Vec<ExperimentRecord>, metric: &str, value: f64, stderr| {
            records.push(ExperimentRecord {
                experiment: "identification".to_string(),
                n: n as u64,
                metric: metric.to_string(),
                value,
                stderr,
                trials: plan.trials as u64,
                wall_ms,
            });
        };
        push(&mut records, "d_V mean", dv_mean, dv_stderr);
        push(&mut records, "d_V q99", dv_q99, None);
        push(&mut records, "Δ mean", delta_mean, delta_stderr);
        summary.push(format!(
            "n = {n}: d_V mean = {dv_mean:.6}, d_V q99 = {dv_q99:.6}, Δ mean = {delta_mean:.6} ({} trials)",
            plan.trials
        ));
        mean_points.push((n as f64, dv_mean));
    }

    let slope = fit_identification_slope(&mean_points);
    let slope_text = match slope {
        Some(s) => format!("{s:.6}"),
        None => "undefined (needs two block lengths with positive mean error)".to_string(),
    };
    summary.push(format!("slope of log(d_V mean) vs log(sqrt(log n / n)) = {slope_text}"));
    let notes = vec![
        note("block-lengths", schedule_note(&plan.schedule)),
        note("trials", plan.trials),
        note("slope", slope_text),
    ];
    Ok(ExperimentOutput { records, notes, summary })
}

// ---------------------------------------------------------------------------
// Redundancy
// ---------------------------------------------------------------------------

/// For each scheduled block length, encode one stream of fresh blocks with
/// the two-stage codec and record the paired per-letter distortion gap to
/// the matched codebook, plus the exact header overhead in bits per letter.
pub fn run_redundancy(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let plan = cfg.redundancy.as_ref().ok_or_else(|| {
        ConfigError::new("redundancy.schedule", "the redundancy experiment needs this section")
    })?;
    let family = &cfg.family;
    let table = YatracosTable::build(family, &cfg.net, &TableConfig::default())?;

    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &n in &plan.schedule {
        let start = Instant::now();
        let grid = build_grid(family.theta_space(), family.param_dim(), cfg.j_side, n, &cfg.net)?;
        let provider =
            CodebookProvider::new(family, n, cfg.rate, cfg.distortion, cfg.design, cfg.seed)?;
        let matched =
            design_codebook(family, &plan.theta, n, cfg.rate, &cfg.distortion, &cfg.design, cfg.seed)?;

        let blocks = (0..plan.trials)
            .map(|t| {
                let label = StreamKey::root(cfg.seed)
                    .tagged("redundancy")
                    .bytes(&(n as u64).to_le_bytes())
                    .indexed(t as u64)
                    .label();
                family.sample_block(&plan.theta, n, label)
            })
            .collect::<uvq::Result<Vec<_>>>()?;
        let encoded = encode_stream(&blocks, &grid, &cfg.net, &table, &provider)?;
        let diffs: Vec<f64> = (0..blocks.len())
            .into_par_iter()
            .map(|t| -> uvq::Result<f64> {
                let values = blocks[t].values();
                let adaptive =
                    cfg.distortion.block(values, &encoded.reproductions[t], family.data_dim());
                let index = matched.nn_encode(values, &cfg.distortion)?;
                let ideal = cfg.distortion.block(values, matched.decode(index)?, family.data_dim());
                Ok((adaptive - ideal) / n as f64)
            })
            .collect::<uvq::Result<Vec<_>>>()?;

        let wall_ms = start.elapsed().as_millis() as u64;
        let (gap_mean, gap_stderr, _) = summarize(&diffs);
        let overhead = grid.header_bits() as f64 / n as f64;
        records.push(ExperimentRecord {
            experiment: "redundancy".to_string(),
            n: n as u64,
            metric: "redundancy".to_string(),
            value: gap_mean,
            stderr: gap_stderr,
            trials: plan.trials as u64,
            wall_ms,
        });
        records.push(ExperimentRecord {
            experiment: "redundancy".to_string(),
            n: n as u64,
            metric: "rate overhead".to_string(),
            value: overhead,
            stderr: None,
            trials: 1,
            wall_ms,
        });
        summary.push(format!(
            "n = {n}: redundancy = {gap_mean:.6} (stderr {}), header overhead = {} bits / {n} letters = {overhead} bits per letter",
            gap_stderr.map(|s| format!("{s:.6}")).unwrap_or_else(|| "undefined".to_string()),
            grid.header_bits(),
        ));
    }
    let notes = vec![
        note("block-lengths", schedule_note(&plan.schedule)),
        note("trials", plan.trials),
    ];
    Ok(ExperimentOutput { records, notes, summary })
}

// ---------------------------------------------------------------------------
// Bounds audit
// ---------------------------------------------------------------------------

fn draw_theta(space: &ThetaSpace, rng: &mut impl Rng) -> ParameterVector {
    let coords = match space {
        ThetaSpace::Simplex { dim } => {
            let raw: Vec<f64> = (0..*dim)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|v| v / total).collect()
        }
        ThetaSpace::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(l, h)| l + rng.random::<f64>() * (h - l))
            .collect(),
    };
    ParameterVector::new(coords).expect("drawn coordinates are finite")
}

/// Check the library's inequalities on fresh data and random parameter
/// pairs, recording violation counts (zero within tolerances on healthy
/// configurations) and the measured family constants.
pub fn run_bounds_audit(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let plan = cfg.audit.as_ref().ok_or_else(|| {
        ConfigError::new("audit.block-len", "the bounds-audit experiment needs this section")
    })?;
    let family = &cfg.family;
    let n = plan.block_len;
    let table = YatracosTable::build(family, &cfg.net, &TableConfig::default())?;
    let grid = build_grid(family.theta_space(), family.param_dim(), cfg.j_side, n, &cfg.net)?;
    let theta = &plan.theta;
    let theta_index = cfg.net.nearest_index(theta.coords());

    let mut records = Vec::new();
    let mut summary = Vec::new();
    let experiment = "bounds-audit".to_string();
    let push = |records: &mut Vec<ExperimentRecord>,
                    metric: &str,
                    value: f64,
                    stderr: Option<f64>,
                    trials: u64,
                    wall_ms: u64| {
        records.push(ExperimentRecord {
            experiment: experiment.clone(),
            n: n as u64,
            metric: metric.to_string(),
            value,
            stderr,
            trials,
            wall_ms,
        });
    };

    // Phase 1: the minimum-distance deviation inequality on fresh blocks:
    // d_V(P_theta, P_theta_hat) <= 2 Delta_theta(Z) + 3/(2n).
    let start = Instant::now();
    let trials: Vec<(u32, f64, f64)> = (0..plan.trials)
        .into_par_iter()
        .map(|t| -> uvq::Result<(u32, f64, f64)> {
            let label = StreamKey::root(cfg.seed)
                .tagged("bounds-audit")
                .bytes(&(n as u64).to_le_bytes())
                .indexed(t as u64)
                .label();
            let z = family.sample_block(theta, n, label)?;
            let cell = first_stage_encode(family, &z, &grid, &cfg.net, &table)?;
            let dev = deviations(family, &z, &cfg.net, &table)?;
            Ok((cell, dev.min_delta(), dev.deltas()[theta_index]))
        })
        .collect::<uvq::Result<Vec<_>>>()?;
    let distinct: BTreeSet<u32> = trials.iter().map(|r| r.0).collect();
    let mut cell_distance: BTreeMap<u32, f64> = BTreeMap::new();
    for &cell in &distinct {
        let report = variational_distance(family, theta, grid.representative(cell)?)?;
        cell_distance.insert(cell, report.value);
    }
    let slack_term = 1.5 / n as f64;
    let mindist_violations = trials
        .iter()
        .filter(|(cell, _, delta_true)| {
            cell_distance[cell] > 2.0 * delta_true + slack_term + 1e-6
        })
        .count();
    let min_deltas: Vec<f64> = trials.iter().map(|r| r.1).collect();
    let (delta_mean, delta_stderr, _) = summarize(&min_deltas);
    let wall1 = start.elapsed().as_millis() as u64;
    push(&mut records, "Δ mean", delta_mean, delta_stderr, plan.trials as u64, wall1);
    push(&mut records, "mindist violations", mindist_violations as f64, None, plan.trials as u64, wall1);

    // Phase 2: random parameter pairs for the codebook-mismatch bound.
    let start = Instant::now();
    let mut rng = StreamKey::root(cfg.seed).tagged("audit-pairs").rng();
    let pairs: Vec<(ParameterVector, ParameterVector)> = (0..plan.pairs)
        .map(|_| (draw_theta(family.theta_space(), &mut rng), draw_theta(family.theta_space(), &mut rng)))
        .collect();
    let mut mismatch_violations = 0usize;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let seed = StreamKey::root(cfg.seed)
            .tagged("audit-mismatch")
            .indexed(i as u64)
            .label();
        let report = mismatch_gap(
            family,
            a,
            b,
            n,
            cfg.rate,
            &cfg.distortion,
            &cfg.design,
            plan.trials,
            seed,
        )?;
        if report.gap > report.bound + 3.0 * report.gap_stderr.unwrap_or(0.0) + 1e-12 {
            mismatch_violations += 1;
        }
    }
    let wall2 = start.elapsed().as_millis() as u64;
    push(&mut records, "mismatch violations", mismatch_violations as f64, None, plan.pairs as u64, wall2);

    // Phase 3: distance and divergence inequalities on the same pairs.
    let start = Instant::now();
    let sup_norm = match family.kind() {
        FamilyKind::Exponential => Some(sup_norm_ratio(family)?),
        FamilyKind::Mixture => None,
    };
    let mut pinsker_violations = 0usize;
    let mut lipschitz_violations = 0usize;
    let mut divergence_violations = 0usize;
    let degenerate_slack = match family.kind() {
        FamilyKind::Mixture => {
            // Relative-entropy checks require a shared-support exponential family;
            // mixtures are audited against the distance Lipschitz bound instead.
            for (a, b) in &pairs {
                let distance = variational_distance(family, a, b)?;
                let bound = family.mixture_lipschitz_bound(a, b)?;
                if distance.value > bound + distance.error_estimate + 1e-8 {
                    lipschitz_violations += 1;
                }
            }
            let distance = variational_distance(family, theta, theta)?;
            family.mixture_lipschitz_bound(theta, theta)? - distance.value
        }
        FamilyKind::Exponential => {
            let ratio = sup_norm.as_ref().expect("computed for exponential families");
            for (a, b) in &pairs {
                let report = pinsker_check(family, a, b)?;
                if !report.holds {
                    pinsker_violations += 1;
                }
                let log_ratio = log_ratio_sup(family, a, b)?;
                let bound = divergence_growth_bound(family, a, b, ratio.value, log_ratio)?;
                if report.divergence.value > bound + report.divergence.error_estimate + 1e-9 {
                    divergence_violations += 1;
                }
            }
            pinsker_check(family, theta, theta)?.slack
        }
    };
    let wall3 = start.elapsed().as_millis() as u64;
    match family.kind() {
        FamilyKind::Mixture => {
            push(&mut records, "lipschitz violations", lipschitz_violations as f64, None, plan.pairs as u64, wall3);
        }
        FamilyKind::Exponential => {
            push(&mut records, "pinsker violations", pinsker_violations as f64, None, plan.pairs as u64, wall3);
            push(&mut records, "divergence violations", divergence_violations as f64, None, plan.pairs as u64, wall3);
        }
    }
    push(&mut records, "degenerate slack", degenerate_slack, None, 1, wall3);

    // Phase 4: measured family constants over the parameter net.
    let start = Instant::now();
    match family.kind() {
        FamilyKind::Mixture => {
            let diameter = {
                let (lo, hi) = family.theta_space().bounding_box();
                lo.iter()
                    .zip(&hi)
                    .map(|(l, h)| (h - l) * (h - l))
                    .sum::<f64>()
                    .sqrt()
                    + 1.0
            };
            let lipschitz = measured_distance_lipschitz(
                family,
                cfg.net.points(),
                diameter,
                &QuadConfig::default(),
            )?;
            let wall4 = start.elapsed().as_millis() as u64;
            push(
                &mut records,
                "beta-prime measured",
                lipschitz.max_ratio,
                None,
                lipschitz.pairs_used as u64,
                wall4,
            );
        }
        FamilyKind::Exponential => {
            let ratio = sup_norm.as_ref().expect("computed for exponential families");
            let log_ratio = pairwise_log_ratio_sup(family, cfg.net.points())?;
            let wall4 = start.elapsed().as_millis() as u64;
            push(&mut records, "sup-norm ratio", ratio.value, None, 1, wall4);
            push(
                &mut records,
                "log-ratio bound",
                log_ratio,
                None,
                cfg.net.len() as u64,
                wall4,
            );
        }
    }

    let total_violations =
        mindist_violations + mismatch_violations + pinsker_violations + lipschitz_violations
            + divergence_violations;
    summary.push(format!("mindist violations = {mindist_violations} / {} trials", plan.trials));
    summary.push(format!("mismatch violations = {mismatch_violations} / {} pairs", plan.pairs));
    match family.kind() {
        FamilyKind::Mixture => {
            summary.push(format!("lipschitz violations = {lipschitz_violations} / {} pairs", plan.pairs));
        }
        FamilyKind::Exponential => {
            summary.push(format!("pinsker violations = {pinsker_violations} / {} pairs", plan.pairs));
            summary.push(format!("divergence violations = {divergence_violations} / {} pairs", plan.pairs));
        }
    }
    summary.push(format!("degenerate pair slack = {degenerate_slack:.3e}"));
    summary.push(format!("total violations = {total_violations}"));

    let mut notes = vec![
        note("block-len", n),
        note("trials", plan.trials),
        note("pairs", plan.pairs),
        note("violations", total_violations),
        note("mindist-violations", mindist_violations),
        note("mismatch-violations", mismatch_violations),
    ];
    match family.kind() {
        FamilyKind::Mixture => notes.push(note("lipschitz-violations", lipschitz_violations)),
        FamilyKind::Exponential => {
            notes.push(note("pinsker-violations", pinsker_violations));
            notes.push(note("divergence-violations", divergence_violations));
        }
    }
    notes.push(note("degenerate-slack", format!("{degenerate_slack:.6e}")));
    for record in &records {
        match record.metric.as_str() {
            "beta-prime measured" => notes.push(note("beta-prime", record.value)),
            "sup-norm ratio" => notes.push(note("sup-norm-ratio", record.value)),
            "log-ratio bound" => notes.push(note("log-ratio-bound", record.value)),
            _ => {}
        }
    }
    Ok(ExperimentOutput { records, notes, summary })
}

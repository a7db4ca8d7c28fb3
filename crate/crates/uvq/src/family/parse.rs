//! Plain-text family descriptions.
//!
//! The format is line-oriented key/value text; `#` starts a comment and
//! blank lines are ignored. Keys:
//!
//! ```text
//! kind       mixture | exponential
//! dim        <d>
//! support    <lo> <hi>                      # once per axis, in order
//! component  <axis-shape> ...               # mixture: one line per component
//! carrier    <axis-shape> ...               # exponential: exactly one
//! statistic  pow <axis> <power>             # exponential: one per parameter
//! theta      <lo> <hi>                      # exponential: one per parameter
//! ```
//!
//! An axis shape is one of `uniform <lo> <hi>`, `triangular <lo> <mode>
//! <hi>`, `tgauss <mean> <std> <lo> <hi>`; a `component`/`carrier` line
//! concatenates one shape per data axis. Token-level problems are reported
//! with their 1-based line number; cross-line inconsistencies (missing
//! sections, count mismatches) are configuration errors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::quad::AxisBox;

use super::axis::{AxisDensity, ProductDensity};
use super::{SourceFamily, Statistic};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn take_f64(tokens: &mut std::slice::Iter<'_, &str>, line: usize, what: &str) -> Result<f64> {
    let token = tokens
        .next()
        .ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    token
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("{what}: `{token}` is not a number")))
}

fn take_usize(tokens: &mut std::slice::Iter<'_, &str>, line: usize, what: &str) -> Result<usize> {
    let token = tokens
        .next()
        .ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    token
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("{what}: `{token}` is not a non-negative integer")))
}

/// Parse one axis shape from the token stream.
fn take_axis(tokens: &mut std::slice::Iter<'_, &str>, line: usize) -> Result<AxisDensity> {
    let shape = tokens
        .next()
        .ok_or_else(|| parse_err(line, "missing axis shape"))?;
    let density = match *shape {
        "uniform" => {
            let lo = take_f64(tokens, line, "uniform lo")?;
            let hi = take_f64(tokens, line, "uniform hi")?;
            AxisDensity::uniform(lo, hi)
        }
        "triangular" => {
            let lo = take_f64(tokens, line, "triangular lo")?;
            let mode = take_f64(tokens, line, "triangular mode")?;
            let hi = take_f64(tokens, line, "triangular hi")?;
            AxisDensity::triangular(lo, mode, hi)
        }
        "tgauss" => {
            let mean = take_f64(tokens, line, "tgauss mean")?;
            let std = take_f64(tokens, line, "tgauss std")?;
            let lo = take_f64(tokens, line, "tgauss lo")?;
            let hi = take_f64(tokens, line, "tgauss hi")?;
            AxisDensity::truncated_gaussian(mean, std, lo, hi)
        }
        other => {
            return Err(parse_err(
                line,
                format!("unknown axis shape `{other}` (expected uniform, triangular, or tgauss)"),
            ))
        }
    };
    density.map_err(|e| parse_err(line, e.to_string()))
}

/// Parse a family from its text description.
pub fn parse_family_str(text: &str) -> Result<SourceFamily> {
    let mut kind: Option<(usize, String)> = None;
    let mut dim: Option<usize> = None;
    let mut support_rows: Vec<(f64, f64)> = Vec::new();
    let mut component_rows: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut carrier_row: Option<(usize, Vec<&str>)> = None;
    let mut statistics: Vec<Statistic> = Vec::new();
    let mut theta_rows: Vec<(f64, f64)> = Vec::new();

    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let mut rest = tokens[1..].iter();
        match tokens[0] {
            "kind" => {
                if kind.is_some() {
                    return Err(parse_err(line, "duplicate `kind`"));
                }
                let value = rest
                    .next()
                    .ok_or_else(|| parse_err(line, "missing kind value"))?;
                if *value != "mixture" && *value != "exponential" {
                    return Err(parse_err(
                        line,
                        format!("unknown kind `{value}` (expected mixture or exponential)"),
                    ));
                }
                kind = Some((line, value.to_string()));
            }
            "dim" => {
                if dim.is_some() {
                    return Err(parse_err(line, "duplicate `dim`"));
                }
                let d = take_usize(&mut rest, line, "dimension")?;
                if d == 0 {
                    return Err(parse_err(line, "dimension must be positive"));
                }
                dim = Some(d);
            }
            "support" => {
                let lo = take_f64(&mut rest, line, "support lo")?;
                let hi = take_f64(&mut rest, line, "support hi")?;
                support_rows.push((lo, hi));
            }
            "component" => component_rows.push((line, tokens[1..].to_vec())),
            "carrier" => {
                if carrier_row.is_some() {
                    return Err(parse_err(line, "duplicate `carrier`"));
                }
                carrier_row = Some((line, tokens[1..].to_vec()));
            }
            "statistic" => {
                let form = rest
                    .next()
                    .ok_or_else(|| parse_err(line, "missing statistic form"))?;
                if *form != "pow" {
                    return Err(parse_err(
                        line,
                        format!("unknown statistic form `{form}` (expected pow)"),
                    ));
                }
                let axis = take_usize(&mut rest, line, "statistic axis")?;
                let power = take_usize(&mut rest, line, "statistic power")?;
                let stat = Statistic::monomial(axis, power as u32)
                    .map_err(|e| parse_err(line, e.to_string()))?;
                statistics.push(stat);
            }
            "theta" => {
                let lo = take_f64(&mut rest, line, "theta lo")?;
                let hi = take_f64(&mut rest, line, "theta hi")?;
                theta_rows.push((lo, hi));
            }
            other => return Err(parse_err(line, format!("unknown key `{other}`"))),
        }
        if tokens[0] != "component" && tokens[0] != "carrier" {
            if let Some(extra) = rest.next() {
                return Err(parse_err(line, format!("unexpected trailing token `{extra}`")));
            }
        }
    }

    let (_, kind) = kind.ok_or_else(|| Error::Config("family file: missing `kind`".into()))?;
    let d = dim.ok_or_else(|| Error::Config("family file: missing `dim`".into()))?;
    if support_rows.len() != d {
        return Err(Error::Config(format!(
            "family file: {} support rows for dimension {d}",
            support_rows.len()
        )));
    }
    let support = AxisBox::new(
        support_rows.iter().map(|r| r.0).collect(),
        support_rows.iter().map(|r| r.1).collect(),
    )?;

    let parse_product = |line: usize, tokens: &[&str]| -> Result<ProductDensity> {
        let mut iter = tokens.iter();
        let mut axes = Vec::with_capacity(d);
        for _ in 0..d {
            axes.push(take_axis(&mut iter, line)?);
        }
        if let Some(extra) = iter.next() {
            return Err(parse_err(
                line,
                format!("unexpected trailing token `{extra}` after {d} axis shapes"),
            ));
        }
        ProductDensity::new(axes)
    };

    match kind.as_str() {
        "mixture" => {
            if carrier_row.is_some() || !statistics.is_empty() || !theta_rows.is_empty() {
                return Err(Error::Config(
                    "family file: carrier/statistic/theta rows are exponential-only".into(),
                ));
            }
            let components = component_rows
                .iter()
                .map(|(line, tokens)| parse_product(*line, tokens))
                .collect::<Result<Vec<_>>>()?;
            if components.len() < 2 {
                return Err(Error::Config(format!(
                    "family file: a mixture needs at least two components, found {}",
                    components.len()
                )));
            }
            SourceFamily::mixture(support, components)
        }
        "exponential" => {
            if !component_rows.is_empty() {
                return Err(Error::Config(
                    "family file: component rows are mixture-only".into(),
                ));
            }
            let (line, tokens) =
                carrier_row.ok_or_else(|| Error::Config("family file: missing `carrier`".into()))?;
            let carrier = parse_product(line, &tokens)?;
            if statistics.is_empty() {
                return Err(Error::Config("family file: missing `statistic` rows".into()));
            }
            if theta_rows.len() != statistics.len() {
                return Err(Error::Config(format!(
                    "family file: {} theta rows for {} statistics",
                    theta_rows.len(),
                    statistics.len()
                )));
            }
            SourceFamily::exponential(
                support,
                carrier,
                statistics,
                theta_rows.iter().map(|r| r.0).collect(),
                theta_rows.iter().map(|r| r.1).collect(),
            )
        }
        _ => unreachable!("kind validated at parse time"),
    }
}

/// Load a family description from a file.
pub fn load_family(path: &Path) -> Result<SourceFamily> {
    let text = std::fs::read_to_string(path)?;
    parse_family_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::FamilyKind;

    const HALVES: &str = "\
# two uniform halves on [0, 1]
kind mixture
dim 1
support 0 1
component uniform 0 0.5
component uniform 0.5 1
";

    const EXPFAM: &str = "\
kind exponential
dim 1
support 0 1
carrier uniform 0 1
statistic pow 0 1
theta -2 2
";

    #[test]
    fn round_trips_a_mixture() {
        let family = parse_family_str(HALVES).unwrap();
        assert_eq!(family.kind(), FamilyKind::Mixture);
        assert_eq!(family.param_dim(), 2);
        assert_eq!(family.data_dim(), 1);
    }

    #[test]
    fn round_trips_an_exponential_family() {
        let family = parse_family_str(EXPFAM).unwrap();
        assert_eq!(family.kind(), FamilyKind::Exponential);
        assert_eq!(family.param_dim(), 1);
    }

    #[test]
    fn parses_multi_axis_components() {
        let text = "\
kind mixture
dim 2
support 0 1
support -1 1
component uniform 0 0.5 triangular -1 0 1
component uniform 0.5 1 tgauss 0 0.5 -1 1
";
        let family = parse_family_str(text).unwrap();
        assert_eq!(family.data_dim(), 2);
    }

    #[test]
    fn errors_cite_line_numbers() {
        let bad = "kind mixture\ndim 1\nsupport 0 1\ncomponent uniform 0 zebra\ncomponent uniform 0.5 1\n";
        match parse_family_str(bad) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("zebra"), "message: {message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
        let unknown = "kind mixture\nfrobnicate 3\n";
        match parse_family_str(unknown) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn structural_problems_are_config_errors() {
        assert!(matches!(
            parse_family_str("dim 1\nsupport 0 1\n"),
            Err(Error::Config(_))
        ));
        // Theta row count must match the statistic count.
        let mismatched = "\
kind exponential
dim 1
support 0 1
carrier uniform 0 1
statistic pow 0 1
statistic pow 0 2
theta -1 1
";
        assert!(matches!(parse_family_str(mismatched), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_and_trailing_tokens_are_rejected() {
        assert!(matches!(
            parse_family_str("kind mixture\nkind mixture\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_family_str("kind mixture\ndim 1 7\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let noisy = format!("\n# leading comment\n{HALVES}\n# trailing\n");
        assert!(parse_family_str(&noisy).is_ok());
    }
}

//! Quick invariant suite, plus schema and digest checks over an output
//! directory when one is given.

use std::path::Path;

use sdsim_core::{
    build_hierarchy, classify_response, hexfloat, init_network, make_dataset, mode_spectrum,
    per_level_error, truncated_svd_oracle, weighted_sse, Activation, DMatrix, DVector,
    NetworkConfig, Thresholds, TreeSpec,
};

use crate::io::{field, sha256_hex, Table};
use crate::plotdata::PlotKind;
use crate::report::{RunManifest, RESPONSES_HEADER, SUMMARY_TABLES, TRAJECTORY_HEADER};
use crate::runner::{STEPS_HEADER, YHAT_HEADER};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

fn check(name: &str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name: name.into(),
            ok: true,
            detail,
        },
        Err(detail) => Check {
            name: name.into(),
            ok: false,
            detail,
        },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn anchors() -> Result<String, String> {
    let ds = make_dataset(&build_hierarchy(&TreeSpec::default()).map_err(|e| e.to_string())?);
    let zero = DMatrix::zeros(ds.features(), ds.items());
    for e in per_level_error(&zero, &ds) {
        ensure(e.percent == 100.0, || {
            format!("zero output gives {}% at level {}", e.percent, e.level)
        })?;
    }
    for e in per_level_error(&ds.y, &ds) {
        ensure(e.percent == 0.0, || {
            format!("exact output gives {}% at level {}", e.percent, e.level)
        })?;
    }
    Ok("zero output is 100%, exact output is 0% at every level".into())
}

fn spectrum() -> Result<String, String> {
    let ds = make_dataset(&build_hierarchy(&TreeSpec::default()).map_err(|e| e.to_string())?);
    let spec = mode_spectrum(&ds);
    ensure(spec.rank(1e-9) == ds.items(), || {
        format!("rank {}", spec.rank(1e-9))
    })?;
    let mut prev = f64::INFINITY;
    for r in 0..=ds.items() {
        let sse = weighted_sse(
            &truncated_svd_oracle(&ds, r).map_err(|e| e.to_string())?,
            &ds,
        );
        ensure(sse <= prev + 1e-9, || {
            format!("oracle error rises at rank {r}")
        })?;
        prev = sse;
    }
    ensure(prev < 1e-18, || format!("full-rank oracle leaves {prev}"))?;
    Ok(format!(
        "{} modes, oracle error non-increasing in rank",
        spec.rank(1e-9)
    ))
}

/// Central differences on random small instances, away from ReLU kinks.
fn gradients() -> Result<String, String> {
    let ds = make_dataset(
        &build_hierarchy(&TreeSpec {
            branching: 2,
            depth: 3,
            seed: 0,
        })
        .map_err(|e| e.to_string())?,
    );
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for activation in [Activation::Linear, Activation::Relu] {
        for seed in 0..10 {
            let cfg = NetworkConfig {
                hidden: 5,
                init_scale: 0.5,
                activation,
                seed,
                ..Default::default()
            };
            let net = init_network(&cfg, ds.inputs(), ds.features()).map_err(|e| e.to_string())?;
            let pre = &net.w1 * &ds.x;
            if activation == Activation::Relu && pre.iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
            let g = net.gradients(&ds).map_err(|e| e.to_string())?;
            let loss_at = |n: &sdsim_core::NetworkState| n.loss(&ds).unwrap();
            for (which, analytic) in [(0, &g.w1), (1, &g.w2)] {
                for idx in 0..analytic.len() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    let (p, m) = if which == 0 {
                        (&mut plus.w1, &mut minus.w1)
                    } else {
                        (&mut plus.w2, &mut minus.w2)
                    };
                    p[idx] += h;
                    m[idx] -= h;
                    let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                    let a = analytic[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
            checked += 1;
        }
    }
    ensure(checked > 0, || "no instance away from ReLU kinks".into())?;
    ensure(worst <= 1e-5, || {
        format!("relative gradient error {worst:e}")
    })?;
    Ok(format!(
        "{checked} instances, worst relative error {worst:.1e}"
    ))
}

fn taxonomy_totality() -> Result<String, String> {
    let ds = make_dataset(&build_hierarchy(&TreeSpec::default()).map_err(|e| e.to_string())?);
    let thresholds = Thresholds::default();
    // Deterministic pseudo-random responses in [-1, 2).
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 3.0 - 1.0
    };
    let n = 2000;
    for i in 0..n {
        let resp = DVector::from_fn(ds.features(), |_, _| next());
        classify_response(&resp, i % ds.items(), &ds, &thresholds).map_err(|e| e.to_string())?;
    }
    Ok(format!("{n} random responses each got one class"))
}

fn hexfloats() -> Result<String, String> {
    let values = [
        0.0,
        -0.0,
        1.0,
        0.1,
        -3.5e-300,
        f64::MIN_POSITIVE / 8.0,
        f64::MAX,
        1e-8,
    ];
    for v in values {
        let back = hexfloat::parse(&hexfloat::format(v));
        ensure(back.map(f64::to_bits) == Some(v.to_bits()), || {
            format!("{v:e} does not round-trip")
        })?;
    }
    Ok(format!("{} values round-trip bit-exactly", values.len()))
}

pub fn invariant_checks() -> Vec<Check> {
    vec![
        check("naive anchors", anchors()),
        check("spectrum and oracle", spectrum()),
        check("gradients", gradients()),
        check("taxonomy totality", taxonomy_totality()),
        check("checkpoint floats", hexfloats()),
    ]
}

/// Types each column of a table so malformed numbers are caught.
fn typed(table: &Table, kinds: &[char]) -> Result<(), CliError> {
    for row in &table.rows {
        for (c, k) in kinds.iter().enumerate() {
            let ok = match k {
                'u' => field::<u64>(row, c, "integer").is_ok(),
                'f' => field::<f64>(row, c, "number").is_ok(),
                // Optional: empty or the given type.
                'U' => row[c].is_empty() || field::<u64>(row, c, "integer").is_ok(),
                'F' => row[c].is_empty() || field::<f64>(row, c, "number").is_ok(),
                'b' => matches!(row[c].as_str(), "true" | "false" | ""),
                'c' => row[c].parse::<sdsim_core::TaxonomyClass>().is_ok(),
                _ => !row[c].is_empty(),
            };
            if !ok {
                return Err(CliError::Data(format!(
                    "column {} has bad value `{}` in row `{}`",
                    c + 1,
                    row[c],
                    row.join(",")
                )));
            }
        }
    }
    Ok(())
}

fn column_kinds(path: &str) -> Option<(&'static [&'static str], &'static str)> {
    let table: &[(&str, &[&str], &str)] = &[
        ("runs.csv", &crate::report::RUNS_HEADER, "sssusuUFb"),
        (
            "level_errors.csv",
            &crate::report::LEVEL_ERRORS_HEADER,
            "suuf",
        ),
        ("taxonomy.csv", &crate::report::TAXONOMY_HEADER, "suucUfF"),
        ("spectrum.csv", &crate::report::SPECTRUM_HEADER, "ufu"),
        ("table1.csv", &crate::report::TABLE1_HEADER, "ssusffFFFFu"),
        ("onsets.csv", &crate::report::ONSETS_HEADER, "sssucU"),
        ("rates.csv", &crate::report::RATES_HEADER, "sssusuuF"),
        ("figure1.csv", &crate::report::FIGURE1_HEADER, "ssuuuuUc"),
    ];
    for (name, header, kinds) in table {
        if path == *name {
            return Some((header, kinds));
        }
    }
    let file = path.rsplit('/').next().unwrap_or(path);
    if file.starts_with("steps_") {
        Some((&STEPS_HEADER, "uu_ff"))
    } else if file.starts_with("yhat_") {
        Some((&YHAT_HEADER, "uuuf"))
    } else if file.starts_with("trajectory_") {
        Some((&TRAJECTORY_HEADER, "uuufff"))
    } else if file.starts_with("responses_") {
        Some((&RESPONSES_HEADER, "uuUc"))
    } else {
        None
    }
}

/// Verifies digests and re-parses every CSV listed in the manifest, plus
/// any plot tables present.
pub fn output_checks(out: &Path) -> Vec<Check> {
    let manifest = match RunManifest::load(out) {
        Ok(m) => m,
        Err(e) => return vec![check("manifest", Err(e.to_string()))],
    };
    let mut checks = vec![check(
        "manifest",
        if manifest.is_complete() {
            Ok(format!("{} runs complete", manifest.runs.len()))
        } else {
            Err(format!("{} runs not complete", manifest.failures().len()))
        },
    )];

    let digests = (|| {
        for f in &manifest.files {
            let path = out.join(&f.path);
            let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", f.path))?;
            ensure(sha256_hex(&bytes) == f.sha256, || {
                format!("{} digest mismatch", f.path)
            })?;
        }
        Ok(format!(
            "{} files match their digests",
            manifest.files.len()
        ))
    })();
    checks.push(check("digests", digests));

    let schemas = (|| {
        let mut parsed = 0;
        for f in &manifest.files {
            let (header, kinds) =
                column_kinds(&f.path).ok_or_else(|| format!("{} has no known schema", f.path))?;
            let kinds: Vec<char> = kinds.chars().collect();
            let table = Table::read(&out.join(&f.path), header).map_err(|e| e.to_string())?;
            typed(&table, &kinds).map_err(|e| format!("{}: {e}", f.path))?;
            parsed += 1;
        }
        for (name, _) in SUMMARY_TABLES {
            ensure(manifest.files.iter().any(|f| f.path == name), || {
                format!("{name} missing from manifest")
            })?;
        }
        for kind in PlotKind::ALL {
            let path = out.join(kind.file());
            if path.exists() {
                let kinds: &str = match kind {
                    PlotKind::LevelCurves => "ssuuuuf",
                    PlotKind::TaxonomyTimeline => "ssuuuUc",
                    PlotKind::Spectrum => "sufu",
                };
                let table = Table::read(&path, kind.header()).map_err(|e| e.to_string())?;
                let kinds: Vec<char> = kinds.chars().collect();
                typed(&table, &kinds).map_err(|e| format!("{}: {e}", path.display()))?;
                parsed += 1;
            }
        }
        Ok(format!("{parsed} tables parse against their schemas"))
    })();
    checks.push(check("schemas", schemas));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariant_suite_passes() {
        for c in invariant_checks() {
            assert!(c.ok, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn missing_manifest_fails() {
        let checks = output_checks(Path::new("/nonexistent/sdsim"));
        assert!(!checks[0].ok);
    }
}

//! File formats.
//!
//! Every file starts with `# config_hash=<hex> seed=<u64>`. Tables are CSV
//! with a header row. Floats are written in shortest round-trip form so that
//! identical results give byte-identical files.
//!
//! * coefficient trees: `# family=<name> d=<d> max_level=<L> [s=<S>]`, then
//!   one `level index value` line per coefficient,
//! * grid functions: `x,value` or `x1,x2,value` at cell midpoints; densities
//!   add `# normalizer=<Z>`,
//! * data: one observation per line, `d` whitespace-separated coordinates.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use besov_core::metrics::RateFit;
use besov_core::posterior::ChainSummary;
use besov_core::{CoefficientTree, Dataset, DensityOnGrid, Family, GridFunction};

use crate::diagnostics::PriorDiagnostics;
use crate::study::StudyResult;
use crate::Error;

/// Config hash and seed echoed at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_tree(prov: &Provenance, family: Family, tree: &CoefficientTree, s: Option<f64>) -> String {
    let mut out = prov.header();
    write!(out, "# family={} d={} max_level={}", family.name(), tree.dimension(), tree.max_level()).unwrap();
    if let Some(s) = s {
        write!(out, " s={s}").unwrap();
    }
    out.push('\n');
    for (l, r, c) in tree.iter() {
        writeln!(out, "{l} {r} {c}").unwrap();
    }
    out
}

pub fn write_tree(path: &Path, prov: &Provenance, family: Family, tree: &CoefficientTree, s: Option<f64>) -> Result<(), Error> {
    write_file(path, &format_tree(prov, family, tree, s))
}

/// A tree read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeFile {
    pub family: Option<Family>,
    pub tree: CoefficientTree,
    pub s: Option<f64>,
}

pub fn parse_tree(text: &str) -> Result<TreeFile, Error> {
    let mut family = None;
    let mut dimension = None;
    let mut max_level = None;
    let mut s = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for field in meta.split_whitespace() {
                match field.split_once('=') {
                    Some(("family", v)) => {
                        family = Some(Family::parse(v).ok_or_else(|| Error::Input(format!("line {}: unknown family `{v}`", i + 1)))?)
                    }
                    Some(("d", v)) => dimension = v.parse::<u32>().ok(),
                    Some(("max_level", v)) => max_level = v.parse::<u32>().ok(),
                    Some(("s", v)) => s = v.parse::<f64>().ok(),
                    _ => {}
                }
            }
            continue;
        }
        let bad = || Error::Input(format!("line {}: expected `level index value`, got `{line}`", i + 1));
        let mut parts = line.split_whitespace();
        let l: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let r: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let c: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        entries.push((i + 1, l, r, c));
    }
    let dimension = dimension.unwrap_or(1);
    let top = max_level.unwrap_or_else(|| entries.iter().map(|e| e.1).max().unwrap_or(0));
    let mut tree = CoefficientTree::with_max_level(dimension, top);
    for (line, l, r, c) in entries {
        tree.insert(l, r, c)
            .map_err(|e| Error::Input(format!("line {line}: {e}")))?;
    }
    Ok(TreeFile { family, tree, s })
}

pub fn read_tree(path: &Path) -> Result<TreeFile, Error> {
    parse_tree(&read_file(path)?)
}

pub fn format_grid(prov: &Provenance, f: &GridFunction, normalizer: Option<f64>) -> String {
    let mut out = prov.header();
    if let Some(z) = normalizer {
        writeln!(out, "# normalizer={z}").unwrap();
    }
    let d = f.dimension();
    out.push_str(if d == 1 { "x,value\n" } else { "x1,x2,value\n" });
    for (m, v) in f.values().iter().enumerate() {
        let x = f.midpoint(m);
        if d == 1 {
            writeln!(out, "{},{v}", x[0]).unwrap();
        } else {
            writeln!(out, "{},{},{v}", x[0], x[1]).unwrap();
        }
    }
    out
}

pub fn write_grid(path: &Path, prov: &Provenance, f: &GridFunction) -> Result<(), Error> {
    write_file(path, &format_grid(prov, f, None))
}

pub fn write_density(path: &Path, prov: &Provenance, p: &DensityOnGrid) -> Result<(), Error> {
    write_file(path, &format_grid(prov, p.grid(), Some(p.normalizer())))
}

pub fn format_chain(prov: &Provenance, summary: &ChainSummary) -> String {
    let mut out = prov.header();
    out.push_str("iter,S,logpost,tv\n");
    for s in &summary.samples {
        writeln!(out, "{},{},{},{}", s.iteration, opt(s.s), s.log_posterior, opt(s.tv_to_reference)).unwrap();
    }
    out
}

pub fn format_acceptance(prov: &Provenance, summary: &ChainSummary) -> String {
    let mut out = prov.header();
    out.push_str("level,proposed,accepted,rate,scale\n");
    for a in &summary.acceptance {
        writeln!(out, "{},{},{},{},{}", a.level, a.proposed, a.accepted, opt(a.rate()), a.scale).unwrap();
    }
    if let Some(rate) = summary.s_acceptance {
        writeln!(out, "S,,,{rate},").unwrap();
    }
    out
}

/// Kept coefficient vectors, one row per sample.
pub fn format_coefficient_samples(prov: &Provenance, summary: &ChainSummary) -> String {
    let mut out = prov.header();
    let width = summary.coefficient_samples.first().map_or(0, Vec::len);
    let names: Vec<String> = (0..width).map(|g| format!("c{g}")).collect();
    writeln!(out, "iter,{}", names.join(",")).unwrap();
    for (sample, coef) in summary.samples.iter().zip(&summary.coefficient_samples) {
        let row: Vec<String> = coef.iter().map(f64::to_string).collect();
        writeln!(out, "{},{}", sample.iteration, row.join(",")).unwrap();
    }
    out
}

pub fn format_rate_fit(prov: &Provenance, fit: &RateFit) -> String {
    format!(
        "{}slope,intercept,residual,n_points\n{},{},{},{}\n",
        prov.header(),
        fit.slope,
        fit.intercept,
        fit.residual,
        fit.n_points()
    )
}

/// Per-replicate records without wall times, which live in `timing.csv`.
pub fn format_records(prov: &Provenance, result: &StudyResult) -> String {
    let mut out = prov.header();
    out.push_str("n,replicate,seed,error,median_tv,mean_density_tv,acceptance,s_acceptance,posterior_median_s,divergent,kept\n");
    for r in &result.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.replicate,
            r.seed,
            r.error,
            r.median_tv,
            r.mean_density_tv,
            r.acceptance,
            opt(r.s_acceptance),
            opt(r.posterior_median_s),
            r.divergent,
            r.kept
        )
        .unwrap();
    }
    out
}

pub fn format_medians(prov: &Provenance, result: &StudyResult) -> String {
    let mut out = prov.header();
    out.push_str("n,median_error,used,excluded\n");
    for s in &result.summaries {
        writeln!(out, "{},{},{},{}", s.n, s.median_error, s.used, s.excluded).unwrap();
    }
    out
}

pub fn format_timing(prov: &Provenance, result: &StudyResult) -> String {
    let mut out = prov.header();
    out.push_str("n,replicate,wall_seconds\n");
    for r in &result.records {
        writeln!(out, "{},{},{}", r.n, r.replicate, r.wall_seconds).unwrap();
    }
    out
}

/// Config echo plus summary counts.
pub fn format_metadata(prov: &Provenance, config_toml: &str, result: &StudyResult) -> String {
    let mut out = prov.header();
    writeln!(out, "config_hash = \"{}\"", prov.config_hash).unwrap();
    writeln!(out, "seed = {}", prov.seed).unwrap();
    writeln!(out, "replicates_excluded = {}", result.excluded).unwrap();
    writeln!(out, "monotone_pairs = {}", result.monotone_pairs).unwrap();
    writeln!(out, "adjacent_pairs = {}", result.summaries.len().saturating_sub(1)).unwrap();
    out.push_str("\n[config]\n");
    // the config is nested under [config] by prefixing its table headers
    for line in config_toml.lines() {
        match line.strip_prefix('[') {
            Some(rest) if !line.starts_with("[[") => writeln!(out, "[config.{rest}").unwrap(),
            _ => writeln!(out, "{line}").unwrap(),
        }
    }
    out
}

/// Writes `records.csv`, `medians.csv`, `ratefit.csv`, `timing.csv` and
/// `metadata.toml`; returns the paths written.
pub fn write_study(dir: &Path, prov: &Provenance, config_toml: &str, result: &StudyResult) -> Result<Vec<PathBuf>, Error> {
    ensure_dir(dir)?;
    let files = [
        ("records.csv", format_records(prov, result)),
        ("medians.csv", format_medians(prov, result)),
        ("ratefit.csv", format_rate_fit(prov, &result.fit)),
        ("timing.csv", format_timing(prov, result)),
        ("metadata.toml", format_metadata(prov, config_toml, result)),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `tail.csv`, `small_ball.csv`, `small_ball_fit.csv` and `decentering.csv`.
pub fn write_diagnostics(dir: &Path, prov: &Provenance, diag: &PriorDiagnostics) -> Result<Vec<PathBuf>, Error> {
    ensure_dir(dir)?;
    let mut tail = prov.header();
    tail.push_str("R,p_exceed,se\n");
    for r in &diag.tail {
        writeln!(tail, "{},{},{}", r.radius, r.probability, r.standard_error).unwrap();
    }
    let mut ball = prov.header();
    ball.push_str("xi,p_ball,se\n");
    for r in &diag.small_ball {
        writeln!(ball, "{},{},{}", r.radius, r.probability, r.standard_error).unwrap();
    }
    let mut dec = prov.header();
    dec.push_str("shift,z_norm,xi,p_shifted,p_centred,bound,pooled_se,holds\n");
    for r in &diag.decentering {
        writeln!(
            dec,
            "{},{},{},{},{},{},{},{}",
            r.shift, r.z_norm, r.xi, r.shifted, r.centred, r.bound, r.pooled_se, r.holds
        )
        .unwrap();
    }
    let files = [
        ("tail.csv", tail),
        ("small_ball.csv", ball),
        ("small_ball_fit.csv", format_rate_fit(prov, &diag.small_ball_fit)),
        ("decentering.csv", dec),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    write_file(path, text)
}

/// Parses observations; blank lines and `#` comments are skipped. Points
/// outside `[0,1]^d` are rejected with a count.
pub fn parse_data(text: &str, dimension: u32) -> Result<Dataset, Error> {
    let d = dimension as usize;
    let mut points = Vec::new();
    let mut outside = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Input(format!("line {}: cannot parse `{line}`", i + 1)))?;
        if coords.len() != d {
            return Err(Error::Input(format!(
                "line {}: expected {d} coordinates, found {}",
                i + 1,
                coords.len()
            )));
        }
        if coords.iter().any(|x| !(0.0..=1.0).contains(x)) {
            outside.push(i + 1);
            continue;
        }
        let mut p = [0.0; 2];
        p[..d].copy_from_slice(&coords);
        points.push(p);
    }
    if !outside.is_empty() {
        let shown: Vec<String> = outside.iter().take(5).map(usize::to_string).collect();
        return Err(Error::Input(format!(
            "{} of {} points lie outside [0,1]^{d} (lines {}{})",
            outside.len(),
            outside.len() + points.len(),
            shown.join(", "),
            if outside.len() > 5 { ", ..." } else { "" }
        )));
    }
    if points.is_empty() {
        return Err(Error::Input("data file contains no observations".into()));
    }
    Ok(Dataset::new(points, dimension)?)
}

pub fn read_data(path: &Path, dimension: u32) -> Result<Dataset, Error> {
    parse_data(&read_file(path)?, dimension)
}

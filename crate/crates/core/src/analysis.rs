//! Statistics over [`RunRecord`]s: mean±std aggregates, normalization to
//! 100M instructions, least-squares trend lines and their crossovers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::harness::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no samples")]
    EmptyInput,
    #[error("instruction count must be positive")]
    BadCount,
    #[error("native time must be positive")]
    BadBaseline,
    #[error("fit needs at least two points with distinct x")]
    DegenerateInput,
}

/// Arithmetic mean and sample (n-1) standard deviation; std is 0 for n = 1.
pub fn mean_std(samples: &[f64]) -> Result<(f64, f64), AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Scales a duration to the time for 100M instructions.
pub fn normalize_per_100m(duration_s: f64, instr_count: u64) -> Result<f64, AnalysisError> {
    if instr_count == 0 {
        return Err(AnalysisError::BadCount);
    }
    Ok(duration_s * 1e8 / instr_count as f64)
}

pub fn overhead_ratio(measured_s: f64, native_s: f64) -> Result<f64, AnalysisError> {
    if native_s <= 0.0 || !native_s.is_finite() {
        return Err(AnalysisError::BadBaseline);
    }
    Ok(measured_s / native_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionFit {
    /// Seconds per (event per 100M instructions).
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

impl RegressionFit {
    pub fn value(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares on raw values.
pub fn linfit(points: &[(f64, f64)]) -> Result<RegressionFit, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::DegenerateInput);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::DegenerateInput);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(RegressionFit { slope, intercept, r2, n_points: points.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CuttingPoint {
    At(f64),
    Parallel,
}

/// Event frequency where the two trend lines meet.
pub fn cutting_point(a: &RegressionFit, b: &RegressionFit) -> CuttingPoint {
    let ds = a.slope - b.slope;
    if ds.abs() <= 1e-12 * a.slope.abs().max(b.slope.abs()).max(1.0) {
        return CuttingPoint::Parallel;
    }
    CuttingPoint::At((b.intercept - a.intercept) / ds)
}

/// Per-spec summary of successful runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub spec_id: String,
    pub technique: String,
    pub primitive: Option<String>,
    pub workload: String,
    pub n: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub mean_events: f64,
    pub truncated_any: bool,
    pub errors: usize,
    /// Events per 100M instructions (expected count when known).
    pub freq_per_100m: Option<f64>,
    pub norm_mean_s: Option<f64>,
    pub overhead: Option<f64>,
}

impl Aggregate {
    fn primitive_kind(&self) -> &str {
        self.primitive.as_deref().map_or("-", |p| p.split('(').next().unwrap_or(p))
    }
}

fn secs(ns: u64) -> f64 {
    ns as f64 * 1e-9
}

/// Aggregates in first-seen spec order. Specs whose every run failed are
/// kept with `n == 0` so reports can show them.
pub fn aggregates(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.spec_id).or_insert_with(|| {
            order.push(&r.spec_id);
            Vec::new()
        });
        groups.get_mut(r.spec_id.as_str()).expect("just inserted").push(r);
    }

    let mut native: BTreeMap<&str, f64> = BTreeMap::new();
    for (w, v) in records.iter().filter(|r| r.native && r.is_ok()).fold(BTreeMap::<&str, Vec<f64>>::new(), |mut m, r| {
        m.entry(&r.workload).or_default().push(secs(r.reference_ns()));
        m
    }) {
        native.insert(w, mean_std(&v).expect("non-empty").0);
    }

    order
        .into_iter()
        .map(|id| {
            let rs = &groups[id];
            let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.is_ok()).collect();
            let first = ok.first().copied().unwrap_or(&rs[0]);
            let times: Vec<f64> = ok.iter().map(|r| secs(r.reference_ns())).collect();
            let (mean_s, std_s) = mean_std(&times).unwrap_or((f64::NAN, f64::NAN));
            let mean_events = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| r.event_count as f64).sum::<f64>() / ok.len() as f64
            };
            let norm_mean_s = first.instr_count.and_then(|n| normalize_per_100m(mean_s, n).ok()).filter(|v| v.is_finite());
            let overhead = (!first.native)
                .then(|| native.get(first.workload.as_str()))
                .flatten()
                .and_then(|&nat| overhead_ratio(mean_s, nat).ok())
                .filter(|v| v.is_finite());
            Aggregate {
                spec_id: id.to_owned(),
                technique: first.technique.clone(),
                primitive: first.primitive.clone(),
                workload: first.workload.clone(),
                n: ok.len(),
                mean_s,
                std_s,
                mean_events,
                truncated_any: ok.iter().any(|r| r.truncated),
                errors: rs.len() - ok.len(),
                freq_per_100m: first.freq_per_100m(),
                norm_mean_s,
                overhead,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Fit each workload separately instead of pooling across workloads.
    pub per_pattern: bool,
    /// Keep specs with capped event counts in the fits.
    pub include_truncated: bool,
}

/// Key of one trend line: technique, primitive kind, and the workload when
/// fitting per pattern.
pub type FitKey = (String, String, Option<String>);

/// A trend line per key over normalized time vs event frequency. Native,
/// failed and (by default) truncated aggregates are left out.
pub fn fits(aggs: &[Aggregate], opts: FitOptions) -> BTreeMap<FitKey, RegressionFit> {
    let mut points: BTreeMap<FitKey, Vec<(f64, f64)>> = BTreeMap::new();
    for a in aggs {
        if a.n == 0 || a.technique == "native" || (a.truncated_any && !opts.include_truncated) {
            continue;
        }
        let (Some(x), Some(y)) = (a.freq_per_100m, a.norm_mean_s) else { continue };
        points.entry(fit_key(a, opts)).or_default().push((x, y));
    }
    points.into_iter().filter_map(|(k, p)| linfit(&p).ok().map(|f| (k, f))).collect()
}

fn fit_key(a: &Aggregate, opts: FitOptions) -> FitKey {
    (a.technique.clone(), a.primitive_kind().to_owned(), opts.per_pattern.then(|| a.workload.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    PlotCsv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "plotcsv" => Ok(ReportFormat::PlotCsv),
            _ => Err(format!("unknown report format `{s}` (table, csv, plotcsv)")),
        }
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(String::new, |v| format!("{v:.prec$}"))
}

pub fn emit_report(records: &[RunRecord], format: ReportFormat, opts: FitOptions) -> String {
    let aggs = aggregates(records);
    match format {
        ReportFormat::Table => table(&aggs, opts),
        ReportFormat::Csv => csv(&aggs),
        ReportFormat::PlotCsv => plot_csv(&aggs, opts),
    }
}

fn table(aggs: &[Aggregate], opts: FitOptions) -> String {
    let header = ["spec", "technique", "primitive", "n", "time_s", "events", "ev/100M", "overhead", "flags"];
    let rows: Vec<[String; 9]> = aggs
        .iter()
        .map(|a| {
            let mut flags = Vec::new();
            if a.truncated_any {
                flags.push("truncated".to_owned());
            }
            if a.errors > 0 {
                flags.push(format!("{} failed", a.errors));
            }
            [
                a.spec_id.clone(),
                a.technique.clone(),
                a.primitive.clone().unwrap_or_else(|| "-".into()),
                a.n.to_string(),
                if a.n == 0 { "-".into() } else { format!("{:.2}±{:.2}", a.mean_s, a.std_s) },
                if a.n == 0 { "-".into() } else { format!("{:.0}", a.mean_events) },
                opt(a.freq_per_100m, 1),
                a.overhead.map_or_else(String::new, |o| format!("{o:.2}x")),
                flags.join(", "),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (c, w) in cells.iter().zip(widths) {
            let _ = write!(s, "{c:<w$}  ");
        }
        s.trim_end().to_owned() + "\n"
    };
    let mut out = line(&header);
    for r in &rows {
        out += &line(&r.each_ref().map(String::as_str));
    }

    let fits = fits(aggs, opts);
    if !fits.is_empty() {
        out += "\ntrend lines (normalized s vs events/100M):\n";
        for ((tech, prim, workload), f) in &fits {
            let scope = workload.as_deref().map(|w| format!(" [{w}]")).unwrap_or_default();
            let _ = writeln!(
                out,
                "  {tech} {prim}{scope}: slope {:.3e} s, intercept {:.4} s, r2 {:.4}, n {}",
                f.slope, f.intercept, f.r2, f.n_points
            );
        }
    }
    out
}

fn csv(aggs: &[Aggregate]) -> String {
    let mut out =
        String::from("spec_id,technique,primitive,workload,n,mean_s,std_s,mean_events,freq_per_100m,norm_mean_s,overhead,truncated_any,errors\n");
    for a in aggs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&a.spec_id),
            csv_field(&a.technique),
            csv_field(a.primitive.as_deref().unwrap_or("")),
            csv_field(&a.workload),
            a.n,
            if a.n == 0 { String::new() } else { format!("{:.9}", a.mean_s) },
            if a.n == 0 { String::new() } else { format!("{:.9}", a.std_s) },
            if a.n == 0 { String::new() } else { format!("{}", a.mean_events) },
            opt(a.freq_per_100m, 3),
            opt(a.norm_mean_s, 9),
            opt(a.overhead, 4),
            a.truncated_any,
            a.errors,
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// One row per plotted aggregate; `r2_of_fit` is empty when the point's
/// series has no trend line.
fn plot_csv(aggs: &[Aggregate], opts: FitOptions) -> String {
    let fits = fits(aggs, opts);
    let mut out = String::from("technique,primitive,freq_per_100m,norm_time_s,r2_of_fit\n");
    for a in aggs {
        if a.n == 0 || a.technique == "native" {
            continue;
        }
        let (Some(x), Some(y)) = (a.freq_per_100m, a.norm_mean_s) else { continue };
        let r2 = fits.get(&fit_key(a, opts)).filter(|_| !a.truncated_any || opts.include_truncated).map(|f| f.r2);
        let _ = writeln!(out, "{},{},{x},{y:.9},{}", csv_field(&a.technique), csv_field(a.primitive_kind()), opt(r2, 6));
    }
    out
}

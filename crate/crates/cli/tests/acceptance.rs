//! End-to-end acceptance checks. Runs sequentially (timing criteria must not
//! share the machine with other tests) and prints one PASS/FAIL line each.

// `ensure!(a < b)` is written so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{rngs::StdRng, Rng, SeedableRng};
use trapbench::analysis::{aggregates, cutting_point, fits, linfit, mean_std, CuttingPoint, FitOptions, RegressionFit};
use trapbench::harness::{
    run_experiment, run_matrix, run_native, Caps, ExperimentConfig, ExperimentSpec, Reference, ResultStore, RunRecord,
    TechniqueSpec, WorkloadRef,
};
use trapbench::primitives::{build_plan, capability, Capability, PlanError, PlanOptions, PrimitiveKind, PrimitiveSpec, TechniqueKind};
use trapbench::trap::{arm_sw_breakpoint, drive_single_step, run_to, StepConfig, StepEnd};
use trapbench::workload::{k_for_frequency, write_workload, Pattern, WorkloadMetadata, WorkloadParams};
use trapbench::Launch;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Workload {
    _dir: tempfile::TempDir,
    exe: PathBuf,
    meta: WorkloadMetadata,
}

fn workload(k_exec: u64, k_mem: u64, total: u64, pattern: Pattern) -> Result<Workload, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (exe, meta) =
        write_workload(dir.path(), &WorkloadParams::new(k_exec, k_mem, total, pattern)).map_err(|e| e.to_string())?;
    Ok(Workload { _dir: dir, exe, meta })
}

fn spec(exe: &Path, technique: TechniqueSpec, prim: Option<(PrimitiveKind, Option<&str>)>) -> ExperimentSpec {
    ExperimentSpec {
        id: format!("{}:{}", technique.name(), prim.map_or("-", |p| p.0.as_str())),
        workload: WorkloadRef::new(exe),
        technique,
        primitive: prim.map(|(k, t)| PrimitiveSpec::new(k, t)),
        repetitions: None,
        hw_len: None,
        multi_slot: true,
    }
}

fn once(s: &ExperimentSpec, caps: &Caps) -> Result<RunRecord, String> {
    run_experiment(s, 0, caps, None).map_err(|e| format!("{}: {e}", s.id))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Check {
    if elapsed > Duration::from_secs(limit_s) {
        Err(format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    } else {
        Ok(String::new())
    }
}

/// 1. `capabilities` output equals the published support matrix, cell for cell.
fn capability_matrix() -> Check {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_trapbench")).arg("capabilities").output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "capabilities exited with {}", out.status);
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split_whitespace().collect();
    ensure!(header == ["Primitive", "DPI", "SW-bp", "HW-bp", "Step", "PF"], "header {header:?}");

    // Columns DPI, SW-bp, HW-bp, single-stepping, page faults.
    let expected = [
        ("Execution of single instruction", "✓✓✓✗◐"),
        ("Execution of instruction range", "✗✗◐✗✓"),
        ("Execution of all instructions", "✗✗✗✓✗"),
        ("Execution of instruction type", "✗✗✗◐✗"),
        ("Memory R/W at single address", "✗✗✓✗◐"),
        ("Memory R/W at address range", "✗✗◐✗✓"),
    ];
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    ensure!(rows.len() == expected.len(), "{} rows", rows.len());
    for (row, (label, cells)) in rows.iter().zip(expected) {
        ensure!(row.starts_with(label), "row {row:?}, expected {label:?}");
        let got: String = row[label.len()..].split_whitespace().collect();
        ensure!(got == cells, "{label}: {got} vs {cells}");
    }
    for (pi, p) in PrimitiveKind::ALL.iter().enumerate() {
        for (ti, t) in TechniqueKind::ALL.iter().enumerate() {
            let sym = expected[pi].1.chars().nth(ti).expect("five cells");
            ensure!(capability(*t, *p).symbol() == sym, "library disagrees at {p}/{t}");
        }
    }
    within(start.elapsed(), 1)?;
    Ok("30 cells match".into())
}

/// 2. Every technique reports the generator's exact count.
fn count_agreement() -> Check {
    let start = Instant::now();
    let k_mem = 200;
    let w = workload(1000, k_mem, 1_000_000, Pattern::TightLoop)?;
    let caps = Caps::default();
    let exec = Some((PrimitiveKind::ExecSingle, Some("hot_insn")));
    let rw = Some((PrimitiveKind::RwSingle, Some("hot_cell")));
    let mut seen = Vec::new();
    for (tech, prim, want) in [
        (TechniqueSpec::SwBreakpoint, exec, 1000),
        (TechniqueSpec::HwBreakpoint, exec, 1000),
        (TechniqueSpec::Dpi, exec, 1000),
        (TechniqueSpec::PageFault, exec, 1000),
        (TechniqueSpec::HwBreakpoint, rw, k_mem),
        (TechniqueSpec::PageFault, rw, k_mem),
    ] {
        let r = once(&spec(&w.exe, tech, prim), &caps)?;
        ensure!(r.event_count == want, "{}: {} events, want {want}", r.spec_id, r.event_count);
        ensure!(r.expected_count == Some(want), "{}: expected_count {:?}", r.spec_id, r.expected_count);
        seen.push(format!("{}={}", r.spec_id, r.event_count));
    }

    // Single-step observer counting arrivals at hot_insn.
    let mut t = Launch::new(&w.exe).stdout(Stdio::null()).spawn().map_err(|e| e.to_string())?;
    run_to(&mut t, w.meta.main_addr).map_err(|e| e.to_string())?;
    let _exit = arm_sw_breakpoint(&mut t, w.meta.exit_addr).map_err(|e| e.to_string())?;
    let mut hits = 0u64;
    let hot = w.meta.hot_insn_addr;
    let report = drive_single_step(&mut t, StepConfig { cap: 2_000_000, stop_at: Some(w.meta.exit_addr) }, |o, _| {
        hits += (o.pc == hot) as u64;
    })
    .map_err(|e| e.to_string())?;
    ensure!(report.end == StepEnd::ReachedStop, "stepping ended with {:?}", report.end);
    ensure!(hits == 1000, "single-step observer saw {hits}");
    seen.push(format!("single_step={hits}"));
    t.kill();

    within(start.elapsed(), 60)?;
    Ok(format!("{} in {:.1} s", seen.join(" "), start.elapsed().as_secs_f64()))
}

fn target_for(kind: PrimitiveKind) -> Option<&'static str> {
    match kind {
        PrimitiveKind::ExecSingle => Some("hot_insn"),
        PrimitiveKind::ExecRange => Some("hot_insn:5"),
        PrimitiveKind::ExecAll => None,
        PrimitiveKind::ExecType => Some("branch"),
        PrimitiveKind::RwSingle => Some("hot_cell"),
        PrimitiveKind::RwRange => Some("hot_cell:16"),
    }
}

/// 3. Output and exit status are byte-identical to native for every plan.
fn transparency() -> Check {
    let start = Instant::now();
    let mut runs = 0;
    let mut unplannable = Vec::new();
    for pattern in Pattern::ALL {
        let w = workload(50, 40, 200_000, pattern)?;
        let native = run_native(&w.exe).map_err(|e| e.to_string())?;
        ensure!(native.exit_status == 0, "native exit {}", native.exit_status);
        let reference = Reference::from(&native);
        let mut specs = vec![spec(&w.exe, TechniqueSpec::None, None)];
        for tech in TechniqueKind::ALL {
            for prim in PrimitiveKind::ALL {
                if capability(tech, prim) == Capability::None {
                    continue;
                }
                let s = spec(&w.exe, tech.into(), Some((prim, target_for(prim))));
                let resolved = s.primitive.as_ref().expect("set").resolve(|n| w.meta.symbols.get(n).copied());
                let opts = PlanOptions { multi_slot: true, ..PlanOptions::default() };
                match resolved.map(|p| build_plan(&p, tech, &opts)) {
                    Ok(Err(PlanError::Platform(_))) => {
                        unplannable.push(format!("{tech}/{prim}"));
                        continue;
                    }
                    Ok(Err(e)) | Err(e) => return Err(format!("{}: {e}", s.id)),
                    Ok(Ok(_)) => {}
                }
                specs.push(s);
            }
        }
        for s in &specs {
            run_experiment(s, 0, &Caps::default(), Some(&reference))
                .map_err(|e| format!("{} on {}: {e}", s.id, pattern.as_str()))?;
            runs += 1;
        }
    }
    within(start.elapsed(), 120)?;
    unplannable.dedup();
    Ok(format!(
        "{runs} runs identical to native in {:.1} s; no plan on x86-64: {}",
        start.elapsed().as_secs_f64(),
        unplannable.join(", ")
    ))
}

/// 4. Default caps truncate at exactly their limits.
fn caps() -> Check {
    let start = Instant::now();
    let w = workload(10, 10, 5_000_000, Pattern::TightLoop)?;
    let r = once(&spec(&w.exe, TechniqueSpec::SingleStep, Some((PrimitiveKind::ExecAll, None))), &Caps::default())?;
    ensure!(r.truncated && r.event_count == 2_000_000, "single-step: truncated {} events {}", r.truncated, r.event_count);

    let w = workload(10, 300_000, 5_000_000, Pattern::TightLoop)?;
    let r = once(&spec(&w.exe, TechniqueSpec::PageFault, Some((PrimitiveKind::RwSingle, Some("hot_cell")))), &Caps::default())?;
    ensure!(r.truncated && r.event_count == 200_000, "page-fault: truncated {} events {}", r.truncated, r.event_count);
    Ok(format!("2000000 steps, 200000 faults in {:.1} s", start.elapsed().as_secs_f64()))
}

/// 5. Trap cost grows linearly with event frequency; probes grow slower.
fn scaling() -> Check {
    let start = Instant::now();
    let total = 100_000_000;
    let mut built = Vec::new();
    let mut specs = Vec::new();
    for f in [10.0, 1e2, 1e3, 1e4, 1e5] {
        let k = k_for_frequency(f, total);
        let w = workload(k, 0, total, Pattern::TightLoop)?;
        for tech in [TechniqueSpec::SwBreakpoint, TechniqueSpec::PageFault, TechniqueSpec::Dpi] {
            let mut s = spec(&w.exe, tech, Some((PrimitiveKind::ExecSingle, Some("hot_insn"))));
            s.id = format!("{}@{f}", s.id);
            specs.push(s);
        }
        built.push(w);
    }
    let mut cfg = ExperimentConfig::new(specs);
    cfg.repetitions = 5;
    let recs = run_matrix(&cfg, |_| {});
    if let Some(bad) = recs.iter().find(|r| !r.is_ok()) {
        return Err(format!("{}: {}", bad.spec_id, bad.error.as_deref().unwrap_or("")));
    }
    let fitted = fits(&aggregates(&recs), FitOptions::default());
    let get = |tech: &str| -> Result<RegressionFit, String> {
        fitted
            .get(&(tech.to_owned(), "exec_single".to_owned(), None))
            .copied()
            .ok_or_else(|| format!("no fit for {tech}"))
    };
    let (sw, pf, dpi) = (get("sw_breakpoint")?, get("page_fault")?, get("dpi")?);
    ensure!(sw.n_points == 5 && pf.n_points == 5 && dpi.n_points == 5, "missing sweep points");
    ensure!(sw.slope > 0.0 && sw.r2 >= 0.9, "sw-bp slope {:.3e} r2 {:.4}", sw.slope, sw.r2);
    ensure!(pf.slope > 0.0 && pf.r2 >= 0.9, "page-fault slope {:.3e} r2 {:.4}", pf.slope, pf.r2);
    ensure!(dpi.slope < sw.slope, "probe slope {:.3e} not below sw-bp {:.3e}", dpi.slope, sw.slope);
    within(start.elapsed(), 15 * 60)?;
    Ok(format!(
        "slopes s/(event/100M): sw-bp {:.3e} (r2 {:.3}), page-fault {:.3e} (r2 {:.3}), probe {:.3e}; {:.0} s",
        sw.slope,
        sw.r2,
        pf.slope,
        pf.r2,
        dpi.slope,
        start.elapsed().as_secs_f64()
    ))
}

/// 6. Armed-but-silent plans cost next to nothing; stepping costs a lot.
///
/// Native and traced runs alternate so that machine-wide drift (frequency
/// scaling, noisy neighbours) hits both sides of each ratio equally.
fn baseline_overheads() -> Check {
    let reps = 15;
    let total = 300_000_000;
    let w = workload(0, 0, total, Pattern::TightLoop)?;
    let native_cpu = || run_native(&w.exe).map(|n| n.cpu_ns as f64).map_err(|e| e.to_string());
    let mut natives = Vec::new();
    let mut ratios = Vec::new();
    for tech in [TechniqueSpec::Dpi, TechniqueSpec::SwBreakpoint, TechniqueSpec::HwBreakpoint, TechniqueSpec::PageFault] {
        let s = spec(&w.exe, tech, Some((PrimitiveKind::ExecSingle, Some("hot_insn"))));
        let mut pair_ratios = Vec::new();
        let (mut min_native, mut min_traced) = (f64::INFINITY, f64::INFINITY);
        for rep in 0..reps {
            let native = native_cpu()?;
            let r = run_experiment(&s, rep, &Caps::default(), None).map_err(|e| format!("{}: {e}", s.id))?;
            ensure!(r.event_count == 0, "{}: {} events", s.id, r.event_count);
            let traced = r.combined_cpu_ns.expect("traced run") as f64;
            pair_ratios.push(traced / native);
            min_native = min_native.min(native);
            min_traced = min_traced.min(traced);
            natives.push(native);
        }
        // Native runs carry process startup and an upward noise tail, which
        // pulls the pair median below 1; the ratio of minima does not.
        let ratio = median(pair_ratios);
        let floor_ratio = min_traced / min_native;
        let name = s.technique.name();
        ensure!(ratio <= 1.2, "{name}: median pair ratio {ratio:.3}x native");
        ensure!(floor_ratio <= 1.2, "{name}: min/min ratio {floor_ratio:.3}x native");
        ratios.push(format!("{name} {ratio:.2}x (min/min {floor_ratio:.2}x)"));
    }
    let native = median(natives);

    let step_total = 1_000_000;
    let ws = workload(0, 0, step_total, Pattern::TightLoop)?;
    let r = once(&spec(&ws.exe, TechniqueSpec::SingleStep, Some((PrimitiveKind::ExecAll, None))), &Caps::default())?;
    ensure!(!r.truncated && r.event_count == step_total, "step run: {} events", r.event_count);
    let per_insn_step = r.combined_cpu_ns.expect("traced run") as f64 / step_total as f64;
    let per_insn_native = native / total as f64;
    let step_ratio = per_insn_step / per_insn_native;
    ensure!(step_ratio >= 50.0, "single-step only {step_ratio:.1}x native per instruction");
    Ok(format!("{}; single-step {step_ratio:.0}x native per instruction", ratios.join(", ")))
}

/// Welford's recurrence.
fn welford(xs: &[f64]) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for &x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 })
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// 7. Statistics agree with independent recomputation.
fn analysis_oracles() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for i in 0..100 {
        let n = rng.gen_range(1..40);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e4..1e4)).collect();
        let (m, s) = mean_std(&xs).map_err(|e| e.to_string())?;
        let (wm, ws) = welford(&xs);
        ensure!(rel_close(m, wm) && rel_close(s, ws), "mean_std case {i}: ({m}, {s}) vs ({wm}, {ws})");

        let pts: Vec<(f64, f64)> = (0..rng.gen_range(2..50)).map(|_| (rng.gen_range(0.0..1e3), rng.gen_range(-1e3..1e3))).collect();
        let f = linfit(&pts).map_err(|e| e.to_string())?;
        let np = pts.len() as f64;
        let (sx, sy) = (pts.iter().map(|p| p.0).sum::<f64>(), pts.iter().map(|p| p.1).sum::<f64>());
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = np * sxx - sx * sx;
        let (slope, intercept) = ((np * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det);
        ensure!(rel_close(f.slope, slope) && rel_close(f.intercept, intercept), "linfit case {i}");

        let a = RegressionFit { slope: rng.gen_range(-5.0..5.0), intercept: rng.gen_range(-50.0..50.0), r2: 1.0, n_points: 2 };
        let b = RegressionFit { slope: rng.gen_range(-5.0..5.0), intercept: rng.gen_range(-50.0..50.0), r2: 1.0, n_points: 2 };
        match cutting_point(&a, &b) {
            CuttingPoint::At(x) => ensure!(rel_close(a.value(x), b.value(x)), "cutting point case {i}"),
            CuttingPoint::Parallel => ensure!(a.slope == b.slope, "spurious Parallel in case {i}"),
        }
    }
    let flat = RegressionFit { slope: 0.0, intercept: 10.0, r2: 1.0, n_points: 2 };
    let steep = RegressionFit { slope: 0.1, intercept: 0.0, r2: 1.0, n_points: 2 };
    ensure!(cutting_point(&flat, &steep) == CuttingPoint::At(100.0), "{:?}", cutting_point(&flat, &steep));
    Ok("100 randomized cases each; crossover at exactly 100".into())
}

/// 8. Default protocol: ten records per spec; the report matches the log.
fn protocol() -> Check {
    let w = workload(25, 10, 200_000, Pattern::Strided)?;
    let cfg = ExperimentConfig::new(vec![
        spec(&w.exe, TechniqueSpec::None, None),
        spec(&w.exe, TechniqueSpec::SwBreakpoint, Some((PrimitiveKind::ExecSingle, Some("hot_insn")))),
        spec(&w.exe, TechniqueSpec::PageFault, Some((PrimitiveKind::RwSingle, Some("hot_cell")))),
    ]);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("records.jsonl");
    let mut store = ResultStore::open(&log).map_err(|e| e.to_string())?;
    let mut append = Ok(());
    run_matrix(&cfg, |r| {
        if append.is_ok() {
            append = store.append_record(r);
        }
    });
    append.map_err(|e| e.to_string())?;

    // Hand computation straight from the JSONL text.
    let text = std::fs::read_to_string(&log).map_err(|e| e.to_string())?;
    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        ensure!(v["error"].is_null(), "failed record {line}");
        if v["native"] == true {
            continue;
        }
        let ns = ["combined_cpu_ns", "cpu_child_ns", "wall_ns"].iter().find_map(|k| v[k].as_u64()).expect("some clock");
        times.entry(v["spec_id"].as_str().unwrap_or_default().to_owned()).or_default().push(ns as f64 * 1e-9);
    }
    ensure!(times.len() == 3, "{} specs in log", times.len());
    ensure!(times.values().all(|t| t.len() == 10), "records per spec: {:?}", times.values().map(Vec::len).collect::<Vec<_>>());

    let report = |format: &str| -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_trapbench"))
            .args(["report", "--in", log.to_str().expect("utf-8 path"), "--format", format])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "report --format {format} failed");
        String::from_utf8(out.stdout).map_err(|e| e.to_string())
    };
    let table = report("table")?;
    let csv = report("csv")?;
    for (id, t) in &times {
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let std = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let cell = format!("{mean:.2}±{std:.2}");
        let row = table.lines().find(|l| l.split_whitespace().next() == Some(id.as_str())).ok_or(format!("no table row for {id}"))?;
        ensure!(row.contains(&cell), "table row {row:?} lacks {cell}");
        let fields: Vec<&str> = csv.lines().find(|l| l.starts_with(&format!("{id},"))).ok_or(format!("no csv row for {id}"))?.split(',').collect();
        let (m, s): (f64, f64) = (fields[5].parse().map_err(|_| "mean_s")?, fields[6].parse().map_err(|_| "std_s")?);
        ensure!((m - mean).abs() <= 1e-9 && (s - std).abs() <= 1e-9, "{id}: csv {m}±{s} vs {mean}±{std}");
    }
    Ok("3 specs x 10 records; table and csv match hand computation".into())
}

fn main() {
    let checks: [Criterion; 8] = [
        ("capability matrix", capability_matrix),
        ("cross-technique count agreement", count_agreement),
        ("transparency", transparency),
        ("event caps", caps),
        ("scaling reproduction", scaling),
        ("baseline overheads", baseline_overheads),
        ("analysis oracles", analysis_oracles),
        ("protocol", protocol),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id} {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1} s): {why}");
            }
        }
    }
    reap_check();
    if failed > 0 {
        std::process::exit(1);
    }
}

/// No traced child may outlive its run.
fn reap_check() {
    let me = std::process::id();
    let zombies: Vec<String> = std::fs::read_dir("/proc")
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| std::fs::read_to_string(e.path().join("stat")).ok())
        .filter(|stat| {
            let rest = stat.rsplit_once(')').map_or("", |(_, r)| r);
            let f: Vec<&str> = rest.split_whitespace().collect();
            f.len() > 1 && f[1].parse() == Ok(me)
        })
        .collect();
    if !zombies.is_empty() {
        println!("FAIL children left behind: {zombies:?}");
        std::process::exit(1);
    }
}

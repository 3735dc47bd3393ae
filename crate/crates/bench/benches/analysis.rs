use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use trapbench::analysis::{aggregates, emit_report, fits, linfit, FitOptions, ReportFormat};
use trapbench::harness::RunRecord;

fn records(specs: usize, reps: u32) -> Vec<RunRecord> {
    let mut out = Vec::new();
    for s in 0..specs {
        let technique = ["sw_breakpoint", "hw_breakpoint", "page_fault", "dpi"][s % 4];
        let k = 1_000 * (s as u64 / 4 + 1);
        for rep in 0..reps {
            let v = serde_json::json!({
                "spec_id": format!("s{s}"),
                "rep": rep,
                "technique": technique,
                "primitive": "exec_single",
                "workload": format!("w{}", s / 4),
                "wall_ns": k * 3_000 + rep as u64 * 1_000,
                "combined_cpu_ns": k * 2_500 + rep as u64 * 700,
                "event_count": k,
                "expected_count": k,
                "instr_count": 100_000_000u64,
                "truncated": false,
                "timestamp": 0,
            });
            out.push(serde_json::from_value(v).unwrap());
        }
    }
    out
}

fn bench_linfit(c: &mut Criterion) {
    let mut g = c.benchmark_group("linfit");
    for n in [16usize, 1_024, 65_536] {
        let pts: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, 3.0 * i as f64 + (i % 7) as f64)).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, p| b.iter(|| linfit(black_box(p)).unwrap()));
    }
    g.finish();
}

fn bench_report(c: &mut Criterion) {
    let recs = records(200, 10);
    c.bench_function("aggregates_2000", |b| b.iter(|| aggregates(black_box(&recs))));
    let aggs = aggregates(&recs);
    c.bench_function("fits_200_specs", |b| b.iter(|| fits(black_box(&aggs), FitOptions::default())));
    c.bench_function("table_report_2000", |b| {
        b.iter(|| emit_report(black_box(&recs), ReportFormat::Table, FitOptions::default()))
    });
}

criterion_group!(benches, bench_linfit, bench_report);
criterion_main!(benches);

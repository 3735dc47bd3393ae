//! Whole traced runs on a small generated workload, one per technique.
//! Each run takes 2000 events, so differences against `none` are the
//! per-event cost of the trap.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use trapbench::harness::{run_experiment, Caps, ExperimentSpec, TechniqueSpec, WorkloadRef};
use trapbench::primitives::{PrimitiveKind, PrimitiveSpec};
use trapbench::workload::{write_workload, Pattern, WorkloadParams};

const EVENTS: u64 = 2_000;

fn bench_techniques(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let (exe, _) = write_workload(dir.path(), &WorkloadParams::new(EVENTS, EVENTS, 200_000, Pattern::TightLoop)).unwrap();
    let cases = [
        (TechniqueSpec::None, None),
        (TechniqueSpec::Dpi, Some((PrimitiveKind::ExecSingle, "hot_insn"))),
        (TechniqueSpec::SwBreakpoint, Some((PrimitiveKind::ExecSingle, "hot_insn"))),
        (TechniqueSpec::HwBreakpoint, Some((PrimitiveKind::ExecSingle, "hot_insn"))),
        (TechniqueSpec::HwBreakpoint, Some((PrimitiveKind::RwSingle, "hot_cell"))),
        (TechniqueSpec::PageFault, Some((PrimitiveKind::RwSingle, "hot_cell"))),
    ];

    let mut g = c.benchmark_group("traced_run");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    let caps = Caps::default();
    for (technique, prim) in cases {
        let name = match prim {
            Some((k, _)) => format!("{}/{}", technique.name(), k.as_str()),
            None => technique.name().to_owned(),
        };
        let spec = ExperimentSpec {
            id: name.clone(),
            workload: WorkloadRef::new(&exe),
            technique,
            primitive: prim.map(|(k, t)| PrimitiveSpec::new(k, Some(t))),
            repetitions: None,
            hw_len: None,
            multi_slot: false,
        };
        g.bench_function(&name, |b| b.iter(|| run_experiment(&spec, 0, &caps, None).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_techniques);
criterion_main!(benches);

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use revpf_core::estimator::{build_quantity_moments, default_instruments, first_stage_project, theta_of, Mode};
use revpf_core::{simulate_panel, Execution, SimConfig};

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate_panel");
    g.sample_size(10);
    let cfg = SimConfig::default_ces();
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::new(name, cfg.n_firms), &exec, |b, &exec| {
            b.iter(|| simulate_panel(black_box(&cfg), exec).unwrap())
        });
    }
    g.finish();
}

fn moments(c: &mut Criterion) {
    let mut g = c.benchmark_group("quantity_moments");
    let cfg = SimConfig { n_firms: 2000, ..SimConfig::default_ces() };
    let panel = simulate_panel(&cfg, Execution::Parallel).unwrap();
    let fs = first_stage_project(&panel, Mode::Quantity, 3).unwrap();
    let ms = build_quantity_moments(cfg.tech.kind(), &fs.fitted, &panel, 1, &default_instruments()).unwrap();
    let theta = theta_of(&cfg.tech);
    for (name, exec) in POLICIES {
        let ms = ms.clone().with_execution(exec);
        g.bench_function(BenchmarkId::new(name, panel.len()), |b| b.iter(|| ms.moments(black_box(&theta)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, simulate, moments);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use spopo::analysis::PhaseVarianceSink;
use spopo::sde::{run_ensemble, EnsembleParams};
use spopo::steady::solve_steady_state;
use spopo::{CombConfig, Execution, MismatchKind, PumpKind};

fn ensemble(c: &mut Criterion) {
    let cfg = CombConfig::new(1, 1.0, 1.0, 5.0, PumpKind::Gaussian { width: 1.0 }, MismatchKind::Perfect).unwrap();
    let state = solve_steady_state(&cfg).unwrap();
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    let mut modes = vec![Execution::Sequential];
    if Execution::Parallel.is_parallel() {
        modes.push(Execution::Parallel);
    }
    for exec in modes {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                let mut params = EnsembleParams::for_gamma(1.0, 128, 7);
                params.t_max = 2.0;
                params.execution = exec;
                let mut sink = PhaseVarianceSink::new(&state.rho, &params, 8, false).unwrap();
                run_ensemble(&cfg, &state, &params, &mut sink).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);

use jpcg_core::controller::{run_jpcg, ScheduleMode, SolverConfig, SolverError, Termination};
use jpcg_core::fixtures::{laplacian_2d, random_spd, random_vector};
use jpcg_core::matrix_io::CsrMatrix;
use jpcg_core::modules::kernels::dot_product;
use jpcg_core::reference::{compare_traces, jpcg_reference, spmv_reference};
use jpcg_core::runtime::SchedulerKind;
use jpcg_core::spmv::PrecisionScheme;

fn cfg(mode: ScheduleMode) -> SolverConfig {
    SolverConfig {
        schedule_mode: mode,
        record_vectors: true,
        ..Default::default()
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn naive_and_decentralized_agree_bit_for_bit() {
    for seed in 0..4 {
        let a = random_spd(24 + seed as usize, seed);
        let b = vec![1.0; a.n()];
        let x0 = vec![0.0; a.n()];
        let d = run_jpcg(&a, &b, &x0, &cfg(ScheduleMode::Decentralized)).unwrap();
        let n = run_jpcg(&a, &b, &x0, &cfg(ScheduleMode::Naive)).unwrap();
        assert_eq!(d.snapshots.len(), n.snapshots.len());
        for (s, t) in d.snapshots.iter().zip(&n.snapshots) {
            assert_eq!(bits(&s.x), bits(&t.x), "x at iteration {}", s.iteration);
            assert_eq!(bits(&s.r), bits(&t.r), "r at iteration {}", s.iteration);
            assert_eq!(bits(&s.p), bits(&t.p), "p at iteration {}", s.iteration);
        }
        assert_eq!(d.report.rr_values(), n.report.rr_values());
    }
}

#[test]
fn memory_access_counts_per_iteration() {
    let a = laplacian_2d(6);
    let b = vec![1.0; a.n()];
    let x0 = vec![0.0; a.n()];
    let d = run_jpcg(&a, &b, &x0, &cfg(ScheduleMode::Decentralized)).unwrap();
    let n = run_jpcg(&a, &b, &x0, &cfg(ScheduleMode::Naive)).unwrap();
    assert!(d.report.iterations > 3);
    assert_eq!(n.report.reads_per_iteration, Some(14));
    assert_eq!(n.report.writes_per_iteration, Some(5));
    assert_eq!(d.report.reads_per_iteration, Some(10));
    assert_eq!(d.report.writes_per_iteration, Some(4));
    let (dr, dw) = (d.report.vector_reads.unwrap(), d.report.vector_writes.unwrap());
    let (nr, nw) = (n.report.vector_reads.unwrap(), n.report.vector_writes.unwrap());
    for i in 0..dr.len() {
        assert!(dr[i] + dw[i] < nr[i] + nw[i], "iteration {i}");
    }
}

#[test]
fn phase_three_z_matches_phase_two_z() {
    let a = random_spd(20, 3);
    let mut c = cfg(ScheduleMode::Decentralized);
    c.record_transcripts = true;
    let out = run_jpcg(&a, &[1.0; 20], &[0.0; 20], &c).unwrap();
    let col = |name: &str| -> Vec<String> {
        out.transcripts[name]
            .iter()
            .map(|l| l.rsplit(' ').next().unwrap().to_string())
            .collect()
    };
    let z2 = col("M5->M6:z");
    let z3 = col("M5->M7:z");
    // Every pass but the terminating one recomputes z.
    assert_eq!(z2.len(), 20 * (out.report.iterations as usize + 1));
    assert_eq!(z3.len(), 20 * out.report.iterations as usize);
    assert_eq!(&z2[..z3.len()], &z3[..]);
}

#[test]
fn transcripts_are_reproducible() {
    let a = random_spd(16, 9);
    let b = random_vector(16, 10);
    let x0 = vec![0.0; 16];
    let mut c = cfg(ScheduleMode::Decentralized);
    c.record_transcripts = true;
    let first = run_jpcg(&a, &b, &x0, &c).unwrap();
    let second = run_jpcg(&a, &b, &x0, &c).unwrap();
    assert_eq!(first.transcript_dump, second.transcript_dump);
    c.scheduler = SchedulerKind::Concurrent;
    let conc = run_jpcg(&a, &b, &x0, &c).unwrap();
    assert_eq!(first.transcripts, conc.transcripts);
    assert_eq!(bits(&first.x), bits(&conc.x));
}

#[test]
fn streamed_rr_matches_memory_resident_r() {
    let a = random_spd(30, 4);
    let c = cfg(ScheduleMode::Decentralized);
    let out = run_jpcg(&a, &vec![1.0; 30], &vec![0.0; 30], &c).unwrap();
    for (snap, t) in out.snapshots.iter().zip(&out.report.residual_trace) {
        let rr = dot_product(&snap.r, &snap.r, 30, c.l_acc).unwrap();
        assert_eq!(rr.to_bits(), t.rr.to_bits(), "iteration {}", t.iteration);
    }
}

#[test]
fn fsms_return_home_on_every_continuing_iteration() {
    for mode in [ScheduleMode::Decentralized, ScheduleMode::Naive] {
        let a = random_spd(12, 2);
        let out = run_jpcg(&a, &[1.0; 12], &[0.0; 12], &cfg(mode)).unwrap();
        let k = out.fsms_off_home.len();
        for (i, off) in out.fsms_off_home[..k - 1].iter().enumerate() {
            assert!(off.is_empty(), "{mode} iteration {}: {off:?}", i + 1);
        }
    }
}

#[test]
fn early_exit_does_not_change_x() {
    let a = random_spd(18, 5);
    let b = vec![1.0; 18];
    let x0 = vec![0.0; 18];
    for mode in [ScheduleMode::Decentralized, ScheduleMode::Naive] {
        let on = run_jpcg(&a, &b, &x0, &cfg(mode)).unwrap();
        let mut c = cfg(mode);
        c.early_exit = false;
        let off = run_jpcg(&a, &b, &x0, &c).unwrap();
        assert_eq!(on.report.iterations, off.report.iterations);
        assert_eq!(bits(&on.x), bits(&off.x));
        let last_on = on.report.vector_reads.unwrap();
        let last_off = off.report.vector_reads.unwrap();
        assert!(last_on.last() < last_off.last());
    }
}

#[test]
fn converged_runs_pass_the_offline_residual_check() {
    for seed in 0..5 {
        let a = random_spd(32, 100 + seed);
        let b = random_vector(32, seed);
        let c = cfg(ScheduleMode::Decentralized);
        let out = run_jpcg(&a, &b, &vec![0.0; 32], &c).unwrap();
        assert!(out.report.converged);
        let ax = spmv_reference(&a, &out.x).unwrap();
        let res: f64 = b.iter().zip(&ax).map(|(bi, yi)| (bi - yi) * (bi - yi)).sum();
        assert!(res <= c.tol * (1.0 + 1e-6), "seed {seed}: {res}");
    }
}

#[test]
fn responses_balance_writes() {
    let a = random_spd(10, 1);
    let out = run_jpcg(&a, &[1.0; 10], &[0.0; 10], &cfg(ScheduleMode::Naive)).unwrap();
    let writes: u64 = out.report.vector_writes.as_ref().unwrap().iter().sum::<u64>() + out.report.init_writes.unwrap();
    assert_eq!(out.report.memory_responses, Some(writes));
}

#[test]
fn tight_join_depth_deadlocks_the_solver() {
    let a = laplacian_2d(7);
    let b = vec![1.0; a.n()];
    let x0 = vec![0.0; a.n()];
    let mut c = SolverConfig::default();
    c.fifo_depths.insert("M5->M6:r".into(), 33);
    match run_jpcg(&a, &b, &x0, &c) {
        Err(SolverError::Deadlock(set)) => {
            assert_eq!(set, "{M5: push M5->M6:r, M6: pop M5->M6:z}");
        }
        other => panic!("expected deadlock, got {:?}", other.map(|o| o.report)),
    }
    c.fifo_depths.insert("M5->M6:r".into(), 34);
    assert!(run_jpcg(&a, &b, &x0, &c).unwrap().report.converged);
}

#[test]
fn streamed_follows_reference_closely() {
    let a = random_spd(40, 77);
    let b = vec![1.0; 40];
    let x0 = vec![0.0; 40];
    let out = run_jpcg(&a, &b, &x0, &SolverConfig::default()).unwrap();
    let oracle = jpcg_reference(&a, &b, &x0, 1e-12, 20_000, PrecisionScheme::DefaultFp64).unwrap();
    let cmp = compare_traces(&out.report.rr_values(), &oracle.rr(), 1e-8);
    assert!(cmp.iteration_delta.abs() <= 2);
    let common = out.report.residual_trace.len().min(oracle.steps.len());
    let first = cmp.first_divergence.unwrap_or(u64::MAX);
    assert!(first >= common as u64, "diverged at {first}");
}

#[test]
fn first_iteration_scalars_match_reference() {
    let a = CsrMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
    let b = [1.0, 2.0];
    let out = run_jpcg(&a, &b, &[0.0; 2], &SolverConfig::default()).unwrap();
    let oracle = jpcg_reference(&a, &b, &[0.0; 2], 1e-12, 20_000, PrecisionScheme::DefaultFp64).unwrap();
    let (_, alpha, _) = out.scalars[0];
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
    assert!(rel(alpha, oracle.steps[1].alpha.unwrap()) <= 1e-15);
    assert!(rel(out.report.residual_trace[1].rr, oracle.steps[1].rr) <= 1e-15);
}

#[test]
fn mixed_schemes_track_their_oracles() {
    let a = random_spd(20, 12);
    let b = vec![1.0; 20];
    let x0 = vec![0.0; 20];
    for scheme in [
        PrecisionScheme::MixedV1,
        PrecisionScheme::MixedV2,
        PrecisionScheme::MixedV3,
    ] {
        let oracle = jpcg_reference(&a, &b, &x0, 1e-12, 500, scheme).unwrap();
        let c = SolverConfig {
            scheme,
            ..Default::default()
        };
        let streamed = run_jpcg(&a, &b, &x0, &c).unwrap();
        assert_eq!(oracle.converged, streamed.report.converged, "{scheme:?}");
        let cmp = compare_traces(&streamed.report.rr_values(), &oracle.rr(), 1e-6);
        assert!(cmp.iteration_delta.abs() <= 2, "{scheme:?}: {cmp:?}");
        assert!(cmp.first_divergence.is_none_or(|i| i >= 3), "{scheme:?}: {cmp:?}");
    }
}

#[test]
fn budget_reports_budget() {
    let a = random_spd(20, 8);
    let c = SolverConfig {
        max_iters: 3,
        ..Default::default()
    };
    let out = run_jpcg(&a, &[1.0; 20], &[0.0; 20], &c).unwrap();
    assert_eq!(out.report.termination, Termination::Budget);
    assert_eq!(out.report.iterations, 3);
    assert_eq!(out.report.residual_trace.len(), 4);
}

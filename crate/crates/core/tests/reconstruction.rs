use pathtomo_core::io::{preset, read_measurement_set, write_measurement_set, SimulationMeta};
use pathtomo_core::qstate::{fidelity, from_params, random_state, PAIRS};
use pathtomo_core::reconstruct::{
    assemble, assemble_with, estimate_loss, seeded_pump_phases, simulate, simulate_full, Candidate, ConfigData,
    DiagonalMethod, ReconstructOptions, Scored, SimulationOptions,
};
use pathtomo_core::{Configuration, Emission, Error, ImperfectionModel};

fn exact(seed: u64) -> SimulationOptions {
    SimulationOptions { pump_phases: seeded_pump_phases(seed), seed, ..SimulationOptions::default() }
}

#[test]
fn exact_round_trip_random_states() {
    for seed in 0..40 {
        let p = random_state(seed);
        let truth = from_params(&p).unwrap();
        let m = simulate(&p, &ImperfectionModel::ideal(), &exact(seed)).unwrap();
        let r = assemble(&m, Some(&truth)).unwrap();
        assert!(r.matrix.max_abs_diff(&truth) < 1e-9, "seed {seed}");
        assert!(r.fidelity_vs_truth.unwrap() > 1.0 - 1e-9);
        assert_eq!(r.scored, Scored::Raw);
        assert!(r.diagonal.iter().all(|d| d.method == DiagonalMethod::Fringe));
    }
}

#[test]
fn lossy_round_trip_recovers_loss() {
    let imp = ImperfectionModel::new(0.35, 0.7, 0.6).unwrap();
    for seed in 100..120 {
        let p = random_state(seed);
        let truth = from_params(&p).unwrap();
        let m = simulate(&p, &imp, &exact(seed)).unwrap();
        let loss = estimate_loss(&m).unwrap();
        assert!((loss.t_h - 0.6).abs() < 1e-9);
        assert!((loss.b1_sq - 0.35).abs() < 1e-12);
        let r = assemble(&m, Some(&truth)).unwrap();
        assert!(r.matrix.max_abs_diff(&truth) < 1e-9, "seed {seed}");
    }
}

#[test]
fn maximally_mixed_is_all_flat() {
    let p = preset("mixed-max").unwrap();
    let m = simulate(&p, &ImperfectionModel::ideal(), &exact(5)).unwrap();
    let r = assemble(&m, None).unwrap();
    for d in &r.diagonal {
        assert!((d.value - 0.25).abs() < 1e-12);
    }
    assert!(r.off_diagonal.iter().all(|o| o.modulus == 0.0 && o.phase.is_none()));
}

#[test]
fn werner_family() {
    for k in 0..=10 {
        let w = k as f64 / 10.0;
        let p = preset(&format!("werner:{w}")).unwrap();
        let truth = from_params(&p).unwrap();
        let m = simulate(&p, &ImperfectionModel::ideal(), &exact(k)).unwrap();
        let r = assemble(&m, Some(&truth)).unwrap();
        assert!(r.matrix.max_abs_diff(&truth) < 1e-9, "p = {w}");
    }
}

#[test]
fn product_state_splits_or_falls_back() {
    // |HH>: configs B, C and D carry no fringe.
    let p = pathtomo_core::StateParams::incoherent([1.0, 0.0, 0.0, 0.0]);
    let truth = from_params(&p).unwrap();
    let m = simulate(&p, &ImperfectionModel::ideal(), &exact(2)).unwrap();
    for c in [Configuration::B, Configuration::C, Configuration::D] {
        assert!(m.is_absent(c));
    }
    let r = assemble(&m, Some(&truth)).unwrap();
    assert!(r.matrix.max_abs_diff(&truth) < 1e-12);
    assert_eq!(r.absent.len(), 3);
    let methods: Vec<_> = r.diagonal.iter().map(|d| d.method).collect();
    assert_eq!(methods[0], DiagonalMethod::Fringe);
    assert_eq!(methods[2], DiagonalMethod::LevelFallback);
}

#[test]
fn inconsistent_levels_rejected() {
    let p = random_state(9);
    let mut m = simulate(&p, &ImperfectionModel::ideal(), &exact(9)).unwrap();
    for v in m.p0_h.values.iter_mut() {
        *v *= 3.0;
    }
    match assemble(&m, None) {
        Err(Error::InconsistentData(_)) | Err(Error::DegenerateState(_)) => {}
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn noisy_reconstruction_reports_defects() {
    let p = preset("worked").unwrap();
    let truth = from_params(&p).unwrap();
    let opts = SimulationOptions { counts_per_point: Some(1_000_000), ..exact(77) };
    let m = simulate(&p, &ImperfectionModel::ideal(), &opts).unwrap();
    let r = assemble_with(&m, Some(&truth), &ReconstructOptions { psd_project: true, ..Default::default() }).unwrap();
    assert!(r.fidelity_vs_truth.unwrap() > 0.999);
    assert!(r.projected.is_some());
    assert!(!r.consistency_defects().is_empty());
    let sum: f64 = (0..4).map(|i| r.matrix.matrix()[(i, i)].re).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    for ev in r.projected.unwrap().eigenvalues() {
        assert!(ev >= -1e-12);
    }
}

#[test]
fn every_element_has_a_source() {
    let p = random_state(31);
    let m = simulate(&p, &ImperfectionModel::ideal(), &exact(31)).unwrap();
    let r = assemble(&m, None).unwrap();
    let sources = r.per_element_source();
    assert_eq!(sources.len(), 4 + PAIRS.len());
    assert!(sources.values().all(|s| !s.is_empty()));
}

#[test]
fn measurement_set_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = random_state(12);
    let imp = ImperfectionModel::new(0.4, 0.1, 0.9).unwrap();
    let opts = SimulationOptions { counts_per_point: Some(50_000), ..exact(12) };
    let m = simulate(&p, &imp, &opts).unwrap();
    let meta = SimulationMeta {
        seed: 12,
        grid_size: opts.grid_size,
        counts_per_point: opts.counts_per_point,
        pump_phases: opts.pump_phases,
        imperfections: imp,
    };
    let manifest = write_measurement_set(&m, dir.path(), Some(&meta)).unwrap();
    let (back, meta_back) = read_measurement_set(&manifest).unwrap();
    assert_eq!(meta_back.as_ref(), Some(&meta));
    let (from_dir, _) = read_measurement_set(dir.path()).unwrap();
    let a = assemble(&m, None).unwrap();
    let b = assemble(&back, None).unwrap();
    let c = assemble(&from_dir, None).unwrap();
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.matrix, c.matrix);
}

#[test]
fn absent_config_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = pathtomo_core::StateParams::incoherent([1.0, 0.0, 0.0, 0.0]);
    let m = simulate(&p, &ImperfectionModel::ideal(), &exact(4)).unwrap();
    write_measurement_set(&m, dir.path(), None).unwrap();
    let (back, meta) = read_measurement_set(dir.path()).unwrap();
    assert!(meta.is_none());
    assert!(matches!(back.config(Configuration::D), ConfigData::Absent { .. }));
    assert_eq!(assemble(&back, None).unwrap().matrix, assemble(&m, None).unwrap().matrix);
}

#[test]
fn shuffled_candidates_identified() {
    let p = random_state(44);
    let full = simulate_full(&p, &ImperfectionModel::ideal(), &exact(44)).unwrap();
    let order = [2usize, 0, 3, 1];
    let candidates: Vec<Candidate> =
        order.iter().map(|&i| Candidate { id: format!("run{i}"), fringes: full.configs[i].clone() }).collect();
    let id = pathtomo_core::reconstruct::identify_configurations(&candidates, 1e-10).unwrap();
    assert!(!id.degenerate);
    for (k, c) in Configuration::ALL.iter().enumerate() {
        assert_eq!(id.mapping()[c].as_deref(), Some(format!("run{k}").as_str()));
    }
}

#[test]
fn fidelity_of_reconstruction_is_symmetric() {
    let p = random_state(8);
    let truth = from_params(&p).unwrap();
    let m = simulate(&p, &ImperfectionModel::ideal(), &exact(8)).unwrap();
    let r = assemble(&m, None).unwrap();
    let f1 = fidelity(&r.matrix, &truth).unwrap();
    let f2 = fidelity(&truth, &r.matrix).unwrap();
    assert!((f1 - f2).abs() < 1e-9);
    assert!(r.params.intensity(Emission::HH) > 0.0);
}

use std::f64::consts::{FRAC_PI_4, PI};

use kerrcat::evolve::{evolve_lindblad, evolve_unitary, fidelity, gate_unitary_reference, EvolveOptions, KET_STEP_RADIUS};
use kerrcat::fockspace::{annihilation, cahill_glauber_t, coherent_cat, creation, displacement, local, parity, tensor, CatParity};
use kerrcat::model::{build_hamiltonian, DriveChannel, DriveSpec, SystemParams};
use kerrcat::pulses::{preset_schedule, Preset, PulseSchedule, ScheduleOverrides, Segment};
use kerrcat::tomography::{project_t, reconstruct, rho_from_t, ReconstructionConfig};
use kerrcat::wigner::{
    joint_parity_operator, measure_grid, one_mode_wigner, one_mode_wigner_displaced, paper_dataset, Measurement, SliceKind,
};
use kerrcat::{Complex64, Operator, QuantumState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_density(n: usize, weights: &[f64], phases: &[f64]) -> QuantumState {
    // mixture of two random kets
    let v1 = DVector::from_fn(n, |k, _| Complex64::from_polar(weights[k % weights.len()], phases[k % phases.len()]));
    let v2 = DVector::from_fn(n, |k, _| Complex64::from_polar(weights[(k + 1) % weights.len()], -phases[(k + 2) % phases.len()]));
    let m = &v1 * v1.adjoint() * c(0.7, 0.0) + &v2 * v2.adjoint() * c(0.3, 0.0);
    let tr = m.trace();
    QuantumState::density(vec![n], m / tr).unwrap()
}

fn drive_strategy() -> impl Strategy<Value = DriveSpec> {
    (0usize..7, 0.0..3.0f64, -5.0..5.0f64, -PI..PI).prop_map(|(k, a, d, ph)| DriveSpec::constant(DriveChannel::ALL[k], a, d, ph))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ladder_commutator_is_identity_on_leading_block(n in 3usize..30) {
        let a = annihilation::<f64>(n).unwrap();
        let ad = creation::<f64>(n).unwrap();
        let comm = a.commutator(&ad);
        let block = comm.leading_block(n - 1);
        prop_assert!((block - DMatrix::identity(n - 1, n - 1)).camax() < 1e-12);
    }

    #[test]
    fn parity_equals_t_at_origin(n in 1usize..40) {
        let t0 = cahill_glauber_t::<f64>(c(0.0, 0.0), n).unwrap();
        let pi = parity::<f64>(n).unwrap();
        prop_assert_eq!(t0.data(), pi.data());
    }

    #[test]
    fn displacement_is_unitary_and_inverted_by_negation(re in -1.5..1.5f64, im in -1.5..1.5f64) {
        let n = 60;
        let keep = 12;
        let d = displacement(c(re, im), n).unwrap();
        let dm = displacement(c(-re, -im), n).unwrap();
        let id = DMatrix::<Complex64>::identity(keep, keep);
        prop_assert!(((d.adjoint().data() * d.data()).view((0, 0), (keep, keep)) - &id).camax() < 1e-10);
        prop_assert!(((dm.data() * d.data()).view((0, 0), (keep, keep)) - &id).camax() < 1e-10);
    }

    #[test]
    fn hamiltonian_is_hermitian(drives in prop::collection::vec(drive_strategy(), 0..5), t in 0.0..3.0f64) {
        let p = SystemParams::paper().with_truncation(6);
        let h = build_hamiltonian(&p, &drives, t).unwrap();
        prop_assert!(h.is_hermitian(1e-12));
    }

    #[test]
    fn pumps_commute_with_joint_parity(p1 in 0.0..3.0f64, p2 in 0.0..3.0f64, d in -2.0..2.0f64, t in 0.0..2.0f64) {
        let p = SystemParams::paper().with_truncation(7);
        let drives = [DriveSpec::constant(DriveChannel::Pump1, p1, d, 0.0), DriveSpec::constant(DriveChannel::Pump2, p2, -d, 0.3)];
        let h = build_hamiltonian(&p, &drives, t).unwrap();
        let pp = joint_parity_operator(p.dims()).unwrap();
        prop_assert!(h.commutator(&pp).max_abs() < 1e-12);
    }

    #[test]
    fn wigner_displaced_parity_agrees_with_cahill_glauber(
        weights in prop::collection::vec(0.0..1.0f64, 3..6),
        phases in prop::collection::vec(-PI..PI, 3..6),
        re in -1.2..1.2f64,
        im in -1.2..1.2f64,
    ) {
        prop_assume!(weights.iter().any(|w| *w > 0.1));
        let rho = random_density(10, &weights, &phases);
        let a = one_mode_wigner(&rho, c(re, im)).unwrap();
        let b = one_mode_wigner_displaced(&rho, c(re, im)).unwrap();
        prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn reconstruction_parametrization_is_physical(entries in prop::collection::vec(-1.0..1.0f64, 32)) {
        let t = DMatrix::from_fn(4, 4, |r, s| c(entries[r * 4 + s], entries[16 + r * 4 + s]));
        let t = project_t(&t);
        prop_assume!(t.norm() > 1e-3);
        let rho = rho_from_t(&t, [2, 2]).unwrap();
        prop_assert!(rho.check_physical(1e-10, -1e-10).is_ok());
        prop_assert!((rho.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lindblad_keeps_trace_and_positivity(t1 in 0.5..50.0f64, n_th in 0.0..0.2f64, amp in 0.0..2.0f64) {
        let p = SystemParams::paper().with_truncation(5).with_loss(t1, n_th);
        let drives = vec![
            Segment { t_start: 0.0, t_end: 0.3, drive: DriveSpec::constant(DriveChannel::Pump1, amp, 1.0, 0.0) },
            Segment { t_start: 0.1, t_end: 0.3, drive: DriveSpec::constant(DriveChannel::BellSum, 0.3, 0.0, 0.0) },
        ];
        let sched = PulseSchedule::new(drives, 0.3).unwrap();
        let rho0 = QuantumState::fock(&p.dims(), &[1, 0]).unwrap().to_density();
        let opts = EvolveOptions { check_positivity: true, step_radius: Some(0.1), ..EvolveOptions::with_dt(1e-3) };
        let tr = evolve_lindblad(&rho0, &p, &sched, &opts).unwrap();
        prop_assert!(tr.diagnostics.max_norm_drift < 1e-9);
        prop_assert!(tr.diagnostics.min_eigenvalue.unwrap() > -1e-8, "{:?}", tr.diagnostics);
    }
}

#[test]
fn one_mode_wigner_is_normalized() {
    let cat = coherent_cat(1.5f64.sqrt(), CatParity::Even, 30).unwrap().to_density();
    let step = 0.05;
    let pts: Vec<f64> = (-100..=100).map(|k| k as f64 * step).collect();
    let mut total = 0.0;
    for &x in &pts {
        for &y in &pts {
            total += one_mode_wigner(&cat, c(x, y)).unwrap() * step * step;
        }
    }
    assert!((total - 1.0).abs() < 1e-2, "{total}");
}

#[test]
fn pump_only_evolution_conserves_parity() {
    // without the static coupling each mode's parity is conserved separately
    let mut p = SystemParams::paper().with_truncation(12);
    p.g = 0.0;
    let sched = preset_schedule(Preset::CatGen, &p, &ScheduleOverrides::default()).unwrap();
    let par = |m| local(&parity::<f64>(12).unwrap(), m, &p.dims()).unwrap();
    let opts = EvolveOptions { observables: vec![("p1".into(), par(0)), ("p2".into(), par(1))], ..EvolveOptions::with_dt(1e-3) };
    let tr = evolve_unitary(&QuantumState::fock(&p.dims(), &[0, 1]).unwrap(), &p, &sched, &opts).unwrap();
    for v in tr.observable("p1").unwrap() {
        assert!((v - 1.0).abs() < 1e-6);
    }
    for v in tr.observable("p2").unwrap() {
        assert!((v + 1.0).abs() < 1e-6);
    }
    // with the coupling only the joint parity survives
    let p = SystemParams::paper().with_truncation(12);
    let opts = EvolveOptions { observables: vec![("pp".into(), joint_parity_operator(p.dims()).unwrap())], ..EvolveOptions::with_dt(1e-3) };
    let tr = evolve_unitary(&QuantumState::fock(&p.dims(), &[0, 1]).unwrap(), &p, &sched, &opts).unwrap();
    for v in tr.observable("pp").unwrap() {
        assert!((v + 1.0).abs() < 1e-6);
    }
}

#[test]
fn gate_reference_is_exp_of_xx() {
    let u = gate_unitary_reference();
    assert!(u.is_unitary(1e-12));
    let x = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    let xx = tensor(&Operator::new(vec![2], x.clone()).unwrap(), &Operator::new(vec![2], x).unwrap());
    // (X⊗X)² = I, so exp(iθ X⊗X) = cos θ I + i sin θ X⊗X
    let expected = DMatrix::identity(4, 4) * c(FRAC_PI_4.cos(), 0.0) + xx.data() * c(0.0, FRAC_PI_4.sin());
    let overlap = (expected.adjoint() * u.data()).trace() / c(4.0, 0.0);
    assert!((overlap.norm() - 1.0).abs() < 1e-12);
    assert!((u.data() - expected * overlap).camax() < 1e-12);
    let sq = u.data() * u.data();
    let swap_block = sq.view((1, 1), (2, 2)).into_owned();
    let iswap = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, 0.0)]);
    assert!((swap_block - iswap).camax() < 1e-12);
}

#[test]
fn maximally_mixed_cat_state_has_quarter_fidelity() {
    let p = SystemParams::paper().with_truncation(12);
    let cats = kerrcat::experiments::CatBasis::new(&p).unwrap();
    let basis: Vec<QuantumState> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|b| cats.ket(*b).unwrap()).collect();
    let mixed = basis.iter().fold(DMatrix::<Complex64>::zeros(144, 144), |acc, k| {
        let v = k.as_ket().unwrap();
        acc + v * v.adjoint() * c(0.25, 0.0)
    });
    let mixed = QuantumState::density(vec![12, 12], mixed).unwrap();
    for label in [kerrcat::experiments::BellState::PhiPlus, kerrcat::experiments::BellState::PsiMinus] {
        let f = fidelity(&mixed, &cats.bell(label).unwrap()).unwrap();
        assert!((f - 0.25).abs() < 1e-10, "{f}");
    }
}

#[test]
fn replay_is_deterministic_under_fixed_seeds() {
    let bell = kerrcat::experiments::bell_fock_target([3, 3], kerrcat::experiments::BellState::PsiPlus).unwrap().to_density();
    let m = Measurement::Shots { shots: 200, seed: 11, confusion: None };
    let a = measure_grid(&bell, SliceKind::OneMode { mode: 0 }, vec![-0.5, 0.0, 0.5], &m, 3).unwrap();
    let b = measure_grid(&bell, SliceKind::OneMode { mode: 0 }, vec![-0.5, 0.0, 0.5], &m, 3).unwrap();
    assert_eq!(a, b);

    let ds = paper_dataset(&bell, &m).unwrap();
    let cfg = ReconstructionConfig { max_iterations: 150, restarts: 2, seed: 5, ..ReconstructionConfig::with_dims([3, 3]) };
    let r1 = reconstruct(&ds, &cfg, None).unwrap();
    let r2 = reconstruct(&ds, &cfg, None).unwrap();
    assert_eq!(r1.loss_history, r2.loss_history);
    assert_eq!(r1.rho.density_matrix(), r2.rho.density_matrix());
}

fn gate_preset(n: usize) -> (SystemParams, PulseSchedule) {
    let p = SystemParams::paper().with_truncation(n);
    let sched = preset_schedule(Preset::TwoCatGate, &p, &ScheduleOverrides::default()).unwrap();
    (p, sched)
}

fn refined(dt: f64, radius: f64, halve: bool) -> EvolveOptions {
    let k = if halve { 0.5 } else { 1.0 };
    EvolveOptions { store: kerrcat::evolve::StoreStates::Final, step_radius: Some(radius * k), ..EvolveOptions::with_dt(dt * k) }
}

fn trace_norm(m: &DMatrix<Complex64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().map(|l| l.abs()).sum()
}

#[test]
fn unitary_gate_preset_is_converged_at_default_step() {
    let (p, sched) = gate_preset(20);
    let psi = QuantumState::fock(&p.dims(), &[0, 1]).unwrap();
    let run = |halve| evolve_unitary(&psi, &p, &sched, &refined(1e-3, KET_STEP_RADIUS, halve)).unwrap();
    let (a, b) = (run(false), run(true));
    assert!(a.diagnostics.max_norm_drift / sched.total_duration() <= 1e-8, "{:?}", a.diagnostics);
    let change = 1.0 - fidelity(a.final_state(), b.final_state()).unwrap();
    assert!(change < 1e-8, "fidelity change {change:e}");
    let tn = trace_norm(&(a.final_state().density_matrix() - b.final_state().density_matrix()));
    assert!(tn <= 1e-6, "trace-norm change {tn:e}");
}

#[test]
fn lindblad_gate_preset_converges_at_fine_step_bound() {
    let (p, sched) = gate_preset(6);
    let p = p.with_loss(100.0, 0.01);
    let rho0 = QuantumState::fock(&p.dims(), &[0, 1]).unwrap().to_density();
    let run = |halve| {
        let t = evolve_lindblad(&rho0, &p, &sched, &refined(1e-3, KET_STEP_RADIUS, halve)).unwrap();
        let d = t.diagnostics.clone();
        (t.final_state().density_matrix(), d)
    };
    let ((a, da), (b, _)) = (run(false), run(true));
    let min = a.clone().symmetric_eigen().eigenvalues.min();
    let tn = trace_norm(&(a - b));
    eprintln!("lindblad trace-norm change {tn:e} min eigenvalue {min:e}");
    assert!(tn <= 1e-6, "trace-norm change {tn:e}");
    assert!(da.max_norm_drift / sched.total_duration() <= 1e-6, "{da:?}");
    assert!(min >= -1e-6, "min eigenvalue {min:e}");
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criterion 3 (gate timing at g_g = 2.96 MHz) is a known failure of the model:
//! at that amplitude the gate is about twenty times too fast. It still runs and
//! prints its measured values; the test only fails if some other criterion fails
//! or criterion 3 unexpectedly passes.

use std::f64::consts::FRAC_PI_4;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kerrcat::evolve::{evolve_lindblad, evolve_unitary, fidelity, gate_unitary_reference, EvolveOptions};
use kerrcat::experiments::{self, BellState, CatBasis, ExperimentConfig, RunReport};
use kerrcat::fockspace::{annihilation, cahill_glauber_t, coherent_cat, creation, displacement, local, parity, tensor, CatParity};
use kerrcat::model::{build_hamiltonian, DriveChannel, DriveSpec, SystemParams};
use kerrcat::pulses::{preset_schedule, Preset, PulseSchedule, ScheduleOverrides, Segment};
use kerrcat::tomography::{reconstruct, Objective, ReconstructionConfig};
use kerrcat::wigner::{joint_parity_operator, one_mode_wigner, one_mode_wigner_displaced, paper_dataset, Measurement};
use kerrcat::{Complex64, Operator, QuantumState};
use nalgebra::DMatrix;

const KNOWN_RED: &[u8] = &[3];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

struct Outcome {
    passed: bool,
    detail: String,
}

type Criterion<'a> = (u8, &'static str, Box<dyn Fn() -> Outcome + 'a>);

fn within(x: f64, centre: f64, tol: f64) -> bool {
    (x - centre).abs() <= tol
}

fn budget(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.1} s (limit {limit_s} s)"))
}

fn run_experiment(name: &str, dir: &std::path::Path, overrides: &[&str]) -> RunReport {
    let mut sets: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    sets.push(format!("experiment = \"{name}\""));
    let mut cfg = ExperimentConfig::load(None, &sets).unwrap();
    cfg.output_dir = dir.join(name);
    experiments::run(&cfg, None).unwrap()
}

fn metric(r: &RunReport, name: &str) -> f64 {
    r.metric(name).unwrap_or_else(|| panic!("missing metric {name}"))
}

fn leakage() -> Outcome {
    let start = Instant::now();
    let p = SystemParams::paper();
    let cats = CatBasis::new(&p).unwrap();
    let mut worst: f64 = 0.0;
    for label in BellState::ALL {
        let b = cats.bell(label).unwrap();
        for m in 0..2 {
            worst = worst.max(b.tail_population(m, 8).unwrap());
        }
    }
    let (fast, t) = budget(start.elapsed(), 1.0);
    Outcome { passed: worst < 1e-4 && fast, detail: format!("max per-mode sum p_n(n>=8) = {worst:.3e} (< 1e-4); {t}") }
}

fn lindblad_bell_cat(dir: &std::path::Path) -> Outcome {
    let start = Instant::now();
    let r = run_experiment(
        "fock_to_cat",
        dir,
        &[
            "params.t1_1 = 100",
            "params.t1_2 = 100",
            "params.n_th_1 = 0.01",
            "params.n_th_2 = 0.01",
            "params.n1 = 20",
            "params.n2 = 20",
            "evolution.dt = 0.001",
            "sweep.bell_states = [\"phi_plus\"]",
        ],
    );
    let (fast, t) = budget(start.elapsed(), 300.0);
    let fbf = metric(&r, "bell_fock_fidelity_phi_plus");
    let fbc = metric(&r, "bell_cat_fidelity_phi_plus");
    Outcome {
        passed: within(fbf, 0.96, 0.02) && within(fbc, 0.93, 0.02) && fast,
        detail: format!("Bell-Fock {fbf:.4} (0.96 +/- 0.02), Bell-Cat {fbc:.4} (0.93 +/- 0.02); {t}"),
    }
}

fn gate_timing(dir: &std::path::Path) -> Outcome {
    let start = Instant::now();
    let r = run_experiment("two_cat_gate", dir, &["schedule.gate_amplitude = 2.96", "params.n1 = 20", "params.n2 = 20"]);
    let (fast, t) = budget(start.elapsed(), 120.0);
    let t_iswap = metric(&r, "iswap_time_us");
    let f0 = metric(&r, "sqrt_iswap_fidelity_best_0");
    let f1 = metric(&r, "sqrt_iswap_fidelity_best_1");
    let flip = metric(&r, "sign_flip");
    Outcome {
        passed: within(t_iswap, 0.48, 0.15 * 0.48) && f0 >= 0.95 && f1 >= 0.95 && flip == 1.0 && fast,
        detail: format!(
            "iSWAP time {t_iswap:.3} us (0.48 +/- 15%), sqrt-iSWAP fidelity {f0:.3} / {f1:.3} (>= 0.95 at both phases), sign flip {flip}; {t}"
        ),
    }
}

fn rabi_decay(dir: &std::path::Path) -> Outcome {
    let cfg =
        ExperimentConfig::load(None, &["experiment = \"two_cat_gate\"".into(), "params.n1 = 12".into(), "params.n2 = 12".into()]).unwrap();
    let cal = experiments::calibrate_gate_amplitude(&cfg).unwrap();
    let start = Instant::now();
    let amp = format!("schedule.gate_amplitude = {}", cal.value);
    let r = run_experiment(
        "two_cat_gate",
        dir,
        &[
            &amp,
            "params.t1_1 = 10",
            "params.t1_2 = 10",
            "params.n1 = 12",
            "params.n2 = 12",
            "sweep.durations = { start = 0.0, stop = 6.0, step = 0.02 }",
        ],
    );
    let (fast, t) = budget(start.elapsed(), 600.0);
    let tau = metric(&r, "rabi_decay_us");
    Outcome {
        passed: within(tau, 3.0, 0.9) && fast,
        detail: format!("fitted envelope decay {tau:.3} us (3 +/- 30%) at calibrated gate amplitude {:.4} MHz; {t}", cal.value),
    }
}

fn tomography(dir: &std::path::Path) -> Outcome {
    let start = Instant::now();
    let ideal = run_experiment("tomography", dir, &["tomography.source = \"bell_cat\""]);
    let (fast_a, ta) = budget(start.elapsed(), 900.0);
    let start = Instant::now();
    let degraded = run_experiment(
        "tomography",
        &dir.join("degraded"),
        &["tomography.source = \"degraded\"", "tomography.degrade_t1 = 10", "tomography.wait = 2.0"],
    );
    let (fast_b, tb) = budget(start.elapsed(), 900.0);
    let fi = metric(&ideal, "reconstruction_fidelity");
    let f0 = metric(&degraded, "truth_vs_initial_fidelity");
    let fd = metric(&degraded, "reconstruction_fidelity");
    Outcome {
        passed: fi > 0.99 && within(f0, 0.57, 0.03) && fd >= 0.98 && fast_a && fast_b,
        detail: format!(
            "ideal reconstruction {fi:.4} (> 0.99; {ta}), degraded truth-vs-initial {f0:.4} (0.57 +/- 0.03), reconstruction {fd:.4} (>= 0.98; {tb})"
        ),
    }
}

/// One deterministic instance of each property family; the randomized suite lives in `properties.rs`.
fn property_battery() -> Outcome {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut total_checks = 0;
    let mut check = |name: &str, ok: bool| {
        total_checks += 1;
        if !ok {
            failed.push(name.to_string());
        }
    };

    let n = 20;
    let comm = annihilation::<f64>(n).unwrap().commutator(&creation::<f64>(n).unwrap());
    check("commutator", (comm.leading_block(n - 1) - DMatrix::identity(n - 1, n - 1)).camax() < 1e-12);
    check("parity = T(0)", cahill_glauber_t::<f64>(c(0.0, 0.0), n).unwrap().data() == parity::<f64>(n).unwrap().data());

    let d = displacement(c(0.9, -0.6), 60).unwrap();
    let dm = displacement(c(-0.9, 0.6), 60).unwrap();
    let id = DMatrix::<Complex64>::identity(12, 12);
    check("displacement unitary", ((d.adjoint().data() * d.data()).view((0, 0), (12, 12)) - &id).camax() < 1e-10);
    check("displacement inverse", ((dm.data() * d.data()).view((0, 0), (12, 12)) - &id).camax() < 1e-10);

    let p = SystemParams::paper().with_truncation(6);
    let drives: Vec<DriveSpec> = DriveChannel::ALL
        .iter()
        .enumerate()
        .map(|(k, ch)| DriveSpec::constant(*ch, 0.4 + 0.3 * k as f64, 0.7 - 0.2 * k as f64, 0.5 * k as f64))
        .collect();
    check("H Hermitian", build_hamiltonian(&p, &drives, 0.37).unwrap().is_hermitian(1e-12));

    let mut q = SystemParams::paper().with_truncation(10);
    q.g = 0.0;
    let sched = preset_schedule(Preset::CatGen, &q, &ScheduleOverrides::default()).unwrap();
    let par = local(&parity::<f64>(10).unwrap(), 0, &q.dims()).unwrap();
    let opts = EvolveOptions { observables: vec![("p".into(), par)], ..EvolveOptions::with_dt(1e-3) };
    let tr = evolve_unitary(&QuantumState::fock(&q.dims(), &[0, 0]).unwrap(), &q, &sched, &opts).unwrap();
    check("parity conservation", tr.observable("p").unwrap().iter().all(|v| (v - 1.0).abs() < 1e-6));
    let pp = joint_parity_operator(q.dims()).unwrap();
    let pumps = [DriveSpec::constant(DriveChannel::Pump1, 2.0, 1.0, 0.0), DriveSpec::constant(DriveChannel::Pump2, 1.5, -1.0, 0.2)];
    check(
        "pumps commute with joint parity",
        build_hamiltonian(&SystemParams::paper().with_truncation(10), &pumps, 0.4).unwrap().commutator(&pp).max_abs() < 1e-12,
    );

    let lp = SystemParams::paper().with_truncation(5).with_loss(5.0, 0.05);
    let segs = vec![Segment { t_start: 0.0, t_end: 0.3, drive: DriveSpec::constant(DriveChannel::Pump1, 1.5, 1.0, 0.0) }];
    let opts = EvolveOptions { check_positivity: true, step_radius: Some(0.1), ..EvolveOptions::with_dt(1e-3) };
    let rho0 = QuantumState::fock(&lp.dims(), &[1, 0]).unwrap().to_density();
    let tr = evolve_lindblad(&rho0, &lp, &PulseSchedule::new(segs, 0.3).unwrap(), &opts).unwrap();
    check("Lindblad trace drift", tr.diagnostics.max_norm_drift / 0.3 <= 1e-6);
    check("Lindblad positivity", tr.diagnostics.min_eigenvalue.unwrap() >= -1e-6);

    let cat = coherent_cat(1.2, CatParity::Odd, 30).unwrap().to_density();
    let w_cg = one_mode_wigner(&cat, c(0.4, -0.3)).unwrap();
    let w_d = one_mode_wigner_displaced(&cat, c(0.4, -0.3)).unwrap();
    check("Wigner CG vs displaced parity", (w_cg - w_d).abs() < 1e-8);
    let step = 0.05;
    let mut total = 0.0;
    for x in -100..=100 {
        for y in -100..=100 {
            total += one_mode_wigner(&cat, c(x as f64 * step, y as f64 * step)).unwrap() * step * step;
        }
    }
    check("1WF normalization", (total - 1.0).abs() < 1e-2);

    let u = gate_unitary_reference();
    check("U_G unitary", u.is_unitary(1e-15));
    let sq = u.data() * u.data();
    let iswap = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, 0.0)]);
    check("U_G^2 = iSWAP block", (sq.view((1, 1), (2, 2)) - iswap).camax() < 1e-12);
    let x = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    let xx = tensor(&Operator::new(vec![2], x.clone()).unwrap(), &Operator::new(vec![2], x).unwrap());
    let expx = DMatrix::identity(4, 4) * c(FRAC_PI_4.cos(), 0.0) + xx.data() * c(0.0, FRAC_PI_4.sin());
    let phase = (expx.adjoint() * u.data()).trace() / c(4.0, 0.0);
    check("U_G = exp(i pi/4 XX)", (u.data() - expx * phase).camax() < 1e-12);

    let st = QuantumState::fock(&[3, 3], &[1, 0]).unwrap();
    let ds = paper_dataset(&st, &Measurement::Ideal).unwrap();
    let obj = Objective::new(&ds, [3, 3]).unwrap();
    let t = DMatrix::from_fn(9, 9, |r, s| c(((r * 9 + s) as f64 * 0.37).sin(), ((r + 2 * s) as f64 * 0.61).cos()));
    let (_, g) = obj.loss_and_gradient(&t).unwrap();
    let h = 1e-5;
    let mut grad_ok = true;
    for k in [0, 10, 41, 79] {
        for dir in [c(1.0, 0.0), c(0.0, 1.0)] {
            let (mut tp, mut tm) = (t.clone(), t.clone());
            tp[k] += dir * h;
            tm[k] -= dir * h;
            let fd = (obj.loss(&tp).unwrap() - obj.loss(&tm).unwrap()) / (2.0 * h);
            let an = if dir.re > 0.0 { g[k].re } else { g[k].im };
            grad_ok &= (an - fd).abs() <= 1e-4 * fd.abs().max(1e-6);
        }
    }
    check("tomography gradient vs finite differences", grad_ok);

    let bell = experiments::bell_fock_target([3, 3], BellState::PsiPlus).unwrap().to_density();
    let m = Measurement::Shots { shots: 200, seed: 11, confusion: None };
    let ds = paper_dataset(&bell, &m).unwrap();
    let cfg = ReconstructionConfig { max_iterations: 150, restarts: 2, seed: 5, ..ReconstructionConfig::with_dims([3, 3]) };
    let (a, b) = (reconstruct(&ds, &cfg, None).unwrap(), reconstruct(&ds, &cfg, None).unwrap());
    check("deterministic replay", a.loss_history == b.loss_history && ds == paper_dataset(&bell, &m).unwrap());

    let (fast, t) = budget(start.elapsed(), 600.0);
    Outcome {
        passed: failed.is_empty() && fast,
        detail: if failed.is_empty() {
            format!("all {total_checks} property checks hold; {t}")
        } else {
            format!("failed: {}; {t}", failed.join(", "))
        },
    }
}

fn mixed_state_baseline() -> Outcome {
    let p = SystemParams::paper().with_truncation(12);
    let cats = CatBasis::new(&p).unwrap();
    let mut mixed = DMatrix::<Complex64>::zeros(144, 144);
    for bits in [[0, 0], [0, 1], [1, 0], [1, 1]] {
        let v = cats.ket(bits).unwrap().as_ket().unwrap().clone();
        mixed += &v * v.adjoint() * c(0.25, 0.0);
    }
    let mixed = QuantumState::density(vec![12, 12], mixed).unwrap();
    let worst = BellState::ALL.iter().map(|l| (fidelity(&mixed, &cats.bell(*l).unwrap()).unwrap() - 0.25).abs()).fold(0.0, f64::max);
    Outcome { passed: worst < 1e-10, detail: format!("max |F - 0.25| over the four Bell-Cat targets = {worst:.2e} (< 1e-10)") }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let criteria: Vec<Criterion> = vec![
        (1, "leakage bound", Box::new(leakage)),
        (2, "Lindblad Bell-Fock / Bell-Cat fidelity", Box::new(|| lindblad_bell_cat(dir))),
        (3, "gate timing at g_g = 2.96 MHz", Box::new(|| gate_timing(dir))),
        (4, "two-cat Rabi decay", Box::new(|| rabi_decay(&dir.join("decay")))),
        (5, "tomography", Box::new(|| tomography(&dir.join("tomo")))),
        (6, "property suites", Box::new(property_battery)),
        (7, "mixed-state baseline", Box::new(mixed_state_baseline)),
    ];
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        let o = f();
        println!("{} criterion {id} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if o.passed == KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: outcomes as expected (known red: {KNOWN_RED:?})");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: criteria with unexpected outcome: {unexpected:?}");
        ExitCode::FAILURE
    }
}

//! Acceptance criteria 1 to 8, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so that every line is printed under a
//! plain `cargo test`. All criteria run even when an earlier one fails; the
//! process exits non-zero if any failed. `QST_ACCEPTANCE=2,5` restricts the
//! run to the listed criteria.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qst_core::analytics::{noisy_max_fidelity, ReportConfig};
use qst_core::harness::{
    delta_time_grid, run_report, run_scan_fig1, run_scan_fig2, run_scan_fig3, run_simulate, to_csv, window_widths,
    ExperimentConfig, Fig1Config, Fig2Config, Fig3Config,
};
use qst_core::lindblad::{
    build_liouvillian, complete_graph_channels, evolve_on_grid, evolve_on_grid_monitored, extract_raw,
    initial_network_state, Integrator, Liouvillian, NetworkState,
};
use qst_core::network::{complete_graph, lindblad_edge_operators, single_excitation_hamiltonian, NoiseSpec};
use qst_core::perturbation::first_order_numeric;
use qst_core::propagator::{BlochInput, ChannelParams, Spectral};
use qst_core::quad::refine_grid_max;
use qst_core::stochastic::{ensemble_on_grid, initial_state_vector, TrajectoryPlan};
use qst_core::Result;

type Criterion = (usize, &'static str, fn() -> Result<Outcome>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn four_node_liouvillian(eta: f64) -> Result<Liouvillian> {
    let g = complete_graph(4)?;
    let h = single_excitation_hamiltonian(&g);
    let spec = NoiseSpec::uniform([3, 4], eta)?;
    build_liouvillian(&h, &lindblad_edge_operators(&g, &spec, 1, 2)?)
}

fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `max_t F` of the noiseless `K_n` from its own spectral propagator, on a
/// grid of step `pi/(64 n)` over `[0, pi]` with Brent refinement.
fn unitary_max_fidelity(n: usize) -> Result<f64> {
    let sp = Spectral::of(&single_excitation_hamiltonian(&complete_graph(n)?))?;
    let f = |t: f64| {
        ChannelParams::unitary(sp.element(t, 2, 1))
            .map(|c| c.fidelity())
            .unwrap_or(f64::NAN)
    };
    let k = 64 * n;
    let step = PI / k as f64;
    let samples: Vec<f64> = (0..=k).map(|j| f(j as f64 * step)).collect();
    Ok(refine_grid_max(&samples, step, f).1)
}

fn criterion_1() -> Result<Outcome> {
    let mut worst = (0, 0.0_f64);
    let mut n2 = 0.0;
    for n in 2..=12 {
        let formula = 0.5 + (2.0 / n as f64) / 3.0 + (4.0 / (n * n) as f64) / 6.0;
        let unitary = unitary_max_fidelity(n)?;
        // the master equation with no noise, maximised independently
        let (_, lindblad) = noisy_max_fidelity(n, 0, 0.0, 2.0 * PI)?;
        let err = (unitary - formula).abs().max((lindblad - formula).abs());
        if err > worst.1 {
            worst = (n, err);
        }
        if n == 2 {
            n2 = unitary;
        }
    }
    let f4 = unitary_max_fidelity(4)?;
    let pass = worst.1 <= 1e-6 && (n2 - 1.0).abs() <= 1e-6 && (f4 - 17.0 / 24.0).abs() <= 1e-6;
    Ok(outcome(
        pass,
        format!(
            "max |max_t F - formula| = {:.2e} (n = {}); n=2: {n2:.9}; n=4: {f4:.9} vs 17/24",
            worst.1, worst.0
        ),
    ))
}

const C2_ETAS: [f64; 3] = [0.25, 1.0, 4.0];
const C2_N_TRAJ: usize = 20_000;
const C2_DT: f64 = 1e-3;
const C2_SEED: u64 = 20_240_601;

fn criterion_2() -> Result<Outcome> {
    let times = [0.5, 1.0, 1.5 * PI];
    let probe = BlochInput::canonical();
    let g = complete_graph(4)?;
    let h = single_excitation_hamiltonian(&g);
    let rho0 = initial_network_state(4, 1, &probe)?;
    let psi0 = initial_state_vector(4, 1, &probe)?;
    let mut ok = true;
    let mut notes = Vec::new();

    // eta = 0: the master equation and the trajectories reduce to the unitary engine
    let sp = Spectral::of(&h)?;
    let l0 = four_node_liouvillian(0.0)?;
    let lin0 = evolve_on_grid(&l0, &rho0, &times, Integrator::Exact)?;
    let plan0 = TrajectoryPlan::new(4, C2_DT, 0.0, C2_SEED, NoiseSpec::uniform([3, 4], 0.0)?)?;
    let traj0 = ensemble_on_grid(&plan0, &h, &psi0, &times)?;
    let mut unitary_err = 0.0_f64;
    for ((&t, l), e) in times.iter().zip(&lin0).zip(&traj0) {
        let psi = sp.propagator(t) * &psi0;
        let exact = &psi * psi.adjoint();
        unitary_err = unitary_err
            .max(max_abs_diff(l.rho(), &exact))
            .max(max_abs_diff(e.rho_mean.rho(), &exact));
    }
    ok &= unitary_err <= 1e-9;
    notes.push(format!("eta=0 vs unitary {unitary_err:.1e}"));

    let mut worst_drift = 0.0_f64;
    let mut worst_sigma = 0.0_f64;
    let mut worst_rho_sigma = 0.0_f64;
    for eta in C2_ETAS {
        let l = four_node_liouvillian(eta)?;
        let coarse = evolve_on_grid(&l, &rho0, &times, Integrator::Rk4 { dt: C2_DT })?;
        let fine = evolve_on_grid(&l, &rho0, &times, Integrator::Rk4 { dt: C2_DT / 2.0 })?;
        for (c, f) in coarse.iter().zip(&fine) {
            worst_drift = worst_drift.max(max_abs_diff(c.rho(), f.rho()));
        }
        let plan = TrajectoryPlan::new(C2_N_TRAJ, C2_DT, 0.0, C2_SEED, NoiseSpec::uniform([3, 4], eta)?)?;
        let ens = ensemble_on_grid(&plan, &h, &psi0, &times)?;
        for (f, e) in fine.iter().zip(&ens) {
            let (z_sq, lz) = extract_raw(f, &probe, 1, 2)?;
            let (ez, elz) = e.channel_moments(&probe, 1, 2)?;
            // a 1e-9 floor keeps deterministic entries at roundoff level
            let sz = (ez.value - z_sq).abs() / (ez.std_err + 1e-9);
            let sl = (elz.value - lz).norm() / (elz.std_err + 1e-9);
            worst_sigma = worst_sigma.max(sz).max(sl);
            let d = e.rho_mean.rho() - f.rho();
            for (x, s) in d.iter().zip(e.std_err.iter()) {
                worst_rho_sigma = worst_rho_sigma.max(x.norm() / (s + 1e-9));
            }
        }
    }
    ok &= worst_drift <= 1e-8 && worst_sigma <= 3.0 && worst_rho_sigma <= 3.0;
    notes.push(format!("RK4 dt-halving drift {worst_drift:.1e}"));
    notes.push(format!(
        "trajectories vs Lindblad, channel entries: max {worst_sigma:.2} sigma"
    ));
    notes.push(format!("all density-matrix entries: max {worst_rho_sigma:.2} sigma"));
    Ok(outcome(ok, notes.join("; ")))
}

fn criterion_3() -> Result<Outcome> {
    let t = 1.5 * PI;
    let mut f = Vec::new();
    for k in 0..=32 {
        let eta = 2.0 * k as f64;
        let spec = NoiseSpec::uniform([3, 4], eta)?;
        f.push(complete_graph_channels(4, &spec, 1, 2, &[t], Integrator::Exact)?[0].fidelity());
    }
    let drops: Vec<usize> = (1..f.len()).filter(|&k| f[k] < f[k - 1] - 1e-12).collect();
    let (peak_k, peak) = f
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, &v)| (k, v))
        .expect("non-empty");
    // noise on the two lowest free vertices of K_4 is W = {3, 4}
    assert_eq!(NoiseSpec::auto(4, 2, 1, 2, 1.0)?.vertices(), &[3, 4]);
    let (t_best, f_best) = noisy_max_fidelity(4, 2, 200.0, 2.0 * PI)?;
    let monotone = drops.is_empty();
    let pass = monotone && f_best > 0.99;
    let mono = if monotone {
        "non-decreasing".to_string()
    } else {
        format!(
            "decreases at {} of 32 steps (first at eta={}); peak F={peak:.4} at eta={}",
            drops.len(),
            2 * drops[0],
            2 * peak_k
        )
    };
    Ok(outcome(
        pass,
        format!(
            "F(3pi/2): eta=0 {:.4}, eta=64 {:.4}, {mono}; eta=200 best t={t_best:.4}: F={f_best:.5} (need > 0.99)",
            f[0], f[32]
        ),
    ))
}

fn criterion_4() -> Result<Outcome> {
    let eta = 1e3;
    let k = 2000;
    let times: Vec<f64> = (0..=k).map(|j| 2.0 * PI * j as f64 / k as f64).collect();
    let mut ok = true;
    let mut notes = Vec::new();
    for (n, m) in [(4, 2), (6, 2), (6, 4)] {
        let spec = NoiseSpec::auto(n, m, 1, 2, eta)?;
        let noisy = complete_graph_channels(n, &spec, 1, 2, &times, Integrator::Exact)?;
        let reduced = complete_graph_channels(n - m, &NoiseSpec::none(), 1, 2, &times, Integrator::Exact)?;
        let (at, dev) = noisy
            .iter()
            .zip(&reduced)
            .zip(&times)
            .map(|((a, b), &t)| (t, (a.fidelity() - b.fidelity()).abs()))
            .fold((0.0, 0.0_f64), |acc, x| if x.1 > acc.1 { x } else { acc });
        ok &= dev <= 0.02;
        notes.push(format!("({n},{m}) max dev {dev:.4} at t={at:.3}"));
    }
    Ok(outcome(ok, format!("{} (limit 0.02)", notes.join(", "))))
}

fn criterion_5() -> Result<Outcome> {
    let (n, m, t) = (4, 2, 1.0);
    let gap = |eta: f64| -> Result<f64> {
        let fo = first_order_numeric(n, m, eta, t, 1e-3)?.fidelity()?;
        let spec = NoiseSpec::auto(n, m, 1, 2, eta)?;
        let full = complete_graph_channels(n, &spec, 1, 2, &[t], Integrator::Exact)?[0].fidelity();
        Ok((fo - full).abs())
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for eta in [1e-2, 5e-3, 2.5e-3] {
        let r = gap(eta)? / gap(eta / 2.0)?;
        ok &= (2.6..=5.4).contains(&r);
        notes.push(format!("eta={eta}: {r:.4}"));
    }
    Ok(outcome(
        ok,
        format!("gap(eta)/gap(eta/2) {} (need [2.6, 5.4])", notes.join(", ")),
    ))
}

fn criterion_6() -> Result<Outcome> {
    // default ranges at resolution pi/200; the 200-point CLI grid steps over
    // the narrow windows near the transfer peaks
    let t_steps = 800;
    let f2 = Fig2Config {
        t_steps,
        ..Fig2Config::default()
    };
    let f3 = Fig3Config {
        t_steps,
        ..Fig3Config::default()
    };
    let step = delta_time_grid(f3.t_max, t_steps)[0];
    assert!((step - PI / 200.0).abs() < 1e-15);
    let w2 = window_widths(&run_scan_fig2(&f2)?, f2.t_max, f2.t_steps);
    let w3 = window_widths(&run_scan_fig3(&f3)?, f3.t_max, f3.t_steps);
    let missing2: Vec<usize> = w2.iter().filter(|x| x.1 <= 0.0).map(|x| x.0 .0).collect();
    let missing3: Vec<usize> = w3.iter().filter(|x| x.1 <= 0.0).map(|x| x.0 .1).collect();
    let monotone = w3.windows(2).all(|p| p[1].1 >= p[0].1);
    let pass = missing2.is_empty() && missing3.is_empty() && w2.len() == 9 && w3.len() == 7 && monotone;
    let widths: Vec<String> = w3.iter().map(|((_, m), w)| format!("m{m}:{w:.3}")).collect();
    Ok(outcome(
        pass,
        format!(
            "fig2 n without Delta>0: {missing2:?}; fig3 m without Delta>0: {missing3:?}; widths {} ({})",
            widths.join(" "),
            if monotone {
                "non-decreasing"
            } else {
                "not monotone in m"
            }
        ),
    ))
}

fn random_spec(rng: &mut ChaCha8Rng, n: usize, i: usize, o: usize) -> Result<NoiseSpec> {
    let free: Vec<usize> = (1..=n).filter(|&v| v != i && v != o).collect();
    let m = rng.random_range(0..=free.len());
    let mut picked = free;
    for k in 0..m {
        let j = rng.random_range(k..picked.len());
        picked.swap(k, j);
    }
    picked.truncate(m);
    // stiff cases (eta up to 1e3) go through exact stepping
    let scale = if rng.random_bool(0.2) { 1e3 } else { 5.0 };
    if m >= 2 && rng.random_bool(0.5) {
        let mut rates = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                rates.push(((picked[a], picked[b]), scale * rng.random::<f64>()));
            }
        }
        NoiseSpec::per_edge(picked, rates)
    } else {
        NoiseSpec::uniform(picked, scale * rng.random::<f64>())
    }
}

fn criterion_7() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = [0.0_f64; 3];
    let mut min_eig = f64::INFINITY;
    let mut steps = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let i = rng.random_range(1..=n);
        let o = loop {
            let o = rng.random_range(1..=n);
            if o != i {
                break o;
            }
        };
        let spec = random_spec(&mut rng, n, i, o)?;
        let g = complete_graph(n)?;
        let h = single_excitation_hamiltonian(&g);
        let l = build_liouvillian(&h, &lindblad_edge_operators(&g, &spec, i, o)?)?;
        let probe = BlochInput::new(PI * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>())?;
        let rho0: NetworkState = initial_network_state(n, i, &probe)?;
        let t_end = 0.5 + 4.0 * rng.random::<f64>();
        let times: Vec<f64> = (1..=8).map(|k| t_end * k as f64 / 8.0).collect();
        let dt = 1e-3;
        let runs = evolve_on_grid_monitored(&l, &rho0, &times, Integrator::Auto { dt })?;
        let s = runs.last().expect("eight outputs").stats;
        steps += s.steps;
        worst[0] = worst[0].max(s.max_trace_drift);
        worst[1] = worst[1].max(s.max_hermiticity_defect);
        worst[2] = worst[2].max(s.max_vacuum_drift);
        min_eig = min_eig.min(s.min_eigenvalue);
    }
    let pass = worst.iter().all(|&w| w < 1e-9) && min_eig >= -1e-8;
    Ok(outcome(
        pass,
        format!(
            "100 configs, {steps} steps: trace {:.1e}, Hermiticity {:.1e}, vacuum {:.1e}, min eigenvalue {min_eig:.1e}",
            worst[0], worst[1], worst[2]
        ),
    ))
}

fn with_threads<T: Send>(k: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build()
        .expect("thread pool")
        .install(f)
}

fn criterion_8() -> Result<Outcome> {
    let sims = [
        r#"{"n": 5, "m": 2, "eta": 1.5, "time_grid": {"t_min": 0, "t_max": 2, "t_steps": 5}, "method": "trajectories", "n_traj": 300, "dt": 0.002, "master_seed": 3}"#,
        r#"{"n": 5, "noisy_vertices": [3, 4, 5], "eta": {"3-4": 1, "3-5": 2, "4-5": 0.5}, "time_grid": {"t_min": 0, "t_max": 2, "t_steps": 7}, "method": "lindblad"}"#,
        r#"{"n": 6, "m": 3, "eta": 0.01, "time_grid": {"t_min": 0.1, "t_max": 2, "t_steps": 6}, "method": "perturbation-numeric"}"#,
        r#"{"n": 7, "time_grid": {"t_min": 0, "t_max": 3, "t_steps": 9}, "method": "unitary"}"#,
    ];
    let fig1 = Fig1Config {
        eta_steps: 6,
        t_steps: 9,
        ..Fig1Config::default()
    };
    let fig2 = Fig2Config {
        n_max: 7,
        t_steps: 40,
        ..Fig2Config::default()
    };
    let fig3 = Fig3Config {
        t_steps: 40,
        ..Fig3Config::default()
    };
    let report = ReportConfig {
        n_traj: 300,
        ..ReportConfig::default()
    };
    let outputs = |k: usize| -> Result<Vec<String>> {
        with_threads(k, || {
            let mut out = Vec::new();
            for s in sims {
                out.push(to_csv(&run_simulate(&ExperimentConfig::from_json(s)?)?));
            }
            out.push(to_csv(&run_scan_fig1(&fig1)?));
            out.push(to_csv(&run_scan_fig2(&fig2)?));
            out.push(to_csv(&run_scan_fig3(&fig3)?));
            out.push(run_report(&report)?.to_json());
            Ok(out)
        })
    };
    let reference = outputs(1)?;
    let mut differing = Vec::new();
    for k in [1, 2, 4, 7] {
        let again = outputs(k)?;
        for (j, (a, b)) in reference.iter().zip(&again).enumerate() {
            if a != b {
                differing.push(format!("output {j} at {k} threads"));
            }
        }
    }
    let bytes: usize = reference.iter().map(String::len).sum();
    Ok(outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("simulate (4 methods), fig1, fig2, fig3, report: {bytes} bytes identical at 1, 2, 4, 7 threads")
        } else {
            format!("differences: {}", differing.join(", "))
        },
    ))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("QST_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 8] = [
        (1, "no perfect transfer on complete graphs", criterion_1),
        (2, "unitary, Lindblad and trajectory engines agree", criterion_2),
        (3, "noise benefit on four nodes", criterion_3),
        (4, "Zeno network reduction", criterion_4),
        (5, "weak-noise expansion is first order", criterion_5),
        (6, "Delta maps", criterion_6),
        (7, "conservation suite", criterion_7),
        (8, "determinism across thread counts", criterion_8),
    ];
    let mut failed = Vec::new();
    for (k, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let start = Instant::now();
        let res = std::panic::catch_unwind(run);
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match res {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        println!(
            "criterion {k} {}: {name}: {detail} [{secs:.1} s]",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(k);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria pass");
}

//! Randomised invariants across the public API.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use crate::analytics::zeno_effective_hamiltonian;
use crate::lindblad::{
    build_liouvillian, complete_graph_channels, evolve_on_grid, extract_channel, initial_network_state, Integrator,
};
use crate::network::{
    complete_graph, lindblad_edge_operators, single_excitation_hamiltonian, Graph, HermitianOperator, NoiseSpec,
};
use crate::perturbation::{delta_series, Baseline};
use crate::propagator::{
    avg_fidelity_given_v, optimal_avg_fidelity, propagator_matrix, transfer_amplitude, BlochInput, ChannelParams,
};
use crate::stochastic::{ensemble_on_grid, initial_state_vector, TrajectoryPlan};

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random Hermitian matrix from `dim^2` reals in `[-1, 1]`.
fn hermitian(dim: usize, xs: &[f64]) -> HermitianOperator {
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    let mut it = xs.iter().copied();
    for r in 0..dim {
        m[(r, r)] = C64::new(it.next().unwrap(), 0.0);
        for c in r + 1..dim {
            let z = C64::new(it.next().unwrap(), it.next().unwrap());
            m[(r, c)] = z;
            m[(c, r)] = z.conj();
        }
    }
    HermitianOperator::new(m).unwrap()
}

/// `k` distinct vertices of `1..=n` other than `i` and `o`, chosen by `keys`.
fn pick(n: usize, i: usize, o: usize, k: usize, keys: &[u32]) -> Vec<usize> {
    let mut free: Vec<usize> = (1..=n).filter(|&v| v != i && v != o).collect();
    for (j, &key) in keys.iter().enumerate().take(k) {
        let r = j + key as usize % (free.len() - j);
        free.swap(j, r);
    }
    free.truncate(k);
    free
}

fn graph_from_bits(n: usize, bits: u64) -> Graph {
    let mut edges = Vec::new();
    let mut b = 0;
    for k in 1..=n {
        for l in k + 1..=n {
            if bits >> b & 1 == 1 {
                edges.push((k, l));
            }
            b += 1;
        }
    }
    Graph::new(n, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagator_is_unitary_and_a_group(
        dim in 2usize..7,
        xs in prop::collection::vec(-1.0f64..1.0, 49),
        t in 0.0f64..20.0,
        s in 0.0f64..20.0,
    ) {
        let h = hermitian(dim, &xs);
        let ut = propagator_matrix(&h, t).unwrap();
        let us = propagator_matrix(&h, s).unwrap();
        let uts = propagator_matrix(&h, t + s).unwrap();
        let id = DMatrix::<C64>::identity(dim, dim);
        prop_assert!(max_abs(&(ut.adjoint() * &ut - id)) < 1e-10);
        prop_assert!(max_abs(&(uts - &ut * &us)) < 1e-9);
    }

    #[test]
    fn graph_hamiltonians_are_symmetric_and_integer(n in 2usize..9, bits in any::<u64>(), t in 0.0f64..10.0) {
        let g = graph_from_bits(n, bits);
        let h = single_excitation_hamiltonian(&g);
        let m = h.matrix();
        for r in 0..=n {
            for c in 0..=n {
                prop_assert_eq!(m[(r, c)], m[(c, r)]);
                prop_assert_eq!(m[(r, c)].im, 0.0);
                prop_assert!(m[(r, c)].re == 0.0 || m[(r, c)].re == 2.0);
            }
        }
        // a real symmetric generator gives a symmetric propagator
        let (i, o) = (1, n);
        let a = transfer_amplitude(&h, t, i, o).unwrap();
        let b = transfer_amplitude(&h, t, o, i).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn lindblad_operators_square_to_projectors(n in 4usize..9, k in 0usize..7, keys in prop::collection::vec(any::<u32>(), 7)) {
        let m = k.min(n - 2);
        let w = pick(n, 1, 2, m, &keys);
        let spec = NoiseSpec::uniform(w, 0.7).unwrap();
        let ops = lindblad_edge_operators(&complete_graph(n).unwrap(), &spec, 1, 2).unwrap();
        prop_assert_eq!(ops.len(), m * m.saturating_sub(1) / 2);
        for (op, rate) in &ops {
            prop_assert_eq!(*rate, 0.7);
            let l = op.matrix();
            let sq = l * l;
            // L^2 is the projector onto the two endpoints of the edge
            let diag: Vec<usize> = (0..=n).filter(|&r| sq[(r, r)].re == 1.0).collect();
            prop_assert_eq!(diag.len(), 2);
            prop_assert!(l[(diag[0], diag[1])].re == 1.0);
            let mut p = DMatrix::<C64>::zeros(n + 1, n + 1);
            for &d in &diag {
                p[(d, d)] = C64::new(1.0, 0.0);
            }
            prop_assert_eq!(sq, p);
        }
    }

    #[test]
    fn optimal_fidelity_bounds(
        r in 0.0f64..1.0,
        arg in -PI..PI,
        lambda in 0.0f64..1.0,
        ur in 0.0f64..1.0,
        uarg in -PI..PI,
    ) {
        let ch = ChannelParams::new(C64::from_polar(r, arg), lambda).unwrap();
        let best = optimal_avg_fidelity(&ch);
        prop_assert!((0.5..=1.0).contains(&best));
        prop_assert!(best + 1e-12 >= avg_fidelity_given_v(&ch, C64::from_polar(ur, uarg)));
    }

    #[test]
    fn channel_does_not_depend_on_the_probe(
        n in 3usize..7,
        k in 0usize..5,
        keys in prop::collection::vec(any::<u32>(), 5),
        eta in 0.0f64..6.0,
        t in 0.0f64..4.0,
        theta in 0.2f64..2.9,
        phi in 0.0f64..(2.0 * PI),
    ) {
        let m = k.min(n - 2);
        let spec = NoiseSpec::uniform(pick(n, 1, 2, m, &keys), eta).unwrap();
        let g = complete_graph(n).unwrap();
        let h = single_excitation_hamiltonian(&g);
        let l = build_liouvillian(&h, &lindblad_edge_operators(&g, &spec, 1, 2).unwrap()).unwrap();
        let probe = BlochInput::new(theta, phi).unwrap();
        let rho = evolve_on_grid(&l, &initial_network_state(n, 1, &probe).unwrap(), &[t], Integrator::Exact).unwrap();
        let other = extract_channel(&rho[0], &probe, 1, 2).unwrap();
        let canonical = complete_graph_channels(n, &spec, 1, 2, &[t], Integrator::Exact).unwrap()[0];
        prop_assert!(other.lambda() <= 1.0 && canonical.abs_z() <= 1.0 + 1e-9);
        prop_assert!((other.z() - canonical.z()).norm() < 1e-9);
        prop_assert!((other.fidelity() - canonical.fidelity()).abs() < 1e-9);
    }

    #[test]
    fn fidelity_is_covariant_under_relabelling(
        n in 4usize..8,
        k in 1usize..6,
        keys in prop::collection::vec(any::<u32>(), 6),
        io in (any::<u32>(), any::<u32>()),
        eta in 0.0f64..8.0,
        t in 0.0f64..5.0,
    ) {
        let m = k.min(n - 2);
        let reference = complete_graph_channels(n, &NoiseSpec::auto(n, m, 1, 2, eta).unwrap(), 1, 2, &[t], Integrator::Exact)
            .unwrap()[0]
            .fidelity();
        let i = 1 + io.0 as usize % n;
        let o = {
            let o = 1 + io.1 as usize % (n - 1);
            if o >= i { o + 1 } else { o }
        };
        let spec = NoiseSpec::uniform(pick(n, i, o, m, &keys), eta).unwrap();
        let f = complete_graph_channels(n, &spec, i, o, &[t], Integrator::Exact).unwrap()[0].fidelity();
        prop_assert!((f - reference).abs() < 1e-9, "{} vs {}", f, reference);
    }

    #[test]
    fn zeno_hamiltonian_is_the_reduced_complete_graph(n in 3usize..9, k in 0usize..7, keys in prop::collection::vec(any::<u32>(), 7)) {
        let m = k.min(n - 2);
        let w = pick(n, 1, 2, m, &keys);
        let h = zeno_effective_hamiltonian(n, &NoiseSpec::uniform(w.clone(), 1.0).unwrap()).unwrap();
        let keep: Vec<usize> = (0..=n).filter(|v| !w.contains(v)).collect();
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |r, c| h.matrix()[(keep[r], keep[c])]);
        let reduced = single_excitation_hamiltonian(&complete_graph(n - m).unwrap());
        prop_assert_eq!(&sub, reduced.matrix());
        for &v in &w {
            prop_assert!(h.matrix().row(v).iter().all(|x| x.norm() == 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn delta_is_non_negative_and_continuous(n in 4usize..9, k in 1usize..7, eta in 0.0f64..0.1) {
        let m = k.min(n - 2);
        let step = PI / 200.0;
        let times: Vec<f64> = (1..=400).map(|j| j as f64 * step).collect();
        let s = delta_series(n, m, eta, &times, Baseline::Analytic).unwrap();
        prop_assert!(s.iter().all(|d| d.value >= 0.0));
        if eta == 0.0 {
            prop_assert!(s.iter().all(|d| d.value == 0.0));
        }
        // |dF/dt| <= ||G||: entries of rho move at most that fast
        let g = complete_graph(n).unwrap();
        let l = build_liouvillian(
            &single_excitation_hamiltonian(&g),
            &lindblad_edge_operators(&g, &NoiseSpec::auto(n, m, 1, 2, eta).unwrap(), 1, 2).unwrap(),
        )
        .unwrap();
        let bound = 1.1 * l.norm_estimate() * step;
        prop_assert!(s.windows(2).all(|w| (w[1].value - w[0].value).abs() <= bound));
    }

    #[test]
    fn ensembles_replay_bit_for_bit(seed in any::<u64>(), eta in 0.0f64..3.0, threads in 2usize..5) {
        let h = single_excitation_hamiltonian(&complete_graph(4).unwrap());
        let psi0 = initial_state_vector(4, 1, &BlochInput::canonical()).unwrap();
        let plan = TrajectoryPlan::new(150, 0.005, 0.0, seed, NoiseSpec::uniform([3, 4], eta).unwrap()).unwrap();
        let times = [0.2, 0.5];
        let run = |k: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .unwrap()
                .install(|| ensemble_on_grid(&plan, &h, &psi0, &times).unwrap())
        };
        prop_assert_eq!(run(1), run(threads));
    }
}

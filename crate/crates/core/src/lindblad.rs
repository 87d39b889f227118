//! Noise-averaged master equation on the vacuum + single-excitation space.
//!
//! Density matrices are vectorised column-major (`vec(A rho B) = (B^T (x) A) vec(rho)`).
//! For a Hermitian edge operator `L` with white-noise strength `eta`
//! (correlation `2 eta delta(t - t')`), the noise average contributes
//! `-eta [L, [L, rho]] = 2 eta (L rho L - {L^2, rho}/2)`.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::network::{
    complete_graph, hermiticity_defect, lindblad_edge_operators, single_excitation_hamiltonian, HermitianOperator,
    NoiseSpec, C64,
};
use crate::propagator::{check_io, BlochInput, ChannelParams, CHANNEL_TOL};

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Largest allowed `dt * ||G||` for the fixed-step RK4 integrator.
pub const RK4_STABILITY_LIMIT: f64 = 0.1;
/// `dt * ||G||` below which [`Integrator::Auto`] picks RK4. Near the
/// stability limit the fifth-order local error can push the zero eigenvalues
/// of a low-rank state below `-POSITIVITY_TOL`.
pub const AUTO_RK4_LIMIT: f64 = 0.02;

/// Density matrix on `{|0>, |1>, ..., |n>}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    rho: DMatrix<C64>,
}

impl NetworkState {
    /// Wraps `rho` after checking Hermiticity, unit trace and positivity.
    pub fn new(rho: DMatrix<C64>) -> Result<Self> {
        if !rho.is_square() {
            return Err(Error::invalid("density matrix must be square"));
        }
        let state = Self { rho };
        let d = state.diagnostics();
        d.check(None)?;
        Ok(state)
    }

    pub(crate) fn from_raw(rho: DMatrix<C64>) -> Self {
        Self { rho }
    }

    /// Rank-one state `|psi><psi|`.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        Self::new(psi * psi.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn rho(&self) -> &DMatrix<C64> {
        &self.rho
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn vacuum_population(&self) -> f64 {
        self.rho[(0, 0)].re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(h)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diagnostics(&self) -> StateDiagnostics {
        StateDiagnostics {
            trace_error: (self.trace() - C64::new(1.0, 0.0)).norm(),
            hermiticity_defect: hermiticity_defect(&self.rho),
            min_eigenvalue: self.min_eigenvalue(),
        }
    }

    fn to_vec(&self) -> DVector<C64> {
        DVector::from_column_slice(self.rho.as_slice())
    }

    fn from_vec(v: &DVector<C64>, dim: usize) -> Self {
        Self {
            rho: DMatrix::from_column_slice(dim, dim, v.as_slice()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDiagnostics {
    pub trace_error: f64,
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

impl StateDiagnostics {
    fn check(&self, step: Option<usize>) -> Result<()> {
        if !(self.trace_error <= TRACE_TOL) {
            return Err(Error::numeric(
                step,
                format!("trace deviates from 1 by {:.3e}", self.trace_error),
            ));
        }
        if !(self.hermiticity_defect <= HERMITICITY_TOL) {
            return Err(Error::numeric(
                step,
                format!("Hermiticity defect {:.3e}", self.hermiticity_defect),
            ));
        }
        if !(self.min_eigenvalue >= -POSITIVITY_TOL) {
            return Err(Error::numeric(
                step,
                format!("negative eigenvalue {:.3e}", self.min_eigenvalue),
            ));
        }
        Ok(())
    }
}

/// `cos(theta/2)|0> + e^{i phi} sin(theta/2)|i>` as a density matrix.
pub fn initial_network_state(n: usize, input_vertex: usize, input: &BlochInput) -> Result<NetworkState> {
    if input_vertex == 0 || input_vertex > n {
        return Err(Error::invalid(format!("input vertex {input_vertex} outside 1..={n}")));
    }
    let psi = initial_pure_state(n, input_vertex, input);
    Ok(NetworkState::from_raw(&psi * psi.adjoint()))
}

pub(crate) fn initial_pure_state(n: usize, input_vertex: usize, input: &BlochInput) -> DVector<C64> {
    let (a, b) = input.amplitudes();
    let mut psi = DVector::zeros(n + 1);
    psi[0] = a;
    psi[input_vertex] = b;
    psi
}

/// Generator of `d vec(rho)/dt = G vec(rho)`, with its Hamiltonian and
/// dissipative parts kept separately.
#[derive(Debug)]
pub struct Liouvillian {
    dim: usize,
    hamiltonian_part: DMatrix<C64>,
    dissipator_part: DMatrix<C64>,
    generator: DMatrix<C64>,
    norm: OnceLock<f64>,
}

impl Clone for Liouvillian {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            hamiltonian_part: self.hamiltonian_part.clone(),
            dissipator_part: self.dissipator_part.clone(),
            generator: self.generator.clone(),
            norm: self.norm.clone(),
        }
    }
}

impl Liouvillian {
    /// Density-matrix dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generator(&self) -> &DMatrix<C64> {
        &self.generator
    }

    pub fn hamiltonian_part(&self) -> &DMatrix<C64> {
        &self.hamiltonian_part
    }

    pub fn dissipator_part(&self) -> &DMatrix<C64> {
        &self.dissipator_part
    }

    /// Power-iteration estimate of the spectral norm of the generator.
    pub fn norm_estimate(&self) -> f64 {
        *self.norm.get_or_init(|| spectral_norm_estimate(&self.generator))
    }

    /// Applies the generator to a density matrix (matrix form).
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let v = DVector::from_column_slice(rho.as_slice());
        let out = &self.generator * v;
        DMatrix::from_column_slice(self.dim, self.dim, out.as_slice())
    }

    /// `vec(I)^dagger G`, which vanishes for a trace-preserving generator.
    pub fn trace_functional_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for col in 0..d * d {
            let s: C64 = (0..d).map(|k| self.generator[(k * d + k, col)]).sum();
            worst = worst.max(s.norm());
        }
        worst
    }

    /// `exp(G h)` by Padé scaling and squaring.
    pub fn step_propagator(&self, h: f64) -> Result<DMatrix<C64>> {
        let e = (&self.generator * C64::new(h, 0.0)).exp();
        let d = self.dim;
        let mut residual = 0.0f64;
        for col in 0..d * d {
            let s: C64 = (0..d).map(|k| e[(k * d + k, col)]).sum();
            let want = if col % (d + 1) == 0 { 1.0 } else { 0.0 };
            residual = residual.max((s - C64::new(want, 0.0)).norm());
        }
        if !(residual < 1e-10) {
            return Err(Error::numeric(
                None,
                format!("step propagator is not trace preserving (residual {residual:.3e})"),
            ));
        }
        Ok(e)
    }
}

fn spectral_norm_estimate(g: &DMatrix<C64>) -> f64 {
    let n = g.ncols();
    if n == 0 {
        return 0.0;
    }
    // deterministic, non-symmetric start vector
    let mut v = DVector::from_fn(n, |i, _| C64::new(1.0 + (i as f64 * 0.618_033_988_7).fract(), 0.0));
    v /= C64::new(v.norm(), 0.0);
    let gh = g.adjoint();
    let mut sigma = 0.0;
    for _ in 0..200 {
        let w = &gh * (g * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw.sqrt();
        v = w / C64::new(nw, 0.0);
        if (next - sigma).abs() <= 1e-12 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

/// Builds the generator of
/// `d rho/dt = -i[H, rho] - sum_k eta_k [L_k, [L_k, rho]]`.
pub fn build_liouvillian(h: &HermitianOperator, ops: &[(HermitianOperator, f64)]) -> Result<Liouvillian> {
    let d = h.dim();
    for (l, eta) in ops {
        if l.dim() != d {
            return Err(Error::invalid(format!(
                "Lindblad operator has dimension {} but the Hamiltonian has {d}",
                l.dim()
            )));
        }
        if !(*eta >= 0.0) {
            return Err(Error::invalid(format!("negative noise strength {eta}")));
        }
    }
    let id = DMatrix::<C64>::identity(d, d);
    let hm = h.matrix();
    let minus_i = C64::new(0.0, -1.0);
    let hamiltonian_part = (id.kronecker(hm) - hm.transpose().kronecker(&id)) * minus_i;

    let mut dissipator_part = DMatrix::<C64>::zeros(d * d, d * d);
    for (l, eta) in ops {
        if *eta == 0.0 {
            continue;
        }
        let lm = l.matrix();
        let l2 = lm * lm;
        let term =
            lm.transpose().kronecker(lm) * C64::new(2.0, 0.0) - id.kronecker(&l2) - l2.transpose().kronecker(&id);
        dissipator_part += term * C64::new(*eta, 0.0);
    }
    let generator = &hamiltonian_part + &dissipator_part;
    Ok(Liouvillian {
        dim: d,
        hamiltonian_part,
        dissipator_part,
        generator,
        norm: OnceLock::new(),
    })
}

/// Running extremes of the conserved quantities along an integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftStats {
    pub steps: usize,
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
    pub max_vacuum_drift: f64,
    pub min_eigenvalue: f64,
}

impl DriftStats {
    fn start(rho0: &NetworkState) -> Self {
        Self {
            steps: 0,
            max_trace_drift: 0.0,
            max_hermiticity_defect: hermiticity_defect(rho0.rho()),
            max_vacuum_drift: 0.0,
            min_eigenvalue: rho0.min_eigenvalue(),
        }
    }

    fn record(&mut self, rho0: &NetworkState, state: &NetworkState) -> Result<()> {
        self.steps += 1;
        let diag = state.diagnostics();
        self.max_trace_drift = self.max_trace_drift.max((state.trace() - rho0.trace()).norm());
        self.max_hermiticity_defect = self.max_hermiticity_defect.max(diag.hermiticity_defect);
        self.max_vacuum_drift = self
            .max_vacuum_drift
            .max((state.vacuum_population() - rho0.vacuum_population()).abs());
        self.min_eigenvalue = self.min_eigenvalue.min(diag.min_eigenvalue);
        diag.check(Some(self.steps))
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub state: NetworkState,
    pub stats: DriftStats,
}

/// How [`evolve_on_grid`] advances the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Classical fourth-order Runge–Kutta with fixed step `dt`.
    Rk4 { dt: f64 },
    /// Exact propagators `exp(G h)` between consecutive output times.
    Exact,
    /// RK4 when `dt * ||G|| <= AUTO_RK4_LIMIT`, exact stepping otherwise.
    Auto { dt: f64 },
}

impl Integrator {
    pub fn resolve(self, l: &Liouvillian) -> Integrator {
        match self {
            Integrator::Auto { dt } if dt * l.norm_estimate() <= AUTO_RK4_LIMIT => Integrator::Rk4 { dt },
            Integrator::Auto { .. } => Integrator::Exact,
            other => other,
        }
    }
}

fn check_rk4_step(l: &Liouvillian, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let g = l.norm_estimate();
    if dt * g > RK4_STABILITY_LIMIT {
        return Err(Error::invalid(format!(
            "dt * ||G|| = {:.3e} exceeds {RK4_STABILITY_LIMIT}; reduce dt or use exact stepping",
            dt * g
        )));
    }
    Ok(())
}

fn rk4_step(g: &DMatrix<C64>, v: &DVector<C64>, h: f64) -> DVector<C64> {
    let hc = C64::new(h, 0.0);
    let k1 = g * v;
    let k2 = g * (v + &k1 * (hc * 0.5));
    let k3 = g * (v + &k2 * (hc * 0.5));
    let k4 = g * (v + &k3 * hc);
    v + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (hc / 6.0)
}

/// Step sizes that cover `[0, span]` with steps of `dt`, the last one
/// shortened to land exactly on `span`.
fn step_sizes(span: f64, dt: f64) -> impl Iterator<Item = f64> {
    let full = if span <= 0.0 {
        0
    } else {
        ((span / dt) * (1.0 - 1e-12)).ceil() as usize
    };
    (0..full).map(move |k| {
        if k + 1 < full {
            dt
        } else {
            span - dt * (full - 1) as f64
        }
    })
}

/// Integrates to time `t` with fixed-step RK4 (`dt * ||G|| <= 0.1`).
pub fn evolve(l: &Liouvillian, rho0: &NetworkState, t: f64, dt: f64) -> Result<NetworkState> {
    Ok(evolve_monitored(l, rho0, t, dt)?.state)
}

/// [`evolve`] that also reports the drift of the conserved quantities.
pub fn evolve_monitored(l: &Liouvillian, rho0: &NetworkState, t: f64, dt: f64) -> Result<Evolution> {
    let mut out = evolve_on_grid_monitored(l, rho0, &[t], Integrator::Rk4 { dt })?;
    Ok(out.pop().expect("one time requested"))
}

/// Integrates to `t` with exact propagators, at most `max_step` apart.
pub fn evolve_exact(l: &Liouvillian, rho0: &NetworkState, t: f64, max_step: f64) -> Result<NetworkState> {
    if !(max_step > 0.0) {
        return Err(Error::invalid("max_step must be positive"));
    }
    if t < 0.0 {
        return Err(Error::invalid("t must be >= 0"));
    }
    check_dims(l, rho0)?;
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    let steps = (t / max_step).ceil().max(1.0) as usize;
    let e = l.step_propagator(t / steps as f64)?;
    let mut v = rho0.to_vec();
    let mut stats = DriftStats::start(rho0);
    let mut state = rho0.clone();
    for _ in 0..steps {
        v = &e * v;
        state = NetworkState::from_vec(&v, l.dim());
        stats.record(rho0, &state)?;
    }
    Ok(state)
}

fn check_dims(l: &Liouvillian, rho0: &NetworkState) -> Result<()> {
    if rho0.dim() != l.dim() {
        return Err(Error::invalid(format!(
            "state dimension {} does not match generator dimension {}",
            rho0.dim(),
            l.dim()
        )));
    }
    Ok(())
}

/// States at each of the non-decreasing, non-negative `times`.
pub fn evolve_on_grid(
    l: &Liouvillian,
    rho0: &NetworkState,
    times: &[f64],
    integrator: Integrator,
) -> Result<Vec<NetworkState>> {
    Ok(evolve_on_grid_monitored(l, rho0, times, integrator)?
        .into_iter()
        .map(|e| e.state)
        .collect())
}

/// [`evolve_on_grid`] with cumulative drift statistics at every output.
pub fn evolve_on_grid_monitored(
    l: &Liouvillian,
    rho0: &NetworkState,
    times: &[f64],
    integrator: Integrator,
) -> Result<Vec<Evolution>> {
    check_dims(l, rho0)?;
    if times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::invalid("times must be >= 0"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("times must be non-decreasing"));
    }
    let integrator = integrator.resolve(l);
    if let Integrator::Rk4 { dt } = integrator {
        check_rk4_step(l, dt)?;
    }
    let d = l.dim();
    let g = l.generator();
    let mut v = rho0.to_vec();
    let mut stats = DriftStats::start(rho0);
    let mut cache: HashMap<u64, DMatrix<C64>> = HashMap::new();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let mut state = rho0.clone();
    for &t in times {
        let span = t - now;
        if span > 0.0 {
            match integrator {
                Integrator::Rk4 { dt } => {
                    for h in step_sizes(span, dt) {
                        v = rk4_step(g, &v, h);
                        state = NetworkState::from_vec(&v, d);
                        stats.record(rho0, &state)?;
                    }
                }
                Integrator::Exact => {
                    let key = span.to_bits();
                    let prop = match cache.entry(key) {
                        std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                        std::collections::hash_map::Entry::Vacant(e) => e.insert(l.step_propagator(span)?),
                    };
                    v = &*prop * v;
                    state = NetworkState::from_vec(&v, d);
                    stats.record(rho0, &state)?;
                }
                Integrator::Auto { .. } => unreachable!("resolved above"),
            }
            now = t;
        }
        out.push(Evolution {
            state: state.clone(),
            stats,
        });
    }
    Ok(out)
}

/// Reads the damping-plus-dephasing channel off the evolved network state.
///
/// With `a = cos(theta/2)`, `b = e^{i phi} sin(theta/2)`:
/// `|z|^2 = <o|rho|o> / |b|^2` and `lambda z = <o|rho|0> / (b a*)`.
/// When `|z| <= 1e-12` the channel is reported as `z = 0, lambda = 1`.
/// The probe must have both amplitudes non-zero.
pub fn extract_channel(rho_t: &NetworkState, input: &BlochInput, i: usize, o: usize) -> Result<ChannelParams> {
    let (z_sq, lambda_z) = extract_raw(rho_t, input, i, o)?;
    channel_from_moments(z_sq, lambda_z)
}

/// `(|z|^2, lambda z)` as read from the state, before normalisation.
pub fn extract_raw(rho_t: &NetworkState, input: &BlochInput, i: usize, o: usize) -> Result<(f64, C64)> {
    check_io(rho_t.dim() - 1, i, o)?;
    let (a, b) = input.amplitudes();
    if b.norm() < 1e-12 {
        return Err(Error::invalid("probe has no excitation to transfer (theta = 0)"));
    }
    if a.norm() < 1e-12 {
        return Err(Error::invalid(
            "probe has no vacuum component (theta = pi); lambda is not observable",
        ));
    }
    let p_out = rho_t.rho()[(o, o)].re;
    if p_out < -1e-10 {
        return Err(Error::numeric(None, format!("negative output population {p_out:.3e}")));
    }
    let z_sq = p_out / b.norm_sqr();
    let lambda_z = rho_t.rho()[(o, 0)] / (b * a.conj());
    Ok((z_sq, lambda_z))
}

/// Builds `(z, lambda)` from `|z|^2` and `lambda z`.
pub fn channel_from_moments(z_sq: f64, lambda_z: C64) -> Result<ChannelParams> {
    let abs_z = z_sq.max(0.0).sqrt();
    if abs_z <= 1e-12 {
        return ChannelParams::new(C64::new(0.0, 0.0), 1.0);
    }
    if abs_z > 1.0 + CHANNEL_TOL {
        return Err(Error::numeric(None, format!("extracted |z| = {abs_z} exceeds 1")));
    }
    let lambda = lambda_z.norm() / abs_z;
    // an absolute error e in the moments moves lambda by about e / |z|^2
    let slack = CHANNEL_TOL + 1e-10 / z_sq;
    if lambda > 1.0 + slack {
        return Err(Error::numeric(None, format!("extracted lambda = {lambda} exceeds 1")));
    }
    Ok(polar_channel(abs_z, lambda_z, lambda.min(1.0)))
}

/// [`channel_from_moments`] for statistical estimates: `lambda` is clipped
/// to 1 instead of rejected.
pub fn channel_from_estimates(z_sq: f64, lambda_z: C64) -> ChannelParams {
    let abs_z = z_sq.clamp(0.0, 1.0).sqrt();
    if abs_z <= 1e-12 {
        return polar_channel(0.0, C64::new(0.0, 0.0), 1.0);
    }
    polar_channel(abs_z, lambda_z, (lambda_z.norm() / abs_z).min(1.0))
}

fn polar_channel(abs_z: f64, lambda_z: C64, lambda: f64) -> ChannelParams {
    let z = if lambda_z.norm() > 0.0 {
        lambda_z * (abs_z / lambda_z.norm())
    } else {
        C64::new(abs_z, 0.0)
    };
    ChannelParams::new(z, lambda).expect("|z| <= 1 and lambda in [0, 1]")
}

/// Channel of the complete graph `K_n` with noise `spec` at each of `times`,
/// read with the canonical probe.
pub fn complete_graph_channels(
    n: usize,
    spec: &NoiseSpec,
    i: usize,
    o: usize,
    times: &[f64],
    integrator: Integrator,
) -> Result<Vec<ChannelParams>> {
    let g = complete_graph(n)?;
    check_io(n, i, o)?;
    let h = single_excitation_hamiltonian(&g);
    let l = build_liouvillian(&h, &lindblad_edge_operators(&g, spec, i, o)?)?;
    let probe = BlochInput::canonical();
    let rho0 = initial_network_state(n, i, &probe)?;
    evolve_on_grid(&l, &rho0, times, integrator)?
        .iter()
        .map(|rho| extract_channel(rho, &probe, i, o))
        .collect()
}

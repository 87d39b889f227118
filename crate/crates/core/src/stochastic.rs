//! Monte Carlo unravelling of the white-noise Hamiltonian.
//!
//! Each trajectory evolves a pure state under `H + sum_kl g_kl L_kl`, where
//! on every step of length `h` the couplings `g_kl` are frozen at
//! independent draws from `N(0, 2 eta_kl / h)`. Exponentiating the sampled
//! step Hamiltonian exactly is the Stratonovich reading of the noise, and
//! the ensemble mean converges to the master equation of [`crate::lindblad`].
//!
//! Trajectory `j` draws from ChaCha8 stream `j` of the generator keyed by
//! the master seed, and partial sums are reduced in trajectory order, so an
//! ensemble is bit-identical for any number of worker threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lindblad::NetworkState;
use crate::network::{HermitianOperator, NoiseSpec, C64};
use crate::propagator::{BlochInput, Spectral};

/// Upper bound on both `eta * dt` and `||H|| * dt`.
pub const STEP_LIMIT: f64 = 0.05;

/// Trajectories per parallel work item. Fixed so that the reduction tree
/// does not depend on the thread count.
const CHUNK: usize = 64;

/// How a single noisy step is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepScheme {
    /// `exp(-i (H + G) h)` of the full sampled step Hamiltonian.
    #[default]
    FullExponential,
    /// `exp(-i H h/2) exp(-i G h) exp(-i H h/2)`: same Stratonovich limit,
    /// second-order weak accuracy, and only the noisy block is diagonalised.
    Strang,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlan {
    pub n_traj: usize,
    pub dt: f64,
    pub t_final: f64,
    pub master_seed: u64,
    pub noise: NoiseSpec,
    pub scheme: StepScheme,
}

impl TrajectoryPlan {
    pub fn new(n_traj: usize, dt: f64, t_final: f64, master_seed: u64, noise: NoiseSpec) -> Result<Self> {
        if n_traj == 0 {
            return Err(Error::invalid("n_traj must be >= 1"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if !(t_final >= 0.0) || !t_final.is_finite() {
            return Err(Error::invalid(format!("t_final must be >= 0, got {t_final}")));
        }
        Ok(Self {
            n_traj,
            dt,
            t_final,
            master_seed,
            noise,
            scheme: StepScheme::default(),
        })
    }

    pub fn with_scheme(mut self, scheme: StepScheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// Ensemble mean of `|psi><psi|` and the standard error of each entry.
///
/// `std_err[(r, c)]` is `sqrt((Var Re + Var Im) / n_traj)` of entry `(r, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub rho_mean: NetworkState,
    pub std_err: DMatrix<f64>,
    pub n_traj: usize,
}

/// A channel moment with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub std_err: f64,
}

impl EnsembleResult {
    /// `|z|^2` and `lambda z` as in [`crate::lindblad::extract_raw`], with
    /// errors propagated through the (linear) extraction.
    pub fn channel_moments(&self, input: &BlochInput, i: usize, o: usize) -> Result<(Estimate<f64>, Estimate<C64>)> {
        let (z_sq, lambda_z) = crate::lindblad::extract_raw(&self.rho_mean, input, i, o)?;
        let (a, b) = input.amplitudes();
        Ok((
            Estimate {
                value: z_sq,
                std_err: self.std_err[(o, o)] / b.norm_sqr(),
            },
            Estimate {
                value: lambda_z,
                std_err: self.std_err[(o, 0)] / (b * a.conj()).norm(),
            },
        ))
    }
}

/// Deterministic RNG of trajectory `index`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// `H + sum_kl g_kl (|k><l| + |l><k|)` with `g_kl ~ N(0, 2 eta_kl / dt)`.
///
/// One standard normal is drawn per noisy edge in `spec.edges()` order,
/// including edges of zero strength.
pub fn sample_step_hamiltonian<R: Rng + ?Sized>(
    h: &HermitianOperator,
    spec: &NoiseSpec,
    dt: f64,
    rng: &mut R,
) -> Result<HermitianOperator> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let edges = spec.edges();
    if let Some(&((_, l), _)) = edges.iter().find(|&&((_, l), _)| l >= h.dim()) {
        return Err(Error::invalid(format!("noisy vertex {l} outside the operator")));
    }
    let mut m = h.matrix().clone();
    for ((k, l), eta) in edges {
        let z: f64 = rng.sample(StandardNormal);
        let g = C64::new(z * (2.0 * eta / dt).sqrt(), 0.0);
        m[(k, l)] += g;
        m[(l, k)] += g;
    }
    HermitianOperator::new(m)
}

/// Per-run stepping machinery shared by every trajectory.
struct Stepper {
    dim: usize,
    scheme: StepScheme,
    h_real: Option<DMatrix<f64>>,
    h: DMatrix<C64>,
    spectral: Spectral,
    /// `(k, l, sqrt(2 eta))` per noisy edge, `spec.edges()` order.
    edges: Vec<(usize, usize, f64)>,
    /// Noisy vertices, which carry the whole noise term.
    block: Vec<usize>,
}

impl Stepper {
    fn new(h: &HermitianOperator, spec: &NoiseSpec, dt: f64, scheme: StepScheme) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        let dim = h.dim();
        if let Some(&v) = spec.vertices().iter().find(|&&v| v >= dim) {
            return Err(Error::invalid(format!("noisy vertex {v} outside the operator")));
        }
        let spectral = Spectral::of(h)?;
        let h_norm = spectral.energies().iter().fold(0.0_f64, |a, e| a.max(e.abs()));
        let eta = spec.max_strength();
        if eta * dt > STEP_LIMIT || h_norm * dt > STEP_LIMIT {
            return Err(Error::invalid(format!(
                "step too coarse: eta*dt = {:.3e}, ||H||*dt = {:.3e}, both must be <= {STEP_LIMIT}",
                eta * dt,
                h_norm * dt
            )));
        }
        Ok(Self {
            dim,
            scheme,
            h_real: h.as_real(),
            h: h.matrix().clone(),
            spectral,
            edges: spec
                .edges()
                .into_iter()
                .map(|((k, l), eta)| (k, l, (2.0 * eta).sqrt()))
                .collect(),
            block: spec.vertices().to_vec(),
        })
    }

    /// Couplings for one step of length `h`.
    fn draw(&self, rng: &mut ChaCha8Rng, h: f64, out: &mut Vec<f64>) {
        out.clear();
        let scale = 1.0 / h.sqrt();
        out.extend(self.edges.iter().map(|&(_, _, s)| {
            let z: f64 = rng.sample(StandardNormal);
            z * s * scale
        }));
    }

    /// `psi <- exp(-i (H + G) h) psi`.
    fn full_step(&self, psi: &mut DVector<C64>, g: &[f64], h: f64) -> Result<()> {
        let fail = || Error::numeric(None, "step Hamiltonian eigendecomposition did not converge");
        if let Some(hr) = &self.h_real {
            let mut a = hr.clone();
            for (&(k, l, _), &x) in self.edges.iter().zip(g) {
                a[(k, l)] += x;
                a[(l, k)] += x;
            }
            let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0).ok_or_else(fail)?;
            apply_real_spectral(&eig.eigenvectors, &eig.eigenvalues, h, psi);
        } else {
            let mut a = self.h.clone();
            for (&(k, l, _), &x) in self.edges.iter().zip(g) {
                a[(k, l)] += C64::new(x, 0.0);
                a[(l, k)] += C64::new(x, 0.0);
            }
            let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0).ok_or_else(fail)?;
            let c = eig.eigenvectors.adjoint() * &*psi;
            let c = DVector::from_iterator(
                self.dim,
                c.iter()
                    .zip(eig.eigenvalues.iter())
                    .map(|(x, &e)| x * C64::from_polar(1.0, -e * h)),
            );
            *psi = eig.eigenvectors * c;
        }
        Ok(())
    }

    /// `psi <- exp(-i G h) psi`; `G` lives on the noisy block only.
    fn noise_step(&self, psi: &mut DVector<C64>, g: &[f64], h: f64) -> Result<()> {
        match self.edges.len() {
            0 => Ok(()),
            1 => {
                // exp(-i x h sigma_x) on the pair (k, l)
                let (k, l, _) = self.edges[0];
                let (s, c) = (g[0] * h).sin_cos();
                let (pk, pl) = (psi[k], psi[l]);
                let mi = C64::new(0.0, -s);
                psi[k] = pk * c + pl * mi;
                psi[l] = pl * c + pk * mi;
                Ok(())
            }
            _ => {
                let m = self.block.len();
                let pos = |v: usize| self.block.binary_search(&v).expect("edge inside block");
                let mut a = DMatrix::<f64>::zeros(m, m);
                for (&(k, l, _), &x) in self.edges.iter().zip(g) {
                    a[(pos(k), pos(l))] = x;
                    a[(pos(l), pos(k))] = x;
                }
                let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
                    .ok_or_else(|| Error::numeric(None, "noise block eigendecomposition did not converge"))?;
                let mut sub = DVector::from_iterator(m, self.block.iter().map(|&v| psi[v]));
                apply_real_spectral(&eig.eigenvectors, &eig.eigenvalues, h, &mut sub);
                for (j, &v) in self.block.iter().enumerate() {
                    psi[v] = sub[j];
                }
                Ok(())
            }
        }
    }

    /// Advances one trajectory through `times`, calling `record(slot, psi)`
    /// at each output time.
    fn run(
        &self,
        rng: &mut ChaCha8Rng,
        psi0: &DVector<C64>,
        times: &[f64],
        dt: f64,
        mut record: impl FnMut(usize, &DVector<C64>),
    ) -> Result<()> {
        let mut psi = psi0.clone();
        let mut g = Vec::with_capacity(self.edges.len());
        let mut now = 0.0;
        let mut cache: Option<(u64, DMatrix<C64>, DMatrix<C64>)> = None;
        for (slot, &t) in times.iter().enumerate() {
            let span = t - now;
            if span > 0.0 {
                let steps = ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let h = span / steps as f64;
                match self.scheme {
                    StepScheme::FullExponential => {
                        for _ in 0..steps {
                            self.draw(rng, h, &mut g);
                            self.full_step(&mut psi, &g, h)?;
                        }
                    }
                    StepScheme::Strang => {
                        if cache.as_ref().map(|c| c.0) != Some(h.to_bits()) {
                            cache = Some((
                                h.to_bits(),
                                self.spectral.propagator(h / 2.0),
                                self.spectral.propagator(h),
                            ));
                        }
                        let (_, half, full) = cache.as_ref().expect("filled above");
                        psi = half * psi;
                        for s in 0..steps {
                            self.draw(rng, h, &mut g);
                            self.noise_step(&mut psi, &g, h)?;
                            psi = if s + 1 < steps { full * psi } else { half * psi };
                        }
                    }
                }
                now = t;
            }
            record(slot, &psi);
        }
        Ok(())
    }
}

/// `psi <- V diag(e^{-i e h}) V^T psi` for real orthogonal `V`.
fn apply_real_spectral(v: &DMatrix<f64>, e: &DVector<f64>, h: f64, psi: &mut DVector<C64>) {
    let d = psi.len();
    let mut c = vec![C64::new(0.0, 0.0); d];
    for j in 0..d {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..d {
            acc += psi[r] * v[(r, j)];
        }
        c[j] = acc * C64::from_polar(1.0, -e[j] * h);
    }
    for r in 0..d {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..d {
            acc += c[j] * v[(r, j)];
        }
        psi[r] = acc;
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(Error::invalid("times must be finite and >= 0"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("times must be non-decreasing"));
    }
    Ok(())
}

fn check_state(h: &HermitianOperator, psi0: &DVector<C64>) -> Result<()> {
    if psi0.len() != h.dim() {
        return Err(Error::invalid(format!(
            "state has dimension {}, Hamiltonian {}",
            psi0.len(),
            h.dim()
        )));
    }
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!("initial state has norm {}", psi0.norm())));
    }
    Ok(())
}

/// One noise realisation from `psi0` to time `t` with steps of at most `dt`,
/// using the full-exponential scheme and the RNG of trajectory 0 under `seed`.
///
/// Requires `eta * dt <= 0.05` and `||H|| * dt <= 0.05`.
pub fn evolve_trajectory(
    h: &HermitianOperator,
    spec: &NoiseSpec,
    psi0: &DVector<C64>,
    t: f64,
    dt: f64,
    seed: u64,
) -> Result<DVector<C64>> {
    evolve_trajectory_with(h, spec, psi0, t, dt, seed, StepScheme::FullExponential)
}

pub fn evolve_trajectory_with(
    h: &HermitianOperator,
    spec: &NoiseSpec,
    psi0: &DVector<C64>,
    t: f64,
    dt: f64,
    seed: u64,
    scheme: StepScheme,
) -> Result<DVector<C64>> {
    check_state(h, psi0)?;
    check_times(&[t])?;
    let stepper = Stepper::new(h, spec, dt, scheme)?;
    let mut rng = trajectory_rng(seed, 0);
    let mut out = psi0.clone();
    stepper.run(&mut rng, psi0, &[t], dt, |_, psi| out = psi.clone())?;
    Ok(out)
}

/// Running sums of `rho` entries and of `|rho_rc|^2` per output time.
#[derive(Clone)]
struct Moments {
    sum: Vec<DMatrix<C64>>,
    sum_sq: Vec<DMatrix<f64>>,
}

impl Moments {
    fn zeros(slots: usize, d: usize) -> Self {
        Self {
            sum: vec![DMatrix::zeros(d, d); slots],
            sum_sq: vec![DMatrix::zeros(d, d); slots],
        }
    }

    fn add_state(&mut self, slot: usize, psi: &DVector<C64>) {
        let d = psi.len();
        let (s, q) = (&mut self.sum[slot], &mut self.sum_sq[slot]);
        for c in 0..d {
            let pc = psi[c].conj();
            let nc = psi[c].norm_sqr();
            for r in 0..d {
                s[(r, c)] += psi[r] * pc;
                q[(r, c)] += psi[r].norm_sqr() * nc;
            }
        }
    }

    fn merge(&mut self, other: &Moments) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }
}

/// Ensemble at `plan.t_final`.
pub fn ensemble_average(plan: &TrajectoryPlan, h: &HermitianOperator, psi0: &DVector<C64>) -> Result<EnsembleResult> {
    let mut out = ensemble_on_grid(plan, h, psi0, &[plan.t_final])?;
    Ok(out.pop().expect("one time requested"))
}

/// Ensembles at each of the non-decreasing `times`; every trajectory is
/// run once through the whole grid. `plan.t_final` is ignored.
pub fn ensemble_on_grid(
    plan: &TrajectoryPlan,
    h: &HermitianOperator,
    psi0: &DVector<C64>,
    times: &[f64],
) -> Result<Vec<EnsembleResult>> {
    check_state(h, psi0)?;
    check_times(times)?;
    let stepper = Stepper::new(h, &plan.noise, plan.dt, plan.scheme)?;
    let d = h.dim();
    let chunks: Vec<(usize, usize)> = (0..plan.n_traj)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(plan.n_traj)))
        .collect();
    let partials: Vec<Result<Moments>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = Moments::zeros(times.len(), d);
            for j in start..end {
                let mut rng = trajectory_rng(plan.master_seed, j as u64);
                stepper.run(&mut rng, psi0, times, plan.dt, |slot, psi| acc.add_state(slot, psi))?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::zeros(times.len(), d);
    for p in partials {
        total.merge(&p?);
    }
    let n = plan.n_traj as f64;
    total
        .sum
        .iter()
        .zip(&total.sum_sq)
        .map(|(s, q)| {
            let mean = s.map(|x| x / n);
            let std_err = DMatrix::from_fn(d, d, |r, c| {
                let var = if plan.n_traj > 1 {
                    ((q[(r, c)] - n * mean[(r, c)].norm_sqr()) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                (var / n).sqrt()
            });
            // hermitise away roundoff before validation
            let mean = (&mean + mean.adjoint()).map(|x| x * 0.5);
            Ok(EnsembleResult {
                rho_mean: NetworkState::new(mean)?,
                std_err,
                n_traj: plan.n_traj,
            })
        })
        .collect()
}

/// Pure initial state `cos(theta/2)|0> + e^{i phi} sin(theta/2)|i>`.
pub fn initial_state_vector(n: usize, input_vertex: usize, input: &BlochInput) -> Result<DVector<C64>> {
    if input_vertex == 0 || input_vertex > n {
        return Err(Error::invalid(format!("input vertex {input_vertex} outside 1..={n}")));
    }
    Ok(crate::lindblad::initial_pure_state(n, input_vertex, input))
}

//! Weak-noise theory: the first-order correction in the noise strength,
//! computed numerically in the interaction picture and from the printed
//! closed forms, plus the noise-benefit statistic `Delta`.

use std::ops::{Add, Mul};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lindblad::{channel_from_moments, complete_graph_channels, Integrator};
use crate::network::{complete_graph, edge_operator, single_excitation_hamiltonian, NoiseSpec, C64};
use crate::propagator::{complete_graph_max_fidelity, BlochInput, ChannelParams, Spectral};
use crate::quad::{refine_grid_max, simpson};

/// Relative tolerance of the step-halving check on every quadrature.
pub const QUAD_RTOL: f64 = 1e-8;

/// `Delta` values at or below this count as zero.
pub const DELTA_FLOOR: f64 = 1e-12;

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("n must be >= 2, got {n}")));
    }
    Ok(())
}

/// `beta = (e^{it}/n)(e^{-int} - 1)`.
pub fn beta(n: usize, t: f64) -> Result<C64> {
    check_n(n)?;
    let nf = n as f64;
    Ok(C64::from_polar(1.0 / nf, t) * (C64::from_polar(1.0, -nf * t) - 1.0))
}

/// `beta' = (e^{it}/n)(e^{-int} + n - 1)`.
pub fn beta_prime(n: usize, t: f64) -> Result<C64> {
    check_n(n)?;
    let nf = n as f64;
    Ok(C64::from_polar(1.0 / nf, t) * (C64::from_polar(1.0, -nf * t) + (nf - 1.0)))
}

/// Fixed-size vector of complex numbers, for integrating several
/// quantities with one Simpson pass.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CVec<const N: usize>([C64; N]);

impl<const N: usize> Add for CVec<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(o.0) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Mul<f64> for CVec<N> {
    type Output = Self;
    fn mul(mut self, k: f64) -> Self {
        for a in self.0.iter_mut() {
            *a *= k;
        }
        self
    }
}

/// Simpson with step at most `max_step`, halved until two successive
/// results agree to [`QUAD_RTOL`] (relative to the largest component).
fn simpson_converged<const N: usize>(f: impl Fn(f64) -> CVec<N>, a: f64, b: f64, max_step: f64) -> Result<CVec<N>> {
    let mut step = max_step;
    let mut prev = simpson(&f, a, b, step);
    for _ in 0..8 {
        step /= 2.0;
        let next = simpson(&f, a, b, step);
        let scale = next.0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = prev
            .0
            .iter()
            .zip(&next.0)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        if diff <= QUAD_RTOL * scale || scale == 0.0 {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::numeric(None, "quadrature did not settle under step halving"))
}

/// `b_1 .. b_8` as printed (each `(n-3)^2` times an integral over `[0, t]`).
pub fn b_coefficients(n: usize, t: f64) -> Result<[C64; 8]> {
    check_n(n)?;
    if !(t >= 0.0) {
        return Err(Error::invalid("t must be >= 0"));
    }
    let integrand = |tau: f64| {
        let b = beta(n, tau).expect("n checked");
        let bp = beta_prime(n, tau).expect("n checked");
        let bb = b * bp.conj();
        let (ab, abp) = (b.norm_sqr(), bp.norm_sqr());
        let re = |x: f64| C64::new(x, 0.0);
        CVec([
            bb,
            re(ab),
            bb * abp,
            b * b * bp.conj() * bp.conj() + abp * ab,
            re(ab * abp),
            re(2.0 * bb.re * ab),
            b * ab * bp.conj(),
            re(ab * ab),
        ])
    };
    let k = (n as f64 - 3.0).powi(2);
    if t == 0.0 || k == 0.0 {
        return Ok([C64::new(0.0, 0.0); 8]);
    }
    Ok((simpson_converged(integrand, 0.0, t, 1e-3)? * k).0)
}

/// First-order weak-noise channel: `|z|^2 = z_sq_0 + eta xi1` and
/// `lambda z = lambda_z_0 + eta xi2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakNoiseChannel {
    pub eta: f64,
    pub z_sq_0: f64,
    pub lambda_z_0: C64,
    pub xi1: f64,
    pub xi2: C64,
}

impl WeakNoiseChannel {
    pub fn z_sq(&self) -> f64 {
        self.z_sq_0 + self.eta * self.xi1
    }

    pub fn lambda_z(&self) -> C64 {
        self.lambda_z_0 + self.eta * self.xi2
    }

    pub fn channel(&self) -> Result<ChannelParams> {
        channel_from_moments(self.z_sq(), self.lambda_z())
    }

    pub fn fidelity(&self) -> Result<f64> {
        Ok(self.channel()?.fidelity())
    }
}

/// The printed weak-noise expressions, read literally: `|z|^2 = |beta|^2 + eta xi1`,
/// `lambda z = |beta|^2 + eta xi2`, with `xi1 = m{...} + c.c.` taken as
/// twice the real part of the braced sum.
pub fn printed_weak_noise_channel(n: usize, m: usize, eta: f64, t: f64) -> Result<WeakNoiseChannel> {
    check_n(n)?;
    if m + 2 > n {
        return Err(Error::invalid(format!("m = {m} exceeds n - 2")));
    }
    let b = beta(n, t)?;
    let bp = beta_prime(n, t)?;
    let c = b_coefficients(n, t)?;
    let (mf, nf) = (m as f64, n as f64);
    let ab = b.norm_sqr();
    let abp = bp.norm_sqr();
    let abpb = (bp * b).norm_sqr();
    let s = mf * mf + nf - 1.0;
    let braced = c[2] * ab
        + c[3] * (bp.conj() * b + ab * mf)
        + c[4] * (bp * b.conj() + ab * mf)
        + c[5] * (abp + abpb * mf * mf + ab * mf * mf)
        + c[6] * (bp.conj() + ab * s)
        + c[7] * (abp + abpb * s * mf * mf * (nf - 2.0) + ab * mf * s);
    let xi1 = 2.0 * (mf * braced).re;
    let xi2 = mf * (c[0] * b + c[1] * bp + c[1] * b * mf);
    Ok(WeakNoiseChannel {
        eta,
        z_sq_0: ab,
        lambda_z_0: C64::new(ab, 0.0),
        xi1,
        xi2,
    })
}

/// First order in `eta` from the master equation itself: with
/// `r0(s) = U(s) rho0 U(s)^dagger` and the unit-strength dissipator `D`,
/// `r1(t) = int_0^t U(t-s) D(r0(s)) U(t-s)^dagger ds`. Noise sits on `m`
/// auto-selected vertices of `K_n`, transfer 1 -> 2, canonical probe.
pub fn first_order_numeric(n: usize, m: usize, eta: f64, t: f64, quadrature_step: f64) -> Result<WeakNoiseChannel> {
    check_n(n)?;
    if !(t >= 0.0) || !(eta >= 0.0) || !(quadrature_step > 0.0) {
        return Err(Error::invalid("need t >= 0, eta >= 0 and a positive quadrature step"));
    }
    let spec = NoiseSpec::auto(n, m, 1, 2, 1.0)?;
    let g = complete_graph(n)?;
    let h = single_excitation_hamiltonian(&g);
    let sp = Spectral::of(&h)?;
    let probe = BlochInput::canonical();
    let (a, b) = probe.amplitudes();
    let psi0 = crate::lindblad::initial_pure_state(n, 1, &probe);
    let ls: Vec<DMatrix<C64>> = spec
        .edges()
        .into_iter()
        .map(|((k, l), _)| edge_operator(n + 1, k, l).into_matrix())
        .collect();
    let l2: Vec<DMatrix<C64>> = ls.iter().map(|l| l * l).collect();
    let (o, v) = (2, 0);
    let integrand = |s: f64| {
        let psi = sp.propagator(s) * &psi0;
        let r0 = &psi * psi.adjoint();
        let mut d = DMatrix::<C64>::zeros(n + 1, n + 1);
        for (l, l2) in ls.iter().zip(&l2) {
            d += (l * &r0 * l) * C64::new(2.0, 0.0) - l2 * &r0 - &r0 * l2;
        }
        let u = sp.propagator(t - s);
        let row = u.row(o);
        let x = row * &d;
        let oo = (&x * row.adjoint())[(0, 0)];
        let ov = (&x * u.row(v).adjoint())[(0, 0)];
        CVec([oo, ov])
    };
    let r1 = if t == 0.0 || ls.is_empty() {
        [C64::new(0.0, 0.0); 2]
    } else {
        simpson_converged(integrand, 0.0, t, quadrature_step)?.0
    };
    let z0 = sp.element(t, o, 1);
    Ok(WeakNoiseChannel {
        eta,
        z_sq_0: z0.norm_sqr(),
        lambda_z_0: z0,
        xi1: r1[0].re / b.norm_sqr(),
        xi2: r1[1] / (b * a.conj()),
    })
}

/// `Delta = max(F(t; eta) - max_t F(t; 0), 0)` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaStatistic {
    pub value: f64,
    pub t: f64,
    pub n: usize,
    pub m: usize,
    pub eta: f64,
}

/// How the noiseless maximum `max_t F(t; 0)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    /// `1/2 + (2/n)/3 + (4/n^2)/6`, exact for complete graphs.
    Analytic,
    /// Grid over `[0, t_max]` with step at most `pi/(8n)`, then one Brent
    /// refinement around the best point.
    Grid { t_max: f64, step: f64 },
}

/// `max_t F(t; 0)` for `K_n`, transfer 1 -> 2.
pub fn noiseless_max_fidelity(n: usize, baseline: Baseline) -> Result<f64> {
    check_n(n)?;
    match baseline {
        Baseline::Analytic => complete_graph_max_fidelity(n),
        Baseline::Grid { t_max, step } => {
            let limit = std::f64::consts::PI / (8.0 * n as f64);
            if !(step > 0.0) || step > limit * (1.0 + 1e-12) || !(t_max > 0.0) {
                return Err(Error::invalid(format!(
                    "baseline grid step must be in (0, pi/(8n)] = (0, {limit:.4e}]"
                )));
            }
            let h = single_excitation_hamiltonian(&complete_graph(n)?);
            let sp = Spectral::of(&h)?;
            let f = |t: f64| {
                ChannelParams::unitary(sp.element(t, 2, 1))
                    .map(|c| c.fidelity())
                    .unwrap_or(f64::NEG_INFINITY)
            };
            let k = (t_max / step).ceil() as usize;
            let step = t_max / k as f64;
            let samples: Vec<f64> = (0..=k).map(|j| f(j as f64 * step)).collect();
            Ok(refine_grid_max(&samples, step, f).1)
        }
    }
}

/// `Delta` on `K_n` with uniform noise `eta` on `m` auto-selected vertices,
/// using the full master equation for `F(t; eta)`.
pub fn delta_statistic(n: usize, m: usize, eta: f64, t: f64, baseline: Baseline) -> Result<DeltaStatistic> {
    Ok(delta_series(n, m, eta, &[t], baseline)?.remove(0))
}

/// [`delta_statistic`] at each of the non-decreasing `times`, from one
/// master-equation run.
pub fn delta_series(n: usize, m: usize, eta: f64, times: &[f64], baseline: Baseline) -> Result<Vec<DeltaStatistic>> {
    let base = noiseless_max_fidelity(n, baseline)?;
    let spec = NoiseSpec::auto(n, m, 1, 2, eta)?;
    let chans = complete_graph_channels(n, &spec, 1, 2, times, Integrator::Exact)?;
    Ok(times
        .iter()
        .zip(chans)
        .map(|(&t, ch)| DeltaStatistic {
            value: if eta == 0.0 {
                0.0
            } else {
                (ch.fidelity() - base).max(0.0)
            },
            t,
            n,
            m,
            eta,
        })
        .collect())
}

/// Measure of `{t : Delta > 0}` on a uniform grid: points above
/// [`DELTA_FLOOR`] times the grid step.
pub fn window_width(series: &[DeltaStatistic], step: f64) -> f64 {
    series.iter().filter(|d| d.value > DELTA_FLOOR).count() as f64 * step
}

//! Closed-system dynamics and the fidelity calculus of the reduced
//! input-to-output channel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::network::{HermitianOperator, C64};
use crate::quad::gauss_legendre;

/// Slack allowed on `|z| <= 1` and `lambda <= 1`.
pub const CHANNEL_TOL: f64 = 1e-9;

/// Reduced channel of the output qubit: amplitude damping with transfer
/// amplitude `z`, combined with dephasing `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    z: C64,
    lambda: f64,
}

impl ChannelParams {
    pub fn new(z: C64, lambda: f64) -> Result<Self> {
        if !(z.norm() <= 1.0 + CHANNEL_TOL) {
            return Err(Error::invalid(format!("|z| = {} exceeds 1", z.norm())));
        }
        if !(-CHANNEL_TOL..=1.0 + CHANNEL_TOL).contains(&lambda) {
            return Err(Error::invalid(format!("lambda = {lambda} outside [0, 1]")));
        }
        Ok(Self { z, lambda })
    }

    /// Pure amplitude damping (no dephasing).
    pub fn unitary(z: C64) -> Result<Self> {
        Self::new(z, 1.0)
    }

    pub fn z(&self) -> C64 {
        self.z
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn abs_z(&self) -> f64 {
        self.z.norm()
    }

    /// Optimal average fidelity, see [`optimal_avg_fidelity`].
    pub fn fidelity(&self) -> f64 {
        optimal_avg_fidelity(self)
    }
}

/// Input qubit `cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochInput {
    theta: f64,
    phi: f64,
}

impl BlochInput {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) {
            return Err(Error::invalid(format!("theta = {theta} outside [0, pi]")));
        }
        if !(0.0..=2.0 * PI).contains(&phi) {
            return Err(Error::invalid(format!("phi = {phi} outside [0, 2pi]")));
        }
        Ok(Self { theta, phi })
    }

    /// `theta = pi/2, phi = 0`, the probe used for channel extraction.
    pub fn canonical() -> Self {
        Self {
            theta: PI / 2.0,
            phi: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `(a, b)` = amplitudes of `|0>` and `|1>`.
    pub fn amplitudes(&self) -> (C64, C64) {
        let a = C64::new((self.theta / 2.0).cos(), 0.0);
        let b = C64::from_polar((self.theta / 2.0).sin(), self.phi);
        (a, b)
    }
}

/// Eigendecomposition `H = V diag(E) V^dagger`, reusable for many times.
#[derive(Debug, Clone)]
pub struct Spectral {
    energies: DVector<f64>,
    vectors: DMatrix<C64>,
}

impl Spectral {
    pub fn of(h: &HermitianOperator) -> Result<Self> {
        let fail = || Error::numeric(None, "eigendecomposition did not converge");
        if let Some(real) = h.as_real() {
            let eig = SymmetricEigen::try_new(real, f64::EPSILON, 0).ok_or_else(fail)?;
            Ok(Self {
                energies: eig.eigenvalues,
                vectors: eig.eigenvectors.map(|x| C64::new(x, 0.0)),
            })
        } else {
            let eig = SymmetricEigen::try_new(h.matrix().clone(), f64::EPSILON, 0).ok_or_else(fail)?;
            Ok(Self {
                energies: eig.eigenvalues,
                vectors: eig.eigenvectors,
            })
        }
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    /// `e^{-i H t}`.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        let phases = self.energies.map(|e| C64::from_polar(1.0, -e * t));
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * self.vectors.adjoint()
    }

    /// `<row| e^{-iHt} |col>` without forming the full matrix.
    pub fn element(&self, t: f64, row: usize, col: usize) -> C64 {
        (0..self.energies.len())
            .map(|j| {
                self.vectors[(row, j)] * C64::from_polar(1.0, -self.energies[j] * t) * self.vectors[(col, j)].conj()
            })
            .sum()
    }
}

/// `U_t = e^{-iHt}`.
pub fn propagator_matrix(h: &HermitianOperator, t: f64) -> Result<DMatrix<C64>> {
    Ok(Spectral::of(h)?.propagator(t))
}

/// `z = <o| U_t |i>` for 1-based vertices `i != o`.
pub fn transfer_amplitude(h: &HermitianOperator, t: f64, i: usize, o: usize) -> Result<C64> {
    check_io(h.dim() - 1, i, o)?;
    Ok(Spectral::of(h)?.element(t, o, i))
}

pub(crate) fn check_io(n: usize, i: usize, o: usize) -> Result<()> {
    if i == o {
        return Err(Error::invalid("input and output vertices must differ"));
    }
    if i == 0 || o == 0 || i > n || o > n {
        return Err(Error::invalid(format!("input {i} / output {o} outside 1..={n}")));
    }
    Ok(())
}

/// `|z|^2 = (2/n^2)(1 - cos 2nt)` for the complete graph.
pub fn complete_graph_transfer_prob(n: usize, t: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("complete_graph_transfer_prob requires n >= 2"));
    }
    let n = n as f64;
    Ok(2.0 / (n * n) * (1.0 - (2.0 * n * t).cos()))
}

/// `max_t F` on the noiseless complete graph, reached where `|z| = 2/n`.
pub fn complete_graph_max_fidelity(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("complete_graph_max_fidelity requires n >= 2"));
    }
    let z = 2.0 / n as f64;
    Ok(0.5 + z / 3.0 + z * z / 6.0)
}

/// Average fidelity for the output rotation `V` with diagonal element `u`.
pub fn avg_fidelity_given_v(ch: &ChannelParams, u: C64) -> f64 {
    let z = ch.z;
    0.5 + ch.lambda * (z * u * u).re / 3.0 + z.norm_sqr() * (2.0 * u.norm_sqr() - 1.0) / 6.0
}

/// The `u` maximising [`avg_fidelity_given_v`]: `e^{-i arg(z)/2}`, or 1 when `z = 0`.
pub fn optimal_u(z: C64) -> C64 {
    if z.norm() == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        C64::from_polar(1.0, -z.arg() / 2.0)
    }
}

/// `F = 1/2 + lambda |z| / 3 + |z|^2 / 6`.
pub fn optimal_avg_fidelity(ch: &ChannelParams) -> f64 {
    let a = ch.z.norm();
    0.5 + ch.lambda * a / 3.0 + a * a / 6.0
}

/// Output-qubit density matrix for a given input, in the basis `{|0>, |1>}`.
pub fn channel_output(ch: &ChannelParams, input: &BlochInput) -> [[C64; 2]; 2] {
    let (a, b) = input.amplitudes();
    let z = ch.z;
    let zz = z.norm_sqr();
    let p0 = a.norm_sqr() + (1.0 - zz) * b.norm_sqr();
    let p1 = zz * b.norm_sqr();
    let c10 = z * b * a.conj() * ch.lambda;
    [[C64::new(p0, 0.0), c10.conj()], [c10, C64::new(p1, 0.0)]]
}

/// `f = <psi| V rho_o V^dagger |psi>` with `V = [[u*, v], [-v*, u]]` and
/// `v = sqrt(1 - |u|^2)`. This orientation of `u` is the one for which the
/// average equals [`avg_fidelity_given_v`].
pub fn pointwise_fidelity(ch: &ChannelParams, u: C64, input: &BlochInput) -> f64 {
    let v = C64::new((1.0 - u.norm_sqr()).max(0.0).sqrt(), 0.0);
    let vm = [[u.conj(), v], [-v.conj(), u]];
    let rho = channel_output(ch, input);
    let (a, b) = input.amplitudes();
    let psi = [a, b];
    // V^dagger |psi>
    let w: [C64; 2] = [
        vm[0][0].conj() * psi[0] + vm[1][0].conj() * psi[1],
        vm[0][1].conj() * psi[0] + vm[1][1].conj() * psi[1],
    ];
    let mut f = C64::new(0.0, 0.0);
    for r in 0..2 {
        for c in 0..2 {
            f += w[r].conj() * rho[r][c] * w[c];
        }
    }
    f.re
}

/// Gauss–Legendre order in `cos(theta)` used by [`bloch_sphere_average`].
pub const BLOCH_THETA_ORDER: usize = 32;
/// Trapezoid points in `phi` used by [`bloch_sphere_average`].
pub const BLOCH_PHI_POINTS: usize = 64;

/// Uniform average of [`pointwise_fidelity`] over the Bloch sphere.
pub fn bloch_sphere_average(ch: &ChannelParams, u: C64) -> f64 {
    let (xs, ws) = gauss_legendre(BLOCH_THETA_ORDER);
    let dphi = 2.0 * PI / BLOCH_PHI_POINTS as f64;
    let mut acc = 0.0;
    for (&x, &w) in xs.iter().zip(&ws) {
        let theta = x.clamp(-1.0, 1.0).acos();
        let ring: f64 = (0..BLOCH_PHI_POINTS)
            .map(|k| {
                let input = BlochInput {
                    theta,
                    phi: k as f64 * dphi,
                };
                pointwise_fidelity(ch, u, &input)
            })
            .sum();
        acc += w * ring * dphi;
    }
    acc / (4.0 * PI)
}

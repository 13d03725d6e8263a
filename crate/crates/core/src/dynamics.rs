//! Free-particle evolution (analytic Gaussian moments and exact spectral
//! propagation on a grid) and the driven two-level system.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::{FftPair, GridSpec, PhysicalConstants, WaveFunction};

/// Gaussian wavepacket. `cov0` is the symmetrized position-momentum covariance
/// `⟨{x,p}⟩/2 − ⟨x⟩⟨p⟩` of the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPacket {
    pub x0: f64,
    pub p0: f64,
    pub var_x0: f64,
    pub cov0: f64,
}

impl GaussianPacket {
    pub fn new(x0: f64, p0: f64, var_x0: f64) -> Result<Self> {
        Self::with_covariance(x0, p0, var_x0, 0.0)
    }

    pub fn with_covariance(x0: f64, p0: f64, var_x0: f64, cov0: f64) -> Result<Self> {
        if !(var_x0 > 0.0 && var_x0.is_finite()) {
            return Err(Error::param("var_x0", format!("must be positive, got {var_x0}")));
        }
        if !(x0.is_finite() && p0.is_finite() && cov0.is_finite()) {
            return Err(Error::param("packet", "x0, p0 and cov0 must be finite"));
        }
        Ok(Self { x0, p0, var_x0, cov0 })
    }

    /// Initial momentum variance of the pure Gaussian state,
    /// `(ħ²/4 + cov0²) / var_x0`.
    pub fn var_p0(&self, consts: &PhysicalConstants) -> f64 {
        (consts.hbar * consts.hbar / 4.0 + self.cov0 * self.cov0) / self.var_x0
    }

    /// Spreading-law linear coefficient `c₀ = 2·cov0/m`.
    pub fn c0(&self, consts: &PhysicalConstants) -> f64 {
        2.0 * self.cov0 / consts.mass
    }

    pub fn mean_x_at(&self, t: f64, consts: &PhysicalConstants) -> f64 {
        self.x0 + self.p0 * t / consts.mass
    }

    pub fn var_x_at(&self, t: f64, consts: &PhysicalConstants) -> f64 {
        let m = consts.mass;
        self.var_x0 + self.c0(consts) * t + self.var_p0(consts) * t * t / (m * m)
    }
}

/// Position mean and variance of a freely evolving Gaussian at time `t`.
pub fn evolve_free_analytic(packet: &GaussianPacket, t: f64, consts: &PhysicalConstants) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return Err(Error::param("t", format!("must be non-negative, got {t}")));
    }
    Ok((packet.mean_x_at(t, consts), packet.var_x_at(t, consts)))
}

/// Samples the packet on `grid` at `time = 0`, normalized on the grid.
pub fn gaussian_to_wavefunction(
    packet: &GaussianPacket,
    grid: &GridSpec,
    consts: &PhysicalConstants,
) -> Result<WaveFunction> {
    let six_sigma = 6.0 * packet.var_x0.sqrt();
    let (lo, hi) = (packet.x0 - six_sigma, packet.x0 + six_sigma);
    if lo < grid.x_min() || hi > grid.x_max() {
        return Err(Error::GridTooSmall { x_min: grid.x_min(), x_max: grid.x_max(), lo, hi });
    }
    let hbar = consts.hbar;
    let chirp = 2.0 * packet.cov0 / hbar;
    let amplitudes = grid
        .positions()
        .map(|x| {
            let d = x - packet.x0;
            let exponent =
                C64::new(-d * d, d * d * chirp) / (4.0 * packet.var_x0) + C64::new(0.0, packet.p0 * x / hbar);
            exponent.exp()
        })
        .collect();
    let mut psi = WaveFunction::new(*grid, amplitudes, 0.0)?;
    psi.normalize();
    Ok(psi)
}

/// Kinetic propagator `exp(−i p² t / 2mħ)` applied in Fourier space. With no
/// potential the split-step factorization is exact for any step.
#[derive(Clone)]
pub struct FreePropagator {
    grid: GridSpec,
    consts: PhysicalConstants,
    fft: FftPair,
    k2: Vec<f64>,
}

impl FreePropagator {
    pub fn new(grid: GridSpec, consts: PhysicalConstants) -> Self {
        let k2 = grid.wavenumbers().into_iter().map(|k| k * k).collect();
        Self { grid, consts, fft: FftPair::new(grid.n_points()), k2 }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn consts(&self) -> &PhysicalConstants {
        &self.consts
    }

    /// Momentum-space phase factors for a step of duration `dt`.
    pub fn phases(&self, dt: f64) -> Vec<C64> {
        let w = self.consts.hbar * dt / (2.0 * self.consts.mass);
        self.k2.iter().map(|k2| C64::from_polar(1.0, -w * k2)).collect()
    }

    /// Advances `psi` in place by the step encoded in `phases` (from
    /// [`FreePropagator::phases`] with duration `dt`).
    pub fn apply(&self, psi: &mut WaveFunction, phases: &[C64], dt: f64) {
        self.fft.forward(&mut psi.amplitudes);
        psi.amplitudes.iter_mut().zip(phases).for_each(|(a, ph)| *a *= ph);
        self.fft.inverse(&mut psi.amplitudes);
        psi.time += dt;
    }

    /// Advances by `steps` steps of `dt` and checks the boundary guard.
    pub fn propagate(&self, psi: &mut WaveFunction, dt: f64, steps: usize) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        if !dt.is_finite() {
            return Err(Error::param("dt", format!("must be finite, got {dt}")));
        }
        let total = dt * steps as f64;
        let phases = self.phases(total);
        self.apply(psi, &phases, total);
        psi.check_boundary()
    }

    pub(crate) fn fft(&self) -> &FftPair {
        &self.fft
    }
}

/// Free evolution of `psi` by `steps` steps of `dt`.
///
/// Negative `dt` runs the evolution backwards. Fails with
/// [`Error::BoundaryContamination`] if the evolved state has non-negligible
/// mass in the edge cells of the periodic grid.
pub fn propagate_split_step(
    psi: &WaveFunction,
    dt: f64,
    steps: usize,
    consts: &PhysicalConstants,
) -> Result<WaveFunction> {
    let mut out = psi.clone();
    if steps == 0 {
        return Ok(out);
    }
    FreePropagator::new(psi.grid, *consts).propagate(&mut out, dt, steps)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiSpec {
    pub omega: f64,
}

impl RabiSpec {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::param("omega", format!("must be positive, got {omega}")));
        }
        Ok(Self { omega })
    }
}

/// Excited-state probability `cos²(Ωt/2)` of a resonantly driven atom that
/// starts excited.
pub fn rabi_excited_prob(spec: &RabiSpec, t: f64) -> f64 {
    let c = (spec.omega * t / 2.0).cos();
    c * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn prepared_gaussian_is_normalized() {
        let g = GridSpec::new(512, -20.0, 20.0).unwrap();
        let psi = gaussian_to_wavefunction(&GaussianPacket::new(0.0, 0.0, 1.0).unwrap(), &g, &unit()).unwrap();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-9);
        assert!((psi.var_x() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prepared_gaussian_carries_its_momentum() {
        let g = GridSpec::new(512, -20.0, 20.0).unwrap();
        let psi = gaussian_to_wavefunction(&GaussianPacket::new(0.0, 2.0, 1.0).unwrap(), &g, &unit()).unwrap();
        let (p, p2) = psi.momentum_moments(1.0);
        assert!((p - 2.0).abs() < 1e-6, "{p}");
        assert!((p2 - p * p - 0.25).abs() < 1e-6);
    }

    #[test]
    fn chirped_gaussian_has_requested_covariance() {
        let g = GridSpec::new(1024, -30.0, 30.0).unwrap();
        let packet = GaussianPacket::with_covariance(1.0, 0.5, 2.0, 0.3).unwrap();
        let psi = gaussian_to_wavefunction(&packet, &g, &unit()).unwrap();
        let (p, p2) = psi.momentum_moments(1.0);
        assert!((p2 - p * p - packet.var_p0(&unit())).abs() < 1e-8);
        // spreading over a short time exposes the linear covariance term
        let t = 0.1;
        let out = propagate_split_step(&psi, t, 1, &unit()).unwrap();
        let (_, var) = evolve_free_analytic(&packet, t, &unit()).unwrap();
        assert!((out.var_x() - var).abs() < 1e-8);
    }

    #[test]
    fn grid_too_small_for_wide_packet() {
        let g = GridSpec::new(512, -20.0, 20.0).unwrap();
        let err = gaussian_to_wavefunction(&GaussianPacket::new(0.0, 0.0, 100.0).unwrap(), &g, &unit()).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall { .. }));
    }

    #[test]
    fn analytic_spreading_values() {
        let p = GaussianPacket::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(evolve_free_analytic(&p, 2.0, &unit()).unwrap(), (0.0, 2.0));
        let p = GaussianPacket::with_covariance(0.7, -0.2, 3.0, 0.4).unwrap();
        assert_eq!(evolve_free_analytic(&p, 0.0, &unit()).unwrap(), (0.7, 3.0));
        let p = GaussianPacket::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(evolve_free_analytic(&p, 3.0, &unit()).unwrap().0, 3.0);
        assert!(evolve_free_analytic(&p, -1.0, &unit()).is_err());
    }

    #[test]
    fn split_step_matches_analytic_variance() {
        let g = GridSpec::new(1024, -40.0, 40.0).unwrap();
        let packet = GaussianPacket::new(0.0, 0.0, 1.0).unwrap();
        let psi = gaussian_to_wavefunction(&packet, &g, &unit()).unwrap();
        let out = propagate_split_step(&psi, 0.01, 200, &unit()).unwrap();
        assert!((out.var_x() - 2.0).abs() < 2e-4);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-9);
        assert!((out.time - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_is_identity() {
        let g = GridSpec::new(256, -20.0, 20.0).unwrap();
        let psi = gaussian_to_wavefunction(&GaussianPacket::new(1.0, 1.0, 1.0).unwrap(), &g, &unit()).unwrap();
        assert_eq!(propagate_split_step(&psi, 0.3, 0, &unit()).unwrap(), psi);
    }

    #[test]
    fn drifting_packet_hits_boundary() {
        let g = GridSpec::new(512, -20.0, 20.0).unwrap();
        let psi = gaussian_to_wavefunction(&GaussianPacket::new(0.0, 5.0, 0.25).unwrap(), &g, &unit()).unwrap();
        let err = propagate_split_step(&psi, 0.1, 40, &unit()).unwrap_err();
        assert!(matches!(err, Error::BoundaryContamination { .. }));
    }

    #[test]
    fn rabi_values() {
        let r = RabiSpec::new(2.0 * PI).unwrap();
        assert_eq!(rabi_excited_prob(&r, 0.0), 1.0);
        assert!(rabi_excited_prob(&r, 0.5) < 1e-30);
        let r = RabiSpec::new(1.0).unwrap();
        assert!((rabi_excited_prob(&r, PI / 2.0) - 0.5).abs() < 1e-15);
        assert!(RabiSpec::new(0.0).is_err());
    }
}

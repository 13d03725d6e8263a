//! Uniform periodic 1D grids, wavefunctions sampled on them, and spectral
//! integration of grid densities.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Mass in the two outermost grid cells above which a state is considered to
/// have wrapped around the periodic boundary.
pub const EDGE_MASS_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0 }
    }
}

impl PhysicalConstants {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::param("hbar", format!("must be positive, got {hbar}")));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::param("mass", format!("must be positive, got {mass}")));
        }
        Ok(Self { hbar, mass })
    }
}

/// `n_points` samples at `x_min + k dx`, `k = 0..n_points`; `x_max` itself is
/// identified with `x_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n_points: usize,
    x_min: f64,
    x_max: f64,
}

impl GridSpec {
    pub fn new(n_points: usize, x_min: f64, x_max: f64) -> Result<Self> {
        if n_points < 2 || !n_points.is_power_of_two() {
            return Err(Error::param("n_points", format!("must be a power of two >= 2, got {n_points}")));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::param("x_max", format!("need x_max > x_min, got [{x_min}, {x_max}]")));
        }
        Ok(Self { n_points, x_min, x_max })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n_points as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |k| self.x(k))
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * PI / self.length();
        (0..n).map(|j| if j < n / 2 { j as f64 * dk } else { (j as f64 - n as f64) * dk }).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

/// Forward/inverse transform pair for one grid size.
#[derive(Clone)]
pub(crate) struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub(crate) fn forward(&self, buf: &mut [C64]) {
        self.forward.process(buf);
    }

    /// Inverse transform including the `1/n` factor.
    pub(crate) fn inverse(&self, buf: &mut [C64]) {
        self.inverse.process(buf);
        let scale = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub grid: GridSpec,
    pub amplitudes: Vec<C64>,
    pub time: f64,
}

impl WaveFunction {
    pub fn new(grid: GridSpec, amplitudes: Vec<C64>, time: f64) -> Result<Self> {
        if amplitudes.len() != grid.n_points() {
            return Err(Error::param(
                "amplitudes",
                format!("length {} does not match grid size {}", amplitudes.len(), grid.n_points()),
            ));
        }
        Ok(Self { grid, amplitudes, time })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// Rescales to unit norm; returns the norm before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            let inv = 1.0 / norm;
            self.amplitudes.iter_mut().for_each(|a| *a *= inv);
        }
        norm
    }

    /// `|ψ_k|²`, a density per unit length.
    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn mean_x(&self) -> f64 {
        let dx = self.grid.dx();
        self.grid.positions().zip(&self.amplitudes).map(|(x, a)| x * a.norm_sqr()).sum::<f64>() * dx / self.norm_sqr()
    }

    pub fn var_x(&self) -> f64 {
        let mean = self.mean_x();
        let dx = self.grid.dx();
        self.grid.positions().zip(&self.amplitudes).map(|(x, a)| (x - mean).powi(2) * a.norm_sqr()).sum::<f64>() * dx
            / self.norm_sqr()
    }

    /// `(⟨p⟩, ⟨p²⟩)` from the discrete Fourier transform.
    pub fn momentum_moments(&self, hbar: f64) -> (f64, f64) {
        let fft = FftPair::new(self.grid.n_points());
        let mut buf = self.amplitudes.clone();
        fft.forward(&mut buf);
        let k = self.grid.wavenumbers();
        let total: f64 = buf.iter().map(|z| z.norm_sqr()).sum();
        let (m1, m2) = buf.iter().zip(&k).fold((0.0, 0.0), |(m1, m2), (z, &k)| {
            let w = z.norm_sqr();
            let p = hbar * k;
            (m1 + w * p, m2 + w * p * p)
        });
        (m1 / total, m2 / total)
    }

    pub fn mean_p(&self, hbar: f64) -> f64 {
        self.momentum_moments(hbar).0
    }

    pub fn edge_mass(&self) -> f64 {
        let n = self.amplitudes.len();
        (self.amplitudes[0].norm_sqr() + self.amplitudes[n - 1].norm_sqr()) * self.grid.dx()
    }

    pub fn check_boundary(&self) -> Result<()> {
        self.check_boundary_with(EDGE_MASS_THRESHOLD)
    }

    pub fn check_boundary_with(&self, threshold: f64) -> Result<()> {
        let edge_mass = self.edge_mass();
        if edge_mass > threshold {
            return Err(Error::BoundaryContamination { edge_mass, threshold });
        }
        Ok(())
    }

    /// `|⟨self|other⟩|²` for unit-norm states on the same grid.
    pub fn fidelity(&self, other: &WaveFunction) -> f64 {
        let overlap: C64 = self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum();
        (overlap * self.grid.dx()).norm_sqr()
    }
}

/// Trigonometric interpolant of a density sampled on a periodic grid, used to
/// integrate the density over arbitrary intervals with spectral accuracy.
#[derive(Debug, Clone)]
pub struct SpectralDensity {
    grid: GridSpec,
    coeffs: Vec<C64>,
}

impl SpectralDensity {
    pub fn new(grid: GridSpec, density: &[f64]) -> Self {
        let fft = FftPair::new(grid.n_points());
        Self::with_fft(grid, density, &fft)
    }

    pub(crate) fn with_fft(grid: GridSpec, density: &[f64], fft: &FftPair) -> Self {
        let n = grid.n_points();
        let mut coeffs: Vec<C64> = density.iter().map(|&r| C64::new(r, 0.0)).collect();
        fft.forward(&mut coeffs);
        let scale = 1.0 / n as f64;
        coeffs.iter_mut().for_each(|c| *c *= scale);
        Self { grid, coeffs }
    }

    pub fn total(&self) -> f64 {
        self.coeffs[0].re * self.grid.length()
    }

    /// `∫_{x_min}^{x} ρ(u) du` for `x` in `[x_min, x_max]`.
    pub fn cumulative(&self, x: f64) -> f64 {
        let n = self.coeffs.len();
        let y = (x - self.grid.x_min()).clamp(0.0, self.grid.length());
        let dk = 2.0 * PI / self.grid.length();
        let mut acc = self.coeffs[0].re * y;
        if n >= 2 {
            let step = C64::from_polar(1.0, dk * y);
            let mut phase = step;
            let mut sum = C64::new(0.0, 0.0);
            for j in 1..n / 2 {
                let kappa = j as f64 * dk;
                // c_j (e^{iκy} - 1) / (iκ)
                sum += self.coeffs[j] * (phase - 1.0) / C64::new(0.0, kappa);
                phase *= step;
            }
            acc += 2.0 * sum.re;
            let k_nyq = (n / 2) as f64 * dk;
            acc += self.coeffs[n / 2].re * (k_nyq * y).sin() / k_nyq;
        }
        acc
    }

    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.cumulative(hi) - self.cumulative(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_non_power_of_two() {
        assert!(GridSpec::new(100, -1.0, 1.0).is_err());
        assert!(GridSpec::new(1, -1.0, 1.0).is_err());
        assert!(GridSpec::new(64, 1.0, 1.0).is_err());
        assert!(GridSpec::new(64, -1.0, 1.0).is_ok());
    }

    #[test]
    fn constants_must_be_positive() {
        assert!(PhysicalConstants::new(0.0, 1.0).is_err());
        assert!(PhysicalConstants::new(1.0, -2.0).is_err());
    }

    #[test]
    fn wavenumbers_are_in_fft_order() {
        let g = GridSpec::new(8, 0.0, 2.0 * PI).unwrap();
        assert_eq!(g.wavenumbers(), vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn spectral_cumulative_integrates_a_gaussian() {
        let g = GridSpec::new(512, -20.0, 20.0).unwrap();
        let rho: Vec<f64> = g.positions().map(|x| (-x * x / 2.0).exp() / (2.0 * PI).sqrt()).collect();
        let s = SpectralDensity::new(g, &rho);
        assert!((s.total() - 1.0).abs() < 1e-12);
        let inside = s.integral(-1.0, 1.0);
        assert!((inside - libm::erf(1.0 / 2f64.sqrt())).abs() < 1e-12, "{inside}");
        assert!((s.cumulative(0.0) - 0.5).abs() < 1e-12);
        assert!(s.cumulative(g.x_min()).abs() < 1e-15);
    }
}

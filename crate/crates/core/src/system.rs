//! Systems whose Born probabilities can be queried at arbitrary times.

use crate::dynamics::{gaussian_to_wavefunction, rabi_excited_prob, FreePropagator, GaussianPacket, RabiSpec};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, PhysicalConstants, SpectralDensity, WaveFunction};
use crate::sampler::{outcome_probabilities, OutcomeBinning, ProbabilityVector};

/// A system evolving without measurement back-action, i.e. one fresh copy per
/// query.
pub trait MeasuredSystem: Sync {
    /// `⟨ψ(t)|P_n|ψ(t)⟩` for every outcome of `binning`.
    fn probabilities(&self, t: f64, binning: &OutcomeBinning) -> Result<ProbabilityVector>;
}

/// Free particle on a grid, evolved exactly in Fourier space from `initial`.
#[derive(Clone)]
pub struct FreeParticle {
    initial: WaveFunction,
    propagator: FreePropagator,
}

impl FreeParticle {
    pub fn new(initial: WaveFunction, consts: PhysicalConstants) -> Self {
        let propagator = FreePropagator::new(initial.grid, consts);
        Self { initial, propagator }
    }

    pub fn from_packet(packet: &GaussianPacket, grid: &GridSpec, consts: &PhysicalConstants) -> Result<Self> {
        Ok(Self::new(gaussian_to_wavefunction(packet, grid, consts)?, *consts))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.initial.grid
    }

    pub fn consts(&self) -> &PhysicalConstants {
        self.propagator.consts()
    }

    pub fn initial(&self) -> &WaveFunction {
        &self.initial
    }

    pub fn state_at(&self, t: f64) -> Result<WaveFunction> {
        let mut psi = self.initial.clone();
        let dt = t - psi.time;
        if dt != 0.0 {
            self.propagator.propagate(&mut psi, dt, 1)?;
            psi.time = t;
        }
        Ok(psi)
    }

    pub fn density_at(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.state_at(t)?.density())
    }

    pub fn spectral_density_at(&self, t: f64) -> Result<SpectralDensity> {
        let psi = self.state_at(t)?;
        Ok(SpectralDensity::with_fft(psi.grid, &psi.density(), self.propagator.fft()))
    }
}

impl MeasuredSystem for FreeParticle {
    fn probabilities(&self, t: f64, binning: &OutcomeBinning) -> Result<ProbabilityVector> {
        outcome_probabilities(&self.state_at(t)?, binning)
    }
}

/// Free Gaussian packet with probabilities from the exact normal CDF; no grid.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticGaussian {
    pub packet: GaussianPacket,
    pub consts: PhysicalConstants,
}

impl AnalyticGaussian {
    pub fn new(packet: GaussianPacket, consts: PhysicalConstants) -> Self {
        Self { packet, consts }
    }

    /// Probability that the position at time `t` is below `x`.
    pub fn cdf(&self, t: f64, x: f64) -> f64 {
        let mean = self.packet.mean_x_at(t, &self.consts);
        let sd = self.packet.var_x_at(t, &self.consts).sqrt();
        normal_cdf((x - mean) / sd)
    }
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

impl MeasuredSystem for AnalyticGaussian {
    fn probabilities(&self, t: f64, binning: &OutcomeBinning) -> Result<ProbabilityVector> {
        match binning {
            OutcomeBinning::PositionBins { edges } => {
                let n = edges.len() - 1;
                let probs = (0..n)
                    .map(|i| {
                        let lo = if i == 0 { 0.0 } else { self.cdf(t, edges[i]) };
                        let hi = if i == n - 1 { 1.0 } else { self.cdf(t, edges[i + 1]) };
                        (hi - lo).max(0.0)
                    })
                    .collect();
                ProbabilityVector::from_weights(probs)
            }
            OutcomeBinning::DetectorWindow { center, halfwidth } => {
                let inside = (self.cdf(t, center + halfwidth) - self.cdf(t, center - halfwidth)).clamp(0.0, 1.0);
                ProbabilityVector::from_weights(vec![inside, 1.0 - inside])
            }
            OutcomeBinning::TwoLevel => {
                Err(Error::BinningMismatch("two-level binning applied to a position-space system".into()))
            }
        }
    }
}

/// Two-level atom, initially excited, under resonant Rabi driving.
#[derive(Debug, Clone, Copy)]
pub struct RabiSystem {
    pub spec: RabiSpec,
}

impl MeasuredSystem for RabiSystem {
    fn probabilities(&self, t: f64, binning: &OutcomeBinning) -> Result<ProbabilityVector> {
        match binning {
            OutcomeBinning::TwoLevel => {
                let excited = rabi_excited_prob(&self.spec, t);
                ProbabilityVector::from_weights(vec![excited, 1.0 - excited])
            }
            _ => Err(Error::BinningMismatch("a two-level system needs two-level binning".into())),
        }
    }
}

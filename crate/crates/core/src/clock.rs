//! Exact reference distributions: the quantum-clock conditional density
//! `p(t|a_n) ∝ ⟨ψ(t)|P_n|ψ(t)⟩` and the probability-flow density through a
//! threshold, both computed from noiseless Born probabilities.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SpectralDensity};
use crate::sampler::OutcomeBinning;
use crate::stroboscope::{DistKind, DistLabel, TimeDistribution};
use crate::system::{FreeParticle, MeasuredSystem};
use crate::window::WindowSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockOptions {
    /// Composite-Simpson node count; must be odd.
    pub quad_nodes: usize,
    /// Below this window integral the outcome counts as never observed.
    pub zero_threshold: f64,
}

impl Default for ClockOptions {
    fn default() -> Self {
        Self { quad_nodes: 1025, zero_threshold: 1e-15 }
    }
}

/// Normalized clock density sampled at equally spaced quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockDistribution {
    pub outcome: usize,
    pub window: WindowSpec,
    pub times: Vec<f64>,
    /// `p(t_i | a_n)`, units of 1/time.
    pub density: Vec<f64>,
    /// `∫ ⟨P_n⟩ dt` over the window.
    pub normalization: f64,
}

impl ClockDistribution {
    fn spacing(&self) -> f64 {
        self.window.duration / (self.times.len() - 1) as f64
    }

    pub fn integral(&self) -> f64 {
        simpson(&self.density, self.spacing())
    }

    /// Density at `t` inside the window: the node value when `t` falls on a
    /// node, otherwise 4-point Lagrange interpolation.
    pub fn value_at(&self, t: f64) -> f64 {
        let h = self.spacing();
        let s = (t - self.window.t0) / h;
        let last = self.times.len() - 1;
        let nearest = s.round();
        if (s - nearest).abs() < 1e-9 && nearest >= 0.0 && nearest as usize <= last {
            return self.density[nearest as usize];
        }
        let base = (s.floor() as isize - 1).clamp(0, last as isize - 3) as usize;
        let mut acc = 0.0;
        for i in base..base + 4 {
            let mut w = 1.0;
            for j in base..base + 4 {
                if j != i {
                    w *= (s - j as f64) / (i as f64 - j as f64);
                }
            }
            acc += w * self.density[i];
        }
        acc.max(0.0)
    }

    /// `outcome,t,density` rows.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "outcome,t,density")?;
        }
        for (t, d) in self.times.iter().zip(&self.density) {
            writeln!(w, "{},{t},{d}", self.outcome)?;
        }
        Ok(())
    }
}

/// Composite Simpson rule on an odd number of equally spaced samples.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd number of nodes >= 3");
    let interior: f64 =
        values[1..n - 1].iter().enumerate().map(|(i, v)| if i % 2 == 0 { 4.0 * v } else { 2.0 * v }).sum();
    h / 3.0 * (values[0] + interior + values[n - 1])
}

pub fn clock_distribution<S: MeasuredSystem + ?Sized>(
    system: &S,
    binning: &OutcomeBinning,
    window: &WindowSpec,
    outcome: usize,
    opts: &ClockOptions,
) -> Result<ClockDistribution> {
    let k = opts.quad_nodes;
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::param("quad_nodes", format!("must be odd and >= 3, got {k}")));
    }
    if outcome >= binning.n_outcomes() {
        return Err(Error::param("outcome", format!("{outcome} out of range")));
    }
    let h = window.duration / (k - 1) as f64;
    let times: Vec<f64> = (0..k).map(|i| window.t0 + i as f64 * h).collect();
    let values = times
        .par_iter()
        .map(|&t| system.probabilities(t, binning).map(|pv| pv.probs()[outcome]))
        .collect::<Result<Vec<f64>>>()?;
    let normalization = simpson(&values, h);
    if !(normalization >= opts.zero_threshold) {
        return Err(Error::ZeroDenominator { integral: normalization, threshold: opts.zero_threshold });
    }
    let density = values.iter().map(|v| v / normalization).collect();
    Ok(ClockDistribution { outcome, window: *window, times, density, normalization })
}

/// Clock reference at the probe times `t_m = t0 + mτ`, `m = 0..M`:
/// `probs[m] ∝ p(t_m | a_n)`.
pub fn discretize_clock(cd: &ClockDistribution, samples: usize) -> Result<TimeDistribution> {
    let probe = WindowSpec::new(cd.window.t0, cd.window.duration, samples)?;
    discretize_clock_at(cd, probe.times())
}

/// Clock reference at arbitrary times inside the window.
pub fn discretize_clock_at(cd: &ClockDistribution, times: Vec<f64>) -> Result<TimeDistribution> {
    let weights: Vec<f64> = times.iter().map(|&t| cd.value_at(t)).collect();
    let d = TimeDistribution::from_weights(DistKind::ClockReference, DistLabel::Outcome(cd.outcome), 0, times, weights);
    if d.is_defined() {
        Ok(d)
    } else {
        Err(Error::ZeroDenominator { integral: 0.0, threshold: 0.0 })
    }
}

/// Spatial densities `|ψ(x, t_i)|²` on a common grid.
#[derive(Debug, Clone)]
pub struct DensitySeries {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
}

impl DensitySeries {
    pub fn from_free_particle(system: &FreeParticle, times: Vec<f64>) -> Result<Self> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("times", "must be strictly increasing"));
        }
        let densities = times.par_iter().map(|&t| system.density_at(t)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: *system.grid(), times, densities })
    }
}

/// `π_x(t) ∝ |∂_t ∫_{−∞}^{x} ρ_t(u) du|` at the series times inside `window`,
/// by central differences (one-sided at the ends).
pub fn flow_distribution(series: &DensitySeries, x_threshold: f64, window: &WindowSpec) -> Result<TimeDistribution> {
    if !series.grid.contains(x_threshold) {
        return Err(Error::BinningMismatch(format!("threshold {x_threshold} outside the grid")));
    }
    let k = series.times.len();
    if k < 2 {
        return Err(Error::param("series", "need at least two density samples"));
    }
    let cumulative: Vec<f64> = series
        .densities
        .par_iter()
        .map(|rho| {
            let s = SpectralDensity::new(series.grid, rho);
            s.cumulative(x_threshold) / s.total()
        })
        .collect();
    let t = &series.times;
    let derivative: Vec<f64> = (0..k)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == k - 1 => (k - 2, k - 1),
                i => (i - 1, i + 1),
            };
            ((cumulative[b] - cumulative[a]) / (t[b] - t[a])).abs()
        })
        .collect();
    // quadrature weight of each sample, so non-uniform series normalize as densities
    let weight = |i: usize| match i {
        0 => (t[1] - t[0]) / 2.0,
        i if i == k - 1 => (t[k - 1] - t[k - 2]) / 2.0,
        i => (t[i + 1] - t[i - 1]) / 2.0,
    };
    let eps = 1e-12 * window.duration;
    let (times, weights): (Vec<f64>, Vec<f64>) = (0..k)
        .filter(|&i| t[i] >= window.t0 - eps && t[i] <= window.end() + eps)
        .map(|i| (t[i], derivative[i] * weight(i)))
        .unzip();
    if weights.iter().all(|&w| w <= 1e-15) {
        return Err(Error::AllZeroFlow);
    }
    Ok(TimeDistribution::from_weights(DistKind::FlowReference, DistLabel::Threshold(x_threshold), 0, times, weights))
}

/// Exact flow reference on the probe layout of the stroboscopic estimator:
/// the flow density is evaluated at `refine` midpoints inside each interval
/// `(t_{m−1}, t_m]` and summed per interval, giving one weight per
/// `m = 1..M`.
pub fn flow_reference_on_probes(
    system: &FreeParticle,
    x_threshold: f64,
    probes: &WindowSpec,
    refine: usize,
) -> Result<TimeDistribution> {
    if refine == 0 {
        return Err(Error::param("refine", "need at least one sample per interval"));
    }
    let probe_times = probes.times();
    let h = probes.tau() / refine as f64;
    let dense: Vec<f64> = (0..(probes.samples - 1) * refine).map(|j| probes.t0 + (j as f64 + 0.5) * h).collect();
    let span = WindowSpec::new(probes.t0, probe_times[probes.samples - 1] - probes.t0, 2)?;
    let series = DensitySeries::from_free_particle(system, dense)?;
    let fine = flow_distribution(&series, x_threshold, &span)?;
    let fine_probs = fine.probs().expect("flow_distribution returns defined distributions");
    let weights: Vec<f64> = fine_probs.chunks(refine).map(|c| c.iter().sum()).collect();
    Ok(TimeDistribution::from_weights(
        DistKind::FlowReference,
        DistLabel::Threshold(x_threshold),
        1,
        probe_times[1..].to_vec(),
        weights,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{GaussianPacket, RabiSpec};
    use crate::grid::PhysicalConstants;
    use crate::sampler::ProbabilityVector;
    use crate::system::{AnalyticGaussian, RabiSystem};
    use std::f64::consts::PI;

    struct Constant(f64);

    impl MeasuredSystem for Constant {
        fn probabilities(&self, _t: f64, _b: &OutcomeBinning) -> Result<ProbabilityVector> {
            ProbabilityVector::new(vec![self.0, 1.0 - self.0])
        }
    }

    fn rabi_clock(k: usize) -> ClockDistribution {
        let sys = RabiSystem { spec: RabiSpec::new(2.0 * PI).unwrap() };
        let w = WindowSpec::new(0.0, 1.0, 2).unwrap();
        clock_distribution(
            &sys,
            &OutcomeBinning::TwoLevel,
            &w,
            0,
            &ClockOptions { quad_nodes: k, ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn rabi_clock_density_at_origin() {
        let cd = rabi_clock(1025);
        assert!((cd.density[0] - 2.0).abs() < 1e-8);
        assert!((cd.integral() - 1.0).abs() < 1e-8);
        assert!(cd.density.iter().all(|&d| d >= 0.0));
        for (t, d) in cd.times.iter().zip(&cd.density) {
            assert!((d - 2.0 * (PI * t).cos().powi(2)).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_probability_gives_uniform_density() {
        let w = WindowSpec::new(2.0, 4.0, 4).unwrap();
        let cd =
            clock_distribution(&Constant(0.3), &OutcomeBinning::TwoLevel, &w, 0, &ClockOptions::default()).unwrap();
        assert!(cd.density.iter().all(|d| (d - 0.25).abs() < 1e-12));
        let d = discretize_clock(&cd, 4).unwrap();
        for p in d.probs().unwrap() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn never_observed_outcome_has_no_clock() {
        let w = WindowSpec::new(0.0, 1.0, 4).unwrap();
        let r = clock_distribution(&Constant(0.0), &OutcomeBinning::TwoLevel, &w, 0, &ClockOptions::default());
        assert!(matches!(r, Err(Error::ZeroDenominator { .. })));
    }

    #[test]
    fn even_node_count_is_rejected() {
        let w = WindowSpec::new(0.0, 1.0, 4).unwrap();
        let r = clock_distribution(
            &Constant(0.5),
            &OutcomeBinning::TwoLevel,
            &w,
            0,
            &ClockOptions { quad_nodes: 1024, ..Default::default() },
        );
        assert!(r.is_err());
    }

    #[test]
    fn rabi_discretized_two_points() {
        let d = discretize_clock(&rabi_clock(1025), 2).unwrap();
        let p = d.probs().unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-15);
    }

    #[test]
    fn doubling_nodes_leaves_density_unchanged() {
        let sys = AnalyticGaussian::new(GaussianPacket::new(-5.0, 1.0, 1.0).unwrap(), PhysicalConstants::default());
        let w = WindowSpec::new(0.0, 10.0, 32).unwrap();
        let b = OutcomeBinning::detector_window(0.0, 0.5).unwrap();
        let coarse =
            clock_distribution(&sys, &b, &w, 0, &ClockOptions { quad_nodes: 1025, ..Default::default() }).unwrap();
        let fine =
            clock_distribution(&sys, &b, &w, 0, &ClockOptions { quad_nodes: 2049, ..Default::default() }).unwrap();
        let sup = coarse.density.iter().enumerate().map(|(i, d)| (d - fine.density[2 * i]).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-8, "{sup}");
    }

    #[test]
    fn interpolation_between_nodes() {
        let cd = rabi_clock(129);
        let t = 0.3 + 1.0 / 512.0;
        assert!((cd.value_at(t) - 2.0 * (PI * t).cos().powi(2)).abs() < 1e-6);
    }

    #[test]
    fn time_independent_density_has_no_flow() {
        let g = GridSpec::new(256, -10.0, 10.0).unwrap();
        let rho: Vec<f64> = g.positions().map(|x| (-x * x / 2.0).exp() / (2.0 * PI).sqrt()).collect();
        let series = DensitySeries { grid: g, times: vec![0.0, 1.0, 2.0, 3.0], densities: vec![rho; 4] };
        let w = WindowSpec::new(0.0, 3.0, 2).unwrap();
        assert_eq!(flow_distribution(&series, 0.0, &w), Err(Error::AllZeroFlow));
    }
}

//! Measurements that disturb the state: repeated Gaussian-pointer (fuzzy)
//! position measurements, repeated projections (the Zeno effect), the moment
//! equations of the continuous limit and a dense master-equation oracle.
//!
//! A pointer of variance `σ` read every `τ` realizes, for `τ → 0` at fixed
//! `κ = στ`, the master equation `dρ/dt = −(i/ħ)[H₀,ρ] − (1/4κ)[x,[x,ρ]]`.
//! The Kraus operator used here is `exp(−(x − r)²/(2σ))`; averaging it over
//! the readout `r` multiplies `ρ(x, x')` by `exp(−(x − x')²/(4σ))`, which
//! matches the `1/(4κ)` dephasing rate exactly. The readout then scatters
//! around the true position with variance `σ/2`.

pub mod lindblad;
pub mod moments;

use std::io::{self, Write};

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::{FreePropagator, GaussianPacket};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, PhysicalConstants, WaveFunction};
use crate::rng::{uniform, Domain, SeedSpec};

pub use lindblad::{lindblad_dense_evolve, DensityMatrix};
pub use moments::{
    moment_ode_evolve, variance_closed_form_p, variance_closed_form_x, write_moments_csv, MomentRow, MomentSource,
    MomentState,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointerSpec {
    /// Pointer variance (length²).
    pub sigma: f64,
    /// Spacing between successive readouts.
    pub tau: f64,
}

impl PointerSpec {
    pub fn new(sigma: f64, tau: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be non-negative, got {sigma}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::param("tau", format!("must be positive, got {tau}")));
        }
        Ok(Self { sigma, tau })
    }

    /// Pointer with coupling `kappa` read every `tau`.
    pub fn from_kappa(kappa: f64, tau: f64) -> Result<Self> {
        Self::new(kappa / tau, tau)
    }

    pub fn kappa(&self) -> f64 {
        self.sigma * self.tau
    }

    /// Variance of the readout around the measured position.
    pub fn readout_noise_variance(&self) -> f64 {
        self.sigma / 2.0
    }
}

fn sample_grid_point<R: RngCore + ?Sized>(psi: &WaveFunction, rng: &mut R) -> usize {
    let density = psi.density();
    let total: f64 = density.iter().sum();
    let u = uniform(rng) * total;
    let mut acc = 0.0;
    for (k, d) in density.iter().enumerate() {
        acc += d;
        if u < acc {
            return k;
        }
    }
    density.iter().rposition(|&d| d > 0.0).unwrap_or(0)
}

/// One Gaussian-pointer position measurement. Returns the readout and the
/// renormalized post-measurement state.
pub fn fuzzy_measure<R: RngCore + ?Sized>(psi: &WaveFunction, sigma: f64, rng: &mut R) -> Result<(f64, WaveFunction)> {
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSigma(sigma));
    }
    let k = sample_grid_point(psi, rng);
    let noise: f64 = StandardNormal.sample(rng);
    let readout = psi.grid.x(k) + noise * (sigma / 2.0).sqrt();
    let mut post = psi.clone();
    let log_w: Vec<f64> = psi.grid.positions().map(|x| -(x - readout).powi(2) / (2.0 * sigma)).collect();
    let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    post.amplitudes.iter_mut().zip(&log_w).for_each(|(a, lw)| *a *= (lw - shift).exp());
    post.normalize();
    Ok((readout, post))
}

/// Union of half-open intervals `[lo, hi)`; a grid point belongs to the region
/// if its coordinate does.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    intervals: Vec<(f64, f64)>,
}

impl Region {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() || intervals.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::param("region", "need non-empty intervals with hi > lo"));
        }
        Ok(Self { intervals })
    }

    pub fn below(x: f64) -> Self {
        Self { intervals: vec![(f64::NEG_INFINITY, x)] }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| x >= lo && x < hi)
    }

    pub fn probability(&self, psi: &WaveFunction) -> f64 {
        let dx = psi.grid.dx();
        psi.grid
            .positions()
            .zip(&psi.amplitudes)
            .filter(|(x, _)| self.contains(*x))
            .map(|(_, a)| a.norm_sqr())
            .sum::<f64>()
            * dx
            / psi.norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionOutcome {
    Inside,
    Outside,
}

/// Deterministic projection onto the region (or its complement). Returns the
/// Born probability of that outcome and the renormalized state, or `None`
/// when the outcome is impossible.
pub fn project_onto(psi: &WaveFunction, region: &Region, outcome: RegionOutcome) -> (f64, Option<WaveFunction>) {
    let keep_inside = outcome == RegionOutcome::Inside;
    let mut post = psi.clone();
    for (x, a) in psi.grid.positions().zip(post.amplitudes.iter_mut()) {
        if region.contains(x) != keep_inside {
            *a = 0.0.into();
        }
    }
    let prob = post.norm_sqr() / psi.norm_sqr();
    if prob > 0.0 {
        post.normalize();
        (prob, Some(post))
    } else {
        (0.0, None)
    }
}

/// Born-sampled projective measurement of "inside `region`".
pub fn project_region<R: RngCore + ?Sized>(
    psi: &WaveFunction,
    region: &Region,
    rng: &mut R,
) -> (RegionOutcome, WaveFunction) {
    let p_in = region.probability(psi);
    let outcome = if uniform(rng) < p_in { RegionOutcome::Inside } else { RegionOutcome::Outside };
    let (_, post) = project_onto(psi, region, outcome);
    (outcome, post.expect("sampled outcomes have positive probability"))
}

/// Edge-mass limit used between projections. Each sharp cut ejects a faint
/// spray of grid-scale momenta that crosses the periodic boundary at the
/// `1e-8` level; anything wrapping around lands outside the region and is
/// removed by the next projection.
pub const ZENO_EDGE_THRESHOLD: f64 = 1e-6;

/// Probability that a particle starting inside `region` is found inside at
/// every one of `measurements` equally spaced projective checks over
/// `duration` (the last check at `duration`). Exact product of conditional
/// probabilities; no sampling.
pub fn survival_probability_zeno(
    packet: &GaussianPacket,
    region: &Region,
    duration: f64,
    measurements: usize,
    grid: &GridSpec,
    consts: &PhysicalConstants,
) -> Result<f64> {
    if measurements == 0 {
        return Err(Error::param("measurements", "need at least one measurement"));
    }
    if !(duration > 0.0) {
        return Err(Error::param("duration", format!("must be positive, got {duration}")));
    }
    let mut psi = crate::dynamics::gaussian_to_wavefunction(packet, grid, consts)?;
    let initial = region.probability(&psi);
    if initial <= 1.0 - 1e-6 {
        return Err(Error::param("packet", format!("must start inside the region (inside probability {initial})")));
    }
    let propagator = FreePropagator::new(*grid, *consts);
    let tau = duration / measurements as f64;
    let phases = propagator.phases(tau);
    let mut survival = 1.0;
    for _ in 0..measurements {
        propagator.apply(&mut psi, &phases, tau);
        psi.check_boundary_with(ZENO_EDGE_THRESHOLD)?;
        match project_onto(&psi, region, RegionOutcome::Inside) {
            (p, Some(post)) => {
                survival *= p;
                psi = post;
            }
            (_, None) => return Ok(0.0),
        }
    }
    Ok(survival)
}

/// Record of one continuously monitored particle: readout `r_m` of the
/// pointer applied at `t_m`, and `⟨x⟩` of the state just after it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    pub times: Vec<f64>,
    pub readouts: Vec<f64>,
    pub conditional_means: Vec<f64>,
}

/// Alternates a fuzzy measurement and free evolution over `τ`, for
/// `round(duration/τ)` readouts at `t_m = t_start + mτ`.
pub fn fuzzy_trajectory(
    initial: &WaveFunction,
    pointer: &PointerSpec,
    duration: f64,
    consts: &PhysicalConstants,
    seed: SeedSpec,
    id: u32,
) -> Result<Trajectory> {
    let propagator = FreePropagator::new(initial.grid, *consts);
    let phases = propagator.phases(pointer.tau);
    run_trajectory(initial, pointer, duration, &propagator, &phases, seed, id)
}

fn run_trajectory(
    initial: &WaveFunction,
    pointer: &PointerSpec,
    duration: f64,
    propagator: &FreePropagator,
    phases: &[num_complex::Complex64],
    seed: SeedSpec,
    id: u32,
) -> Result<Trajectory> {
    let steps = (duration / pointer.tau).round() as usize;
    let mut rng = seed.stream(Domain::Trajectories, id, 0);
    let mut psi = initial.clone();
    let mut traj = Trajectory {
        id,
        times: Vec::with_capacity(steps),
        readouts: Vec::with_capacity(steps),
        conditional_means: Vec::with_capacity(steps),
    };
    for m in 0..steps {
        let (r, post) = fuzzy_measure(&psi, pointer.sigma, &mut rng)?;
        traj.times.push(initial.time + m as f64 * pointer.tau);
        traj.readouts.push(r);
        traj.conditional_means.push(post.mean_x());
        psi = post;
        propagator.apply(&mut psi, phases, pointer.tau);
        psi.check_boundary()?;
    }
    Ok(traj)
}

/// `count` independent trajectories with ids `0..count`.
pub fn fuzzy_ensemble(
    initial: &WaveFunction,
    pointer: &PointerSpec,
    duration: f64,
    consts: &PhysicalConstants,
    seed: SeedSpec,
    count: u32,
) -> Result<Vec<Trajectory>> {
    let propagator = FreePropagator::new(initial.grid, *consts);
    let phases = propagator.phases(pointer.tau);
    (0..count)
        .into_par_iter()
        .map(|id| run_trajectory(initial, pointer, duration, &propagator, &phases, seed, id))
        .collect()
}

/// Per readout time: ensemble mean of the readouts and their sample variance
/// with the pointer noise `σ/2` subtracted.
pub fn readout_statistics(trajectories: &[Trajectory], pointer: &PointerSpec) -> Vec<MomentRow> {
    let Some(first) = trajectories.first() else {
        return Vec::new();
    };
    (0..first.times.len())
        .map(|m| {
            let xs: Vec<f64> = trajectories.iter().map(|t| t.readouts[m]).collect();
            MomentRow {
                t: first.times[m],
                mean_x: Some(crate::stats::mean(&xs)),
                mean_p: None,
                var_x: Some(crate::stats::sample_variance(&xs) - pointer.readout_noise_variance()),
                var_p: None,
                cov: None,
                source: MomentSource::Ensemble,
            }
        })
        .collect()
}

/// Times at which the conditional-mean path crosses `x_detector`, by linear
/// interpolation between successive readouts.
pub fn crossing_times(traj: &Trajectory, x_detector: f64) -> Vec<f64> {
    let xs = &traj.conditional_means;
    let ts = &traj.times;
    let mut out = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        let (a, b) = (xs[i] - x_detector, xs[i + 1] - x_detector);
        if a == 0.0 {
            if out.last() != Some(&ts[i]) {
                out.push(ts[i]);
            }
        } else if a * b < 0.0 {
            out.push(ts[i] + (ts[i + 1] - ts[i]) * a / (a - b));
        }
    }
    if let (Some(&last_x), Some(&last_t)) = (xs.last(), ts.last()) {
        if last_x == x_detector && out.last() != Some(&last_t) {
            out.push(last_t);
        }
    }
    out
}

/// `traj_id,t,readout,cond_mean` rows.
pub fn write_trajectories_csv<W: Write>(mut w: W, trajectories: &[Trajectory]) -> io::Result<()> {
    writeln!(w, "traj_id,t,readout,cond_mean")?;
    for traj in trajectories {
        for ((t, r), c) in traj.times.iter().zip(&traj.readouts).zip(&traj.conditional_means) {
            writeln!(w, "{},{t},{r},{c}", traj.id)?;
        }
    }
    Ok(())
}

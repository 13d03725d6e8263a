//! Always-on photodetection: a detector that clicks at rate `β(t)/(2κ)`,
//! where `β(t)` is the probability that the particle occupies the detector.

use std::io::{self, Write};

use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{uniform, Domain, SeedSpec};
use crate::sampler::OutcomeBinning;
use crate::stroboscope::{DistKind, DistLabel, TimeDistribution};
use crate::system::MeasuredSystem;
use crate::window::WindowSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum OccupancyProfile {
    /// `β = 1` on `[t_start, t_start + duration)`, zero elsewhere.
    Rectangular { t_start: f64, duration: f64 },
    /// Piecewise linear through `(times[i], beta[i])`, zero outside.
    Tabulated { times: Vec<f64>, beta: Vec<f64> },
}

impl OccupancyProfile {
    pub fn rectangular(t_start: f64, duration: f64) -> Result<Self> {
        if !(duration >= 0.0 && t_start.is_finite() && duration.is_finite()) {
            return Err(Error::param("duration", format!("must be non-negative, got {duration}")));
        }
        Ok(Self::Rectangular { t_start, duration })
    }

    pub fn tabulated(times: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if times.len() != beta.len() || times.len() < 2 {
            return Err(Error::param("beta", "need at least two (time, beta) pairs of equal length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("times", "must be strictly increasing"));
        }
        if beta.iter().any(|b| !(0.0..=1.0 + 1e-12).contains(b)) {
            return Err(Error::param("beta", "values must lie in [0, 1]"));
        }
        let beta = beta.into_iter().map(|b| b.min(1.0)).collect();
        Ok(Self::Tabulated { times, beta })
    }

    /// Tabulates the unconditioned occupancy of `outcome` on `nodes` equally
    /// spaced times spanning `window` (both ends included).
    pub fn from_system<S: MeasuredSystem + ?Sized>(
        system: &S,
        binning: &OutcomeBinning,
        outcome: usize,
        window: &WindowSpec,
        nodes: usize,
    ) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::param("nodes", "need at least two nodes"));
        }
        if outcome >= binning.n_outcomes() {
            return Err(Error::BinningMismatch(format!("outcome {outcome} out of range")));
        }
        let h = window.duration / (nodes - 1) as f64;
        let times: Vec<f64> = (0..nodes).map(|i| window.t0 + i as f64 * h).collect();
        let beta = times
            .par_iter()
            .map(|&t| system.probabilities(t, binning).map(|p| p.probs()[outcome]))
            .collect::<Result<Vec<_>>>()?;
        Self::tabulated(times, beta)
    }

    pub fn beta(&self, t: f64) -> f64 {
        match self {
            Self::Rectangular { t_start, duration } => {
                if t >= *t_start && t < t_start + duration {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tabulated { times, beta } => {
                let last = times.len() - 1;
                if t < times[0] || t > times[last] {
                    return 0.0;
                }
                let i = times.partition_point(|&s| s <= t).clamp(1, last);
                let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
                beta[i - 1] + w * (beta[i] - beta[i - 1])
            }
        }
    }

    /// `∫ β dt` over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Self::Rectangular { t_start, duration } => (b.min(t_start + duration) - a.max(*t_start)).max(0.0),
            Self::Tabulated { times, .. } => {
                let mut knots: Vec<f64> = vec![a];
                knots.extend(times.iter().copied().filter(|&s| s > a && s < b));
                knots.push(b);
                knots.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (self.beta(w[0]) + self.beta(w[1]))).sum()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickStream {
    pub clicks: Vec<f64>,
    pub window: WindowSpec,
    pub kappa: f64,
    pub run_id: u32,
}

impl ClickStream {
    pub fn count(&self) -> usize {
        self.clicks.len()
    }
}

/// Inhomogeneous Poisson clicks at rate `β(t)/(2κ)` inside `window`, drawn by
/// thinning a homogeneous stream at the ceiling rate `1/(2κ)`.
pub fn click_stream(
    profile: &OccupancyProfile,
    kappa: f64,
    window: &WindowSpec,
    seed: SeedSpec,
    run_id: u32,
) -> Result<ClickStream> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::param("kappa", format!("must be positive, got {kappa}")));
    }
    let gaps = Exp::new(1.0 / (2.0 * kappa)).map_err(|e| Error::param("kappa", e.to_string()))?;
    let mut rng = seed.stream(Domain::Clicks, run_id, 0);
    let end = window.end();
    let mut t = window.t0;
    let mut clicks = Vec::new();
    loop {
        t += gaps.sample(&mut rng);
        if t >= end {
            break;
        }
        if uniform(&mut rng) < profile.beta(t) && clicks.last().is_none_or(|&c| t > c) {
            clicks.push(t);
        }
    }
    Ok(ClickStream { clicks, window: *window, kappa, run_id })
}

/// Independent streams with run ids `0..runs`.
pub fn click_streams(
    profile: &OccupancyProfile,
    kappa: f64,
    window: &WindowSpec,
    seed: SeedSpec,
    runs: u32,
) -> Result<Vec<ClickStream>> {
    (0..runs).into_par_iter().map(|id| click_stream(profile, kappa, window, seed, id)).collect()
}

/// Normalized histogram of all clicks over `bins` equal bins of the window of
/// the first stream. Bin `m` is reported at its center.
pub fn click_histogram(streams: &[ClickStream], bins: usize) -> Result<TimeDistribution> {
    if bins == 0 {
        return Err(Error::param("bins", "need at least one bin"));
    }
    let window = streams.first().ok_or(Error::NoClicks)?.window;
    let width = window.duration / bins as f64;
    let mut counts = vec![0.0; bins];
    let mut total = 0usize;
    for s in streams {
        for &c in &s.clicks {
            let m = (((c - window.t0) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[m] += 1.0;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoClicks);
    }
    let times = (0..bins).map(|m| window.t0 + (m as f64 + 0.5) * width).collect();
    Ok(TimeDistribution::from_weights(DistKind::Click, DistLabel::Outcome(0), 0, times, counts))
}

/// `run_id,t_click` rows.
pub fn write_clicks_csv<W: Write>(mut w: W, streams: &[ClickStream]) -> io::Result<()> {
    writeln!(w, "run_id,t_click")?;
    for s in streams {
        for c in &s.clicks {
            writeln!(w, "{},{c}", s.run_id)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> WindowSpec {
        WindowSpec::new(0.0, 10.0, 10).unwrap()
    }

    #[test]
    fn zero_profile_gives_no_clicks() {
        let p = OccupancyProfile::rectangular(20.0, 1.0).unwrap();
        let s = click_stream(&p, 0.5, &window(), SeedSpec::new(1), 0).unwrap();
        assert!(s.clicks.is_empty());
        assert_eq!(click_histogram(&[s], 4).unwrap_err(), Error::NoClicks);
    }

    #[test]
    fn clicks_are_increasing_inside_window_and_reproducible() {
        let p = OccupancyProfile::rectangular(0.0, 10.0).unwrap();
        let a = click_stream(&p, 0.05, &window(), SeedSpec::new(2), 7).unwrap();
        let b = click_stream(&p, 0.05, &window(), SeedSpec::new(2), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.clicks.windows(2).all(|w| w[1] > w[0]));
        assert!(a.clicks.iter().all(|&c| (0.0..10.0).contains(&c)));
        assert!(click_stream(&p, 0.0, &window(), SeedSpec::new(2), 0).is_err());
    }

    #[test]
    fn single_bin_histogram() {
        let s = ClickStream { clicks: vec![2.1, 2.2, 2.9], window: window(), kappa: 1.0, run_id: 0 };
        let d = click_histogram(&[s], 10).unwrap();
        assert_eq!(d.probs().unwrap()[2], 1.0);
        assert_eq!(d.kind, DistKind::Click);
        assert!((d.times[2] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn tabulated_interpolation_and_integral() {
        let p = OccupancyProfile::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.beta(0.5), 0.5);
        assert_eq!(p.beta(1.0), 1.0);
        assert_eq!(p.beta(3.0), 0.0);
        assert!((p.integral(-1.0, 5.0) - 1.0).abs() < 1e-12);
        assert!((p.integral(0.0, 0.5) - 0.125).abs() < 1e-12);
        assert!(OccupancyProfile::tabulated(vec![0.0, 1.0], vec![0.0, 1.5]).is_err());
        let r = OccupancyProfile::rectangular(2.0, 3.0).unwrap();
        assert_eq!(r.integral(0.0, 4.0), 2.0);
    }

    #[test]
    fn csv_layout() {
        let s = ClickStream { clicks: vec![1.5], window: window(), kappa: 1.0, run_id: 4 };
        let mut buf = Vec::new();
        write_clicks_csv(&mut buf, &[s]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "run_id,t_click\n4,1.5\n");
    }
}

//! Born-rule sampling of projective measurements on fresh copies and the
//! `N × M` counts matrix `ℓ_{nm}`.

use std::io::{self, Write};
use std::ops::Range;

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{SpectralDensity, WaveFunction};
use crate::rng::{uniform, Domain, SeedSpec};
use crate::system::MeasuredSystem;
use crate::window::WindowSpec;

/// Tolerance on `Σ p = 1` for a [`ProbabilityVector`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Shots per parallel work item. Fixed so that the decomposition of a run does
/// not depend on the worker count.
const SHOT_BLOCK: u64 = 8192;

/// Projective measurement defining the outcomes `n = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeBinning {
    /// Position bins `[e_n, e_{n+1})`. The first and last bins extend to the
    /// grid boundaries.
    PositionBins { edges: Vec<f64> },
    /// Outcome 0: particle inside `[center − halfwidth, center + halfwidth)`;
    /// outcome 1: outside.
    DetectorWindow { center: f64, halfwidth: f64 },
    /// Outcome 0: excited; outcome 1: ground.
    TwoLevel,
}

impl OutcomeBinning {
    pub fn position_bins(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::param("bin_edges", "need at least two bins (three edges)"));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("bin_edges", "edges must be finite and strictly increasing"));
        }
        Ok(Self::PositionBins { edges })
    }

    /// `n` equal bins spanning `[lo, hi]`.
    pub fn uniform_bins(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::param("bin_edges", "need n >= 2 and hi > lo"));
        }
        let w = (hi - lo) / n as f64;
        Self::position_bins((0..=n).map(|i| lo + i as f64 * w).collect())
    }

    pub fn detector_window(center: f64, halfwidth: f64) -> Result<Self> {
        if !(halfwidth > 0.0 && halfwidth.is_finite() && center.is_finite()) {
            return Err(Error::param("detector_halfwidth", format!("must be positive, got {halfwidth}")));
        }
        Ok(Self::DetectorWindow { center, halfwidth })
    }

    pub fn n_outcomes(&self) -> usize {
        match self {
            Self::PositionBins { edges } => edges.len() - 1,
            Self::DetectorWindow { .. } | Self::TwoLevel => 2,
        }
    }

    /// Index of the last position bin lying entirely below `x`, if `x` is a
    /// bin edge.
    pub fn bins_below(&self, x: f64) -> Option<usize> {
        match self {
            Self::PositionBins { edges } => {
                edges.iter().position(|&e| e == x).filter(|&i| i > 0 && i < edges.len() - 1)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(p >= &0.0) || !p.is_finite()) {
            return Err(Error::param("probs", "probabilities must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::param("probs", format!("sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| !(w >= &0.0)) {
            return Err(Error::param("probs", "weights must be non-negative with a positive sum"));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { probs: weights })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sampler(&self) -> OutcomeSampler {
        OutcomeSampler::new(self)
    }
}

/// Inverse-CDF lookup over half-open cumulative intervals `[c_{n−1}, c_n)`.
#[derive(Debug, Clone)]
pub struct OutcomeSampler {
    cumulative: Vec<f64>,
}

impl OutcomeSampler {
    fn new(pv: &ProbabilityVector) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = pv
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // last boundary is exactly 1 so every u in [0, 1) lands somewhere
        let last_nonzero = pv.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        cumulative[last_nonzero..].iter_mut().for_each(|c| *c = 1.0);
        Self { cumulative }
    }

    /// Outcome for a uniform `u ∈ [0, 1)`.
    pub fn outcome(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

pub fn sample_outcome<R: RngCore + ?Sized>(pv: &ProbabilityVector, rng: &mut R) -> usize {
    pv.sampler().outcome(uniform(rng))
}

/// `⟨ψ|P_n|ψ⟩` for position-type binnings, integrating the band-limited
/// interpolant of `|ψ|²` across each bin.
pub fn outcome_probabilities(psi: &WaveFunction, binning: &OutcomeBinning) -> Result<ProbabilityVector> {
    let grid = psi.grid;
    let spectral = SpectralDensity::new(grid, &psi.density());
    let weights = match binning {
        OutcomeBinning::PositionBins { edges } => {
            if let Some(e) = edges.iter().find(|&&e| !grid.contains(e)) {
                return Err(Error::BinningMismatch(format!(
                    "edge {e} outside grid [{}, {}]",
                    grid.x_min(),
                    grid.x_max()
                )));
            }
            let n = edges.len() - 1;
            let cdf: Vec<f64> = (0..=n)
                .map(|i| match i {
                    0 => 0.0,
                    i if i == n => spectral.total(),
                    i => spectral.cumulative(edges[i]),
                })
                .collect();
            cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
        }
        OutcomeBinning::DetectorWindow { center, halfwidth } => {
            let (lo, hi) = (center - halfwidth, center + halfwidth);
            if !grid.contains(lo) || !grid.contains(hi) {
                return Err(Error::BinningMismatch(format!(
                    "detector window [{lo}, {hi}] outside grid [{}, {}]",
                    grid.x_min(),
                    grid.x_max()
                )));
            }
            let total = spectral.total();
            let inside = spectral.integral(lo, hi).clamp(0.0, total);
            vec![inside, total - inside]
        }
        OutcomeBinning::TwoLevel => {
            return Err(Error::BinningMismatch("two-level binning applied to a wavefunction".into()))
        }
    };
    ProbabilityVector::from_weights(weights)
}

/// The stroboscopic record: `counts[n][m]` is the number of shots at probe
/// time `times[m]` that returned outcome `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsMatrix {
    pub binning: OutcomeBinning,
    pub window: WindowSpec,
    pub times: Vec<f64>,
    pub shots_per_time: u64,
    pub counts: Vec<Vec<u64>>,
}

impl CountsMatrix {
    pub fn n_outcomes(&self) -> usize {
        self.counts.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn column_sum(&self, m: usize) -> u64 {
        self.counts.iter().map(|row| row[m]).sum()
    }

    pub fn row_total(&self, n: usize) -> u64 {
        self.counts[n].iter().sum()
    }

    /// Elementwise sum with a matrix built from a disjoint shot range.
    pub fn merge(&mut self, other: &CountsMatrix) -> Result<()> {
        if self.times != other.times || self.binning != other.binning {
            return Err(Error::param("counts", "cannot merge matrices with different layouts"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x += y));
        self.shots_per_time += other.shots_per_time;
        Ok(())
    }

    /// `m,t_m,n,count` rows, column-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "m,t_m,n,count")?;
        for (m, t) in self.times.iter().enumerate() {
            for (n, row) in self.counts.iter().enumerate() {
                writeln!(w, "{m},{t},{n},{}", row[m])?;
            }
        }
        Ok(())
    }
}

/// Runs `shots` fresh-copy measurements at each probe time of `window`.
pub fn build_counts_matrix<S: MeasuredSystem + ?Sized>(
    system: &S,
    binning: &OutcomeBinning,
    window: &WindowSpec,
    shots: u64,
    seed: SeedSpec,
) -> Result<CountsMatrix> {
    build_counts_partition(system, binning, window, 0..shots, seed)
}

/// Like [`build_counts_matrix`] but only for the shot indices in `shots`.
///
/// Shot `s` at column `m` always uses draw `s` of substream `m`, so matrices
/// from disjoint ranges sum to the matrix of their union.
pub fn build_counts_partition<S: MeasuredSystem + ?Sized>(
    system: &S,
    binning: &OutcomeBinning,
    window: &WindowSpec,
    shots: Range<u64>,
    seed: SeedSpec,
) -> Result<CountsMatrix> {
    if shots.is_empty() {
        return Err(Error::param("shots", "need at least one shot per probe time"));
    }
    let times = window.times();
    let n_out = binning.n_outcomes();
    // the state at t_m is the same for every copy; measurement back-action is
    // discarded with the copy, so one probability vector per column suffices
    let samplers = times
        .par_iter()
        .map(|&t| system.probabilities(t, binning).map(|pv| pv.sampler()))
        .collect::<Result<Vec<_>>>()?;

    let mut tasks = Vec::new();
    for m in 0..times.len() {
        let mut start = shots.start;
        while start < shots.end {
            let end = (start + SHOT_BLOCK).min(shots.end);
            tasks.push((m, start..end));
            start = end;
        }
    }
    let partials: Vec<(usize, Vec<u64>)> = tasks
        .into_par_iter()
        .map(|(m, range)| {
            let mut rng = seed.stream(Domain::Shots, m as u32, range.start);
            let mut local = vec![0u64; n_out];
            for _ in range {
                local[samplers[m].outcome(uniform(&mut rng))] += 1;
            }
            (m, local)
        })
        .collect();

    let mut counts = vec![vec![0u64; times.len()]; n_out];
    for (m, local) in partials {
        for (n, c) in local.into_iter().enumerate() {
            counts[n][m] += c;
        }
    }
    Ok(CountsMatrix {
        binning: binning.clone(),
        window: *window,
        times,
        shots_per_time: shots.end - shots.start,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::GaussianPacket;
    use crate::grid::{GridSpec, PhysicalConstants};
    use crate::system::FreeParticle;

    struct Fixed(Vec<f64>);

    impl MeasuredSystem for Fixed {
        fn probabilities(&self, _t: f64, _b: &OutcomeBinning) -> Result<ProbabilityVector> {
            ProbabilityVector::new(self.0.clone())
        }
    }

    fn centered(var: f64) -> WaveFunction {
        let g = GridSpec::new(512, -20.0, 20.0).unwrap();
        FreeParticle::from_packet(&GaussianPacket::new(0.0, 0.0, var).unwrap(), &g, &PhysicalConstants::default())
            .unwrap()
            .initial()
            .clone()
    }

    #[test]
    fn full_support_inside_window() {
        let psi = centered(0.25);
        let pv = outcome_probabilities(&psi, &OutcomeBinning::detector_window(0.0, 5.0).unwrap()).unwrap();
        assert!((pv.probs()[0] - 1.0).abs() < 1e-12);
        assert!(pv.probs()[1] < 1e-12);
    }

    #[test]
    fn symmetric_split() {
        let psi = centered(1.0);
        let pv = outcome_probabilities(&psi, &OutcomeBinning::position_bins(vec![-20.0, 0.0, 20.0]).unwrap()).unwrap();
        assert!((pv.probs()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn window_probability_matches_erf() {
        let psi = centered(1.0);
        let pv = outcome_probabilities(&psi, &OutcomeBinning::detector_window(0.0, 1.0).unwrap()).unwrap();
        assert!((pv.probs()[0] - libm::erf(1.0 / 2f64.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn edges_outside_grid_are_rejected() {
        let psi = centered(1.0);
        let err = outcome_probabilities(&psi, &OutcomeBinning::position_bins(vec![-30.0, 0.0, 20.0]).unwrap());
        assert!(matches!(err, Err(Error::BinningMismatch(_))));
        let err = outcome_probabilities(&psi, &OutcomeBinning::detector_window(19.5, 1.0).unwrap());
        assert!(matches!(err, Err(Error::BinningMismatch(_))));
    }

    #[test]
    fn deterministic_outcomes() {
        let one = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
        let two = ProbabilityVector::new(vec![0.0, 1.0]).unwrap();
        let mut rng = SeedSpec::new(5).stream(Domain::Shots, 0, 0);
        for _ in 0..1000 {
            assert_eq!(sample_outcome(&one, &mut rng), 0);
            assert_eq!(sample_outcome(&two, &mut rng), 1);
        }
        // boundaries of the half-open intervals
        let s = ProbabilityVector::new(vec![0.25, 0.0, 0.75]).unwrap().sampler();
        assert_eq!(s.outcome(0.0), 0);
        assert_eq!(s.outcome(0.25), 2);
        assert_eq!(s.outcome(0.999_999_999), 2);
    }

    #[test]
    fn fair_coin_frequency() {
        let pv = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        let mut rng = SeedSpec::new(11).stream(Domain::Shots, 0, 0);
        let zeros = (0..100_000).filter(|_| sample_outcome(&pv, &mut rng) == 0).count();
        assert!((zeros as f64 / 1e5 - 0.5).abs() < 0.005);
    }

    #[test]
    fn constant_outcome_counts() {
        let w = WindowSpec::new(0.0, 1.0, 3).unwrap();
        let c =
            build_counts_matrix(&Fixed(vec![1.0, 0.0]), &OutcomeBinning::TwoLevel, &w, 5, SeedSpec::new(0)).unwrap();
        assert_eq!(c.counts, vec![vec![5, 5, 5], vec![0, 0, 0]]);
    }

    #[test]
    fn partitions_merge_to_full_run() {
        let w = WindowSpec::new(0.0, 1.0, 4).unwrap();
        let sys = Fixed(vec![0.2, 0.3, 0.5]);
        let b = OutcomeBinning::uniform_bins(0.0, 3.0, 3).unwrap();
        let seed = SeedSpec::new(77);
        let full = build_counts_matrix(&sys, &b, &w, 20_000, seed).unwrap();
        let mut left = build_counts_partition(&sys, &b, &w, 0..7_001, seed).unwrap();
        let right = build_counts_partition(&sys, &b, &w, 7_001..20_000, seed).unwrap();
        left.merge(&right).unwrap();
        assert_eq!(left, full);
    }

    #[test]
    fn empty_shot_range_is_rejected() {
        let w = WindowSpec::new(0.0, 1.0, 2).unwrap();
        let r = build_counts_matrix(&Fixed(vec![1.0, 0.0]), &OutcomeBinning::TwoLevel, &w, 0, SeedSpec::new(0));
        assert!(r.is_err());
    }

    #[test]
    fn csv_layout() {
        let w = WindowSpec::new(0.0, 1.0, 2).unwrap();
        let c =
            build_counts_matrix(&Fixed(vec![1.0, 0.0]), &OutcomeBinning::TwoLevel, &w, 3, SeedSpec::new(0)).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "m,t_m,n,count\n0,0,0,3\n0,0,1,0\n1,0.5,0,3\n1,0.5,1,0\n");
    }
}

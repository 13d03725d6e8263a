//! Time distributions from a counts matrix: row normalization, the discrete
//! probability-flow estimator and adaptive narrowing of the probe window.

use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::rng::SeedSpec;
use crate::sampler::{build_counts_matrix, CountsMatrix, OutcomeBinning};
use crate::system::MeasuredSystem;
pub use crate::window::WindowSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistKind {
    Stroboscopic,
    Flow,
    FlowReference,
    ClockReference,
    Click,
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistKind::Stroboscopic => "stroboscopic",
            DistKind::Flow => "flow",
            DistKind::FlowReference => "flow_reference",
            DistKind::ClockReference => "clock_reference",
            DistKind::Click => "click",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistLabel {
    Outcome(usize),
    Threshold(f64),
}

impl fmt::Display for DistLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistLabel::Outcome(n) => write!(f, "{n}"),
            DistLabel::Threshold(x) => write!(f, "{x}"),
        }
    }
}

/// Discrete distribution over probe times. `probs == None` marks an
/// UNDEFINED distribution (the outcome was never observed).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDistribution {
    pub kind: DistKind,
    pub label: DistLabel,
    /// Probe index of `times[0]`; the flow estimator starts at 1.
    pub first_index: usize,
    pub times: Vec<f64>,
    pub probs: Option<Vec<f64>>,
}

impl TimeDistribution {
    pub fn is_defined(&self) -> bool {
        self.probs.is_some()
    }

    pub fn probs(&self) -> Option<&[f64]> {
        self.probs.as_deref()
    }

    /// Normalizes `weights`; an all-zero vector gives an UNDEFINED distribution.
    pub fn from_weights(
        kind: DistKind,
        label: DistLabel,
        first_index: usize,
        times: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        let total: f64 = weights.iter().sum();
        let probs = (total > 0.0).then(|| weights.iter().map(|w| w / total).collect());
        Self { kind, label, first_index, times, probs }
    }

    pub fn mean_time(&self) -> Option<f64> {
        self.probs().map(|p| p.iter().zip(&self.times).map(|(p, t)| p * t).sum())
    }
}

/// `kind,outcome_or_threshold,m,t_m,prob` rows.
pub fn write_dist_csv<'a, W, I>(mut w: W, dists: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TimeDistribution>,
{
    writeln!(w, "kind,outcome_or_threshold,m,t_m,prob")?;
    for d in dists {
        for (i, t) in d.times.iter().enumerate() {
            let m = d.first_index + i;
            match d.probs() {
                Some(p) => writeln!(w, "{},{},{m},{t},{}", d.kind, d.label, p[i])?,
                None => writeln!(w, "{},{},{m},{t},UNDEFINED", d.kind, d.label)?,
            }
        }
    }
    Ok(())
}

/// `p(t_m | a_n) = ℓ_{nm} / Σ_m ℓ_{nm}` for every outcome row.
pub fn row_normalize(counts: &CountsMatrix) -> Vec<TimeDistribution> {
    counts
        .counts
        .iter()
        .enumerate()
        .map(|(n, row)| {
            TimeDistribution::from_weights(
                DistKind::Stroboscopic,
                DistLabel::Outcome(n),
                0,
                counts.times.clone(),
                row.iter().map(|&c| c as f64).collect(),
            )
        })
        .collect()
}

/// Per probe time, `(t_m, mean, variance)` of position from a position-bin
/// record, with bins at their midpoints and the `w²/12` grouping correction.
pub fn position_moments(counts: &CountsMatrix) -> Result<Vec<(f64, f64, f64)>> {
    let OutcomeBinning::PositionBins { edges } = &counts.binning else {
        return Err(Error::BinningMismatch("position moments need position bins".into()));
    };
    let mids: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    Ok((0..counts.n_times())
        .map(|m| {
            let total = counts.shots_per_time as f64;
            let (mut s1, mut s2, mut grouping) = (0.0, 0.0, 0.0);
            for (n, row) in counts.counts.iter().enumerate() {
                let c = row[m] as f64;
                s1 += c * mids[n];
                s2 += c * mids[n] * mids[n];
                grouping += c * widths[n] * widths[n] / 12.0;
            }
            let mean = s1 / total;
            let var = (s2 - total * mean * mean) / (total - 1.0) - grouping / total;
            (counts.times[m], mean, var)
        })
        .collect())
}

/// Discrete probability flow through `x_threshold`: with `C_m` the number of
/// shots below the threshold at `t_m`, weight `|C_m − C_{m−1}|` at `t_m`,
/// `m = 1..M`, normalized.
pub fn flow_estimate(counts: &CountsMatrix, x_threshold: f64) -> Result<TimeDistribution> {
    let below = counts.binning.bins_below(x_threshold).ok_or_else(|| {
        Error::BinningMismatch(format!("threshold {x_threshold} is not an interior position-bin edge"))
    })?;
    let cumulative: Vec<i64> =
        (0..counts.n_times()).map(|m| counts.counts[..below].iter().map(|row| row[m] as i64).sum()).collect();
    let raw: Vec<f64> = cumulative.windows(2).map(|w| (w[1] - w[0]).abs() as f64).collect();
    if raw.iter().all(|&r| r == 0.0) {
        return Err(Error::AllZeroFlow);
    }
    Ok(TimeDistribution::from_weights(
        DistKind::Flow,
        DistLabel::Threshold(x_threshold),
        1,
        counts.times[1..].to_vec(),
        raw,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRefinement {
    pub window: WindowSpec,
    /// Set when no coarse column exceeded the floor; `window` is then the
    /// initial window.
    pub warning: Option<String>,
    /// Coarse-pass frequency of the target outcome per column.
    pub frequencies: Vec<f64>,
}

/// Coarse pass with `probe_shots` shots per column; returns the window
/// spanning the columns whose target-outcome frequency exceeds `floor`
/// (default `1/probe_shots`), padded by one column on each side.
pub fn refine_window<S: MeasuredSystem + ?Sized>(
    system: &S,
    binning: &OutcomeBinning,
    initial: &WindowSpec,
    probe_shots: u64,
    target_outcome: usize,
    floor: Option<f64>,
    seed: SeedSpec,
) -> Result<WindowRefinement> {
    if target_outcome >= binning.n_outcomes() {
        return Err(Error::param("target_outcome", format!("{target_outcome} out of range")));
    }
    let counts = build_counts_matrix(system, binning, initial, probe_shots, seed)?;
    let frequencies: Vec<f64> = counts.counts[target_outcome].iter().map(|&c| c as f64 / probe_shots as f64).collect();
    let floor = floor.unwrap_or(1.0 / probe_shots as f64);
    let first = frequencies.iter().position(|&f| f > floor);
    let last = frequencies.iter().rposition(|&f| f > floor);
    let (Some(first), Some(last)) = (first, last) else {
        return Ok(WindowRefinement {
            window: *initial,
            warning: Some(format!("outcome {target_outcome} never exceeded frequency {floor} in the coarse pass")),
            frequencies,
        });
    };
    let lo = first.saturating_sub(1);
    let hi = (last + 1).min(initial.samples - 1);
    let tau = initial.tau();
    let window = WindowSpec::new(initial.time(lo), (hi - lo + 1) as f64 * tau, initial.samples)?;
    Ok(WindowRefinement { window, warning: None, frequencies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ProbabilityVector;

    fn matrix(rows: Vec<Vec<u64>>, binning: OutcomeBinning) -> CountsMatrix {
        let m = rows[0].len();
        let window = WindowSpec::new(0.0, m as f64, m).unwrap();
        let shots = rows.iter().map(|r| r[0]).sum();
        CountsMatrix { binning, window, times: window.times(), shots_per_time: shots, counts: rows }
    }

    #[test]
    fn position_moments_of_a_free_packet() {
        use crate::dynamics::GaussianPacket;
        use crate::grid::{GridSpec, PhysicalConstants};
        use crate::system::FreeParticle;
        let consts = PhysicalConstants::new(1.0, 1.0).unwrap();
        let packet = GaussianPacket::new(0.0, 0.0, 1.0).unwrap();
        let fp = FreeParticle::from_packet(&packet, &GridSpec::new(1024, -40.0, 40.0).unwrap(), &consts).unwrap();
        let binning = OutcomeBinning::uniform_bins(-40.0, 40.0, 320).unwrap();
        let window = WindowSpec::new(0.0, 4.0, 5).unwrap();
        let counts = build_counts_matrix(&fp, &binning, &window, 200_000, SeedSpec::new(1)).unwrap();
        for (t, mean, var) in position_moments(&counts).unwrap() {
            let exact = 1.0 + 0.25 * t * t;
            assert!(mean.abs() < 0.02, "{mean}");
            assert!((var - exact).abs() < 0.02 * exact, "t={t}: {var} vs {exact}");
        }
        assert!(position_moments(&matrix(vec![vec![1, 1], vec![1, 1]], OutcomeBinning::TwoLevel)).is_err());
    }

    #[test]
    fn row_normalization_examples() {
        let c = matrix(vec![vec![2, 2], vec![1, 3], vec![0, 0]], OutcomeBinning::uniform_bins(0.0, 3.0, 3).unwrap());
        let d = row_normalize(&c);
        assert_eq!(d[0].probs().unwrap(), &[0.5, 0.5]);
        assert_eq!(d[1].probs().unwrap(), &[0.25, 0.75]);
        assert!(!d[2].is_defined());
    }

    #[test]
    fn undefined_rows_serialize_as_undefined() {
        let c = matrix(vec![vec![2, 2], vec![0, 0]], OutcomeBinning::TwoLevel);
        let mut buf = Vec::new();
        write_dist_csv(&mut buf, &row_normalize(&c)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "kind,outcome_or_threshold,m,t_m,prob\n\
             stroboscopic,0,0,0,0.5\nstroboscopic,0,1,1,0.5\n\
             stroboscopic,1,0,0,UNDEFINED\nstroboscopic,1,1,1,UNDEFINED\n"
        );
    }

    #[test]
    fn flow_from_cumulative_counts() {
        // C = [0, 10, 30, 40] below the threshold at 0
        let b = OutcomeBinning::position_bins(vec![-1.0, 0.0, 1.0]).unwrap();
        let c = matrix(vec![vec![0, 10, 30, 40], vec![40, 30, 10, 0]], b);
        let d = flow_estimate(&c, 0.0).unwrap();
        assert_eq!(d.probs().unwrap(), &[0.25, 0.5, 0.25]);
        assert_eq!(d.first_index, 1);
        assert_eq!(d.times, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn stationary_flow_is_all_zero() {
        let b = OutcomeBinning::position_bins(vec![-1.0, 0.0, 1.0]).unwrap();
        let c = matrix(vec![vec![5, 5, 5], vec![5, 5, 5]], b);
        assert_eq!(flow_estimate(&c, 0.0), Err(Error::AllZeroFlow));
    }

    #[test]
    fn flow_needs_threshold_on_an_edge() {
        let b = OutcomeBinning::position_bins(vec![-1.0, 0.0, 1.0]).unwrap();
        let c = matrix(vec![vec![5, 4], vec![5, 6]], b);
        assert!(matches!(flow_estimate(&c, 0.5), Err(Error::BinningMismatch(_))));
        assert!(matches!(
            flow_estimate(&matrix(vec![vec![1, 1], vec![1, 1]], OutcomeBinning::TwoLevel), 0.0),
            Err(Error::BinningMismatch(_))
        ));
    }

    /// Outcome 0 certain inside `[on.0, on.1)`, impossible elsewhere.
    struct Pulse {
        on: (f64, f64),
        level: f64,
    }

    impl MeasuredSystem for Pulse {
        fn probabilities(&self, t: f64, _b: &OutcomeBinning) -> Result<ProbabilityVector> {
            let p = if t >= self.on.0 && t < self.on.1 { self.level } else { 0.0 };
            ProbabilityVector::new(vec![p, 1.0 - p])
        }
    }

    #[test]
    fn refine_window_shrinks_to_signal() {
        let initial = WindowSpec::new(0.0, 100.0, 100).unwrap();
        let sys = Pulse { on: (10.0, 20.5), level: 1.0 };
        let r = refine_window(&sys, &OutcomeBinning::TwoLevel, &initial, 32, 0, None, SeedSpec::new(3)).unwrap();
        // brute-force scan of the coarse frequencies
        let hot: Vec<usize> =
            r.frequencies.iter().enumerate().filter(|(_, &f)| f > 1.0 / 32.0).map(|(m, _)| m).collect();
        assert_eq!((hot[0], *hot.last().unwrap()), (10, 20));
        assert_eq!(r.window.t0, 9.0);
        assert_eq!(r.window.end(), 22.0);
        assert!(r.warning.is_none());
    }

    #[test]
    fn refine_window_keeps_uniform_signal() {
        let initial = WindowSpec::new(0.0, 10.0, 20).unwrap();
        let sys = Pulse { on: (-1.0, 100.0), level: 0.5 };
        let r = refine_window(&sys, &OutcomeBinning::TwoLevel, &initial, 32, 0, None, SeedSpec::new(4)).unwrap();
        assert_eq!(r.window, initial);
    }

    #[test]
    fn refine_window_warns_without_signal() {
        let initial = WindowSpec::new(0.0, 10.0, 20).unwrap();
        let sys = Pulse { on: (50.0, 60.0), level: 1.0 };
        let r = refine_window(&sys, &OutcomeBinning::TwoLevel, &initial, 32, 0, None, SeedSpec::new(4)).unwrap();
        assert_eq!(r.window, initial);
        assert!(r.warning.is_some());
    }
}

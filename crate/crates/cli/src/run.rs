//! The eight experiment modes.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use qstrobe_core::clock::{
    clock_distribution, discretize_clock, discretize_clock_at, flow_reference_on_probes, ClockDistribution,
    ClockOptions,
};
use qstrobe_core::continuous::{
    crossing_times, fuzzy_ensemble, lindblad_dense_evolve, moment_ode_evolve, readout_statistics,
    survival_probability_zeno, variance_closed_form_p, variance_closed_form_x, write_moments_csv,
    write_trajectories_csv, DensityMatrix, MomentRow, MomentSource, MomentState, PointerSpec, Region,
};
use qstrobe_core::detector::{click_histogram, click_streams, write_clicks_csv, OccupancyProfile};
use qstrobe_core::dynamics::{gaussian_to_wavefunction, GaussianPacket, RabiSpec};
use qstrobe_core::grid::{GridSpec, PhysicalConstants};
use qstrobe_core::rng::SeedSpec;
use qstrobe_core::sampler::{build_counts_matrix, CountsMatrix, OutcomeBinning};
use qstrobe_core::stats::{mean, polyfit, sample_variance, total_variation};
use qstrobe_core::stroboscope::{
    flow_estimate, position_moments, refine_window, row_normalize, write_dist_csv, TimeDistribution,
};
use qstrobe_core::system::{FreeParticle, MeasuredSystem, RabiSystem};
use qstrobe_core::window::WindowSpec;
use qstrobe_core::Error as CoreError;

use crate::config::{BinningMode, ConfigError, ExperimentConfig, ProfileKind};
use crate::report::{emit_report, Artifacts, Format, RunManifest, Status, WriteError};
use crate::svg::{Panel, Series, Style};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Strobe,
    Clock,
    Flow,
    Zeno,
    Continuous,
    Clicks,
    Rabi,
    Compare,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Strobe => "strobe",
            Mode::Clock => "clock",
            Mode::Flow => "flow",
            Mode::Zeno => "zeno",
            Mode::Continuous => "continuous",
            Mode::Clicks => "clicks",
            Mode::Rabi => "rabi",
            Mode::Compare => "compare",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },
    #[error(transparent)]
    Write(#[from] WriteError),
}

trait Context<T> {
    fn ctx(self, context: &str) -> Result<T, RunError>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn ctx(self, context: &str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Core { context: context.into(), source })
    }
}

fn missing(what: &str, mode: Mode) -> RunError {
    RunError::Config(ConfigError { line: None, column: None, message: format!("{} mode needs {what}", mode.as_str()) })
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    mode: Mode,
    consts: PhysicalConstants,
    seed: SeedSpec,
    art: Artifacts,
    summary: BTreeMap<String, Value>,
    warnings: Vec<String>,
    undefined: bool,
    panels: Vec<Panel>,
    dists: Vec<TimeDistribution>,
}

fn dist_json(d: &TimeDistribution) -> Value {
    json!({
        "kind": d.kind.to_string(),
        "label": d.label.to_string(),
        "first_index": d.first_index,
        "times": d.times,
        "probs": d.probs,
    })
}

fn points(d: &TimeDistribution) -> Vec<(f64, f64)> {
    d.probs().map(|p| d.times.iter().copied().zip(p.iter().copied()).collect()).unwrap_or_default()
}

fn tv(a: &TimeDistribution, b: &TimeDistribution) -> Option<f64> {
    match (a.probs(), b.probs()) {
        (Some(p), Some(q)) if p.len() == q.len() => Some(total_variation(p, q)),
        _ => None,
    }
}

/// Restricts `d` to probe indices `first..` and renormalizes.
fn tail_from(d: &TimeDistribution, first: usize) -> TimeDistribution {
    let skip = first.saturating_sub(d.first_index);
    let weights = d.probs().map(|p| p[skip..].to_vec()).unwrap_or_else(|| vec![0.0; d.times.len() - skip]);
    TimeDistribution::from_weights(d.kind, d.label, first, d.times[skip..].to_vec(), weights)
}

impl<'a> Run<'a> {
    fn packet(&self) -> Result<GaussianPacket, RunError> {
        let p = self.cfg.packet.ok_or_else(|| missing("a [packet] section", self.mode))?;
        GaussianPacket::with_covariance(p.x0, p.p0, p.var_x0, p.cov0).ctx("packet")
    }

    fn grid(&self) -> Result<GridSpec, RunError> {
        let g = self.cfg.grid;
        GridSpec::new(g.n, g.x_min, g.x_max).ctx("grid")
    }

    fn free_particle(&self) -> Result<FreeParticle, RunError> {
        FreeParticle::from_packet(&self.packet()?, &self.grid()?, &self.consts).ctx("preparing the initial state")
    }

    fn window(&self) -> Result<WindowSpec, RunError> {
        let w = self.cfg.window;
        WindowSpec::new(w.t0, w.duration, w.samples).ctx("window")
    }

    fn binning(&self) -> Result<OutcomeBinning, RunError> {
        let b = &self.cfg.binning;
        match b.mode {
            BinningMode::PositionBins => match &b.edges {
                Some(edges) => OutcomeBinning::position_bins(edges.clone()),
                None => OutcomeBinning::uniform_bins(self.cfg.grid.x_min, self.cfg.grid.x_max, b.bins),
            },
            BinningMode::DetectorWindow => OutcomeBinning::detector_window(b.detector_x, b.detector_halfwidth),
            BinningMode::TwoLevel => Ok(OutcomeBinning::TwoLevel),
        }
        .ctx("binning")
    }

    fn clock_options(&self) -> ClockOptions {
        ClockOptions { quad_nodes: self.cfg.clock.quad_nodes, zero_threshold: self.cfg.clock.zero_threshold }
    }

    fn warn(&mut self, message: String) {
        self.warnings.push(message);
    }

    fn mark_undefined(&mut self, message: String) {
        self.undefined = true;
        self.warn(message);
    }

    fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.into(), value.into());
    }

    fn check_outcome(&self, binning: &OutcomeBinning) -> Result<usize, RunError> {
        let n = self.cfg.binning.outcome;
        if n >= binning.n_outcomes() {
            return Err(RunError::Config(ConfigError {
                line: None,
                column: None,
                message: format!("binning.outcome = {n} but the binning has {} outcomes", binning.n_outcomes()),
            }));
        }
        Ok(n)
    }

    /// Clock density for `outcome`; an outcome never seen in the window is
    /// reported and yields `None`.
    fn clock_or_warn<S: MeasuredSystem + ?Sized>(
        &mut self,
        system: &S,
        binning: &OutcomeBinning,
        window: &WindowSpec,
        outcome: usize,
    ) -> Result<Option<ClockDistribution>, RunError> {
        match clock_distribution(system, binning, window, outcome, &self.clock_options()) {
            Ok(cd) => Ok(Some(cd)),
            Err(e @ CoreError::ZeroDenominator { .. }) => {
                self.mark_undefined(format!("outcome {outcome}: clock reference UNDEFINED ({e})"));
                Ok(None)
            }
            Err(e) => Err(RunError::Core { context: "clock distribution".into(), source: e }),
        }
    }

    fn write_dists(&mut self) -> Result<(), RunError> {
        let dists = std::mem::take(&mut self.dists);
        self.art.csv("dist.csv", |w| write_dist_csv(w, &dists))?;
        self.dists = dists;
        Ok(())
    }

    fn counts(&mut self, counts: &CountsMatrix) -> Result<(), RunError> {
        self.art.csv("counts.csv", |w| counts.write_csv(w))?;
        Ok(())
    }

    fn strobe_common<S: MeasuredSystem + ?Sized>(
        &mut self,
        system: &S,
        binning: &OutcomeBinning,
        window: WindowSpec,
        outcome: usize,
    ) -> Result<(), RunError> {
        let counts = build_counts_matrix(system, binning, &window, self.cfg.shots, self.seed).ctx("sampling")?;
        self.counts(&counts)?;
        let rows = row_normalize(&counts);
        for (n, row) in rows.iter().enumerate() {
            if !row.is_defined() {
                self.mark_undefined(format!(
                    "outcome {n}: UNDEFINED, never observed in [{}, {}]",
                    window.t0,
                    window.end()
                ));
            }
        }
        self.put("shots", self.cfg.shots);
        self.put("samples", window.samples as u64);
        self.put("window_t0", window.t0);
        self.put("window_T", window.duration);
        self.put("outcome", outcome as u64);
        let target = rows[outcome].clone();
        if let Some(m) = target.mean_time() {
            self.put("mean_time", m);
        }
        let mut panel = Panel::new(format!("p(t_m | outcome {outcome})"), "t", "probability").with(Series::new(
            "stroboscopic",
            points(&target),
            Style::Bars,
        ));
        if let Some(cd) = self.clock_or_warn(system, binning, &window, outcome)? {
            let reference = discretize_clock(&cd, window.samples).ctx("discretizing the clock")?;
            if let Some(d) = tv(&target, &reference) {
                self.put("tv_strobe_clock", d);
            }
            self.put("clock_density_t0", cd.density[0]);
            self.art.csv("clock.csv", |w| cd.write_csv(w, true))?;
            panel = panel.with(Series::new("clock reference", points(&reference), Style::Line));
            self.dists.extend(rows);
            self.dists.push(reference);
        } else {
            self.dists.extend(rows);
        }
        self.write_dists()?;
        self.art.svg("strobe.svg", std::slice::from_ref(&panel))?;
        self.panels.push(panel);
        Ok(())
    }

    fn strobe(&mut self) -> Result<(), RunError> {
        let fp = self.free_particle()?;
        let binning = self.binning()?;
        let outcome = self.check_outcome(&binning)?;
        let mut window = self.window()?;
        if self.cfg.refine.enabled {
            let r = refine_window(
                &fp,
                &binning,
                &window,
                self.cfg.refine.probe_shots,
                outcome,
                self.cfg.refine.floor,
                self.seed.with_stream(1),
            )
            .ctx("refining the window")?;
            if let Some(w) = r.warning {
                self.warn(w);
            }
            window = r.window;
            self.put("refined_t0", window.t0);
            self.put("refined_T", window.duration);
        }
        self.strobe_common(&fp, &binning, window, outcome)
    }

    fn rabi(&mut self) -> Result<(), RunError> {
        let r = self.cfg.rabi.ok_or_else(|| missing("a [rabi] section", self.mode))?;
        let system = RabiSystem { spec: RabiSpec::new(r.omega).ctx("rabi")? };
        let binning = OutcomeBinning::TwoLevel;
        let outcome = self.check_outcome(&binning)?;
        let window = self.window()?;
        self.strobe_common(&system, &binning, window, outcome)
    }

    fn clock(&mut self) -> Result<(), RunError> {
        let window = self.window()?;
        let (system, binning): (Box<dyn MeasuredSystem>, OutcomeBinning) = if self.cfg.packet.is_some() {
            (Box::new(self.free_particle()?), self.binning()?)
        } else if let Some(r) = self.cfg.rabi {
            (Box::new(RabiSystem { spec: RabiSpec::new(r.omega).ctx("rabi")? }), OutcomeBinning::TwoLevel)
        } else {
            return Err(missing("a [packet] or [rabi] section", self.mode));
        };
        let mut curves = Vec::new();
        let mut panel = Panel::new("quantum clock density", "t", "density");
        for n in 0..binning.n_outcomes() {
            match self.clock_or_warn(system.as_ref(), &binning, &window, n)? {
                Some(cd) => {
                    self.dists.push(discretize_clock(&cd, window.samples).ctx("discretizing the clock")?);
                    self.put(&format!("normalization_{n}"), cd.normalization);
                    let pts = cd.times.iter().copied().zip(cd.density.iter().copied()).collect();
                    panel = panel.with(Series::new(format!("outcome {n}"), pts, Style::Line));
                    curves.push(cd);
                }
                None => self.dists.push(TimeDistribution::from_weights(
                    qstrobe_core::stroboscope::DistKind::ClockReference,
                    qstrobe_core::stroboscope::DistLabel::Outcome(n),
                    0,
                    window.times(),
                    vec![0.0; window.samples],
                )),
            }
        }
        self.art.csv("clock.csv", |w| {
            for (i, cd) in curves.iter().enumerate() {
                cd.write_csv(&mut *w, i == 0)?;
            }
            Ok(())
        })?;
        self.write_dists()?;
        self.panels.push(panel);
        Ok(())
    }

    fn flow_binning(&self, threshold: f64) -> Result<OutcomeBinning, RunError> {
        if self.cfg.binning.mode == BinningMode::PositionBins {
            return self.binning();
        }
        let g = self.cfg.grid;
        OutcomeBinning::position_bins(vec![g.x_min, threshold, g.x_max]).ctx("flow binning")
    }

    fn flow(&mut self) -> Result<(), RunError> {
        let fp = self.free_particle()?;
        let window = self.window()?;
        let threshold = self.cfg.flow.threshold.unwrap_or(self.cfg.binning.detector_x);
        let binning = self.flow_binning(threshold)?;
        let counts = build_counts_matrix(&fp, &binning, &window, self.cfg.shots, self.seed).ctx("sampling")?;
        self.counts(&counts)?;
        self.put("threshold", threshold);
        self.put("shots", self.cfg.shots);
        self.put("samples", window.samples as u64);
        let mut panel = Panel::new(format!("probability flow through x = {threshold}"), "t", "probability");
        let estimate = match flow_estimate(&counts, threshold) {
            Ok(d) => Some(d),
            Err(CoreError::AllZeroFlow) => {
                self.mark_undefined("flow estimate UNDEFINED: cumulative counts never change".into());
                None
            }
            Err(e) => return Err(RunError::Core { context: "flow estimate".into(), source: e }),
        };
        let reference = match flow_reference_on_probes(&fp, threshold, &window, self.cfg.flow.refine) {
            Ok(d) => Some(d),
            Err(CoreError::AllZeroFlow) => {
                self.mark_undefined("exact flow UNDEFINED: no probability crosses the threshold".into());
                None
            }
            Err(e) => return Err(RunError::Core { context: "exact flow".into(), source: e }),
        };
        if let (Some(e), Some(r)) = (&estimate, &reference) {
            if let Some(d) = tv(e, r) {
                self.put("tv_flow_reference", d);
            }
        }
        if let Some(e) = estimate {
            panel = panel.with(Series::new("stroboscopic estimate", points(&e), Style::Bars));
            self.dists.push(e);
        }
        if let Some(r) = reference {
            panel = panel.with(Series::new("exact flow", points(&r), Style::Line));
            self.dists.push(r);
        }
        self.write_dists()?;
        self.panels.push(panel);
        Ok(())
    }

    fn zeno(&mut self) -> Result<(), RunError> {
        let packet = self.packet()?;
        let grid = self.grid()?;
        let region = match &self.cfg.zeno.intervals {
            Some(iv) => Region::new(iv.iter().map(|[a, b]| (*a, *b)).collect()).ctx("zeno region")?,
            None => Region::below(self.cfg.zeno.below),
        };
        let duration = self.cfg.window.duration;
        let mut rows = Vec::new();
        for &m in &self.cfg.zeno.sweep {
            let s = survival_probability_zeno(&packet, &region, duration, m, &grid, &self.consts)
                .ctx(&format!("zeno survival with {m} measurements"))?;
            rows.push((m, s));
        }
        let free =
            survival_probability_zeno(&packet, &region, duration, 1, &grid, &self.consts).ctx("free survival")?;
        let monotone = rows.windows(2).all(|w| w[1].0 < w[0].0 || w[1].1 >= w[0].1);
        self.put("unmeasured_exit_probability", 1.0 - free);
        self.put("monotone", monotone);
        self.put(
            "survival",
            Value::Array(rows.iter().map(|(m, s)| json!({"measurements": m, "survival": s})).collect()),
        );
        self.art.csv("zeno.csv", |w| {
            use std::io::Write;
            writeln!(w, "measurements,tau,survival")?;
            for (m, s) in &rows {
                writeln!(w, "{m},{},{s}", duration / *m as f64)?;
            }
            Ok(())
        })?;
        let pts = rows.iter().map(|&(m, s)| ((m as f64).log10(), s)).collect();
        self.panels.push(Panel::new("survival under repeated projection", "log10 M", "survival").with(Series::new(
            "survival",
            pts,
            Style::Line,
        )));
        Ok(())
    }

    fn continuous(&mut self) -> Result<(), RunError> {
        let packet = self.packet()?;
        let grid = self.grid()?;
        let p = self.cfg.pointer.ok_or_else(|| missing("a [pointer] section", self.mode))?;
        let pointer = match (p.sigma, p.kappa) {
            (Some(s), _) => PointerSpec::new(s, p.tau),
            (None, Some(k)) => PointerSpec::from_kappa(k, p.tau),
            (None, None) => unreachable!("validated"),
        }
        .ctx("pointer")?;
        let kappa = pointer.kappa();
        let duration = self.cfg.window.duration;
        let psi = gaussian_to_wavefunction(&packet, &grid, &self.consts).ctx("preparing the initial state")?;
        let ensemble =
            fuzzy_ensemble(&psi, &pointer, duration, &self.consts, self.seed, self.cfg.continuous.trajectories)
                .ctx("fuzzy trajectories")?;
        self.art.csv("trajectories.csv", |w| write_trajectories_csv(w, &ensemble))?;

        let init = MomentState::from_packet(&packet, &self.consts);
        let stats = readout_statistics(&ensemble, &pointer);
        let times: Vec<f64> = stats.iter().map(|r| r.t).collect();
        let mut rows: Vec<MomentRow> = stats.clone();

        let sub = (pointer.tau / self.cfg.continuous.ode_dt).ceil().max(1.0) as usize;
        let ode = moment_ode_evolve(&init, kappa, duration, pointer.tau / sub as f64, &self.consts)
            .ctx("moment equations")?;
        let ode_rows: Vec<MomentRow> =
            ode.iter().step_by(sub).take(times.len()).map(|s| MomentRow::from_state(s, MomentSource::Ode)).collect();
        let closed_rows: Vec<MomentRow> = times
            .iter()
            .map(|&t| MomentRow {
                t,
                mean_x: Some(init.mean_x + init.mean_p * t / self.consts.mass),
                mean_p: Some(init.mean_p),
                var_x: Some(variance_closed_form_x(&init, kappa, t, &self.consts)),
                var_p: Some(variance_closed_form_p(&init, kappa, t, &self.consts)),
                cov: None,
                source: MomentSource::Closed,
            })
            .collect();
        rows.extend(ode_rows.iter().cloned());
        rows.extend(closed_rows.iter().cloned());

        if self.cfg.continuous.lindblad {
            let lsub = (pointer.tau / self.cfg.continuous.lindblad_dt).ceil().max(1.0) as usize;
            let mut rho = DensityMatrix::from_wavefunction(&psi).ctx("dense master equation")?;
            rows.push(MomentRow::from_state(&rho.moments(&self.consts), MomentSource::Lindblad));
            for _ in 1..times.len() {
                rho = lindblad_dense_evolve(&rho, kappa, pointer.tau / lsub as f64, lsub, &self.consts)
                    .ctx("dense master equation")?;
                rows.push(MomentRow::from_state(&rho.moments(&self.consts), MomentSource::Lindblad));
            }
        }
        self.art.csv("moments.csv", |w| write_moments_csv(w, &rows))?;

        let half = times.len() / 2;
        let measured: f64 = stats[half..].iter().filter_map(|r| r.var_x).sum();
        let predicted: f64 = closed_rows[half..].iter().filter_map(|r| r.var_x).sum();
        let var_x: Vec<f64> = stats.iter().filter_map(|r| r.var_x).collect();
        let fit = polyfit(&times, &var_x, 2);
        let target = init.var_p() / self.consts.mass.powi(2);
        self.put("kappa", kappa);
        self.put("sigma", pointer.sigma);
        self.put("tau", pointer.tau);
        self.put("trajectories", self.cfg.continuous.trajectories as u64);
        self.put("readout_variance_ratio", measured / predicted);
        self.put("quadratic_coefficient", fit[2]);
        self.put("var_p0_over_m2", target);
        self.put("quadratic_relative_deviation", (fit[2] - target) / target);

        // the same packet probed stroboscopically, without back-action
        let strobe_binning = match self.cfg.binning.mode {
            BinningMode::PositionBins => self.binning()?,
            _ => {
                OutcomeBinning::uniform_bins(grid.x_min(), grid.x_max(), (grid.n_points() / 4).max(2)).ctx("binning")?
            }
        };
        let probes = WindowSpec::new(psi.time, duration, self.cfg.window.samples).ctx("window")?;
        let fp = FreeParticle::new(psi.clone(), self.consts);
        let counts = build_counts_matrix(&fp, &strobe_binning, &probes, self.cfg.shots, self.seed.with_stream(1))
            .ctx("sampling")?;
        let strobe_moments = position_moments(&counts).ctx("stroboscopic moments")?;
        let (st, sv): (Vec<f64>, Vec<f64>) = strobe_moments.iter().map(|&(t, _, v)| (t, v)).unzip();
        let strobe_fit = polyfit(&st, &sv, 2);
        self.put("strobe_quadratic_coefficient", strobe_fit[2]);
        self.put("strobe_quadratic_relative_deviation", (strobe_fit[2] - target) / target);

        if let Some(xd) = self.cfg.continuous.x_detector {
            let crossings: Vec<(u32, Vec<f64>)> = ensemble.iter().map(|t| (t.id, crossing_times(t, xd))).collect();
            let firsts: Vec<f64> = crossings.iter().filter_map(|(_, c)| c.first().copied()).collect();
            self.put("x_detector", xd);
            self.put("trajectories_crossing", firsts.len() as u64);
            if !firsts.is_empty() {
                self.put("mean_first_crossing", mean(&firsts));
            } else {
                self.warn(format!("no trajectory crossed x = {xd}"));
            }
            self.art.csv("crossings.csv", |w| {
                use std::io::Write;
                writeln!(w, "traj_id,t_cross")?;
                for (id, cs) in &crossings {
                    for c in cs {
                        writeln!(w, "{id},{c}")?;
                    }
                }
                Ok(())
            })?;
        }

        let series = |rows: &[MomentRow]| rows.iter().filter_map(|r| r.var_x.map(|v| (r.t, v))).collect::<Vec<_>>();
        self.panels.push(
            Panel::new(format!("position variance, kappa = {kappa}"), "t", "variance")
                .with(Series::new("readout ensemble", series(&stats), Style::Points))
                .with(Series::new("moment equations", series(&ode_rows), Style::Line))
                .with(Series::new("closed form", series(&closed_rows), Style::Line))
                .with(Series::new(
                    "stroboscopic, unmeasured",
                    st.iter().copied().zip(sv.iter().copied()).collect(),
                    Style::Bars,
                )),
        );
        let mut traj_panel = Panel::new("conditional mean position", "t", "x");
        for t in ensemble.iter().take(5) {
            let pts = t.times.iter().copied().zip(t.conditional_means.iter().copied()).collect();
            traj_panel = traj_panel.with(Series::new(format!("trajectory {}", t.id), pts, Style::Line));
        }
        self.panels.push(traj_panel);
        Ok(())
    }

    fn profile(&self, window: &WindowSpec) -> Result<(OccupancyProfile, Option<FreeParticle>), RunError> {
        let c = &self.cfg.clicks;
        match c.profile {
            ProfileKind::Rectangular => {
                Ok((OccupancyProfile::rectangular(c.t_start, c.duration).ctx("profile")?, None))
            }
            ProfileKind::Wavefunction => {
                let fp = self.free_particle()?;
                let binning = self.binning()?;
                let outcome = self.check_outcome(&binning)?;
                let profile =
                    OccupancyProfile::from_system(&fp, &binning, outcome, window, c.nodes).ctx("occupancy")?;
                Ok((profile, Some(fp)))
            }
        }
    }

    fn clicks(&mut self) -> Result<(), RunError> {
        let window = self.window()?;
        let c = self.cfg.clicks;
        let (profile, fp) = self.profile(&window)?;
        let streams = click_streams(&profile, c.kappa, &window, self.seed, c.runs).ctx("click streams")?;
        self.art.csv("clicks.csv", |w| write_clicks_csv(w, &streams))?;
        let counts: Vec<f64> = streams.iter().map(|s| s.count() as f64).collect();
        let bins = c.bins.unwrap_or(window.samples);
        self.put("kappa", c.kappa);
        self.put("runs", c.runs as u64);
        self.put("total_clicks", counts.iter().sum::<f64>());
        self.put("mean_count", mean(&counts));
        if counts.len() > 1 {
            self.put("count_variance", sample_variance(&counts));
        }
        self.put("expected_mean_count", profile.integral(window.t0, window.end()) / (2.0 * c.kappa));
        let hist = match click_histogram(&streams, bins) {
            Ok(h) => h,
            Err(CoreError::NoClicks) => {
                self.mark_undefined("click histogram UNDEFINED: no clicks in any run".into());
                self.write_dists()?;
                return Ok(());
            }
            Err(e) => return Err(RunError::Core { context: "click histogram".into(), source: e }),
        };
        let width = window.duration / bins as f64;
        let occupancy = TimeDistribution::from_weights(
            qstrobe_core::stroboscope::DistKind::ClockReference,
            qstrobe_core::stroboscope::DistLabel::Outcome(self.cfg.binning.outcome),
            0,
            hist.times.clone(),
            (0..bins)
                .map(|m| profile.integral(window.t0 + m as f64 * width, window.t0 + (m + 1) as f64 * width))
                .collect(),
        );
        if let Some(d) = tv(&hist, &occupancy) {
            self.put("tv_click_occupancy", d);
        }
        let mut panel = Panel::new("click histogram", "t", "probability")
            .with(Series::new("clicks", points(&hist), Style::Bars))
            .with(Series::new("occupancy", points(&occupancy), Style::Line));
        if let Some(fp) = fp {
            let binning = self.binning()?;
            if let Some(cd) = self.clock_or_warn(&fp, &binning, &window, self.cfg.binning.outcome)? {
                let reference = discretize_clock_at(&cd, hist.times.clone()).ctx("discretizing the clock")?;
                if let Some(d) = tv(&hist, &reference) {
                    self.put("tv_click_clock", d);
                }
                panel = panel.with(Series::new("clock reference", points(&reference), Style::Line));
                self.dists.push(reference);
            }
        }
        self.dists.insert(0, hist);
        self.write_dists()?;
        self.panels.push(panel);
        Ok(())
    }

    fn compare(&mut self) -> Result<(), RunError> {
        if self.cfg.binning.mode != BinningMode::DetectorWindow {
            return Err(missing("binning.mode = \"detector_window\"", self.mode));
        }
        let fp = self.free_particle()?;
        let binning = self.binning()?;
        let outcome = self.check_outcome(&binning)?;
        let base = self.window()?;
        // probes at bin centres so stroboscopy, clock and click histograms share a time axis
        let probes = WindowSpec::new(base.t0 + base.tau() / 2.0, base.duration, base.samples).ctx("window")?;
        let threshold = self.cfg.binning.detector_x;

        let counts = build_counts_matrix(&fp, &binning, &probes, self.cfg.shots, self.seed).ctx("sampling")?;
        self.counts(&counts)?;
        let strobe = row_normalize(&counts).swap_remove(outcome);
        if !strobe.is_defined() {
            self.mark_undefined(format!("outcome {outcome}: UNDEFINED, never observed"));
        }
        let clock = self
            .clock_or_warn(&fp, &binning, &probes, outcome)?
            .map(|cd| discretize_clock(&cd, probes.samples))
            .transpose()
            .ctx("discretizing the clock")?;

        let flow_bins = self.flow_binning(threshold)?;
        let flow_counts = build_counts_matrix(&fp, &flow_bins, &probes, self.cfg.shots, self.seed.with_stream(2))
            .ctx("flow sampling")?;
        let flow = flow_estimate(&flow_counts, threshold).ok();
        let flow_ref = flow_reference_on_probes(&fp, threshold, &probes, self.cfg.flow.refine).ok();
        if flow.is_none() || flow_ref.is_none() {
            self.mark_undefined(format!("flow through x = {threshold} UNDEFINED"));
        }

        let c = self.cfg.clicks;
        let profile = OccupancyProfile::from_system(&fp, &binning, outcome, &base, c.nodes).ctx("occupancy")?;
        let streams = click_streams(&profile, c.kappa, &base, self.seed, c.runs).ctx("click streams")?;
        self.art.csv("clicks.csv", |w| write_clicks_csv(w, &streams))?;
        let clicks = match click_histogram(&streams, base.samples) {
            Ok(h) => Some(h),
            Err(CoreError::NoClicks) => {
                self.mark_undefined("click histogram UNDEFINED: no clicks in any run".into());
                None
            }
            Err(e) => return Err(RunError::Core { context: "click histogram".into(), source: e }),
        };

        let mut tvs = BTreeMap::new();
        let mut record = |name: &str, a: Option<&TimeDistribution>, b: Option<&TimeDistribution>| {
            if let (Some(a), Some(b)) = (a, b) {
                if let Some(d) = tv(a, b) {
                    tvs.insert(name.to_string(), json!(d));
                }
            }
        };
        record("strobe_vs_clock", Some(&strobe), clock.as_ref());
        record("click_vs_clock", clicks.as_ref(), clock.as_ref());
        record("strobe_vs_click", Some(&strobe), clicks.as_ref());
        record("flow_vs_flow_reference", flow.as_ref(), flow_ref.as_ref());
        let clock_tail = clock.as_ref().map(|d| tail_from(d, 1));
        record("flow_vs_clock", flow.as_ref(), clock_tail.as_ref());
        record("flow_reference_vs_clock", flow_ref.as_ref(), clock_tail.as_ref());

        let mut scaling = Vec::new();
        let mut k = 3u16;
        for &m in &self.cfg.compare.samples_sweep {
            let w = WindowSpec::new(base.t0, base.duration, m).ctx("window")?;
            let reference = self
                .clock_or_warn(&fp, &binning, &w, outcome)?
                .map(|cd| discretize_clock(&cd, m))
                .transpose()
                .ctx("discretizing the clock")?;
            for &l in &self.cfg.compare.shots_sweep {
                let counts =
                    build_counts_matrix(&fp, &binning, &w, l, self.seed.with_stream(k)).ctx("scaling sweep")?;
                k = k.wrapping_add(1);
                let row = row_normalize(&counts).swap_remove(outcome);
                let d = reference.as_ref().and_then(|r| tv(&row, r));
                scaling.push(json!({"shots": l, "samples": m, "tv_strobe_clock": d}));
            }
        }
        self.put("tv", Value::Object(tvs.clone().into_iter().collect()));
        self.put("scaling", Value::Array(scaling.clone()));
        self.art.json("compare.json", &json!({"tv": tvs, "scaling": scaling}))?;

        let add = |kind: &str, d: Option<&TimeDistribution>, style: Style, panels: &mut Vec<Panel>| {
            if let Some(d) = d {
                panels.push(Panel::new(kind.to_string(), "t", "probability").with(Series::new(kind, points(d), style)));
            }
        };
        let mut panels = Vec::new();
        add("stroboscopic", Some(&strobe), Style::Bars, &mut panels);
        add("clock_reference", clock.as_ref(), Style::Line, &mut panels);
        add("flow", flow.as_ref(), Style::Bars, &mut panels);
        add("flow_reference", flow_ref.as_ref(), Style::Line, &mut panels);
        add("click", clicks.as_ref(), Style::Bars, &mut panels);
        self.panels.extend(panels);

        self.dists.push(strobe);
        self.dists.extend(clock);
        self.dists.extend(flow);
        self.dists.extend(flow_ref);
        self.dists.extend(clicks);
        self.write_dists()
    }
}

/// Runs `mode`, writes every artifact into `out_dir` and returns the
/// manifest (already written as `manifest.json`).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mode: Mode,
    format: Format,
    out_dir: &Path,
) -> Result<RunManifest, RunError> {
    let started = Instant::now();
    cfg.validate(None)?;
    let consts = PhysicalConstants::new(cfg.physics.hbar, cfg.physics.mass).ctx("physics")?;
    let mut run = Run {
        cfg,
        mode,
        consts,
        seed: SeedSpec::new(cfg.seed),
        art: Artifacts::new(out_dir, format)?,
        summary: BTreeMap::new(),
        warnings: Vec::new(),
        undefined: false,
        panels: Vec::new(),
        dists: Vec::new(),
    };
    match mode {
        Mode::Strobe => run.strobe(),
        Mode::Clock => run.clock(),
        Mode::Flow => run.flow(),
        Mode::Zeno => run.zeno(),
        Mode::Continuous => run.continuous(),
        Mode::Clicks => run.clicks(),
        Mode::Rabi => run.rabi(),
        Mode::Compare => run.compare(),
    }?;
    if !run.dists.is_empty() || !run.summary.is_empty() {
        let results = json!({
            "distributions": run.dists.iter().map(dist_json).collect::<Vec<_>>(),
            "summary": run.summary,
        });
        run.art.json("results.json", &results)?;
    }
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        mode: mode.as_str().into(),
        seed: cfg.seed,
        status: if run.undefined { Status::Undefined } else { Status::Ok },
        config: serde_json::to_value(cfg).expect("config serializes"),
        files: Vec::new(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        summary: run.summary,
        warnings: run.warnings,
    };
    emit_report(&mut manifest, &mut run.art, &run.panels)?;
    Ok(manifest)
}

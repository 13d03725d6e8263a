//! Closed Ehrenfest system for the first and second moments under
//! `dρ/dt = −(i/ħ)[H₀, ρ] − (1/4κ)[x, [x, ρ]]` with `H₀ = p²/2m`, and its
//! closed-form solution.

use std::io::{self, Write};

use crate::dynamics::GaussianPacket;
use crate::error::{Error, Result};
use crate::grid::{FftPair, PhysicalConstants, WaveFunction};

/// Tolerance on the step-doubling error estimate of one RK4 step.
pub const RK4_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    pub mean_x: f64,
    pub mean_p: f64,
    pub x2: f64,
    pub p2: f64,
    /// `⟨{x, p}⟩ = ⟨xp + px⟩`.
    pub xp_sym: f64,
    pub t: f64,
}

impl MomentState {
    pub fn from_packet(packet: &GaussianPacket, consts: &PhysicalConstants) -> Self {
        let var_p = packet.var_p0(consts);
        Self {
            mean_x: packet.x0,
            mean_p: packet.p0,
            x2: packet.var_x0 + packet.x0 * packet.x0,
            p2: var_p + packet.p0 * packet.p0,
            xp_sym: 2.0 * (packet.cov0 + packet.x0 * packet.p0),
            t: 0.0,
        }
    }

    /// Moments of a grid wavefunction, with `p` applied spectrally.
    pub fn from_wavefunction(psi: &WaveFunction, consts: &PhysicalConstants) -> Self {
        let grid = psi.grid;
        let dx = grid.dx();
        let fft = FftPair::new(grid.n_points());
        let k = grid.wavenumbers();
        let mut p_psi = psi.amplitudes.clone();
        fft.forward(&mut p_psi);
        let mut p2_psi = p_psi.clone();
        p_psi.iter_mut().zip(&k).for_each(|(a, k)| *a *= consts.hbar * k);
        p2_psi.iter_mut().zip(&k).for_each(|(a, k)| *a *= (consts.hbar * k).powi(2));
        fft.inverse(&mut p_psi);
        fft.inverse(&mut p2_psi);
        let norm = psi.norm_sqr();
        let mut s = Self { mean_x: 0.0, mean_p: 0.0, x2: 0.0, p2: 0.0, xp_sym: 0.0, t: psi.time };
        for (i, x) in grid.positions().enumerate() {
            let a = psi.amplitudes[i];
            let w = a.norm_sqr();
            s.mean_x += x * w;
            s.x2 += x * x * w;
            s.mean_p += (a.conj() * p_psi[i]).re;
            s.p2 += (a.conj() * p2_psi[i]).re;
            s.xp_sym += 2.0 * x * (a.conj() * p_psi[i]).re;
        }
        for v in [&mut s.mean_x, &mut s.x2, &mut s.mean_p, &mut s.p2, &mut s.xp_sym] {
            *v *= dx / norm;
        }
        s
    }

    pub fn var_x(&self) -> f64 {
        self.x2 - self.mean_x * self.mean_x
    }

    pub fn var_p(&self) -> f64 {
        self.p2 - self.mean_p * self.mean_p
    }

    /// Symmetrized covariance `⟨{x,p}⟩/2 − ⟨x⟩⟨p⟩`.
    pub fn covariance(&self) -> f64 {
        self.xp_sym / 2.0 - self.mean_x * self.mean_p
    }

    /// Checks `Δ²x ≥ 0`, `Δ²p ≥ 0` and `Δ²x·Δ²p ≥ ħ²/4 − tol`.
    pub fn satisfies_uncertainty(&self, hbar: f64, tol: f64) -> bool {
        self.var_x() >= -tol && self.var_p() >= -tol && self.var_x() * self.var_p() >= hbar * hbar / 4.0 - tol
    }

    fn to_array(self) -> [f64; 5] {
        [self.mean_x, self.mean_p, self.x2, self.p2, self.xp_sym]
    }

    fn from_array(y: [f64; 5], t: f64) -> Self {
        Self { mean_x: y[0], mean_p: y[1], x2: y[2], p2: y[3], xp_sym: y[4], t }
    }
}

/// `ħ²/(2κ)`, zero for `κ = ∞`.
fn momentum_diffusion(kappa: f64, consts: &PhysicalConstants) -> f64 {
    consts.hbar * consts.hbar / (2.0 * kappa)
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0) {
        return Err(Error::param("kappa", format!("must be positive (or infinite), got {kappa}")));
    }
    Ok(())
}

/// `Δ²x(t) = Δ²x₀ + c₀t + Δ²p₀t²/m² + ħ²t³/(6κm²)` with
/// `c₀ = (⟨{x,p}⟩₀ − 2⟨x⟩₀⟨p⟩₀)/m`.
pub fn variance_closed_form_x(init: &MomentState, kappa: f64, t: f64, consts: &PhysicalConstants) -> f64 {
    let m = consts.mass;
    let c0 = (init.xp_sym - 2.0 * init.mean_x * init.mean_p) / m;
    let cubic = if kappa.is_infinite() { 0.0 } else { consts.hbar * consts.hbar * t.powi(3) / (6.0 * kappa * m * m) };
    init.var_x() + c0 * t + init.var_p() * t * t / (m * m) + cubic
}

/// `Δ²p(t) = Δ²p₀ + ħ²t/(2κ)`.
pub fn variance_closed_form_p(init: &MomentState, kappa: f64, t: f64, consts: &PhysicalConstants) -> f64 {
    init.var_p() + momentum_diffusion(kappa, consts) * t
}

fn derivative(y: &[f64; 5], diffusion: f64, m: f64) -> [f64; 5] {
    [y[1] / m, 0.0, y[4] / m, diffusion, 2.0 * y[3] / m]
}

fn rk4_step(y: &[f64; 5], h: f64, diffusion: f64, m: f64) -> [f64; 5] {
    let add = |a: &[f64; 5], b: &[f64; 5], s: f64| -> [f64; 5] { std::array::from_fn(|i| a[i] + s * b[i]) };
    let k1 = derivative(y, diffusion, m);
    let k2 = derivative(&add(y, &k1, h / 2.0), diffusion, m);
    let k3 = derivative(&add(y, &k2, h / 2.0), diffusion, m);
    let k4 = derivative(&add(y, &k3, h), diffusion, m);
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Integrates the moment system with fixed-step RK4 from `init.t` to
/// `init.t + duration`; returns every step including the initial state. The
/// last step is shortened to land on the end time.
pub fn moment_ode_evolve(
    init: &MomentState,
    kappa: f64,
    duration: f64,
    dt: f64,
    consts: &PhysicalConstants,
) -> Result<Vec<MomentState>> {
    check_kappa(kappa)?;
    if !(dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    if !(duration >= 0.0) {
        return Err(Error::param("duration", format!("must be non-negative, got {duration}")));
    }
    let diffusion = momentum_diffusion(kappa, consts);
    let m = consts.mass;
    let steps = (duration / dt).ceil() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(*init);
    let mut y = init.to_array();
    for i in 0..steps {
        let t = init.t + i as f64 * dt;
        let h = dt.min(init.t + duration - t);
        let full = rk4_step(&y, h, diffusion, m);
        let half = rk4_step(&rk4_step(&y, h / 2.0, diffusion, m), h / 2.0, diffusion, m);
        let estimate = full.iter().zip(&half).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
        if estimate > RK4_TOLERANCE {
            return Err(Error::StepTooLarge { estimate, tolerance: RK4_TOLERANCE });
        }
        y = half;
        out.push(MomentState::from_array(y, t + h));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    Ode,
    Closed,
    Lindblad,
    Ensemble,
}

impl MomentSource {
    pub fn as_str(self) -> &'static str {
        match self {
            MomentSource::Ode => "ode",
            MomentSource::Closed => "closed",
            MomentSource::Lindblad => "lindblad",
            MomentSource::Ensemble => "ensemble",
        }
    }
}

/// One row of `moments.csv`; fields a source cannot provide are `None` and
/// serialize as empty cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub mean_x: Option<f64>,
    pub mean_p: Option<f64>,
    pub var_x: Option<f64>,
    pub var_p: Option<f64>,
    pub cov: Option<f64>,
    pub source: MomentSource,
}

impl MomentRow {
    pub fn from_state(s: &MomentState, source: MomentSource) -> Self {
        Self {
            t: s.t,
            mean_x: Some(s.mean_x),
            mean_p: Some(s.mean_p),
            var_x: Some(s.var_x()),
            var_p: Some(s.var_p()),
            cov: Some(s.covariance()),
            source,
        }
    }
}

pub fn write_moments_csv<W: Write>(mut w: W, rows: &[MomentRow]) -> io::Result<()> {
    fn cell(v: Option<f64>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    writeln!(w, "t,mean_x,mean_p,var_x,var_p,cov,source")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.t,
            cell(r.mean_x),
            cell(r.mean_p),
            cell(r.var_x),
            cell(r.var_p),
            cell(r.cov),
            r.source.as_str()
        )?;
    }
    Ok(())
}

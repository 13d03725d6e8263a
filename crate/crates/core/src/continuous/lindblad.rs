//! Dense position-space density matrix evolved under the double-commutator
//! master equation with fixed-step RK4. Used as a brute-force oracle for the
//! moment equations, so it is limited to small grids.

use num_complex::Complex64 as C64;

use super::moments::MomentState;
use crate::error::{Error, Result};
use crate::grid::{FftPair, GridSpec, PhysicalConstants, WaveFunction};

pub const MAX_DENSE_POINTS: usize = 256;
pub const TRACE_TOLERANCE: f64 = 1e-7;

/// `ρ_ij = ⟨x_i|ρ|x_j⟩·dx`, row-major, so that `tr ρ = Σ ρ_ii`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub grid: GridSpec,
    pub entries: Vec<C64>,
    pub time: f64,
}

impl DensityMatrix {
    pub fn from_wavefunction(psi: &WaveFunction) -> Result<Self> {
        let n = psi.grid.n_points();
        if n > MAX_DENSE_POINTS {
            return Err(Error::param(
                "n_points",
                format!("dense matrices are limited to {MAX_DENSE_POINTS} points, got {n}"),
            ));
        }
        let dx = psi.grid.dx();
        let a = &psi.amplitudes;
        let entries = (0..n * n).map(|ij| a[ij / n] * a[ij % n].conj() * dx).collect();
        Ok(Self { grid: psi.grid, entries, time: psi.time })
    }

    pub fn dim(&self) -> usize {
        self.grid.n_points()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.dim() + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i).re).sum()
    }

    pub fn purity(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (self.get(i, j) - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// `⟨ψ|ρ|ψ⟩` for a unit-norm `psi` on the same grid.
    pub fn fidelity(&self, psi: &WaveFunction) -> f64 {
        let n = self.dim();
        let dx = self.grid.dx();
        let a = &psi.amplitudes;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            let row: C64 = (0..n).map(|j| self.get(i, j) * a[j]).sum();
            acc += a[i].conj() * row;
        }
        acc.re * dx
    }

    /// Attempts a Cholesky factorization of `ρ + tol·I`.
    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        let n = self.dim();
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = self.get(j, j).re + tol;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if d <= 0.0 {
                return false;
            }
            let d = d.sqrt();
            l[j * n + j] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / d;
            }
        }
        true
    }

    pub fn moments(&self, consts: &PhysicalConstants) -> MomentState {
        let n = self.dim();
        let ops = Operators::new(&self.grid, consts);
        let p_rho = ops.apply_columns(&self.entries, &ops.p);
        let p2_rho = ops.apply_columns(&self.entries, &ops.p2);
        let mut s = MomentState { mean_x: 0.0, mean_p: 0.0, x2: 0.0, p2: 0.0, xp_sym: 0.0, t: self.time };
        for (i, x) in self.grid.positions().enumerate() {
            let d = self.get(i, i).re;
            s.mean_x += x * d;
            s.x2 += x * x * d;
            s.mean_p += p_rho[i * n + i].re;
            s.p2 += p2_rho[i * n + i].re;
            // tr((xp + px)ρ) = 2 Re tr(x p ρ)
            s.xp_sym += 2.0 * x * p_rho[i * n + i].re;
        }
        let tr = self.trace();
        for v in [&mut s.mean_x, &mut s.x2, &mut s.mean_p, &mut s.p2, &mut s.xp_sym] {
            *v /= tr;
        }
        s
    }
}

/// Spectral `p`, `p²` and `H₀` multipliers plus the transform they need.
struct Operators {
    fft: FftPair,
    p: Vec<f64>,
    p2: Vec<f64>,
    kinetic: Vec<f64>,
    n: usize,
}

impl Operators {
    fn new(grid: &GridSpec, consts: &PhysicalConstants) -> Self {
        let k = grid.wavenumbers();
        let p: Vec<f64> = k.iter().map(|k| consts.hbar * k).collect();
        let p2: Vec<f64> = p.iter().map(|p| p * p).collect();
        let kinetic = p2.iter().map(|p2| p2 / (2.0 * consts.mass)).collect();
        Self { fft: FftPair::new(grid.n_points()), p, p2, kinetic, n: grid.n_points() }
    }

    /// `O·ρ` for an operator diagonal in momentum space.
    fn apply_columns(&self, rho: &[C64], multiplier: &[f64]) -> Vec<C64> {
        let n = self.n;
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        let mut col = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = rho[i * n + j];
            }
            self.fft.forward(&mut col);
            col.iter_mut().zip(multiplier).for_each(|(c, m)| *c *= m);
            self.fft.inverse(&mut col);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
        }
        out
    }
}

struct Liouvillian {
    ops: Operators,
    hbar: f64,
    /// `(x_i − x_j)² / (4κ)`
    dephasing: Vec<f64>,
}

impl Liouvillian {
    fn new(grid: &GridSpec, kappa: f64, consts: &PhysicalConstants) -> Self {
        let n = grid.n_points();
        let xs: Vec<f64> = grid.positions().collect();
        let rate = if kappa.is_infinite() { 0.0 } else { 1.0 / (4.0 * kappa) };
        let dephasing = (0..n * n).map(|ij| rate * (xs[ij / n] - xs[ij % n]).powi(2)).collect();
        Self { ops: Operators::new(grid, consts), hbar: consts.hbar, dephasing }
    }

    /// `−(i/ħ)[H₀, ρ] − (1/4κ)[x, [x, ρ]]` for Hermitian `ρ`, using
    /// `ρH₀ = (H₀ρ)†`.
    fn apply(&self, rho: &[C64]) -> Vec<C64> {
        let n = self.ops.n;
        let h_rho = self.ops.apply_columns(rho, &self.ops.kinetic);
        let factor = C64::new(0.0, -1.0 / self.hbar);
        (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                let comm = h_rho[ij] - h_rho[j * n + i].conj();
                factor * comm - self.dephasing[ij] * rho[ij]
            })
            .collect()
    }
}

/// Advances `rho` by `steps` RK4 steps of `dt`.
pub fn lindblad_dense_evolve(
    rho: &DensityMatrix,
    kappa: f64,
    dt: f64,
    steps: usize,
    consts: &PhysicalConstants,
) -> Result<DensityMatrix> {
    if !(kappa > 0.0) {
        return Err(Error::param("kappa", format!("must be positive (or infinite), got {kappa}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let n = rho.dim();
    if n > MAX_DENSE_POINTS {
        return Err(Error::param("n_points", format!("dense matrices are limited to {MAX_DENSE_POINTS} points")));
    }
    let liouvillian = Liouvillian::new(&rho.grid, kappa, consts);
    let mut state = rho.entries.clone();
    let axpy = |a: &[C64], b: &[C64], s: f64| -> Vec<C64> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };
    for _ in 0..steps {
        let k1 = liouvillian.apply(&state);
        let k2 = liouvillian.apply(&axpy(&state, &k1, dt / 2.0));
        let k3 = liouvillian.apply(&axpy(&state, &k2, dt / 2.0));
        let k4 = liouvillian.apply(&axpy(&state, &k3, dt));
        for idx in 0..n * n {
            state[idx] += (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]) * (dt / 6.0);
        }
        // restore exact Hermiticity lost to rounding
        for i in 0..n {
            state[i * n + i].im = 0.0;
            for j in i + 1..n {
                let avg = (state[i * n + j] + state[j * n + i].conj()) * 0.5;
                state[i * n + j] = avg;
                state[j * n + i] = avg.conj();
            }
        }
        let trace: f64 = (0..n).map(|i| state[i * n + i].re).sum();
        if (trace - 1.0).abs() > TRACE_TOLERANCE {
            return Err(Error::TraceDrift { trace, tolerance: TRACE_TOLERANCE });
        }
    }
    Ok(DensityMatrix { grid: rho.grid, entries: state, time: rho.time + dt * steps as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{gaussian_to_wavefunction, propagate_split_step, GaussianPacket};

    fn setup(n: usize) -> (WaveFunction, DensityMatrix) {
        let grid = GridSpec::new(n, -16.0, 16.0).unwrap();
        let psi = gaussian_to_wavefunction(
            &GaussianPacket::new(0.0, 0.5, 1.0).unwrap(),
            &grid,
            &PhysicalConstants::default(),
        )
        .unwrap();
        let rho = DensityMatrix::from_wavefunction(&psi).unwrap();
        (psi, rho)
    }

    #[test]
    fn pure_state_invariants() {
        let (psi, rho) = setup(64);
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        assert!(rho.hermiticity_error() < 1e-15);
        assert!((rho.fidelity(&psi) - 1.0).abs() < 1e-12);
        assert!(rho.is_positive_semidefinite(1e-8));
        let m = rho.moments(&PhysicalConstants::default());
        assert!((m.var_x() - 1.0).abs() < 1e-9 && (m.mean_p - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unitary_limit_matches_split_step() {
        let consts = PhysicalConstants::default();
        let (psi, rho) = setup(128);
        let out = lindblad_dense_evolve(&rho, f64::INFINITY, 0.002, 500, &consts).unwrap();
        let reference = propagate_split_step(&psi, 1.0, 1, &consts).unwrap();
        assert!(out.fidelity(&reference) > 1.0 - 1e-8, "{}", out.fidelity(&reference));
    }

    #[test]
    fn purity_decreases_under_measurement() {
        let consts = PhysicalConstants::default();
        let (_, mut rho) = setup(64);
        let mut last = rho.purity();
        for _ in 0..5 {
            rho = lindblad_dense_evolve(&rho, 0.5, 0.005, 20, &consts).unwrap();
            let p = rho.purity();
            assert!(p < last);
            last = p;
            assert!(rho.hermiticity_error() < 1e-10);
            assert!((rho.trace() - 1.0).abs() < 1e-9);
        }
        assert!(rho.is_positive_semidefinite(1e-8));
    }

    #[test]
    fn rejects_large_grids() {
        let grid = GridSpec::new(512, -16.0, 16.0).unwrap();
        let psi = gaussian_to_wavefunction(
            &GaussianPacket::new(0.0, 0.0, 1.0).unwrap(),
            &grid,
            &PhysicalConstants::default(),
        )
        .unwrap();
        assert!(DensityMatrix::from_wavefunction(&psi).is_err());
    }
}

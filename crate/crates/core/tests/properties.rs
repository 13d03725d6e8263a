use proptest::prelude::*;

use qstrobe_core::continuous::{moment_ode_evolve, variance_closed_form_p, variance_closed_form_x, MomentState};
use qstrobe_core::dynamics::{gaussian_to_wavefunction, propagate_split_step, GaussianPacket, RabiSpec};
use qstrobe_core::grid::{GridSpec, PhysicalConstants};
use qstrobe_core::rng::SeedSpec;
use qstrobe_core::sampler::{build_counts_matrix, build_counts_partition, CountsMatrix, OutcomeBinning};
use qstrobe_core::stats::total_variation;
use qstrobe_core::stroboscope::row_normalize;
use qstrobe_core::system::{FreeParticle, MeasuredSystem, RabiSystem};
use qstrobe_core::window::WindowSpec;

fn consts() -> PhysicalConstants {
    PhysicalConstants::new(1.0, 1.0).unwrap()
}

fn grid() -> GridSpec {
    GridSpec::new(512, -64.0, 64.0).unwrap()
}

fn packets() -> impl Strategy<Value = GaussianPacket> {
    (-10.0..10.0f64, -2.0..2.0f64, 0.5..3.0f64).prop_map(|(x0, p0, v)| GaussianPacket::new(x0, p0, v).unwrap())
}

fn probability_vectors(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n).prop_filter_map("non-zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.into_iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn free_evolution_conserves_norm(packet in packets(), t in 0.0..6.0f64) {
        let psi = gaussian_to_wavefunction(&packet, &grid(), &consts()).unwrap();
        let out = propagate_split_step(&psi, t / 4.0, 4, &consts()).unwrap();
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_evolution_undoes_forward(packet in packets(), t in 0.1..6.0f64) {
        let psi = gaussian_to_wavefunction(&packet, &grid(), &consts()).unwrap();
        let there = propagate_split_step(&psi, t, 1, &consts()).unwrap();
        let back = propagate_split_step(&there, -t / 3.0, 3, &consts()).unwrap();
        prop_assert!((back.fidelity(&psi) - 1.0).abs() < 1e-12);
        prop_assert!(back.time.abs() < 1e-12);
    }

    #[test]
    fn free_mean_moves_with_group_velocity(packet in packets(), t in 0.0..5.0f64) {
        let c = consts();
        let fp = FreeParticle::from_packet(&packet, &grid(), &c).unwrap();
        let psi = fp.state_at(t).unwrap();
        prop_assert!((psi.mean_x() - packet.mean_x_at(t, &c)).abs() < 1e-8);
        prop_assert!((psi.var_x() - packet.var_x_at(t, &c)).abs() < 1e-8);
    }

    #[test]
    fn rabi_probabilities_are_periodic(omega in 0.5..20.0f64, t in 0.0..10.0f64) {
        let system = RabiSystem { spec: RabiSpec::new(omega).unwrap() };
        let period = 2.0 * std::f64::consts::PI / omega;
        let a = system.probabilities(t, &OutcomeBinning::TwoLevel).unwrap();
        let b = system.probabilities(t + period, &OutcomeBinning::TwoLevel).unwrap();
        prop_assert!((a.probs()[0] - b.probs()[0]).abs() < 1e-9);
        prop_assert!((a.probs()[0] + a.probs()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn every_column_sums_to_the_shot_count(shots in 1u64..3000, samples in 2usize..12, seed in any::<u64>()) {
        let fp = FreeParticle::from_packet(&GaussianPacket::new(-3.0, 1.0, 1.0).unwrap(), &grid(), &consts()).unwrap();
        let binning = OutcomeBinning::uniform_bins(-64.0, 64.0, 16).unwrap();
        let window = WindowSpec::new(0.0, 6.0, samples).unwrap();
        let counts = build_counts_matrix(&fp, &binning, &window, shots, SeedSpec::new(seed)).unwrap();
        for m in 0..samples {
            prop_assert_eq!(counts.column_sum(m), shots);
        }
    }

    #[test]
    fn disjoint_partitions_merge_to_the_whole(split in 1u64..20_000, seed in any::<u64>()) {
        let system = RabiSystem { spec: RabiSpec::new(3.0).unwrap() };
        let window = WindowSpec::new(0.0, 2.0, 5).unwrap();
        let total = 20_001;
        let whole = build_counts_matrix(&system, &OutcomeBinning::TwoLevel, &window, total, SeedSpec::new(seed)).unwrap();
        let mut left = build_counts_partition(&system, &OutcomeBinning::TwoLevel, &window, 0..split, SeedSpec::new(seed)).unwrap();
        let right = build_counts_partition(&system, &OutcomeBinning::TwoLevel, &window, split..total, SeedSpec::new(seed)).unwrap();
        left.merge(&right).unwrap();
        prop_assert_eq!(left, whole);
    }

    #[test]
    fn row_normalization_ignores_overall_scale(
        rows in prop::collection::vec(prop::collection::vec(0u64..500, 6), 3),
        k in 1u64..50,
    ) {
        let a = matrix(rows.clone());
        let b = matrix(rows.iter().map(|r| r.iter().map(|c| c * k).collect()).collect());
        for (da, db) in row_normalize(&a).iter().zip(&row_normalize(&b)) {
            match (da.probs(), db.probs()) {
                (Some(p), Some(q)) => prop_assert!(p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-15)),
                (None, None) => {}
                _ => prop_assert!(false, "definedness changed under scaling"),
            }
        }
    }

    #[test]
    fn row_normalization_commutes_with_column_permutation(
        row in prop::collection::vec(0u64..500, 6),
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let permuted: Vec<u64> = perm.iter().map(|&i| row[i]).collect();
        let d = row_normalize(&matrix(vec![row.clone()])).swap_remove(0);
        let dp = row_normalize(&matrix(vec![permuted])).swap_remove(0);
        match (d.probs(), dp.probs()) {
            (Some(p), Some(q)) => {
                for (j, &i) in perm.iter().enumerate() {
                    prop_assert!((q[j] - p[i]).abs() < 1e-15);
                }
            }
            (None, None) => prop_assert!(row.iter().all(|&c| c == 0)),
            _ => prop_assert!(false),
        }
    }

    #[test]
    fn total_variation_is_a_metric(p in probability_vectors(8), q in probability_vectors(8), r in probability_vectors(8)) {
        let (pq, qp) = (total_variation(&p, &q), total_variation(&q, &p));
        prop_assert_eq!(pq, qp);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
        prop_assert!(total_variation(&p, &p) == 0.0);
        prop_assert!(pq <= total_variation(&p, &r) + total_variation(&r, &q) + 1e-12);
    }

    #[test]
    fn moment_equations_match_closed_forms(
        packet in packets(),
        cov in -0.4..0.4f64,
        kappa in 0.05..5.0f64,
    ) {
        let c = consts();
        let packet = GaussianPacket::with_covariance(packet.x0, packet.p0, packet.var_x0, cov).unwrap();
        let init = MomentState::from_packet(&packet, &c);
        for s in moment_ode_evolve(&init, kappa, 3.0, 0.05, &c).unwrap() {
            let vx = variance_closed_form_x(&init, kappa, s.t, &c);
            let vp = variance_closed_form_p(&init, kappa, s.t, &c);
            prop_assert!((s.var_x() - vx).abs() <= 1e-9 * vx);
            prop_assert!((s.var_p() - vp).abs() <= 1e-9 * vp);
            prop_assert!(s.satisfies_uncertainty(c.hbar, 1e-12));
        }
    }
}

fn matrix(rows: Vec<Vec<u64>>) -> CountsMatrix {
    let m = rows[0].len();
    let window = WindowSpec::new(0.0, m as f64, m).unwrap();
    let shots = rows.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum::<u64>().max(1);
    let binning = OutcomeBinning::uniform_bins(0.0, 1.0, rows.len().max(2)).unwrap();
    CountsMatrix { binning, window, times: window.times(), shots_per_time: shots, counts: rows }
}

//! Cross-module checks: independent code paths that must agree.

use mvlov_core::density::{heat_semigroup, initial_density, kde, read_mvg1, write_mvg1, Bandwidth, GridDensity, Measure};
use mvlov_core::fpe::{cfl_limit, fpe_solve, Boundary, FpeConfig, VectorField};
use mvlov_core::grid::GridSpec;
use mvlov_core::kernels::{Direction, KernelSpec};
use mvlov_core::metrics::wasserstein_1d_samples_grid;
use mvlov_core::particles::{
    frozen_flow_simulate, girsanov_weights, read_mvl1, simulate, simulate_recording, weighted_expectation, write_mvl1,
    Diffusion, FrozenFlow, InitialLaw, Recording, SimConfig,
};
use proptest::prelude::*;

#[test]
fn free_particles_follow_the_heat_semigroup() {
    let sim = SimConfig::new(20000, 1, 0.01, 0.5, KernelSpec::zero(), InitialLaw::isotropic(vec![0.2], 0.3), 5);
    let last = simulate(&sim).unwrap().pop().unwrap();
    let grid = GridSpec::cube(1, 7.0, 700).unwrap();
    let mu0 = Measure::Grid(initial_density(&sim.initial, &grid).unwrap());
    // generator Laplace(.) runs the standard semigroup at twice the speed
    let exact = heat_semigroup(&mu0, 2.0 * sim.t_end, &grid).unwrap();
    let w1 = wasserstein_1d_samples_grid(&last.axis(0), &exact, 1.0).unwrap();
    assert!(w1 < 0.03, "W1 = {w1}");
}

#[test]
fn grid_solver_matches_heat_semigroup_in_the_plane() {
    let grid = GridSpec::cube(2, 6.0, 96).unwrap();
    let initial = GridDensity::gaussian(grid.clone(), &[0.5, -0.3], 0.4).unwrap();
    let t_end = 0.25;
    let out = fpe_solve(&FpeConfig {
        grid: grid.clone(),
        dt: cfl_limit(&grid, 0.0),
        t_end,
        kernel: KernelSpec::zero(),
        boundary: Boundary::NoFlux,
        initial: initial.clone(),
        snapshot_times: vec![t_end],
    })
    .unwrap();
    let exact = heat_semigroup(&Measure::Grid(initial), 2.0 * t_end, &grid).unwrap();
    let got = out.snapshots[0].1.values();
    let peak = exact.values().iter().cloned().fold(0.0, f64::max);
    let err = got.iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err / peak <= 0.01, "relative error {}", err / peak);
}

#[test]
fn snapshots_survive_binary_round_trips() {
    let kernel = KernelSpec::power_law(0.5, 1.5, Direction::Rotational).unwrap().truncate(10.0).unwrap();
    let mut sim = SimConfig::new(300, 2, 0.01, 0.1, kernel, InitialLaw::isotropic(vec![0.0, 0.0], 0.2), 3);
    sim.snapshot_times = vec![0.0, 0.1];
    for ens in simulate(&sim).unwrap() {
        let mut buf = Vec::new();
        write_mvl1(&ens, &mut buf).unwrap();
        let back = read_mvl1(buf.as_slice()).unwrap();
        assert_eq!(back.positions(), ens.positions());
        assert_eq!(back.time(), ens.time());

        let rho = kde(&ens, &Bandwidth::Auto, &GridSpec::cube(2, 3.0, 24).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_mvg1(&rho, &mut buf).unwrap();
        let back = read_mvg1(buf.as_slice()).unwrap();
        assert_eq!(back.values(), rho.values());
        assert_eq!(back.grid(), rho.grid());
    }
}

#[test]
fn reweighted_free_paths_reproduce_a_constant_drift() {
    let c = 0.8;
    let grid = GridSpec::cube(1, 20.0, 40).unwrap();
    let flow = FrozenFlow::constant(VectorField::from_fn(grid, |_, out| out[0] = c));
    let mut sim = SimConfig::new(20000, 1, 0.01, 0.5, KernelSpec::zero(), InitialLaw::isotropic(vec![0.0], 0.1), 12);
    let steps = sim.steps();
    sim.snapshot_times = vec![sim.t_end];
    let free = simulate_recording(
        &sim,
        Recording {
            stride: steps,
            increments: true,
        },
    )
    .unwrap()
    .trajectory
    .unwrap();
    let weights = girsanov_weights(&free, &Diffusion::ConstantSqrt2, &flow).unwrap();
    let end = free.frames.last().unwrap();
    let est = weighted_expectation(end, &weights, false).unwrap();
    let shift = c * sim.t_end;
    assert!((est.mean - shift).abs() <= 4.0 * est.std_error, "{est:?} vs {shift}");

    let drifted = frozen_flow_simulate(&sim, &flow).unwrap().pop().unwrap();
    let mean = drifted.axis(0).iter().sum::<f64>() / drifted.len() as f64;
    // sd of the endpoint is sqrt(0.1 + 1), so 4 standard errors is about 0.03
    assert!((mean - shift).abs() < 0.03, "drifted mean {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn grid_solver_conserves_mass_and_sign(
        kappa in 0.1f64..2.0,
        alpha in 1.0f64..1.9,
        level in 1.0f64..8.0,
        mean in -1.0f64..1.0,
        var in 0.05f64..0.5,
        periodic in any::<bool>(),
    ) {
        let grid = GridSpec::cube(1, 6.0, 96).unwrap();
        let kernel = KernelSpec::power_law(kappa, alpha, Direction::Radial).unwrap().truncate(level).unwrap();
        let initial = GridDensity::gaussian(grid.clone(), &[mean], var).unwrap();
        let bound = kernel.component_bound(0.2).unwrap();
        let out = fpe_solve(&FpeConfig {
            grid: grid.clone(),
            dt: cfl_limit(&grid, bound),
            t_end: 0.2,
            kernel,
            boundary: if periodic { Boundary::Periodic } else { Boundary::NoFlux },
            initial,
            snapshot_times: vec![0.1, 0.2],
        })
        .unwrap();
        prop_assert!(out.max_mass_drift <= 1e-10);
        for (_, rho) in &out.snapshots {
            prop_assert!(rho.values().iter().all(|v| *v >= 0.0));
        }
    }
}

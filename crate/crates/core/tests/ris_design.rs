use proptest::prelude::*;
use ris_mom::em_kernel::{KernelContext, ETA0, K0};
use ris_mom::geometry::{build_scene, mesh_dipole, ElementKind, Group, Point, SceneBasis, SceneParams};
use ris_mom::linalg::{factorize, CMatrix, CVector, C64};
use ris_mom::ris_design::*;

fn bases_of(length: f64, n: usize, center: Point, axis: Point) -> Vec<SceneBasis> {
    let mesh = mesh_dipole(length, 0.001, n, center, axis).unwrap().with_role(Group::Tx, 0);
    (0..mesh.bases.len())
        .map(|i| SceneBasis {
            group: Group::Tx,
            element_id: 0,
            is_port: mesh.bases[i].is_port,
            halves: mesh.basis_halves(i).unwrap(),
        })
        .collect()
}

fn magnitude(v: &nalgebra::Vector3<C64>) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn short_dipole_pattern_follows_sin_theta() {
    let bases = bases_of(0.02, 3, Point::zeros(), Point::z());
    let rad = Radiator::new(&bases, None);
    let i = CVector::from_element(bases.len(), C64::new(1.0, 0.0));
    let peak = magnitude(&rad.radiation_vector(&i, &xz_direction(90.0)).unwrap());
    for t in [10.0_f64, 30.0, 60.0, 80.0] {
        let v = magnitude(&rad.radiation_vector(&i, &xz_direction(t)).unwrap()) / peak;
        assert!((v - t.to_radians().sin()).abs() < 0.01 * t.to_radians().sin(), "{t}: {v}");
    }
}

#[test]
fn two_element_array_factor() {
    let mut bases = bases_of(0.02, 3, Point::new(-0.25, 0.0, 0.0), Point::y());
    bases.extend(bases_of(0.02, 3, Point::new(0.25, 0.0, 0.0), Point::y()));
    let rad = Radiator::new(&bases, None);
    let i = CVector::from_element(bases.len(), C64::new(1.0, 0.0));
    let broadside = magnitude(&rad.radiation_vector(&i, &Point::z()).unwrap());
    for t in [0.0_f64, 20.0, 45.0, 70.0, 90.0] {
        let v = magnitude(&rad.radiation_vector(&i, &xz_direction(t)).unwrap()) / broadside;
        let af = (0.5 * K0 * 0.5 * t.to_radians().sin()).cos().abs();
        assert!((v - af).abs() < 1e-6, "{t}: {v} vs {af}");
    }
}

#[test]
fn ground_plane_cancels_grazing_field() {
    let bases = bases_of(0.5, 7, Point::zeros(), Point::y());
    let rad = Radiator::new(&bases, Some(-0.25));
    let i = CVector::from_element(bases.len(), C64::new(1.0, 0.0));
    let top = magnitude(&rad.radiation_vector(&i, &Point::z()).unwrap());
    let mut prev = f64::INFINITY;
    for t in [80.0, 85.0, 89.0, 89.9, 90.0] {
        let v = magnitude(&rad.radiation_vector(&i, &xz_direction(t)).unwrap()) / top;
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-12);
    let below = rad.radiation_vector(&i, &Point::new(0.0, 0.0, -1.0)).unwrap();
    assert_eq!(magnitude(&below), 0.0);
}

/// Input resistance of a driven dipole equals its radiated power over
/// `|I|^2 / 2`.
#[test]
fn radiated_power_matches_input_resistance() {
    let bases = bases_of(0.5, 7, Point::zeros(), Point::y());
    let ctx = KernelContext::new(bases.clone(), None);
    let n = ctx.len();
    let z = CMatrix::from_fn(n, n, |m, k| ctx.mutual_impedance(m, k).unwrap());
    let port = bases.iter().position(|b| b.is_port).unwrap();
    let mut v = CVector::zeros(n);
    v[port] = C64::new(1.0, 0.0);
    let i = factorize(&z, "dipole").unwrap().solve_vec(&v);
    let r_in = (1.0 / i[port]).re;

    let rad = Radiator::new(&bases, None);
    let (nt, np) = (48, 96);
    let rule = ris_mom::quadrature::gauss_legendre(nt);
    let mut integral = 0.0;
    for (t, wt) in rule.mapped(0.0, std::f64::consts::PI) {
        for j in 0..np {
            let p = 2.0 * std::f64::consts::PI * j as f64 / np as f64;
            let u = Point::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos());
            let nv = rad.radiation_vector(&i, &u).unwrap();
            integral += wt * t.sin() * (2.0 * std::f64::consts::PI / np as f64) * magnitude(&nv).powi(2);
        }
    }
    let r_rad = K0 * K0 * ETA0 / (16.0 * std::f64::consts::PI.powi(2)) * integral / i[port].norm_sqr();
    assert!((r_rad - r_in).abs() < 0.01 * r_in, "{r_rad} vs {r_in}");
}

#[test]
fn brute_force_three_by_three() {
    let mut p = SceneParams::dipole_default();
    p.mx = 3;
    p.my = 3;
    let scene = build_scene(&p).unwrap();
    for kind in [ElementKind::Dipole, ElementKind::Loop] {
        let phases = default_unit_cell_phases(kind);
        for beam in [0.0, 30.0, -45.0] {
            let state = optimize_binary_states(&scene, &phases, beam).unwrap();
            let psi = desired_phases(&scene.ris_centers(), &scene.r_t, beam);
            let best = (0..512u32)
                .map(|mask| {
                    let bits: Vec<bool> = (0..9).map(|b| mask >> b & 1 == 1).collect();
                    phase_error(&psi, &phases, &bits)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((phase_error(&psi, &phases, &state.bits) - best).abs() < 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn optimizer_invariant_under_common_phase_shift(
        psi in prop::collection::vec(0.0f64..360.0, 1..40),
        on in -180.0f64..180.0,
        diff in 90.0f64..270.0,
        shift in -720.0f64..720.0,
    ) {
        let phases = UnitCellPhases { phi_on: on, phi_off: on + diff };
        let shifted = UnitCellPhases { phi_on: on + shift, phi_off: on + diff + shift };
        let psi_shifted: Vec<f64> = psi.iter().map(|p| p + shift).collect();
        let a = choose_states(&psi, &phases);
        let b = choose_states(&psi_shifted, &shifted);
        // Exact ties can flip under floating-point rounding of the shift.
        for ((x, y), p) in a.iter().zip(&b).zip(&psi) {
            let e_on = wrap_deg(p - phases.phi_on).abs();
            let e_off = wrap_deg(p - phases.phi_off).abs();
            if (e_on - e_off).abs() > 1e-6 {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn optimizer_attains_elementwise_minimum(
        psi in prop::collection::vec(0.0f64..360.0, 1..12),
        on in -180.0f64..180.0,
        diff in 90.0f64..270.0,
    ) {
        let phases = UnitCellPhases { phi_on: on, phi_off: on + diff };
        let bits = choose_states(&psi, &phases);
        let e = phase_error(&psi, &phases, &bits);
        for k in 0..psi.len() {
            let mut flipped = bits.clone();
            flipped[k] = !flipped[k];
            prop_assert!(phase_error(&psi, &phases, &flipped) >= e - 1e-9);
        }
    }
}

#[test]
fn beams_point_at_their_targets() {
    let grid: Vec<f64> = (-900..=900).map(|i| i as f64 * 0.1).collect();
    let dipole = build_scene(&SceneParams::dipole_default()).unwrap();
    let solver = PatternSolver::new(&dipole, C64::new(50.0, 0.0)).unwrap();
    let phases = default_unit_cell_phases(ElementKind::Dipole);
    for (target, tol) in [(0.0, 2.0), (30.0, 3.0)] {
        let state = optimize_binary_states(&dipole, &phases, target).unwrap();
        let levels = solver.pattern_db(&state, &grid).unwrap();
        let peak = peak_angle(&grid, &levels);
        assert!((peak - target).abs() <= tol, "target {target}: peak {peak}");
        assert_eq!(levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 0.0);

        let opt = solver.field_magnitudes(&state, &[target]).unwrap()[0];
        let off = solver.field_magnitudes(&RisState::uniform(11, 11, false), &[target]).unwrap()[0];
        assert!(20.0 * (opt / off).log10() > 3.0);
    }
}

#[test]
fn loop_beam_points_at_thirty_degrees() {
    let grid: Vec<f64> = (-900..=900).map(|i| i as f64 * 0.1).collect();
    let scene = build_scene(&SceneParams::loop_default()).unwrap();
    let state = optimize_binary_states(&scene, &default_unit_cell_phases(ElementKind::Loop), 30.0).unwrap();
    let levels = scattering_pattern(&scene, &state, &grid).unwrap();
    let peak = peak_angle(&grid, &levels);
    assert!((peak - 30.0).abs() <= 3.0, "peak {peak}");
}

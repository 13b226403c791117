use proptest::prelude::*;
use ris_mom::em_kernel::KernelContext;
use ris_mom::geometry::{build_scene, mesh_dipole, rx_position, ElementKind, Group, Point, SceneBasis, SceneParams};
use ris_mom::linalg::{CMatrix, C64};
use ris_mom::link_metrics::*;
use ris_mom::ris_design::{default_unit_cell_phases, optimize_binary_states};

fn complex_matrix(rows: usize, cols: usize, values: &[f64]) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C64::new(values[k], values[k + 1])
    })
}

fn unitary(n: usize, values: &[f64]) -> CMatrix {
    complex_matrix(n, n, values).qr().q()
}

proptest! {
    #[test]
    fn capacity_nondecreasing_in_snr(values in prop::collection::vec(-2.0f64..2.0, 8)) {
        let h = complex_matrix(2, 2, &values);
        let mut prev = 0.0;
        for db in [-20.0, -10.0, 0.0, 5.0, 10.0, 20.0, 30.0, 40.0] {
            let c = capacity(&h, db_to_linear(db), 2).unwrap();
            prop_assert!(c >= prev - 1e-12);
            prop_assert!(c >= 0.0);
            prev = c;
        }
    }

    #[test]
    fn capacity_unitarily_invariant(
        h in prop::collection::vec(-2.0f64..2.0, 8),
        u in prop::collection::vec(-1.0f64..1.0, 8),
        v in prop::collection::vec(-1.0f64..1.0, 8),
        gamma_db in -10.0f64..30.0,
    ) {
        let h = complex_matrix(2, 2, &h);
        let (u, v) = (unitary(2, &u), unitary(2, &v));
        let gamma = db_to_linear(gamma_db);
        let c = capacity(&h, gamma, 2).unwrap();
        let rotated = capacity(&(&u * &h * v.adjoint()), gamma, 2).unwrap();
        prop_assert!((c - rotated).abs() <= 1e-10 * c.max(1e-12));
    }
}

fn synthetic_curve(power: i32) -> (Vec<f64>, Vec<f64>) {
    let h0 = CMatrix::from_row_slice(2, 2, &[
        C64::new(0.3, 0.1), C64::new(-0.2, 0.4),
        C64::new(0.15, 0.05), C64::new(-0.1, 0.2),
    ]);
    let r: Vec<f64> = (0..9).map(|i| 40.0 + 10.0 * i as f64).collect();
    let c = r
        .iter()
        .map(|&r| capacity(&(&h0 / C64::new(r.powi(power), 0.0)), 100.0, 2).unwrap())
        .collect();
    (r, c)
}

#[test]
fn synthetic_controls_recover_exponents() {
    // rank-1 H0 so that 2^C - 1 is exactly proportional to |H0|^2 / R^(2p)
    let (r, c) = synthetic_curve(1);
    assert!((fit_exponent(&r, &c, 40.0).unwrap() + 2.0).abs() < 1e-6);
    let (r, c) = synthetic_curve(2);
    assert!((fit_exponent(&r, &c, 40.0).unwrap() + 4.0).abs() < 1e-6);
}

fn short_basis(center: Point) -> SceneBasis {
    let m = mesh_dipole(0.1, 0.004, 3, center, Point::y()).unwrap();
    SceneBasis {
        group: Group::Ris,
        element_id: 0,
        is_port: true,
        halves: m.basis_halves(1).unwrap(),
    }
}

#[test]
fn point_source_coupling_decays_as_one_over_r() {
    let values: Vec<f64> = [10.0, 20.0, 40.0, 70.0, 100.0]
        .iter()
        .map(|&r| {
            let ctx = KernelContext::new(vec![short_basis(Point::zeros()), short_basis(rx_position(r, 30.0))], None);
            ctx.mutual_impedance(0, 1).unwrap().norm() * r
        })
        .collect();
    let max = values.iter().cloned().fold(0.0, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(max / min < 1.02, "{values:?}");
}

#[test]
fn ris_coupling_halves_when_distance_doubles() {
    let mut p = SceneParams::dipole_default();
    p.mx = 5;
    p.my = 5;
    let decay = steering_decay_check(&p, &[20.0, 40.0, 80.0, 160.0], 30.0).unwrap();
    for w in decay.norm_times_r.windows(2) {
        let ratio = w[1] / w[0];
        assert!((ratio - 1.0).abs() < 0.1, "{:?}", decay.norm_times_r);
    }
    assert!(decay.flatness() < 1.2);
}

#[test]
fn capacity_converges_with_dipole_refinement() {
    let mut caps = Vec::new();
    for n in [7, 11] {
        let mut p = SceneParams::dipole_default();
        p.mx = 3;
        p.my = 3;
        p.n_bases_dipole = n;
        let scene = build_scene(&p).unwrap();
        let state = optimize_binary_states(&scene, &default_unit_cell_phases(ElementKind::Dipole), 30.0).unwrap();
        let curve = sweep_distance(&p, &state, &[5.0, 10.0, 20.0], 30.0, 20.0).unwrap();
        caps.push(curve.c_fullwave);
    }
    for (a, b) in caps[0].iter().zip(&caps[1]) {
        assert!((a - b).abs() / b < 0.02, "{a} vs {b}");
    }
}

#[test]
fn sweep_rejects_bad_distance_lists() {
    let p = SceneParams::dipole_default();
    let scene = build_scene(&p).unwrap();
    let state = optimize_binary_states(&scene, &default_unit_cell_phases(ElementKind::Dipole), 30.0).unwrap();
    assert!(sweep_distance(&p, &state, &[], 30.0, 20.0).is_err());
    assert!(sweep_distance(&p, &state, &[0.4, 10.0], 30.0, 20.0).is_err());
}

#[test]
fn curve_csv_has_unit_header() {
    let curve = CapacityCurve {
        r: vec![1.0, 2.0],
        c_fullwave: vec![0.5, 0.25],
        c_reduced: vec![0.4, 0.25],
        theta_deg: 30.0,
        gamma_db: 20.0,
    };
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("R_lambda,C_fullwave,C_reduced,theta_deg,gamma_dB\n1,0.5,0.4,30,20\n"));
    assert!((curve.relative_gap()[0] - 0.2).abs() < 1e-12);
}

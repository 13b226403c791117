//! Scenario configuration and the subcommands of the `ris-mom` binary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::em_kernel::{assemble_partitioned, LoadMatrices, PartitionedZ, PortLoad};
use crate::error::{Error, Result};
use crate::geometry::{build_scene, rx_position, ArrayParams, ElementKind, Point, Scene, SceneParams};
use crate::linalg::{CVector, C64};
use crate::link_metrics::{fit_pathloss_exponent, LinkLoads, SweepContext};
use crate::network::{dense_solve_reference, fullwave_channel, relative_residual, ChannelSolver};
use crate::ris_design::{
    default_unit_cell_phases, optimize_binary_states, peak_angle, write_pattern_csv, PatternSolver, RisState,
    UnitCellPhases,
};

static QUIET: AtomicBool = AtomicBool::new(false);

/// Silences the summary lines the commands print to stdout.
pub fn set_quiet(quiet: bool) {
    QUIET.store(quiet, Ordering::Relaxed);
}

fn say(msg: String) {
    if !QUIET.load(Ordering::Relaxed) {
        println!("{msg}");
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VALIDATE: i32 = 3;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Geometry(_) | Error::Io(_) | Error::Csv(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// How the RIS loads are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateChoice {
    Optimized,
    AllOn,
    AllOff,
}

/// Scenario file contents. Keys carry their units; anything left out takes
/// the default for the chosen element kind.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub element_kind: Option<ElementKind>,
    pub dipole_length_lambda: Option<f64>,
    pub strip_width_lambda: Option<f64>,
    pub loop_a_lambda: Option<f64>,
    pub loop_b_lambda: Option<f64>,
    pub dx_lambda: Option<f64>,
    pub dy_lambda: Option<f64>,
    pub ground_height_lambda: Option<f64>,
    pub ground_plane: Option<bool>,
    pub mx: Option<usize>,
    pub my: Option<usize>,
    pub tx_count: Option<usize>,
    pub tx_spacing_lambda: Option<f64>,
    pub tx_length_lambda: Option<f64>,
    pub rx_count: Option<usize>,
    pub rx_spacing_lambda: Option<f64>,
    pub rx_length_lambda: Option<f64>,
    pub tx_position_lambda: Option<[f64; 3]>,
    pub theta_deg: Option<f64>,
    pub beam_theta_deg: Option<f64>,
    pub r_list_lambda: Option<Vec<f64>>,
    pub gamma_db: Option<f64>,
    pub n_segments_dipole: Option<usize>,
    pub n_per_side_loop: Option<usize>,
    pub phi_on_deg: Option<f64>,
    pub phi_off_deg: Option<f64>,
    pub tx_load_ohm: Option<f64>,
    pub rx_load_ohm: Option<f64>,
    pub ris_state: Option<StateChoice>,
    pub fit_min_lambda: Option<f64>,
    pub diagnose_r_lambda: Option<f64>,
    pub pattern_step_deg: Option<f64>,
    pub validate_trials: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Resolved scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scene: SceneParams,
    pub theta_deg: f64,
    pub beam_theta_deg: f64,
    pub r_list: Vec<f64>,
    pub gamma_db: f64,
    pub phases: UnitCellPhases,
    pub loads: LinkLoads,
    pub ris_state: StateChoice,
    pub fit_min: f64,
    pub diagnose_r: f64,
    pub pattern_step_deg: f64,
    pub validate_trials: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn default_distances() -> Vec<f64> {
    let mut r: Vec<f64> = vec![1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0];
    r.extend((4..=12).map(|i| i as f64 * 10.0));
    r
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn default_for(kind: ElementKind) -> Result<Self> {
        Self::resolve(RawConfig {
            element_kind: Some(kind),
            ..RawConfig::default()
        })
    }

    pub fn resolve(raw: RawConfig) -> Result<Self> {
        let kind = raw.element_kind.unwrap_or(ElementKind::Dipole);
        let base = match kind {
            ElementKind::Dipole => SceneParams::dipole_default(),
            ElementKind::Loop => SceneParams::loop_default(),
        };
        let theta_deg = raw.theta_deg.unwrap_or(30.0);
        let array = |count: Option<usize>, spacing: Option<f64>, length: Option<f64>, d: &ArrayParams| ArrayParams {
            count: count.unwrap_or(d.count),
            spacing: spacing.unwrap_or(d.spacing),
            length: length.unwrap_or(d.length),
            strip_width: raw.strip_width_lambda.unwrap_or(d.strip_width),
        };
        let scene = SceneParams {
            element_kind: kind,
            ris_length: raw.dipole_length_lambda.unwrap_or(base.ris_length),
            ris_width: raw.strip_width_lambda.unwrap_or(base.ris_width),
            loop_a: raw.loop_a_lambda.unwrap_or(base.loop_a),
            loop_b: raw.loop_b_lambda.unwrap_or(base.loop_b),
            dx: raw.dx_lambda.unwrap_or(base.dx),
            dy: raw.dy_lambda.unwrap_or(base.dy),
            h: raw.ground_height_lambda.unwrap_or(base.h),
            mx: raw.mx.unwrap_or(base.mx),
            my: raw.my.unwrap_or(base.my),
            tx: array(raw.tx_count, raw.tx_spacing_lambda, raw.tx_length_lambda, &base.tx),
            rx: array(raw.rx_count, raw.rx_spacing_lambda, raw.rx_length_lambda, &base.rx),
            r_t: raw.tx_position_lambda.map(Point::from).unwrap_or(base.r_t),
            r_r: base.r_r,
            ground_plane: raw.ground_plane.unwrap_or(base.ground_plane),
            n_bases_dipole: raw.n_segments_dipole.unwrap_or(base.n_bases_dipole),
            n_per_side_loop: raw.n_per_side_loop.unwrap_or(base.n_per_side_loop),
        };
        let defaults = default_unit_cell_phases(kind);
        let cfg = Self {
            scene: scene.with_rx_at(10.0, theta_deg),
            theta_deg,
            beam_theta_deg: raw.beam_theta_deg.unwrap_or(theta_deg),
            r_list: raw.r_list_lambda.unwrap_or_else(default_distances),
            gamma_db: raw.gamma_db.unwrap_or(20.0),
            phases: UnitCellPhases {
                phi_on: raw.phi_on_deg.unwrap_or(defaults.phi_on),
                phi_off: raw.phi_off_deg.unwrap_or(defaults.phi_off),
            },
            loads: LinkLoads {
                tx: C64::new(raw.tx_load_ohm.unwrap_or(50.0), 0.0),
                rx: C64::new(raw.rx_load_ohm.unwrap_or(50.0), 0.0),
            },
            ris_state: raw.ris_state.unwrap_or(StateChoice::Optimized),
            fit_min: raw.fit_min_lambda.unwrap_or(40.0),
            diagnose_r: raw.diagnose_r_lambda.unwrap_or(10.0),
            pattern_step_deg: raw.pattern_step_deg.unwrap_or(0.1),
            validate_trials: raw.validate_trials.unwrap_or(10),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            seed: raw.seed.unwrap_or(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene.mx == 0 || self.scene.my == 0 {
            return Err(Error::Config(format!(
                "RIS grid must be at least 1x1, got mx = {}, my = {}",
                self.scene.mx, self.scene.my
            )));
        }
        for (name, angle) in [("theta_deg", self.theta_deg), ("beam_theta_deg", self.beam_theta_deg)] {
            if !(-89.0..=89.0).contains(&angle) {
                return Err(Error::Config(format!("{name} = {angle} is outside [-89, 89]")));
            }
        }
        if self.r_list.is_empty() {
            return Err(Error::Config("r_list_lambda is empty".into()));
        }
        if !(self.gamma_db.is_finite()) {
            return Err(Error::Config("gamma_db must be finite".into()));
        }
        if self.loads.tx.re < 0.0 || self.loads.rx.re < 0.0 {
            return Err(Error::Config("port loads must have a non-negative resistance".into()));
        }
        if !(self.pattern_step_deg > 0.0) || !(self.diagnose_r > 0.0) || !(self.fit_min > 0.0) {
            return Err(Error::Config("pattern step, diagnose distance and fit start must be positive".into()));
        }
        if self.validate_trials == 0 {
            return Err(Error::Config("validate_trials must be at least 1".into()));
        }
        self.scene.validate()
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.output_dir = dir;
        self
    }

    pub fn scene_at(&self, r: f64) -> Result<Scene> {
        build_scene(&self.scene.with_rx_at(r, self.theta_deg))
    }

    /// RIS state for a scene according to `ris_state`.
    pub fn state_for(&self, scene: &Scene) -> Result<RisState> {
        let (mx, my) = (scene.dims.mx, scene.dims.my);
        match self.ris_state {
            StateChoice::Optimized => optimize_binary_states(scene, &self.phases, self.beam_theta_deg),
            StateChoice::AllOn => Ok(RisState::uniform(mx, my, true)),
            StateChoice::AllOff => Ok(RisState::uniform(mx, my, false)),
        }
    }

    fn create_output(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.output_dir)?;
        Ok(BufWriter::new(File::create(self.output_dir.join(name))?))
    }
}

/// Named scalar rows written as a two-column CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, name: &str, value: impl ToString) {
        self.rows.push((name.to_string(), value.to_string()));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, cfg: &ScenarioConfig, file: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(cfg.create_output(file)?);
        w.write_record(["quantity", "value"])?;
        for (n, v) in &self.rows {
            w.write_record([n, v])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fault injected into the full-wave path by `validate --inject-fault`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Replaces `Z_RS` by the conjugate transpose of `Z_SR`.
    AdjointRs,
}

/// Outcome of `validate`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub max_rel_err: f64,
    pub max_residual: f64,
    pub reciprocity: f64,
    pub passed: bool,
}

pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Compares the full-wave channel against the dense solve on the scenario
/// shrunk to a 3x3 RIS, for `validate_trials` seeded random excitations.
pub fn run_validation(cfg: &ScenarioConfig, fault: Fault) -> Result<ValidationReport> {
    let mut params = cfg.scene.with_rx_at(cfg.diagnose_r, cfg.theta_deg);
    params.mx = params.mx.min(3);
    params.my = params.my.min(3);
    let scene = build_scene(&params)?;
    let zp = assemble_partitioned(&scene)?;
    let state = cfg.state_for(&scene)?;
    let loads = LoadMatrices::from_ports(&zp, cfg.loads.tx, cfg.loads.rx, &state.to_port_loads())?;
    let mut tested = zp.clone();
    if fault == Fault::AdjointRs {
        tested.z_rs = zp.z_sr.adjoint();
    }
    let h = fullwave_channel(&tested, &loads)?.h;
    let (nt, _, _) = zp.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_err: f64 = 0.0;
    let mut max_res: f64 = 0.0;
    for _ in 0..cfg.validate_trials {
        let v_ports = CVector::from_fn(zp.ports.tx.len(), |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut v_t = CVector::zeros(nt);
        for (k, &p) in zp.ports.tx.iter().enumerate() {
            v_t[p] = v_ports[k];
        }
        let cur = dense_solve_reference(&zp, &loads, &v_t)?;
        max_res = max_res.max(relative_residual(&zp, &loads, &cur, &v_t));
        let oracle = CVector::from_iterator(
            zp.ports.rx.len(),
            zp.ports.rx.iter().map(|&p| loads.zl_rr[p] * cur.i_r[p]),
        );
        let err = (&h * &v_ports - &oracle).norm() / oracle.norm();
        max_err = max_err.max(err);
    }
    let reciprocity = zp.reciprocity_error();
    Ok(ValidationReport {
        max_rel_err: max_err,
        max_residual: max_res,
        reciprocity,
        passed: max_err < ORACLE_TOLERANCE && max_res < ORACLE_TOLERANCE && reciprocity < ORACLE_TOLERANCE,
    })
}

pub fn cmd_validate(cfg: &ScenarioConfig, fault: Fault) -> Result<ValidationReport> {
    let report = run_validation(cfg, fault)?;
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    say(format!(
        "oracle-equivalence {verdict}, max rel err {:.3e} (tolerance {ORACLE_TOLERANCE:.0e}), residual {:.3e}, reciprocity {:.3e}",
        report.max_rel_err, report.max_residual, report.reciprocity
    ));
    let mut r = Report::default();
    r.push("max_rel_err", report.max_rel_err);
    r.push("max_residual", report.max_residual);
    r.push("reciprocity_error", report.reciprocity);
    r.push("passed", report.passed);
    r.write(cfg, "validate_report.csv")?;
    Ok(report)
}

/// Writes the mesh and the binary impedance dump for the scene at
/// `diagnose_r_lambda`.
pub fn cmd_assemble(cfg: &ScenarioConfig) -> Result<PartitionedZ> {
    let scene = cfg.scene_at(cfg.diagnose_r)?;
    scene.write_mesh_csv(cfg.create_output("mesh.csv")?)?;
    let zp = assemble_partitioned(&scene)?;
    zp.write_dump(cfg.create_output("z_matrix.bin")?)?;
    let (nt, nr, ns) = zp.dims();
    say(format!(
        "assembled {} unknowns (Tx {nt}, Rx {nr}, RIS {ns}); reciprocity error {:.3e}",
        nt + nr + ns,
        zp.reciprocity_error()
    ));
    Ok(zp)
}

fn pattern_grid(step: f64) -> Vec<f64> {
    let n = (180.0 / step).round() as i64;
    (0..=n)
        .map(|i| ((-90.0 + i as f64 * 180.0 / n as f64) * 1e9).round() / 1e9)
        .collect()
}

/// Optimised state bitmap and its scattering pattern.
pub fn cmd_design(cfg: &ScenarioConfig) -> Result<(RisState, f64)> {
    let scene = cfg.scene_at(cfg.diagnose_r)?;
    let state = optimize_binary_states(&scene, &cfg.phases, cfg.beam_theta_deg)?;
    state.write_csv(cfg.create_output("state_bitmap.csv")?)?;
    let grid = pattern_grid(cfg.pattern_step_deg);
    let levels = PatternSolver::new(&scene, cfg.loads.tx)?.pattern_db(&state, &grid)?;
    write_pattern_csv(cfg.create_output("pattern.csv")?, &grid, &levels)?;
    let peak = peak_angle(&grid, &levels);
    say(format!(
        "designed {}x{} state ({} ON) for {:.1} deg; scattering peak at {peak:.1} deg",
        state.my,
        state.mx,
        state.on_count(),
        cfg.beam_theta_deg
    ));
    Ok((state, peak))
}

/// Patterns of the optimised, all-ON and all-OFF states.
pub fn cmd_pattern(cfg: &ScenarioConfig) -> Result<Report> {
    let scene = cfg.scene_at(cfg.diagnose_r)?;
    let solver = PatternSolver::new(&scene, cfg.loads.tx)?;
    let grid = pattern_grid(cfg.pattern_step_deg);
    let (mx, my) = (scene.dims.mx, scene.dims.my);
    let mut report = Report::default();
    let mut target_levels = Vec::new();
    for (name, state) in [
        ("optimized", optimize_binary_states(&scene, &cfg.phases, cfg.beam_theta_deg)?),
        ("all_on", RisState::uniform(mx, my, true)),
        ("all_off", RisState::uniform(mx, my, false)),
    ] {
        let raw = solver.field_magnitudes(&state, &grid)?;
        let levels = crate::ris_design::normalise_db(&raw);
        write_pattern_csv(cfg.create_output(&format!("pattern_{name}.csv"))?, &grid, &levels)?;
        let peak = peak_angle(&grid, &levels);
        target_levels.push(solver.field_magnitudes(&state, &[cfg.beam_theta_deg])?[0]);
        report.push(&format!("{name}_peak_deg"), peak);
        say(format!("{name}: peak at {peak:.1} deg"));
    }
    let gain = 20.0 * (target_levels[0] / target_levels[2]).log10();
    report.push("optimized_over_all_off_at_target_db", gain);
    say(format!("optimized state exceeds all-OFF by {gain:.2} dB at {:.1} deg", cfg.beam_theta_deg));
    report.write(cfg, "pattern_report.csv")?;
    Ok(report)
}

/// Capacity curve and path-loss exponent.
pub fn cmd_sweep(cfg: &ScenarioConfig) -> Result<Report> {
    let ctx = SweepContext::new(&cfg.scene)?;
    let scene = cfg.scene_at(cfg.r_list[cfg.r_list.len() - 1])?;
    let state = cfg.state_for(&scene)?;
    let curve = ctx.sweep(&state, &cfg.r_list, cfg.theta_deg, cfg.gamma_db, cfg.loads)?;
    curve.write_csv(cfg.create_output("capacity_curve.csv")?)?;
    let mut report = Report::default();
    let boundary = cfg.scene.far_field_boundary();
    report.push("far_field_boundary_lambda", boundary);
    report.push("fit_min_lambda", cfg.fit_min);
    match fit_pathloss_exponent(&curve, cfg.fit_min) {
        Ok(e) => {
            report.push("pathloss_exponent", e);
            say(format!(
                "path-loss exponent {e:.3} over R >= {} lambda (far-field boundary 2D^2 = {boundary:.1} lambda)",
                cfg.fit_min
            ));
        }
        Err(Error::InsufficientSamples { needed, have }) => {
            log::warn!("exponent not fitted: {have} samples beyond {} lambda, need {needed}", cfg.fit_min);
            report.push("pathloss_exponent", "nan");
        }
        Err(e) => return Err(e),
    }
    let gaps = curve.relative_gap();
    let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
    let far_gap = gaps
        .iter()
        .zip(&curve.r)
        .filter(|(_, r)| **r >= 3.0)
        .map(|(g, _)| *g)
        .fold(0.0, f64::max);
    report.push("max_relative_gap", max_gap);
    report.push("max_relative_gap_r_ge_3_lambda", far_gap);
    say(format!(
        "swept {} distances; largest reduced/full-wave gap {:.2}% ({:.2}% for R >= 3 lambda)",
        curve.r.len(),
        100.0 * max_gap,
        100.0 * far_gap
    ));
    report.write(cfg, "exponent_report.csv")?;
    Ok(report)
}

/// Spectral radii for the configured state and for 50 ohm RIS loads.
pub fn cmd_diagnose(cfg: &ScenarioConfig) -> Result<Report> {
    let scene = cfg.scene_at(cfg.diagnose_r)?;
    let zp = assemble_partitioned(&scene)?;
    let state = cfg.state_for(&scene)?;
    let mut report = Report::default();
    report.push("r_lambda", cfg.diagnose_r);
    report.push("r_r_x_lambda", rx_position(cfg.diagnose_r, cfg.theta_deg).x);
    for (name, ris) in [
        ("configured", state.to_port_loads()),
        ("ris_50ohm", vec![PortLoad::Impedance(C64::new(50.0, 0.0)); state.bits.len()]),
    ] {
        let loads = LoadMatrices::from_ports(&zp, cfg.loads.tx, cfg.loads.rx, &ris)?;
        let radii = ChannelSolver::new(&zp.z_ss, &loads)?.spectral_radii(&zp, &loads)?;
        report.push(&format!("{name}_rho_r"), radii.rho_r);
        report.push(&format!("{name}_rho_s"), radii.rho_s);
        say(format!("{name}: rho_R = {:.4e}, rho_S = {:.4e}", radii.rho_r, radii.rho_s));
    }
    report.write(cfg, "spectral_report.csv")?;
    Ok(report)
}

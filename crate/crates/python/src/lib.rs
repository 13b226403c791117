//! Python bindings: scenario-level operations of the channel model.

use mom::cli::{run_validation, Fault, ScenarioConfig, StateChoice};
use mom::em_kernel::{assemble_partitioned, LoadMatrices, PortLoad};
use mom::geometry::ElementKind;
use mom::link_metrics::{self, fit_pathloss_exponent, SweepContext};
use mom::linalg::{CMatrix, C64};
use mom::network::ChannelSolver;
use mom::ris_design::{optimize_binary_states, PatternSolver, RisState};
use mom::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Config(_) | Error::Geometry(_) | Error::Dimension { .. } | Error::InsufficientSamples { .. } => {
            PyValueError::new_err(err.to_string())
        }
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<ElementKind> {
    match kind {
        "dipole" => Ok(ElementKind::Dipole),
        "loop" => Ok(ElementKind::Loop),
        _ => Err(PyValueError::new_err(format!("unknown element kind {kind:?}"))),
    }
}

fn rows(m: &CMatrix) -> Vec<Vec<C64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(h: &[Vec<C64>]) -> PyResult<CMatrix> {
    let cols = h.first().map_or(0, Vec::len);
    if h.is_empty() || cols == 0 || h.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("channel must be a non-empty rectangular list of rows"));
    }
    Ok(CMatrix::from_fn(h.len(), cols, |i, j| h[i][j]))
}

/// A resolved scenario: geometry, link, RIS state policy and sweep settings.
#[pyclass(module = "ris_mom")]
struct Scenario {
    cfg: ScenarioConfig,
}

impl Scenario {
    fn state(&self, choice: Option<&str>, r: f64) -> PyResult<RisState> {
        let scene = self.cfg.scene_at(r).map_err(to_py)?;
        let mut cfg = self.cfg.clone();
        cfg.ris_state = match choice {
            None => cfg.ris_state,
            Some("optimized") => StateChoice::Optimized,
            Some("all_on") => StateChoice::AllOn,
            Some("all_off") => StateChoice::AllOff,
            Some(other) => return Err(PyValueError::new_err(format!("unknown state {other:?}"))),
        };
        cfg.state_for(&scene).map_err(to_py)
    }
}

#[pymethods]
impl Scenario {
    /// Build from TOML text, or from the defaults of `kind` when `toml` is None.
    #[new]
    #[pyo3(signature = (toml=None, kind="dipole"))]
    fn new(toml: Option<&str>, kind: &str) -> PyResult<Self> {
        let cfg = match toml {
            Some(text) => ScenarioConfig::from_toml(text),
            None => ScenarioConfig::default_for(parse_kind(kind)?),
        };
        Ok(Self { cfg: cfg.map_err(to_py)? })
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            cfg: ScenarioConfig::from_file(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn mx(&self) -> usize {
        self.cfg.scene.mx
    }

    #[getter]
    fn my(&self) -> usize {
        self.cfg.scene.my
    }

    #[getter]
    fn theta_deg(&self) -> f64 {
        self.cfg.theta_deg
    }

    #[getter]
    fn r_list(&self) -> Vec<f64> {
        self.cfg.r_list.clone()
    }

    #[getter]
    fn far_field_boundary(&self) -> f64 {
        self.cfg.scene.far_field_boundary()
    }

    /// Full-wave channel against the dense solve on a 3x3 RIS.
    /// Returns `(max_rel_err, max_residual, reciprocity, passed)`.
    fn validate(&self, py: Python<'_>) -> PyResult<(f64, f64, f64, bool)> {
        let r = py.detach(|| run_validation(&self.cfg, Fault::None)).map_err(to_py)?;
        Ok((r.max_rel_err, r.max_residual, r.reciprocity, r.passed))
    }

    /// Sizes `(N_T, N_R, N_S)` of the impedance partition with Rx at `r`.
    fn dims(&self, py: Python<'_>, r: f64) -> PyResult<(usize, usize, usize)> {
        py.detach(|| Ok(assemble_partitioned(&self.cfg.scene_at(r)?)?.dims()))
            .map_err(to_py)
    }

    /// 1-bit state as rows (constant y) of booleans, `True` meaning ON.
    #[pyo3(signature = (state=None))]
    fn design(&self, state: Option<&str>) -> PyResult<Vec<Vec<bool>>> {
        let s = self.state(state.or(Some("optimized")), self.cfg.diagnose_r)?;
        Ok((0..s.my).map(|m| (0..s.mx).map(|n| s.get(m, n)).collect()).collect())
    }

    /// Normalised scattering pattern in dB over `theta_deg` in the x-z cut.
    #[pyo3(signature = (theta_deg, state="optimized"))]
    fn pattern(&self, py: Python<'_>, theta_deg: Vec<f64>, state: &str) -> PyResult<Vec<f64>> {
        let s = self.state(Some(state), self.cfg.diagnose_r)?;
        py.detach(|| {
            let scene = self.cfg.scene_at(self.cfg.diagnose_r)?;
            PatternSolver::new(&scene, self.cfg.loads.tx)?.pattern_db(&s, &theta_deg)
        })
        .map_err(to_py)
    }

    /// Port channel matrix with the receiver at `r`; `kind` is
    /// "fullwave" or "reduced".
    #[pyo3(signature = (r, kind="fullwave"))]
    fn channel(&self, py: Python<'_>, r: f64, kind: &str) -> PyResult<Vec<Vec<C64>>> {
        let reduced = match kind {
            "fullwave" => false,
            "reduced" => true,
            _ => return Err(PyValueError::new_err(format!("unknown channel kind {kind:?}"))),
        };
        let s = self.state(None, r)?;
        let h = py
            .detach(|| {
                let zp = assemble_partitioned(&self.cfg.scene_at(r)?)?;
                let loads = LoadMatrices::from_ports(&zp, self.cfg.loads.tx, self.cfg.loads.rx, &s.to_port_loads())?;
                let solver = ChannelSolver::new(&zp.z_ss, &loads)?;
                if reduced {
                    solver.reduced(&zp, &loads)
                } else {
                    solver.fullwave(&zp, &loads)
                }
            })
            .map_err(to_py)?;
        Ok(rows(&h.h))
    }

    /// Capacity of both models over `r_list` (the scenario's list when None).
    /// Returns a dict with `r`, `c_fullwave`, `c_reduced` and
    /// `pathloss_exponent` (None when too few distances reach `fit_min`).
    #[pyo3(signature = (r_list=None))]
    fn sweep<'py>(&self, py: Python<'py>, r_list: Option<Vec<f64>>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let r_list = r_list.unwrap_or_else(|| self.cfg.r_list.clone());
        let last = *r_list.last().ok_or_else(|| PyValueError::new_err("distance list is empty"))?;
        let s = self.state(None, last)?;
        let curve = py
            .detach(|| {
                SweepContext::new(&self.cfg.scene)?.sweep(&s, &r_list, self.cfg.theta_deg, self.cfg.gamma_db, self.cfg.loads)
            })
            .map_err(to_py)?;
        let exponent = match fit_pathloss_exponent(&curve, self.cfg.fit_min) {
            Ok(e) => Some(e),
            Err(Error::InsufficientSamples { .. }) => None,
            Err(e) => return Err(to_py(e)),
        };
        let out = pyo3::types::PyDict::new(py);
        out.set_item("r", curve.r)?;
        out.set_item("c_fullwave", curve.c_fullwave)?;
        out.set_item("c_reduced", curve.c_reduced)?;
        out.set_item("pathloss_exponent", exponent)?;
        Ok(out)
    }

    /// `(rho_R, rho_S)` at the diagnostic distance, for the configured state
    /// or for uniform RIS loads of `ris_load_ohm`.
    #[pyo3(signature = (ris_load_ohm=None))]
    fn spectral_radii(&self, py: Python<'_>, ris_load_ohm: Option<f64>) -> PyResult<(f64, f64)> {
        let s = self.state(None, self.cfg.diagnose_r)?;
        let ris = match ris_load_ohm {
            Some(z) => vec![PortLoad::Impedance(C64::new(z, 0.0)); s.bits.len()],
            None => s.to_port_loads(),
        };
        let r = py
            .detach(|| {
                let zp = assemble_partitioned(&self.cfg.scene_at(self.cfg.diagnose_r)?)?;
                let loads = LoadMatrices::from_ports(&zp, self.cfg.loads.tx, self.cfg.loads.rx, &ris)?;
                ChannelSolver::new(&zp.z_ss, &loads)?.spectral_radii(&zp, &loads)
            })
            .map_err(to_py)?;
        Ok((r.rho_r, r.rho_s))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario({:?}, {}x{} RIS, theta={} deg)",
            self.cfg.scene.element_kind, self.cfg.scene.my, self.cfg.scene.mx, self.cfg.theta_deg
        )
    }
}

/// Shannon capacity in bit/s/Hz of channel `h` at SNR `gamma_db`, with
/// `m_xt` transmit streams (the column count when None).
#[pyfunction]
#[pyo3(signature = (h, gamma_db, m_xt=None))]
fn capacity(h: Vec<Vec<C64>>, gamma_db: f64, m_xt: Option<usize>) -> PyResult<f64> {
    let h = from_rows(&h)?;
    let m = m_xt.unwrap_or(h.ncols());
    link_metrics::capacity(&h, link_metrics::db_to_linear(gamma_db), m).map_err(to_py)
}

/// Slope of `log(2^C - 1)` against `log R` over `R >= r_min`.
#[pyfunction]
fn fit_exponent(r: Vec<f64>, c: Vec<f64>, r_min: f64) -> PyResult<f64> {
    link_metrics::fit_exponent(&r, &c, r_min).map_err(to_py)
}

/// Row-major 1-bit state of the default RIS of `kind` steering to
/// `beam_deg`.
#[pyfunction]
#[pyo3(signature = (beam_deg, kind="dipole"))]
fn optimize_states(beam_deg: f64, kind: &str) -> PyResult<Vec<bool>> {
    let cfg = ScenarioConfig::default_for(parse_kind(kind)?).map_err(to_py)?;
    let scene = cfg.scene_at(cfg.diagnose_r).map_err(to_py)?;
    Ok(optimize_binary_states(&scene, &cfg.phases, beam_deg).map_err(to_py)?.bits)
}

#[pymodule]
fn ris_mom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(capacity, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_states, m)?)?;
    Ok(())
}

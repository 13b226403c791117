//! One-bit RIS design and scattering patterns.

use std::io::Write;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::em_kernel::{assemble_cross_block, assemble_self_block, KernelContext, PortLoad, PortMap, K0};
use crate::error::{Error, Result};
use crate::geometry::{ElementKind, Group, HalfBasis, Point, Scene, SceneBasis};
use crate::linalg::{factorize, CMatrix, CVector, C64};
use crate::network::ris_state_matrix_with_open;
use crate::quadrature::gauss_legendre;

const FAR_FIELD_ORDER: usize = 8;

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Reflection phases of a unit cell in its two load states, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UnitCellPhases {
    pub phi_on: f64,
    pub phi_off: f64,
}

impl UnitCellPhases {
    pub fn phase_difference(&self) -> f64 {
        wrap_deg(self.phi_off - self.phi_on)
    }

    /// A usable 1-bit cell needs a state difference between 90 and 270 degrees.
    pub fn is_usable(&self) -> bool {
        self.phase_difference().abs() >= 90.0
    }
}

pub fn default_unit_cell_phases(kind: ElementKind) -> UnitCellPhases {
    match kind {
        ElementKind::Dipole => UnitCellPhases {
            phi_on: 6.4,
            phi_off: 164.6,
        },
        ElementKind::Loop => UnitCellPhases {
            phi_on: -56.0,
            phi_off: 122.8,
        },
    }
}

/// On/off states of the RIS grid, row-major `my x mx`. `true` is ON (short),
/// `false` is OFF (open).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RisState {
    pub mx: usize,
    pub my: usize,
    pub bits: Vec<bool>,
}

impl RisState {
    pub fn new(mx: usize, my: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != mx * my {
            return Err(Error::Dimension {
                context: "RIS state grid".into(),
                expected: mx * my,
                found: bits.len(),
            });
        }
        Ok(Self { mx, my, bits })
    }

    pub fn uniform(mx: usize, my: usize, on: bool) -> Self {
        Self {
            mx,
            my,
            bits: vec![on; mx * my],
        }
    }

    pub fn get(&self, m: usize, n: usize) -> bool {
        self.bits[m * self.mx + n]
    }

    pub fn on_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// ON maps to a 0 ohm short, OFF to an exact open.
    pub fn to_port_loads(&self) -> Vec<PortLoad> {
        self.bits
            .iter()
            .map(|&on| if on { PortLoad::Impedance(C64::new(0.0, 0.0)) } else { PortLoad::Open })
            .collect()
    }

    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        if self.mx != scene.dims.mx || self.my != scene.dims.my {
            return Err(Error::Config(format!(
                "state grid {}x{} does not match the RIS grid {}x{}",
                self.my, self.mx, scene.dims.my, scene.dims.mx
            )));
        }
        Ok(())
    }

    /// Grid of 0/1 with one CSV row per RIS row (constant y).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row_m".to_string()];
        header.extend((0..self.mx).map(|n| format!("col_{n}_state_on")));
        w.write_record(&header)?;
        for m in 0..self.my {
            let mut row = vec![m.to_string()];
            row.extend((0..self.mx).map(|n| u8::from(self.get(m, n)).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Unit vector in the x-z plane at `theta_deg` from the z axis.
pub fn xz_direction(theta_deg: f64) -> Point {
    let t = theta_deg.to_radians();
    Point::new(t.sin(), 0.0, t.cos())
}

/// Phase in degrees each element must impose so that the wave from `r_t`
/// leaves towards `beam_theta_deg`.
pub fn desired_phases(centers: &[Point], r_t: &Point, beam_theta_deg: f64) -> Vec<f64> {
    let u = xz_direction(beam_theta_deg);
    centers
        .iter()
        .map(|r| (-K0 * ((r - r_t).norm() - u.dot(r))).to_degrees().rem_euclid(360.0))
        .collect()
}

/// Picks the state whose cell phase is closest to each desired phase; ties
/// go to OFF.
pub fn choose_states(desired: &[f64], phases: &UnitCellPhases) -> Vec<bool> {
    desired
        .iter()
        .map(|&psi| {
            let e_on = wrap_deg(psi - phases.phi_on).abs();
            let e_off = wrap_deg(psi - phases.phi_off).abs();
            e_on < e_off - 1e-12
        })
        .collect()
}

/// Sum of squared wrapped phase errors of a state, in degrees squared.
pub fn phase_error(desired: &[f64], phases: &UnitCellPhases, bits: &[bool]) -> f64 {
    desired
        .iter()
        .zip(bits)
        .map(|(&psi, &on)| {
            let phi = if on { phases.phi_on } else { phases.phi_off };
            wrap_deg(psi - phi).powi(2)
        })
        .sum()
}

pub fn optimize_binary_states(scene: &Scene, phases: &UnitCellPhases, beam_theta_deg: f64) -> Result<RisState> {
    if !(-90.0..=90.0).contains(&beam_theta_deg) {
        return Err(Error::Config(format!("beam angle {beam_theta_deg} deg is not in the upper half-space")));
    }
    if !phases.is_usable() {
        log::warn!(
            "unit cell phase difference {:.1} deg is outside the usable 1-bit band",
            phases.phase_difference()
        );
    }
    let psi = desired_phases(&scene.ris_centers(), &scene.r_t, beam_theta_deg);
    RisState::new(scene.dims.mx, scene.dims.my, choose_states(&psi, phases))
}

struct FarSample {
    point: Point,
    weight: f64,
}

fn half_samples(h: &HalfBasis) -> Vec<FarSample> {
    gauss_legendre(FAR_FIELD_ORDER)
        .mapped(0.0, h.length)
        .map(|(s, w)| FarSample {
            point: h.point(s),
            weight: w * h.current(s),
        })
        .collect()
}

/// Precomputed radiating elements: quadrature points with their current
/// weight and direction, images included with negated current.
pub struct Radiator {
    parts: Vec<(usize, Point, Vec<FarSample>)>,
    n_bases: usize,
    ground_z: Option<f64>,
}

impl Radiator {
    pub fn new(bases: &[SceneBasis], ground_z: Option<f64>) -> Self {
        let mut parts = Vec::new();
        for (i, b) in bases.iter().enumerate() {
            for h in &b.halves {
                parts.push((i, h.dir, half_samples(h)));
                if let Some(gz) = ground_z {
                    let img = h.mirrored(gz);
                    let mut samples = half_samples(&img);
                    for s in &mut samples {
                        s.weight = -s.weight;
                    }
                    parts.push((i, img.dir, samples));
                }
            }
        }
        Self {
            parts,
            n_bases: bases.len(),
            ground_z,
        }
    }

    /// Transverse radiation vector `N_perp(u)`; the far field is
    /// `-j k eta exp(-j k r) / (4 pi r) N_perp`.
    pub fn radiation_vector(&self, currents: &CVector, direction: &Point) -> Result<Vector3<C64>> {
        if currents.len() != self.n_bases {
            return Err(Error::Dimension {
                context: "far-field currents".into(),
                expected: self.n_bases,
                found: currents.len(),
            });
        }
        let norm = direction.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Geometry(format!("direction has length {norm}, expected 1")));
        }
        if self.ground_z.is_some() && direction.z < 0.0 {
            log::warn!("far field requested below the ground plane; returning zero");
            return Ok(Vector3::zeros());
        }
        let mut n = Vector3::<C64>::zeros();
        for (i, dir, samples) in &self.parts {
            let mut acc = C64::new(0.0, 0.0);
            for s in samples {
                acc += C64::from_polar(s.weight, K0 * direction.dot(&s.point));
            }
            let acc = acc * currents[*i];
            n += dir.map(|d| acc * d);
        }
        let radial = n.dot(&direction.map(|d| C64::new(d, 0.0)));
        Ok(n - direction.map(|d| radial * d))
    }
}

/// Transverse radiation vector of `currents` (one per basis, Tx, Rx, RIS
/// order) in the unit direction `direction`, images included.
pub fn far_field(scene: &Scene, currents: &CVector, direction: &Point) -> Result<Vector3<C64>> {
    Radiator::new(&scene.bases()?, scene.ground_z()).radiation_vector(currents, direction)
}

/// Far-field magnitudes normalised to a 0 dB peak.
pub fn normalise_db(levels: &[f64]) -> Vec<f64> {
    let peak = levels.iter().cloned().fold(0.0, f64::max);
    levels
        .iter()
        .map(|&l| if peak > 0.0 { 20.0 * (l / peak).log10() } else { f64::NEG_INFINITY })
        .map(|db| db.max(-300.0))
        .collect()
}

/// Scattering by the RIS when the Tx array is driven with unit port voltages.
pub struct PatternSolver {
    z_ss: CMatrix,
    z_st: CMatrix,
    i_t: CVector,
    ris_ports: Vec<usize>,
    radiator: Radiator,
    mx: usize,
    my: usize,
}

impl PatternSolver {
    pub fn new(scene: &Scene, tx_load: C64) -> Result<Self> {
        let t = KernelContext::for_group(scene, Group::Tx)?;
        let s = KernelContext::for_group(scene, Group::Ris)?;
        let mut z_tt = assemble_self_block(&t)?;
        let z_st = assemble_cross_block(&t, &s)?.transpose();
        let z_ss = assemble_self_block(&s)?;
        let ports = PortMap::from_scene(scene)?;
        let mut v_t = CVector::zeros(t.len());
        for &p in &ports.tx {
            z_tt[(p, p)] += tx_load;
            v_t[p] = C64::new(1.0, 0.0);
        }
        let i_t = factorize(&z_tt, "Z_TT + Z^L_TT")?.solve_vec(&v_t);
        Ok(Self {
            radiator: Radiator::new(s.bases(), s.ground_z()),
            z_ss,
            z_st,
            i_t,
            ris_ports: ports.ris,
            mx: scene.dims.mx,
            my: scene.dims.my,
        })
    }

    /// RIS currents `-(Z_SS + Z^L_SS)^-1 Z_ST I_T` for a state.
    pub fn ris_currents(&self, state: &RisState) -> Result<CVector> {
        if state.mx != self.mx || state.my != self.my {
            return Err(Error::Config("state grid does not match the RIS grid".into()));
        }
        let mut zl = CVector::zeros(self.z_ss.nrows());
        let mut open = Vec::new();
        for (&p, load) in self.ris_ports.iter().zip(state.to_port_loads()) {
            match load {
                PortLoad::Impedance(z) => zl[p] = z,
                PortLoad::Open => open.push(p),
            }
        }
        let phi = ris_state_matrix_with_open(&self.z_ss, &zl, &open)?;
        Ok(-(phi.phi * (&self.z_st * &self.i_t)))
    }

    /// `|N_perp|` of the scattered field on a theta cut of the x-z plane.
    pub fn field_magnitudes(&self, state: &RisState, theta_grid: &[f64]) -> Result<Vec<f64>> {
        let i_s = self.ris_currents(state)?;
        theta_grid
            .par_iter()
            .map(|&t| {
                self.radiator
                    .radiation_vector(&i_s, &xz_direction(t))
                    .map(|n| n.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
            })
            .collect()
    }

    /// Pattern in dB, normalised to the peak over `theta_grid`.
    pub fn pattern_db(&self, state: &RisState, theta_grid: &[f64]) -> Result<Vec<f64>> {
        Ok(normalise_db(&self.field_magnitudes(state, theta_grid)?))
    }
}

/// Normalised scattering pattern with 50 ohm Tx loads.
pub fn scattering_pattern(scene: &Scene, state: &RisState, theta_grid: &[f64]) -> Result<Vec<f64>> {
    state.check_scene(scene)?;
    PatternSolver::new(scene, C64::new(50.0, 0.0))?.pattern_db(state, theta_grid)
}

/// Angle of the largest level.
pub fn peak_angle(theta_grid: &[f64], levels: &[f64]) -> f64 {
    let (i, _) = levels
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best });
    theta_grid[i]
}

pub fn write_pattern_csv<W: Write>(out: W, theta_grid: &[f64], levels_db: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_deg", "level_db"])?;
    for (t, l) in theta_grid.iter().zip(levels_db) {
        w.write_record([t.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

//! Channel capacity, receiver distance sweeps and path-loss fits.

use std::io::Write;

use nalgebra::Cholesky;
use rayon::prelude::*;

use crate::em_kernel::{
    assemble_cross_block, assemble_self_block, KernelContext, LoadMatrices, PartitionedZ, PortMap,
};
use crate::error::{Error, Result};
use crate::geometry::{build_scene, Group, Scene, SceneParams};
use crate::linalg::{CMatrix, C64};
use crate::network::ChannelSolver;
use crate::ris_design::RisState;

/// Shortest receiver distance a sweep accepts, in wavelengths (exclusive).
pub const SWEEP_MIN_DISTANCE: f64 = 0.5;
/// Longest receiver distance a sweep accepts, in wavelengths.
pub const SWEEP_MAX_DISTANCE: f64 = 200.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `log2 det(I + gamma / m_xt H H^H)` in bits/s/Hz, via a Cholesky factor.
pub fn capacity(h: &CMatrix, gamma: f64, m_xt: usize) -> Result<f64> {
    if !(gamma > 0.0) || m_xt == 0 {
        return Err(Error::Config(format!("capacity needs gamma > 0 and m_xt >= 1 (got {gamma}, {m_xt})")));
    }
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("channel matrix".into()));
    }
    let n = h.nrows();
    let g = CMatrix::identity(n, n) + h * h.adjoint() * C64::new(gamma / m_xt as f64, 0.0);
    let chol = Cholesky::new(g).ok_or_else(|| Error::NonFinite("I + gamma/M H H^H is not positive definite".into()))?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.norm().ln()).sum::<f64>() * 2.0;
    Ok((log_det / std::f64::consts::LN_2).max(0.0))
}

/// Capacity against receiver distance for both channel models.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityCurve {
    pub r: Vec<f64>,
    pub c_fullwave: Vec<f64>,
    pub c_reduced: Vec<f64>,
    pub theta_deg: f64,
    pub gamma_db: f64,
}

impl CapacityCurve {
    /// `|C_reduced - C_fullwave| / C_fullwave` at each distance.
    pub fn relative_gap(&self) -> Vec<f64> {
        self.c_fullwave
            .iter()
            .zip(&self.c_reduced)
            .map(|(f, r)| (r - f).abs() / f)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["R_lambda", "C_fullwave", "C_reduced", "theta_deg", "gamma_dB"])?;
        for i in 0..self.r.len() {
            w.write_record([
                self.r[i].to_string(),
                self.c_fullwave[i].to_string(),
                self.c_reduced[i].to_string(),
                self.theta_deg.to_string(),
                self.gamma_db.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Load settings of a link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkLoads {
    pub tx: C64,
    pub rx: C64,
}

impl Default for LinkLoads {
    fn default() -> Self {
        Self {
            tx: C64::new(50.0, 0.0),
            rx: C64::new(50.0, 0.0),
        }
    }
}

/// Scene blocks that do not depend on the receiver position, kept for a
/// sweep over Rx placements.
pub struct SweepContext {
    params: SceneParams,
    tx: KernelContext,
    ris: KernelContext,
    z_tt: CMatrix,
    z_ts: CMatrix,
    z_ss: CMatrix,
    tx_ports: Vec<usize>,
    ris_ports: Vec<usize>,
}

impl SweepContext {
    pub fn new(params: &SceneParams) -> Result<Self> {
        let scene = build_scene(params)?;
        let tx = KernelContext::for_group(&scene, Group::Tx)?;
        let ris = KernelContext::for_group(&scene, Group::Ris)?;
        let z_tt = assemble_self_block(&tx)?;
        let z_ts = assemble_cross_block(&tx, &ris)?;
        let z_ss = assemble_self_block(&ris)?;
        let ports = PortMap::from_scene(&scene)?;
        Ok(Self {
            params: params.clone(),
            tx,
            ris,
            z_tt,
            z_ts,
            z_ss,
            tx_ports: ports.tx,
            ris_ports: ports.ris,
        })
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn z_ss(&self) -> &CMatrix {
        &self.z_ss
    }

    /// Scene with the receiver at distance `r` and angle `theta_deg`.
    pub fn scene_at(&self, r: f64, theta_deg: f64) -> Result<Scene> {
        build_scene(&self.params.with_rx_at(r, theta_deg))
    }

    /// Full partition for one receiver placement, reusing the fixed blocks.
    pub fn partition_at(&self, r: f64, theta_deg: f64) -> Result<PartitionedZ> {
        let scene = self.scene_at(r, theta_deg)?;
        let rx = KernelContext::for_group(&scene, Group::Rx)?;
        let z_rr = assemble_self_block(&rx)?;
        let z_tr = assemble_cross_block(&self.tx, &rx)?;
        let z_rs = assemble_cross_block(&rx, &self.ris)?;
        let rx_ports: Vec<usize> = rx
            .bases()
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_port)
            .map(|(i, _)| i)
            .collect();
        Ok(PartitionedZ::from_upper(
            self.z_tt.clone(),
            z_tr,
            self.z_ts.clone(),
            z_rr,
            z_rs,
            self.z_ss.clone(),
            PortMap {
                tx: self.tx_ports.clone(),
                rx: rx_ports,
                ris: self.ris_ports.clone(),
            },
        ))
    }

    pub fn loads(&self, zp: &PartitionedZ, state: &RisState, link: LinkLoads) -> Result<LoadMatrices> {
        if state.mx != self.params.mx || state.my != self.params.my {
            return Err(Error::Config("state grid does not match the RIS grid".into()));
        }
        LoadMatrices::from_ports(zp, link.tx, link.rx, &state.to_port_loads())
    }

    /// Capacity of both models at each distance of `r_list`.
    pub fn sweep(
        &self,
        state: &RisState,
        r_list: &[f64],
        theta_deg: f64,
        gamma_db: f64,
        link: LinkLoads,
    ) -> Result<CapacityCurve> {
        check_distances(r_list)?;
        let zp0 = self.partition_at(r_list[0], theta_deg)?;
        let loads0 = self.loads(&zp0, state, link)?;
        let solver = ChannelSolver::new(&self.z_ss, &loads0)?;
        let gamma = db_to_linear(gamma_db);
        let m_xt = self.tx_ports.len();
        let points: Vec<(f64, f64)> = r_list
            .par_iter()
            .map(|&r| {
                let zp = self.partition_at(r, theta_deg)?;
                let loads = self.loads(&zp, state, link)?;
                let hf = solver.fullwave(&zp, &loads)?;
                let hr = solver.reduced(&zp, &loads)?;
                Ok((capacity(&hf.h, gamma, m_xt)?, capacity(&hr.h, gamma, m_xt)?))
            })
            .collect::<Result<_>>()?;
        Ok(CapacityCurve {
            r: r_list.to_vec(),
            c_fullwave: points.iter().map(|p| p.0).collect(),
            c_reduced: points.iter().map(|p| p.1).collect(),
            theta_deg,
            gamma_db,
        })
    }
}

fn check_distances(r_list: &[f64]) -> Result<()> {
    if r_list.is_empty() {
        return Err(Error::Config("distance list is empty".into()));
    }
    if let Some(r) = r_list
        .iter()
        .find(|&&r| !(r > SWEEP_MIN_DISTANCE && r <= SWEEP_MAX_DISTANCE))
    {
        return Err(Error::Config(format!(
            "distance {r} is outside ({SWEEP_MIN_DISTANCE}, {SWEEP_MAX_DISTANCE}] wavelengths"
        )));
    }
    if r_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("distances must be strictly increasing".into()));
    }
    Ok(())
}

/// Sweep with default 50 ohm Tx/Rx loads.
pub fn sweep_distance(
    params: &SceneParams,
    state: &RisState,
    r_list: &[f64],
    theta_deg: f64,
    gamma_db: f64,
) -> Result<CapacityCurve> {
    check_distances(r_list)?;
    SweepContext::new(params)?.sweep(state, r_list, theta_deg, gamma_db, LinkLoads::default())
}

/// Least-squares slope of `log(2^C - 1)` against `log R` over `R >= r_min`.
pub fn fit_exponent(r: &[f64], c: &[f64], r_min: f64) -> Result<f64> {
    let samples: Vec<(f64, f64)> = r
        .iter()
        .zip(c)
        .filter(|(r, _)| **r >= r_min)
        .map(|(&r, &c)| (r, c))
        .collect();
    if samples.len() < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            have: samples.len(),
        });
    }
    if let Some((r, c)) = samples.iter().find(|(_, c)| !(*c > 0.0)) {
        return Err(Error::NonFinite(format!("capacity {c} at R = {r} cannot be fitted")));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(r, c)| (r.ln(), (c * std::f64::consts::LN_2).exp_m1().ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Path-loss exponent of the full-wave curve over `R >= r_min`.
pub fn fit_pathloss_exponent(curve: &CapacityCurve, r_min: f64) -> Result<f64> {
    fit_exponent(&curve.r, &curve.c_fullwave, r_min)
}

/// `||Z_RS(R)|| R` over a set of distances; a flat profile shows the
/// `1/R` decay of the Rx-RIS coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringDecay {
    pub r: Vec<f64>,
    pub norm_times_r: Vec<f64>,
}

impl SteeringDecay {
    /// Ratio of the largest to the smallest `||Z_RS|| R`.
    pub fn flatness(&self) -> f64 {
        let max = self.norm_times_r.iter().cloned().fold(0.0, f64::max);
        let min = self.norm_times_r.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

pub fn steering_decay_check(params: &SceneParams, r_list: &[f64], theta_deg: f64) -> Result<SteeringDecay> {
    check_distances(r_list)?;
    if let Some(r) = r_list.iter().find(|&&r| r < 10.0) {
        log::warn!("R = {r} is not in the far zone; the 1/R law is not expected there");
    }
    let scene = build_scene(params)?;
    let ris = KernelContext::for_group(&scene, Group::Ris)?;
    let norm_times_r = r_list
        .par_iter()
        .map(|&r| {
            let scene = build_scene(&params.with_rx_at(r, theta_deg))?;
            let rx = KernelContext::for_group(&scene, Group::Rx)?;
            Ok(assemble_cross_block(&rx, &ris)?.norm() * r)
        })
        .collect::<Result<_>>()?;
    Ok(SteeringDecay {
        r: r_list.to_vec(),
        norm_times_r,
    })
}

//! Channel matrices from the partitioned impedance matrix.
//!
//! * [`dense_solve_reference`] solves the loaded system `(Z + Z^L) I = V`
//!   directly and is the reference every other route is checked against.
//! * [`fullwave_channel`] works through the admittance matrix
//!   `Y = (Z')^-1` of the system with only the Tx loads embedded and
//!   eliminates the RIS and then the Rx unknowns step by step.
//! * [`reduced_channel`] is the cascaded model
//!   `Z^L_RR (Z_RR + Z^L_RR)^-1 (-Z_RT + Z_RS Phi_S Z_ST) (Z_TT + Z^L_TT)^-1`.
//!
//! Open-circuited RIS ports are removed from the system exactly (zero port
//! current) rather than modelled with a large finite load.

use std::io::Write;

use crate::em_kernel::{LoadMatrices, PartitionedZ, PortMap};
use crate::error::{Error, Result};
use crate::linalg::{factorize, max_rel_diff, scale_columns, scale_rows, CMatrix, CVector, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Fullwave,
    Reduced,
}

/// Port-to-port voltage gain, rows = Rx ports, columns = Tx ports.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub h: CMatrix,
    pub kind: ChannelKind,
}

impl ChannelMatrix {
    pub fn max_singular_value(&self) -> f64 {
        if self.h.is_empty() {
            return 0.0;
        }
        self.h.clone().singular_values().max()
    }

    /// Logs a warning when the link shows gain above unity, which a passive
    /// scene with matched-order loads should not.
    pub fn check_passivity(&self) -> bool {
        let s = self.max_singular_value();
        if s >= 1.0 {
            log::warn!("{:?} channel has singular value {s:.4} >= 1", self.kind);
            false
        } else {
            true
        }
    }

    /// CSV with one row per Rx port; each cell is `"re,im"`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["rx_port".to_string()];
        header.extend((0..self.h.ncols()).map(|j| format!("tx_port_{j}_re_im")));
        w.write_record(&header)?;
        for i in 0..self.h.nrows() {
            let mut row = vec![i.to_string()];
            row.extend((0..self.h.ncols()).map(|j| format!("{},{}", self.h[(i, j)].re, self.h[(i, j)].im)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Phi_S = (Z_SS + Z^L_SS)^-1`, embedded in the full RIS index space
/// (rows and columns of open ports are zero).
#[derive(Clone, Debug, PartialEq)]
pub struct RisStateMatrix {
    pub phi: CMatrix,
}

impl RisStateMatrix {
    pub fn symmetry_error(&self) -> f64 {
        max_rel_diff(&self.phi.transpose(), &self.phi)
    }

    pub fn norm(&self) -> f64 {
        self.phi.norm()
    }
}

fn complement(n: usize, removed: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !removed.contains(i)).collect()
}

/// `Phi_S` with the given RIS ports open-circuited: the open rows and columns
/// are deleted, the remaining loaded matrix is inverted, and zeros are
/// re-embedded at the open positions.
pub fn ris_state_matrix_with_open(z_ss: &CMatrix, zl_ss: &CVector, open: &[usize]) -> Result<RisStateMatrix> {
    let n = z_ss.nrows();
    if zl_ss.len() != n {
        return Err(Error::Dimension {
            context: "RIS load vector".into(),
            expected: n,
            found: zl_ss.len(),
        });
    }
    if let Some(bad) = open.iter().find(|&&i| i >= n) {
        return Err(Error::Config(format!("open port {bad} outside the RIS partition")));
    }
    let kept = complement(n, open);
    let mut phi = CMatrix::zeros(n, n);
    if kept.is_empty() {
        log::warn!("all RIS bases are open-circuited; the state matrix is zero");
        return Ok(RisStateMatrix { phi });
    }
    let mut loaded = z_ss.select_rows(&kept).select_columns(&kept);
    for (k, &i) in kept.iter().enumerate() {
        loaded[(k, k)] += zl_ss[i];
    }
    let inv = factorize(&loaded, "Z_SS + Z^L_SS")?.inverse();
    for (a, &i) in kept.iter().enumerate() {
        for (b, &j) in kept.iter().enumerate() {
            phi[(i, j)] = inv[(a, b)];
        }
    }
    Ok(RisStateMatrix { phi })
}

/// `Phi_S = (Z_SS + Z^L_SS)^-1` with every load finite.
pub fn ris_state_matrix(z_ss: &CMatrix, zl_ss: &CVector) -> Result<RisStateMatrix> {
    ris_state_matrix_with_open(z_ss, zl_ss, &[])
}

/// Exact open-circuit limit of `Phi_S` for the ports in `open_ports`, with
/// all other bases unloaded.
pub fn open_circuit_state(z_ss: &CMatrix, open_ports: &[usize]) -> Result<RisStateMatrix> {
    ris_state_matrix_with_open(z_ss, &CVector::zeros(z_ss.nrows()), open_ports)
}

/// Partition with the open RIS bases removed, plus the surviving RIS indices.
#[derive(Clone, Debug)]
struct Eliminated {
    z_ts: CMatrix,
    z_rs: CMatrix,
    z_st: CMatrix,
    z_sr: CMatrix,
    zl_ss: CVector,
    kept: Vec<usize>,
}

fn eliminate(zp: &PartitionedZ, loads: &LoadMatrices, kept: &[usize]) -> Eliminated {
    Eliminated {
        z_ts: zp.z_ts.select_columns(kept),
        z_rs: zp.z_rs.select_columns(kept),
        z_st: zp.z_st.select_rows(kept),
        z_sr: zp.z_sr.select_rows(kept),
        zl_ss: CVector::from_iterator(kept.len(), kept.iter().map(|&i| loads.zl_ss[i])),
        kept: kept.to_vec(),
    }
}

fn check_dims(zp: &PartitionedZ, loads: &LoadMatrices) -> Result<()> {
    let (nt, nr, ns) = zp.dims();
    for (ctx, expected, found) in [
        ("Z^L_TT", nt, loads.zl_tt.len()),
        ("Z^L_RR", nr, loads.zl_rr.len()),
        ("Z^L_SS", ns, loads.zl_ss.len()),
        ("Z_TR columns", nr, zp.z_tr.ncols()),
        ("Z_TS columns", ns, zp.z_ts.ncols()),
        ("Z_RS columns", ns, zp.z_rs.ncols()),
        ("Z_ST rows", ns, zp.z_st.nrows()),
        ("Z_SR rows", ns, zp.z_sr.nrows()),
    ] {
        if expected != found {
            return Err(Error::Dimension {
                context: ctx.into(),
                expected,
                found,
            });
        }
    }
    Ok(())
}

/// Currents of the three partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Currents {
    pub i_t: CVector,
    pub i_r: CVector,
    pub i_s: CVector,
}

/// Solves `(Z + Z^L) I = [V_T; 0; 0]` by LU on the whole system.
pub fn dense_solve_reference(zp: &PartitionedZ, loads: &LoadMatrices, v_t: &CVector) -> Result<Currents> {
    check_dims(zp, loads)?;
    let (nt, nr, ns) = zp.dims();
    if v_t.len() != nt {
        return Err(Error::Dimension {
            context: "V_T".into(),
            expected: nt,
            found: v_t.len(),
        });
    }
    let kept_s = complement(ns, &loads.open_ss);
    let rows: Vec<usize> = (0..nt + nr).chain(kept_s.iter().map(|i| i + nt + nr)).collect();
    let full = zp.full();
    let mut system = full.select_rows(&rows).select_columns(&rows);
    for (k, &g) in rows.iter().enumerate() {
        system[(k, k)] += if g < nt {
            loads.zl_tt[g]
        } else if g < nt + nr {
            loads.zl_rr[g - nt]
        } else {
            loads.zl_ss[g - nt - nr]
        };
    }
    let mut rhs = CVector::zeros(rows.len());
    rhs.rows_mut(0, nt).copy_from(v_t);
    let x = factorize(&system, "Z + Z^L (dense reference)")?.solve_vec(&rhs);
    let mut i_s = CVector::zeros(ns);
    for (k, &i) in kept_s.iter().enumerate() {
        i_s[i] = x[nt + nr + k];
    }
    Ok(Currents {
        i_t: x.rows(0, nt).into_owned(),
        i_r: x.rows(nt, nr).into_owned(),
        i_s,
    })
}

/// `||(Z + Z^L) I - V|| / ||V||` over every equation except the rows of
/// open-circuited RIS ports (whose voltage is not prescribed), evaluated with
/// a plain matrix-vector product.
pub fn relative_residual(zp: &PartitionedZ, loads: &LoadMatrices, currents: &Currents, v_t: &CVector) -> f64 {
    let (nt, nr, ns) = zp.dims();
    let n = nt + nr + ns;
    let mut current = CVector::zeros(n);
    current.rows_mut(0, nt).copy_from(&currents.i_t);
    current.rows_mut(nt, nr).copy_from(&currents.i_r);
    current.rows_mut(nt + nr, ns).copy_from(&currents.i_s);
    let full = zp.full();
    let mut lhs = CVector::zeros(n);
    for i in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            acc += full[(i, j)] * current[j];
        }
        let load = if i < nt {
            loads.zl_tt[i]
        } else if i < nt + nr {
            loads.zl_rr[i - nt]
        } else {
            loads.zl_ss[i - nt - nr]
        };
        lhs[i] = acc + load * current[i];
    }
    let mut num = 0.0;
    for i in 0..n {
        if i >= nt + nr && loads.open_ss.contains(&(i - nt - nr)) {
            continue;
        }
        let v = if i < nt { v_t[i] } else { C64::new(0.0, 0.0) };
        num += (lhs[i] - v).norm_sqr();
    }
    num.sqrt() / v_t.norm()
}

/// Blocks of `Y = (Z')^-1` needed for the channel.
#[derive(Clone, Debug)]
pub struct AdmittanceBlocks {
    pub y_rt: CMatrix,
    pub y_rr: CMatrix,
    pub y_rs: CMatrix,
    pub y_st: CMatrix,
    pub y_sr: CMatrix,
    pub y_ss: CMatrix,
}

/// Inverse of `Z'` by block elimination of the (state-dependent but
/// distance-independent) RIS block `Z_SS`, whose inverse is supplied.
fn admittance_blocks(zp: &PartitionedZ, loads: &LoadMatrices, elim: &Eliminated, z_ss_inv: &CMatrix) -> Result<AdmittanceBlocks> {
    let (nt, nr, _) = zp.dims();
    let na = nt + nr;
    let ns = elim.kept.len();
    let mut a = CMatrix::zeros(na, na);
    a.view_mut((0, 0), (nt, nt)).copy_from(&zp.z_tt);
    for i in 0..nt {
        a[(i, i)] += loads.zl_tt[i];
    }
    a.view_mut((0, nt), (nt, nr)).copy_from(&zp.z_tr);
    a.view_mut((nt, 0), (nr, nt)).copy_from(&zp.z_rt);
    a.view_mut((nt, nt), (nr, nr)).copy_from(&zp.z_rr);
    let mut b = CMatrix::zeros(na, ns);
    b.view_mut((0, 0), (nt, ns)).copy_from(&elim.z_ts);
    b.view_mut((nt, 0), (nr, ns)).copy_from(&elim.z_rs);
    let mut c = CMatrix::zeros(ns, na);
    c.view_mut((0, 0), (ns, nt)).copy_from(&elim.z_st);
    c.view_mut((0, nt), (ns, nr)).copy_from(&elim.z_sr);

    let d_inv_c = z_ss_inv * &c;
    let b_d_inv = &b * z_ss_inv;
    let schur = &a - &b * &d_inv_c;
    let schur_inv = factorize(&schur, "Schur complement of Z' on the Tx/Rx unknowns")?.inverse();
    let y_aa = schur_inv.clone();
    let y_as = -(&schur_inv * &b_d_inv);
    let y_sa = -(&d_inv_c * &schur_inv);
    let y_ss = z_ss_inv + &d_inv_c * &schur_inv * &b_d_inv;
    Ok(AdmittanceBlocks {
        y_rt: y_aa.view((nt, 0), (nr, nt)).into_owned(),
        y_rr: y_aa.view((nt, nt), (nr, nr)).into_owned(),
        y_rs: y_as.rows(nt, nr).into_owned(),
        y_st: y_sa.columns(0, nt).into_owned(),
        y_sr: y_sa.columns(nt, nr).into_owned(),
        y_ss,
    })
}

/// Intermediate products of the full-wave elimination.
struct FullwaveTerms {
    y: AdmittanceBlocks,
    /// `(U + Y_SS Z^L_SS)^-1 [Y_ST | Y_SR]`, or `None` when `Z^L_SS = 0`.
    ris_solved: (CMatrix, CMatrix),
    /// `Y_RS Z^L_SS (U + Y_SS Z^L_SS)^-1 Y_SR Z^L_RR`
    rx_feedback: CMatrix,
}

fn fullwave_terms(zp: &PartitionedZ, loads: &LoadMatrices, elim: &Eliminated, z_ss_inv: &CMatrix) -> Result<FullwaveTerms> {
    let y = admittance_blocks(zp, loads, elim, z_ss_inv)?;
    let ns = elim.kept.len();
    let (y_st_solved, y_sr_solved) = if elim.zl_ss.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        (y.y_st.clone(), y.y_sr.clone())
    } else {
        let p_s = CMatrix::identity(ns, ns) + scale_columns(&y.y_ss, &elim.zl_ss);
        let f = factorize(&p_s, "U + Y_SS Z^L_SS")?;
        (f.solve(&y.y_st), f.solve(&y.y_sr))
    };
    let y_rs_zl = scale_columns(&y.y_rs, &elim.zl_ss);
    let rx_feedback = scale_columns(&(&y_rs_zl * &y_sr_solved), &loads.zl_rr);
    Ok(FullwaveTerms {
        y,
        ris_solved: (y_st_solved, y_sr_solved),
        rx_feedback,
    })
}

/// Channel solver that caches the RIS-block inverses for one RIS state, so
/// distance sweeps only redo the Tx/Rx-dependent work.
#[derive(Clone, Debug)]
pub struct ChannelSolver {
    kept: Vec<usize>,
    z_ss_inv: CMatrix,
    phi: CMatrix,
}

impl ChannelSolver {
    pub fn new(z_ss: &CMatrix, loads: &LoadMatrices) -> Result<Self> {
        let ns = z_ss.nrows();
        if loads.zl_ss.len() != ns {
            return Err(Error::Dimension {
                context: "Z^L_SS".into(),
                expected: ns,
                found: loads.zl_ss.len(),
            });
        }
        let kept = complement(ns, &loads.open_ss);
        let bare = z_ss.select_rows(&kept).select_columns(&kept);
        let z_ss_inv = factorize(&bare, "Z_SS")?.inverse();
        let phi = if kept.iter().all(|&i| loads.zl_ss[i] == C64::new(0.0, 0.0)) {
            z_ss_inv.clone()
        } else {
            let mut loaded = bare;
            for (k, &i) in kept.iter().enumerate() {
                loaded[(k, k)] += loads.zl_ss[i];
            }
            factorize(&loaded, "Z_SS + Z^L_SS")?.inverse()
        };
        Ok(Self { kept, z_ss_inv, phi })
    }

    /// Segment-level full-wave matrix `H^f` (`N_R x N_T`).
    pub fn fullwave_segment_matrix(&self, zp: &PartitionedZ, loads: &LoadMatrices) -> Result<CMatrix> {
        check_dims(zp, loads)?;
        let elim = eliminate(zp, loads, &self.kept);
        let terms = fullwave_terms(zp, loads, &elim, &self.z_ss_inv)?;
        let nr = zp.z_rr.nrows();
        let y = &terms.y;
        let drive = &y.y_rt - scale_columns(&y.y_rs, &elim.zl_ss) * &terms.ris_solved.0;
        let rx_self = CMatrix::identity(nr, nr) + scale_columns(&y.y_rr, &loads.zl_rr);
        let rx_self_inv = factorize(&rx_self, "U + Y_RR Z^L_RR")?.inverse();
        let coupled = CMatrix::identity(nr, nr) - &rx_self_inv * &terms.rx_feedback;
        let coupled_inv = factorize(&coupled, "U - (U + Y_RR Z^L_RR)^-1 Y_RS Z^L_SS (U + Y_SS Z^L_SS)^-1 Y_SR Z^L_RR")?.inverse();
        let i_r_per_v = coupled_inv * rx_self_inv * drive;
        Ok(scale_rows(&loads.zl_rr, &i_r_per_v))
    }

    pub fn fullwave(&self, zp: &PartitionedZ, loads: &LoadMatrices) -> Result<ChannelMatrix> {
        let h = self.fullwave_segment_matrix(zp, loads)?;
        Ok(ChannelMatrix {
            h: extract_ports(&h, &zp.ports),
            kind: ChannelKind::Fullwave,
        })
    }

    /// Segment-level reduced (cascaded) matrix.
    pub fn reduced_segment_matrix(&self, zp: &PartitionedZ, loads: &LoadMatrices) -> Result<CMatrix> {
        check_dims(zp, loads)?;
        let elim = eliminate(zp, loads, &self.kept);
        let (nt, nr, _) = zp.dims();
        let mut tx = zp.z_tt.clone();
        for i in 0..nt {
            tx[(i, i)] += loads.zl_tt[i];
        }
        let mut rx = zp.z_rr.clone();
        for i in 0..nr {
            rx[(i, i)] += loads.zl_rr[i];
        }
        let tx_inv = factorize(&tx, "Z_TT + Z^L_TT")?.inverse();
        let rx_inv = factorize(&rx, "Z_RR + Z^L_RR")?.inverse();
        let cascade = &elim.z_rs * &self.phi * &elim.z_st - &zp.z_rt;
        Ok(scale_rows(&loads.zl_rr, &(rx_inv * cascade * tx_inv)))
    }

    pub fn reduced(&self, zp: &PartitionedZ, loads: &LoadMatrices) -> Result<ChannelMatrix> {
        let h = self.reduced_segment_matrix(zp, loads)?;
        Ok(ChannelMatrix {
            h: extract_ports(&h, &zp.ports),
            kind: ChannelKind::Reduced,
        })
    }

    pub fn spectral_radii(&self, zp: &PartitionedZ, loads: &LoadMatrices) -> Result<SpectralReport> {
        check_dims(zp, loads)?;
        let elim = eliminate(zp, loads, &self.kept);
        let terms = fullwave_terms(zp, loads, &elim, &self.z_ss_inv)?;
        // Eigenvalues of Y_SS diag(z) are those of the loaded principal
        // submatrix plus zeros.
        let loaded: Vec<usize> = (0..elim.kept.len())
            .filter(|&k| elim.zl_ss[k] != C64::new(0.0, 0.0))
            .collect();
        let rho_s = if loaded.is_empty() {
            0.0
        } else {
            let sub = terms.y.y_ss.select_rows(&loaded).select_columns(&loaded);
            let zl = CVector::from_iterator(loaded.len(), loaded.iter().map(|&k| elim.zl_ss[k]));
            spectral_radius(&scale_columns(&sub, &zl))?
        };
        let rho_r = spectral_radius(&terms.rx_feedback)?;
        Ok(SpectralReport { rho_r, rho_s })
    }
}

/// Port rows/columns of a segment-level channel matrix.
pub fn extract_ports(h: &CMatrix, ports: &PortMap) -> CMatrix {
    h.select_rows(&ports.rx).select_columns(&ports.tx)
}

/// Full-wave port channel matrix.
pub fn fullwave_channel(zp: &PartitionedZ, loads: &LoadMatrices) -> Result<ChannelMatrix> {
    ChannelSolver::new(&zp.z_ss, loads)?.fullwave(zp, loads)
}

/// Reduced (cascaded) port channel matrix.
pub fn reduced_channel(zp: &PartitionedZ, loads: &LoadMatrices) -> Result<ChannelMatrix> {
    ChannelSolver::new(&zp.z_ss, loads)?.reduced(zp, loads)
}

/// Spectral radii of the two operators that would need a Neumann expansion
/// in the full-wave elimination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralReport {
    /// `Y_RS Z^L_SS (U + Y_SS Z^L_SS)^-1 Y_SR Z^L_RR`
    pub rho_r: f64,
    /// `Y_SS Z^L_SS`
    pub rho_s: f64,
}

pub fn spectral_radius_diagnostic(zp: &PartitionedZ, loads: &LoadMatrices) -> Result<SpectralReport> {
    ChannelSolver::new(&zp.z_ss, loads)?.spectral_radii(zp, loads)
}

/// Largest eigenvalue modulus from a complex Schur decomposition.
pub fn spectral_radius(m: &CMatrix) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(0.0);
    }
    let schur = m
        .clone()
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| Error::Singular {
            context: "Schur iteration did not converge".into(),
            condition: f64::NAN,
        })?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

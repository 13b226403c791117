//! Galerkin impedance kernel for piecewise-sinusoidal thin-wire bases and
//! assembly of the partitioned system matrix.
//!
//! With lengths in wavelengths the wavenumber is `k = 2 pi` and
//!
//! ```text
//! Z_mn = j k eta0 \iint [ f_m . f_n - (div f_m)(div f_n) / k^2 ] G(R) dl dl'
//! G(R) = exp(-j k R) / (4 pi R),   R = sqrt(|r - r'|^2 + a^2)
//! ```
//!
//! Near segment pairs use singularity extraction: the first two Taylor terms
//! of the source weight times `1/R` are integrated in closed form and the
//! bounded remainder by Gauss-Legendre quadrature split at the nearest point.
//! A PEC ground plane is handled by image theory (mirrored geometry,
//! negated current).

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{segment_distance, Group, HalfBasis, Point, Scene, SceneBasis, NODE_TOLERANCE};
use crate::linalg::{CMatrix, CVector, C64};
use crate::quadrature::gauss_legendre;

/// Free-space wave impedance in ohms.
pub const ETA0: f64 = 376.730_313_668;
/// Wavenumber for unit wavelength.
pub const K0: f64 = 2.0 * PI;

/// Segments closer than this (and not touching) are rejected.
pub const MIN_SEPARATION: f64 = 1e-6;

const NEAR_OUTER_ORDER: usize = 16;
const NEAR_INNER_ORDER: usize = 8;

impl HalfBasis {
    fn sin_kl(&self) -> f64 {
        (K0 * self.length).sin()
    }

    /// Current amplitude at parameter `s`.
    pub fn current(&self, s: f64) -> f64 {
        let arg = if self.rising { s } else { self.length - s };
        (K0 * arg).sin() / self.sin_kl()
    }

    /// Derivative of the current along the half (the line-charge weight).
    pub fn charge(&self, s: f64) -> f64 {
        if self.rising {
            K0 * (K0 * s).cos() / self.sin_kl()
        } else {
            -K0 * (K0 * (self.length - s)).cos() / self.sin_kl()
        }
    }
}

/// Quadrature samples of one half.
#[derive(Clone, Debug)]
struct Samples {
    points: Vec<Point>,
    current: Vec<f64>,
    charge: Vec<f64>,
    weights: Vec<f64>,
}

impl Samples {
    fn new(h: &HalfBasis, order: usize) -> Self {
        let rule = gauss_legendre(order);
        let mut out = Samples {
            points: Vec::with_capacity(order),
            current: Vec::with_capacity(order),
            charge: Vec::with_capacity(order),
            weights: Vec::with_capacity(order),
        };
        for (s, w) in rule.mapped(0.0, h.length) {
            out.points.push(h.point(s));
            out.current.push(h.current(s));
            out.charge.push(h.charge(s));
            out.weights.push(w);
        }
        out
    }
}

#[derive(Clone, Debug)]
struct PreparedHalf {
    half: HalfBasis,
    coarse: Samples,
    fine: Samples,
}

impl PreparedHalf {
    fn new(half: HalfBasis) -> Self {
        Self {
            coarse: Samples::new(&half, 4),
            fine: Samples::new(&half, 8),
            half,
        }
    }
}

#[derive(Clone, Debug)]
struct PreparedBasis {
    halves: [PreparedHalf; 2],
    images: Option<[PreparedHalf; 2]>,
}

impl PreparedBasis {
    fn new(b: &SceneBasis, ground_z: Option<f64>) -> Self {
        let prep = |h: &HalfBasis| PreparedHalf::new(*h);
        Self {
            halves: [prep(&b.halves[0]), prep(&b.halves[1])],
            images: ground_z.map(|z| {
                [
                    PreparedHalf::new(b.halves[0].mirrored(z)),
                    PreparedHalf::new(b.halves[1].mirrored(z)),
                ]
            }),
        }
    }
}

fn tensor_reaction(m: &Samples, n: &Samples, cos_mn: f64, a2: f64) -> C64 {
    let inv_k2 = 1.0 / (K0 * K0);
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..m.points.len() {
        let (fm, dm, wm) = (m.current[i], m.charge[i], m.weights[i]);
        let pm = &m.points[i];
        for j in 0..n.points.len() {
            let r = ((pm - n.points[j]).norm_squared() + a2).sqrt();
            let g = cos_mn * fm * n.current[j] - dm * n.charge[j] * inv_k2;
            let (sin, cos) = (K0 * r).sin_cos();
            acc += C64::new(cos, -sin) * (wm * n.weights[j] * g / r);
        }
    }
    acc / (4.0 * PI)
}

/// Inner integral over `n` for an observation point with singularity
/// extraction. The source weight is `coef_current * I_n(t) + coef_charge * Q_n(t)`.
fn extracted_inner(obs: &Point, n: &HalfBasis, a2: f64, coef_current: f64, coef_charge: f64) -> C64 {
    let len = n.length;
    let d = obs - n.origin;
    let t0 = d.dot(&n.dir);
    let rho2 = (d.norm_squared() - t0 * t0 + a2).max(a2);
    let rho = rho2.sqrt();
    let weight = |t: f64| coef_current * n.current(t) + coef_charge * n.charge(t);
    let weight_slope = |t: f64| coef_current * n.charge(t) - coef_charge * K0 * K0 * n.current(t);
    let dist = |t: f64| ((t - t0) * (t - t0) + rho2).sqrt();

    let tc = t0.clamp(0.0, len);
    let g0 = weight(tc);
    let g1 = weight_slope(tc);
    let int_inv_r = ((len - t0) / rho).asinh() - (-t0 / rho).asinh();
    let int_lin = dist(len) - dist(0.0) + (t0 - tc) * int_inv_r;
    let analytic = C64::new(g0 * int_inv_r + g1 * int_lin, 0.0);

    let rule = gauss_legendre(NEAR_INNER_ORDER);
    let mut remainder = C64::new(0.0, 0.0);
    for (a, b) in [(0.0, tc), (tc, len)] {
        if b - a <= 0.0 {
            continue;
        }
        for (t, w) in rule.mapped(a, b) {
            let r = dist(t);
            let (sin, cos) = (K0 * r).sin_cos();
            let smooth = C64::new(cos, -sin) * weight(t) - (g0 + g1 * (t - tc));
            remainder += smooth * (w / r);
        }
    }
    (analytic + remainder) / (4.0 * PI)
}

fn extracted_reaction(m: &HalfBasis, n: &HalfBasis, cos_mn: f64, a2: f64) -> C64 {
    let inv_k2 = 1.0 / (K0 * K0);
    let rule = gauss_legendre(NEAR_OUTER_ORDER);
    rule.mapped(0.0, m.length)
        .map(|(s, w)| {
            let obs = m.point(s);
            extracted_inner(&obs, n, a2, cos_mn * m.current(s), -m.charge(s) * inv_k2) * w
        })
        .sum()
}

fn touching(a: &HalfBasis, b: &HalfBasis) -> bool {
    let ends_a = [a.origin, a.end()];
    let ends_b = [b.origin, b.end()];
    ends_a
        .iter()
        .any(|p| ends_b.iter().any(|q| (p - q).norm() <= NODE_TOLERANCE))
}

/// Reaction integral of two halves including `1/(4 pi)` but not `j k eta0`.
/// Returns the separation when the pair is too close to integrate.
fn half_reaction(m: &PreparedHalf, n: &PreparedHalf) -> std::result::Result<C64, f64> {
    let (hm, hn) = (&m.half, &n.half);
    let lmax = hm.length.max(hn.length);
    let dmin = segment_distance(&hm.origin, &hm.end(), &hn.origin, &hn.end());
    if dmin < MIN_SEPARATION && !touching(hm, hn) {
        return Err(dmin);
    }
    let cos_mn = hm.dir.dot(&hn.dir);
    let a2 = 0.5 * (hm.radius * hm.radius + hn.radius * hn.radius);
    if dmin >= 2.0 * lmax {
        let (sm, sn) = if dmin > 6.0 * lmax {
            (&m.coarse, &n.coarse)
        } else {
            (&m.fine, &n.fine)
        };
        Ok(tensor_reaction(sm, sn, cos_mn, a2))
    } else {
        // Extraction is applied on the inner integral only; averaging both
        // orders keeps the pair exactly reciprocal.
        let forward = extracted_reaction(hm, hn, cos_mn, a2);
        let backward = extracted_reaction(hn, hm, cos_mn, a2);
        Ok(0.5 * (forward + backward))
    }
}

fn basis_impedance(m: &PreparedBasis, n: &PreparedBasis) -> std::result::Result<C64, f64> {
    let mut acc = C64::new(0.0, 0.0);
    for hm in &m.halves {
        for hn in &n.halves {
            acc += half_reaction(hm, hn)?;
        }
        if let Some(images) = &n.images {
            for hn in images {
                acc -= half_reaction(hm, hn)?;
            }
        }
    }
    Ok(C64::new(0.0, K0 * ETA0) * acc)
}

/// Bases of a scene prepared for repeated impedance evaluation.
#[derive(Clone, Debug)]
pub struct KernelContext {
    bases: Vec<SceneBasis>,
    prepared: Vec<PreparedBasis>,
    ground_z: Option<f64>,
}

impl KernelContext {
    pub fn new(bases: Vec<SceneBasis>, ground_z: Option<f64>) -> Self {
        let prepared = bases.iter().map(|b| PreparedBasis::new(b, ground_z)).collect();
        Self {
            bases,
            prepared,
            ground_z,
        }
    }

    pub fn from_scene(scene: &Scene) -> Result<Self> {
        Ok(Self::new(scene.bases()?, scene.ground_z()))
    }

    pub fn for_group(scene: &Scene, group: Group) -> Result<Self> {
        Ok(Self::new(scene.group_bases(group)?, scene.ground_z()))
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn bases(&self) -> &[SceneBasis] {
        &self.bases
    }

    pub fn ground_z(&self) -> Option<f64> {
        self.ground_z
    }

    /// Mutual impedance between bases `m` and `n` (self impedance when equal).
    pub fn mutual_impedance(&self, m: usize, n: usize) -> Result<C64> {
        basis_impedance(&self.prepared[m], &self.prepared[n])
            .map_err(|distance| Error::KernelSingularity { m, n, distance })
    }

    fn cross(&self, other: &Self, m: usize, n: usize) -> Result<C64> {
        basis_impedance(&self.prepared[m], &other.prepared[n])
            .map_err(|distance| Error::KernelSingularity { m, n, distance })
    }
}

/// Mutual impedance between two bases of a scene (indices in Tx, Rx, RIS order).
pub fn mutual_impedance(scene: &Scene, m: usize, n: usize) -> Result<C64> {
    let bases = scene.bases()?;
    let ctx = KernelContext::new(vec![bases[m].clone(), bases[n].clone()], scene.ground_z());
    ctx.mutual_impedance(0, 1).map_err(|e| match e {
        Error::KernelSingularity { distance, .. } => Error::KernelSingularity { m, n, distance },
        other => other,
    })
}

/// Symmetric self-block of one basis set. Entries are computed independently
/// so the result does not depend on the thread count.
pub fn assemble_self_block(ctx: &KernelContext) -> Result<CMatrix> {
    let n = ctx.len();
    let rows: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| ctx.mutual_impedance(i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut z = CMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + k;
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
    Ok(z)
}

/// Coupling block between two basis sets (rows from `a`, columns from `b`).
pub fn assemble_cross_block(a: &KernelContext, b: &KernelContext) -> Result<CMatrix> {
    let rows: Vec<Vec<C64>> = (0..a.len())
        .into_par_iter()
        .map(|i| (0..b.len()).map(|j| a.cross(b, i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut z = CMatrix::zeros(a.len(), b.len());
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            z[(i, j)] = v;
        }
    }
    Ok(z)
}

/// Local port indices of each partition. RIS ports are listed in element
/// (row-major grid) order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PortMap {
    pub tx: Vec<usize>,
    pub rx: Vec<usize>,
    pub ris: Vec<usize>,
}

impl PortMap {
    pub fn from_scene(scene: &Scene) -> Result<Self> {
        let ports = |g: Group| -> Result<Vec<usize>> {
            Ok(scene
                .group_bases(g)?
                .iter()
                .enumerate()
                .filter(|(_, b)| b.is_port)
                .map(|(i, _)| i)
                .collect())
        };
        Ok(Self {
            tx: ports(Group::Tx)?,
            rx: ports(Group::Rx)?,
            ris: ports(Group::Ris)?,
        })
    }
}

/// The nine blocks of the system impedance matrix, partitioned into Tx (T),
/// Rx (R) and RIS (S) bases.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedZ {
    pub z_tt: CMatrix,
    pub z_tr: CMatrix,
    pub z_ts: CMatrix,
    pub z_rt: CMatrix,
    pub z_rr: CMatrix,
    pub z_rs: CMatrix,
    pub z_st: CMatrix,
    pub z_sr: CMatrix,
    pub z_ss: CMatrix,
    pub ports: PortMap,
}

impl PartitionedZ {
    /// Builds the partition from independently assembled upper blocks; the
    /// lower blocks are their transposes.
    pub fn from_upper(
        z_tt: CMatrix,
        z_tr: CMatrix,
        z_ts: CMatrix,
        z_rr: CMatrix,
        z_rs: CMatrix,
        z_ss: CMatrix,
        ports: PortMap,
    ) -> Self {
        Self {
            z_rt: z_tr.transpose(),
            z_st: z_ts.transpose(),
            z_sr: z_rs.transpose(),
            z_tt,
            z_tr,
            z_ts,
            z_rr,
            z_rs,
            z_ss,
            ports,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.z_tt.nrows(), self.z_rr.nrows(), self.z_ss.nrows())
    }

    /// The full `N x N` matrix in Tx, Rx, RIS order.
    pub fn full(&self) -> CMatrix {
        let (nt, nr, ns) = self.dims();
        let n = nt + nr + ns;
        let mut z = CMatrix::zeros(n, n);
        let offsets = [0, nt, nt + nr];
        let blocks = [
            [&self.z_tt, &self.z_tr, &self.z_ts],
            [&self.z_rt, &self.z_rr, &self.z_rs],
            [&self.z_st, &self.z_sr, &self.z_ss],
        ];
        for (bi, row) in blocks.iter().enumerate() {
            for (bj, block) in row.iter().enumerate() {
                z.view_mut((offsets[bi], offsets[bj]), (block.nrows(), block.ncols()))
                    .copy_from(*block);
            }
        }
        z
    }

    /// Swaps the roles of the Tx and Rx partitions.
    pub fn swap_tx_rx(&self) -> Self {
        Self {
            z_tt: self.z_rr.clone(),
            z_tr: self.z_rt.clone(),
            z_ts: self.z_rs.clone(),
            z_rt: self.z_tr.clone(),
            z_rr: self.z_tt.clone(),
            z_rs: self.z_ts.clone(),
            z_st: self.z_sr.clone(),
            z_sr: self.z_st.clone(),
            z_ss: self.z_ss.clone(),
            ports: PortMap {
                tx: self.ports.rx.clone(),
                rx: self.ports.tx.clone(),
                ris: self.ports.ris.clone(),
            },
        }
    }

    /// Largest relative deviation from the reciprocity relations.
    pub fn reciprocity_error(&self) -> f64 {
        let z = self.full();
        crate::linalg::max_rel_diff(&z.transpose(), &z)
    }

    /// Writes the binary dump: three little-endian `u64` partition sizes
    /// followed by the full matrix as row-major `(re, im)` `f64` pairs.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let (nt, nr, ns) = self.dims();
        for d in [nt, nr, ns] {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let z = self.full();
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                out.write_all(&z[(i, j)].re.to_le_bytes())?;
                out.write_all(&z[(i, j)].im.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Reads a dump written by [`PartitionedZ::write_dump`], returning the sizes
/// and the full matrix.
pub fn read_dump<R: Read>(mut input: R) -> Result<((usize, usize, usize), CMatrix)> {
    let mut word = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        input.read_exact(&mut word)?;
        *d = u64::from_le_bytes(word) as usize;
    }
    let n = dims.iter().sum();
    let mut z = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            input.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            input.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            z[(i, j)] = C64::new(re, im);
        }
    }
    Ok(((dims[0], dims[1], dims[2]), z))
}

/// Assembles all nine blocks of the scene impedance matrix.
pub fn assemble_partitioned(scene: &Scene) -> Result<PartitionedZ> {
    let t = KernelContext::for_group(scene, Group::Tx)?;
    let r = KernelContext::for_group(scene, Group::Rx)?;
    let s = KernelContext::for_group(scene, Group::Ris)?;
    let (nt, nr) = (t.len(), r.len());
    let relabel = |e: Error, row_off: usize, col_off: usize| match e {
        Error::KernelSingularity { m, n, distance } => Error::KernelSingularity {
            m: m + row_off,
            n: n + col_off,
            distance,
        },
        other => other,
    };
    let z_tt = assemble_self_block(&t).map_err(|e| relabel(e, 0, 0))?;
    let z_rr = assemble_self_block(&r).map_err(|e| relabel(e, nt, nt))?;
    let z_ss = assemble_self_block(&s).map_err(|e| relabel(e, nt + nr, nt + nr))?;
    let z_tr = assemble_cross_block(&t, &r).map_err(|e| relabel(e, 0, nt))?;
    let z_ts = assemble_cross_block(&t, &s).map_err(|e| relabel(e, 0, nt + nr))?;
    let z_rs = assemble_cross_block(&r, &s).map_err(|e| relabel(e, nt, nt + nr))?;
    Ok(PartitionedZ::from_upper(
        z_tt,
        z_tr,
        z_ts,
        z_rr,
        z_rs,
        z_ss,
        PortMap::from_scene(scene)?,
    ))
}

/// Load impedance on a RIS port.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PortLoad {
    Impedance(C64),
    /// Exact open circuit; the port basis is removed from the system.
    Open,
}

/// Diagonal load matrices of the three partitions. Open RIS ports are kept
/// as an index set instead of a large finite impedance.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadMatrices {
    pub zl_tt: CVector,
    pub zl_rr: CVector,
    pub zl_ss: CVector,
    /// Local RIS indices of open-circuited ports, ascending.
    pub open_ss: Vec<usize>,
}

impl LoadMatrices {
    /// Places `tx_load` and `rx_load` on every Tx/Rx port and `ris_loads`
    /// (one per RIS element, grid order) on the RIS ports.
    pub fn from_ports(zp: &PartitionedZ, tx_load: C64, rx_load: C64, ris_loads: &[PortLoad]) -> Result<Self> {
        let (nt, nr, ns) = zp.dims();
        if ris_loads.len() != zp.ports.ris.len() {
            return Err(Error::Dimension {
                context: "RIS port loads".into(),
                expected: zp.ports.ris.len(),
                found: ris_loads.len(),
            });
        }
        let mut zl_tt = CVector::zeros(nt);
        let mut zl_rr = CVector::zeros(nr);
        let mut zl_ss = CVector::zeros(ns);
        let mut open_ss = Vec::new();
        for &p in &zp.ports.tx {
            zl_tt[p] = tx_load;
        }
        for &p in &zp.ports.rx {
            zl_rr[p] = rx_load;
        }
        for (&p, load) in zp.ports.ris.iter().zip(ris_loads) {
            match load {
                PortLoad::Impedance(z) => zl_ss[p] = *z,
                PortLoad::Open => open_ss.push(p),
            }
        }
        open_ss.sort_unstable();
        let loads = Self {
            zl_tt,
            zl_rr,
            zl_ss,
            open_ss,
        };
        loads.validate(zp)?;
        Ok(loads)
    }

    /// Checks dimensions, passivity, and that loads only sit on ports.
    pub fn validate(&self, zp: &PartitionedZ) -> Result<()> {
        let (nt, nr, ns) = zp.dims();
        for (name, v, n, ports) in [
            ("Tx loads", &self.zl_tt, nt, &zp.ports.tx),
            ("Rx loads", &self.zl_rr, nr, &zp.ports.rx),
            ("RIS loads", &self.zl_ss, ns, &zp.ports.ris),
        ] {
            if v.len() != n {
                return Err(Error::Dimension {
                    context: name.into(),
                    expected: n,
                    found: v.len(),
                });
            }
            for (i, z) in v.iter().enumerate() {
                if z.re < 0.0 {
                    return Err(Error::Config(format!("{name}: negative resistance at basis {i}")));
                }
                if *z != C64::new(0.0, 0.0) && !ports.contains(&i) {
                    return Err(Error::Config(format!("{name}: load on non-port basis {i}")));
                }
            }
        }
        if self.open_ss.iter().any(|i| !zp.ports.ris.contains(i)) {
            return Err(Error::Config("open circuit on a non-port RIS basis".into()));
        }
        Ok(())
    }
}

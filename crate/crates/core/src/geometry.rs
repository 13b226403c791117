//! Wire-equivalent meshing of planar dipoles, rectangular loops, antenna
//! arrays and the RIS grid.
//!
//! All lengths are in wavelengths. Planar strips of width `w` are replaced by
//! round wires of equivalent radius `w / 4`.
//!
//! Every basis function is a piecewise-sinusoidal "tent" spanning two wire
//! segments that meet at one node. A dipole meshed with `n` bases uses `n + 1`
//! segments, so an odd `n` puts the centre basis (the feed) exactly at the
//! middle of the wire. Closed loops have as many bases as segments.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Shared-endpoint tolerance used when checking basis adjacency.
pub const NODE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct WireSegment {
    pub start: Point,
    pub end: Point,
    pub radius: f64,
}

impl WireSegment {
    pub fn new(start: Point, end: Point, radius: f64) -> Result<Self> {
        let seg = Self { start, end, radius };
        let len = seg.length();
        if !(len > 0.0) {
            return Err(Error::Geometry("segment has zero length".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::Geometry(format!("segment radius {radius} must be positive")));
        }
        if radius >= len / 2.0 {
            return Err(Error::Geometry(format!(
                "thin-wire limit violated: radius {radius} >= half the segment length {len}"
            )));
        }
        Ok(seg)
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn direction(&self) -> Point {
        (self.end - self.start) / self.length()
    }

    pub fn midpoint(&self) -> Point {
        0.5 * (self.start + self.end)
    }

    fn translated(&self, offset: &Point) -> Self {
        Self {
            start: self.start + offset,
            end: self.end + offset,
            radius: self.radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Tx,
    Rx,
    Ris,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Tx => "TX",
            Group::Rx => "RX",
            Group::Ris => "RIS",
        }
    }
}

/// A tent basis over two adjacent segments; current flows along
/// `segments[0]` into the shared node and out along `segments[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisFunction {
    pub segments: [usize; 2],
    pub is_port: bool,
    pub group: Group,
    pub element_id: usize,
}

/// One half of a tent basis: a straight segment carrying a sinusoidal
/// current that is zero at one end and one at the other.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfBasis {
    pub origin: Point,
    pub dir: Point,
    pub length: f64,
    pub radius: f64,
    /// Rising halves start at zero current at `origin`; falling halves
    /// start at the basis peak.
    pub rising: bool,
}

impl HalfBasis {
    pub fn point(&self, s: f64) -> Point {
        self.origin + self.dir * s
    }

    pub fn end(&self) -> Point {
        self.point(self.length)
    }

    /// Image in a PEC plane at `z = plane_z`. The current direction is
    /// mirrored; the sign flip of the image current is applied by the caller.
    pub fn mirrored(&self, plane_z: f64) -> Self {
        let mut origin = self.origin;
        origin.z = 2.0 * plane_z - origin.z;
        let mut dir = self.dir;
        dir.z = -dir.z;
        Self { origin, dir, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureMesh {
    pub segments: Vec<WireSegment>,
    pub bases: Vec<BasisFunction>,
    pub port_basis_index: Option<usize>,
}

impl StructureMesh {
    /// Re-tags every basis with the given role.
    pub fn with_role(mut self, group: Group, element_id: usize) -> Self {
        for b in &mut self.bases {
            b.group = group;
            b.element_id = element_id;
        }
        self
    }

    pub fn translated(&self, offset: &Point) -> Self {
        Self {
            segments: self.segments.iter().map(|s| s.translated(offset)).collect(),
            bases: self.bases.clone(),
            port_basis_index: self.port_basis_index,
        }
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(WireSegment::length).sum()
    }

    pub fn center(&self) -> Point {
        let sum = self
            .segments
            .iter()
            .fold(Point::zeros(), |acc, s| acc + s.midpoint() * s.length());
        sum / self.total_length()
    }

    /// Splits basis `i` into its two halves, checking that the segments share
    /// exactly one endpoint.
    pub fn basis_halves(&self, i: usize) -> Result<[HalfBasis; 2]> {
        let b = &self.bases[i];
        let a = &self.segments[b.segments[0]];
        let c = &self.segments[b.segments[1]];
        let close = |p: &Point, q: &Point| (p - q).norm() <= NODE_TOLERANCE;
        let candidates = [
            (a.start, a.end, c.start, c.end),
            (a.start, a.end, c.end, c.start),
            (a.end, a.start, c.start, c.end),
            (a.end, a.start, c.end, c.start),
        ];
        let mut shared = candidates
            .iter()
            .filter(|(_, a_near, c_near, _)| close(a_near, c_near));
        let (tail, center, _, head) = match (shared.next(), shared.next()) {
            (Some(found), None) => *found,
            _ => {
                return Err(Error::Geometry(format!(
                    "basis {i}: segments {:?} do not share exactly one endpoint",
                    b.segments
                )))
            }
        };
        let rising_len = (center - tail).norm();
        let falling_len = (head - center).norm();
        Ok([
            HalfBasis {
                origin: tail,
                dir: (center - tail) / rising_len,
                length: rising_len,
                radius: a.radius,
                rising: true,
            },
            HalfBasis {
                origin: center,
                dir: (head - center) / falling_len,
                length: falling_len,
                radius: c.radius,
                rising: false,
            },
        ])
    }

    fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for s in &self.segments {
            for p in [s.start, s.end] {
                lo = lo.inf(&(p - Point::repeat(s.radius)));
                hi = hi.sup(&(p + Point::repeat(s.radius)));
            }
        }
        (lo, hi)
    }
}

/// Straight dipole along `axis` centred on `center`, meshed with `n_bases`
/// tent functions (odd, at least 3) over `n_bases + 1` equal segments.
/// The centre basis carries the port.
pub fn mesh_dipole(
    length: f64,
    strip_width: f64,
    n_bases: usize,
    center: Point,
    axis: Point,
) -> Result<StructureMesh> {
    if n_bases < 3 || n_bases.is_multiple_of(2) {
        return Err(Error::Geometry(format!(
            "dipole basis count must be odd and at least 3, got {n_bases}"
        )));
    }
    if !(length > 0.0) || !(strip_width > 0.0) {
        return Err(Error::Geometry("dipole length and width must be positive".into()));
    }
    let axis_norm = axis.norm();
    if !(axis_norm > 0.0) {
        return Err(Error::Geometry("dipole axis must be non-zero".into()));
    }
    let axis = axis / axis_norm;
    let radius = strip_width / 4.0;
    let n_seg = n_bases + 1;
    let node = |i: usize| center + axis * (length * (i as f64 / n_seg as f64 - 0.5));
    let segments = (0..n_seg)
        .map(|i| WireSegment::new(node(i), node(i + 1), radius))
        .collect::<Result<Vec<_>>>()?;
    let port = n_bases / 2;
    let bases = (0..n_bases)
        .map(|j| BasisFunction {
            segments: [j, j + 1],
            is_port: j == port,
            group: Group::Ris,
            element_id: 0,
        })
        .collect();
    Ok(StructureMesh {
        segments,
        bases,
        port_basis_index: Some(port),
    })
}

/// Closed rectangular loop in the plane `z = center.z` with sides `side_a`
/// (along x) and `side_b` (along y). The port sits on the side facing +x,
/// parallel to the y-directed Tx/Rx dipoles, at the node nearest its
/// midpoint (exactly at the midpoint for even `n_per_side`). On the sides
/// along x the induced current vanishes at the midpoint under y-polarised
/// illumination, so a load there would have no effect.
pub fn mesh_loop(
    side_a: f64,
    side_b: f64,
    strip_width: f64,
    n_per_side: usize,
    center: Point,
) -> Result<StructureMesh> {
    if !(side_a > 0.0) || !(side_b > 0.0) {
        return Err(Error::Geometry("loop sides must be positive".into()));
    }
    if n_per_side < 2 {
        return Err(Error::Geometry(format!(
            "loop needs at least 2 segments per side, got {n_per_side}"
        )));
    }
    if !(strip_width > 0.0) {
        return Err(Error::Geometry("loop strip width must be positive".into()));
    }
    let radius = strip_width / 4.0;
    let corners = [
        Point::new(-side_a / 2.0, -side_b / 2.0, 0.0),
        Point::new(side_a / 2.0, -side_b / 2.0, 0.0),
        Point::new(side_a / 2.0, side_b / 2.0, 0.0),
        Point::new(-side_a / 2.0, side_b / 2.0, 0.0),
    ];
    let n_seg = 4 * n_per_side;
    let node = |i: usize| {
        let side = (i / n_per_side) % 4;
        let frac = (i % n_per_side) as f64 / n_per_side as f64;
        let p = corners[side] + (corners[(side + 1) % 4] - corners[side]) * frac;
        center + p
    };
    let segments = (0..n_seg)
        .map(|i| WireSegment::new(node(i), node((i + 1) % n_seg), radius))
        .collect::<Result<Vec<_>>>()?;
    // Basis j is centred on node j, between segment j-1 and segment j.
    let port = n_per_side + n_per_side / 2;
    let bases = (0..n_seg)
        .map(|j| BasisFunction {
            segments: [(j + n_seg - 1) % n_seg, j],
            is_port: j == port,
            group: Group::Ris,
            element_id: 0,
        })
        .collect();
    Ok(StructureMesh {
        segments,
        bases,
        port_basis_index: Some(port),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Dipole,
    Loop,
}

/// A uniform linear array of y-directed dipoles laid out along x.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayParams {
    pub count: usize,
    pub spacing: f64,
    pub length: f64,
    pub strip_width: f64,
}

/// Named geometric parameters of a scene (all lengths in wavelengths).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub element_kind: ElementKind,
    /// RIS dipole length `l`.
    pub ris_length: f64,
    /// RIS strip width `w`.
    pub ris_width: f64,
    pub loop_a: f64,
    pub loop_b: f64,
    pub dx: f64,
    pub dy: f64,
    /// Height of the RIS above the ground plane.
    pub h: f64,
    pub mx: usize,
    pub my: usize,
    pub tx: ArrayParams,
    pub rx: ArrayParams,
    pub r_t: Point,
    pub r_r: Point,
    pub ground_plane: bool,
    pub n_bases_dipole: usize,
    pub n_per_side_loop: usize,
}

impl SceneParams {
    /// Dipole-RIS layout with the reference dimensions.
    pub fn dipole_default() -> Self {
        Self {
            element_kind: ElementKind::Dipole,
            ris_length: 0.5,
            ris_width: 0.01,
            loop_a: 0.4,
            loop_b: 0.4,
            dx: 0.5,
            dy: 0.7,
            h: 0.25,
            mx: 11,
            my: 11,
            tx: ArrayParams {
                count: 2,
                spacing: 0.5,
                length: 0.5,
                strip_width: 0.01,
            },
            rx: ArrayParams {
                count: 2,
                spacing: 0.5,
                length: 0.5,
                strip_width: 0.01,
            },
            r_t: Point::new(0.0, 0.0, 5.0),
            r_r: rx_position(10.0, 30.0),
            ground_plane: true,
            n_bases_dipole: 7,
            n_per_side_loop: 4,
        }
    }

    /// Loop-RIS layout with the reference dimensions.
    pub fn loop_default() -> Self {
        Self {
            element_kind: ElementKind::Loop,
            dx: 0.6,
            dy: 0.6,
            ..Self::dipole_default()
        }
    }

    pub fn with_rx_at(&self, distance: f64, theta_deg: f64) -> Self {
        Self {
            r_r: rx_position(distance, theta_deg),
            ..self.clone()
        }
    }

    /// Diagonal of the RIS measured between the outermost element centres.
    pub fn ris_diagonal(&self) -> f64 {
        let wx = (self.mx.saturating_sub(1)) as f64 * self.dx;
        let wy = (self.my.saturating_sub(1)) as f64 * self.dy;
        wx.hypot(wy)
    }

    /// `2 D^2 / lambda` for the RIS aperture.
    pub fn far_field_boundary(&self) -> f64 {
        2.0 * self.ris_diagonal().powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ris_length", self.ris_length),
            ("ris_width", self.ris_width),
            ("loop_a", self.loop_a),
            ("loop_b", self.loop_b),
            ("dx", self.dx),
            ("dy", self.dy),
            ("h", self.h),
            ("tx.spacing", self.tx.spacing),
            ("tx.length", self.tx.length),
            ("tx.strip_width", self.tx.strip_width),
            ("rx.spacing", self.rx.spacing),
            ("rx.length", self.rx.length),
            ("rx.strip_width", self.rx.strip_width),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Geometry(format!("{name} must be positive, got {value}")));
            }
        }
        let counts = [
            ("mx", self.mx),
            ("my", self.my),
            ("tx.count", self.tx.count),
            ("rx.count", self.rx.count),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Geometry(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Receiver array centre for distance `r` and angle `theta_deg` from the
/// RIS broadside normal, in the x-z plane.
pub fn rx_position(r: f64, theta_deg: f64) -> Point {
    let t = theta_deg.to_radians();
    Point::new(r * t.sin(), 0.0, r * t.cos())
}

/// Tx array, Rx array and RIS grid over an optional PEC ground plane at
/// `z = -h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub tx_meshes: Vec<StructureMesh>,
    pub rx_meshes: Vec<StructureMesh>,
    /// Row-major `my x mx` grid.
    pub ris_meshes: Vec<StructureMesh>,
    pub ground_plane: bool,
    pub r_t: Point,
    pub r_r: Point,
    pub dims: SceneParams,
}

/// A basis of the whole scene with its geometry resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBasis {
    pub group: Group,
    pub element_id: usize,
    pub is_port: bool,
    pub halves: [HalfBasis; 2],
}

impl Scene {
    pub fn ground_z(&self) -> Option<f64> {
        self.ground_plane.then_some(-self.dims.h)
    }

    pub fn meshes(&self, group: Group) -> &[StructureMesh] {
        match group {
            Group::Tx => &self.tx_meshes,
            Group::Rx => &self.rx_meshes,
            Group::Ris => &self.ris_meshes,
        }
    }

    /// Bases of one partition in assembly order.
    pub fn group_bases(&self, group: Group) -> Result<Vec<SceneBasis>> {
        let mut out = Vec::new();
        for mesh in self.meshes(group) {
            for (i, b) in mesh.bases.iter().enumerate() {
                out.push(SceneBasis {
                    group: b.group,
                    element_id: b.element_id,
                    is_port: b.is_port,
                    halves: mesh.basis_halves(i)?,
                });
            }
        }
        Ok(out)
    }

    /// All bases, ordered Tx, Rx, RIS.
    pub fn bases(&self) -> Result<Vec<SceneBasis>> {
        let mut all = self.group_bases(Group::Tx)?;
        all.extend(self.group_bases(Group::Rx)?);
        all.extend(self.group_bases(Group::Ris)?);
        Ok(all)
    }

    pub fn basis_count(&self, group: Group) -> usize {
        self.meshes(group).iter().map(|m| m.bases.len()).sum()
    }

    pub fn ris_centers(&self) -> Vec<Point> {
        self.ris_meshes.iter().map(StructureMesh::center).collect()
    }

    pub fn port_count(&self) -> usize {
        [Group::Tx, Group::Rx, Group::Ris]
            .iter()
            .flat_map(|g| self.meshes(*g))
            .flat_map(|m| &m.bases)
            .filter(|b| b.is_port)
            .count()
    }

    /// Writes one CSV row per segment.
    pub fn write_mesh_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "x1_lambda",
            "y1_lambda",
            "z1_lambda",
            "x2_lambda",
            "y2_lambda",
            "z2_lambda",
            "radius_lambda",
            "group",
            "element_id",
            "is_port",
        ])?;
        for group in [Group::Tx, Group::Rx, Group::Ris] {
            for (element, mesh) in self.meshes(group).iter().enumerate() {
                let port_segments: Vec<usize> = mesh
                    .bases
                    .iter()
                    .filter(|b| b.is_port)
                    .flat_map(|b| b.segments)
                    .collect();
                for (i, s) in mesh.segments.iter().enumerate() {
                    w.write_record([
                        s.start.x.to_string(),
                        s.start.y.to_string(),
                        s.start.z.to_string(),
                        s.end.x.to_string(),
                        s.end.y.to_string(),
                        s.end.z.to_string(),
                        s.radius.to_string(),
                        group.label().to_string(),
                        element.to_string(),
                        u8::from(port_segments.contains(&i)).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn dipole_array(params: &ArrayParams, center: Point, n_bases: usize, group: Group) -> Result<Vec<StructureMesh>> {
    let base = mesh_dipole(params.length, params.strip_width, n_bases, Point::zeros(), Point::y())?;
    Ok((0..params.count)
        .map(|i| {
            let x = (i as f64 - (params.count as f64 - 1.0) / 2.0) * params.spacing;
            base.translated(&(center + Point::new(x, 0.0, 0.0)))
                .with_role(group, i)
        })
        .collect())
}

/// Builds the RIS grid at `z = 0`, the Tx array at `r_t` and the Rx array at
/// `r_r`, all dipoles oriented along y.
pub fn build_scene(params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let element = match params.element_kind {
        ElementKind::Dipole => mesh_dipole(
            params.ris_length,
            params.ris_width,
            params.n_bases_dipole,
            Point::zeros(),
            Point::y(),
        )?,
        ElementKind::Loop => mesh_loop(
            params.loop_a,
            params.loop_b,
            params.ris_width,
            params.n_per_side_loop,
            Point::zeros(),
        )?,
    };
    let mut ris_meshes = Vec::with_capacity(params.mx * params.my);
    for m in 0..params.my {
        for n in 0..params.mx {
            let x = (n as f64 - (params.mx as f64 - 1.0) / 2.0) * params.dx;
            let y = (m as f64 - (params.my as f64 - 1.0) / 2.0) * params.dy;
            ris_meshes.push(
                element
                    .translated(&Point::new(x, y, 0.0))
                    .with_role(Group::Ris, m * params.mx + n),
            );
        }
    }
    let scene = Scene {
        tx_meshes: dipole_array(&params.tx, params.r_t, params.n_bases_dipole, Group::Tx)?,
        rx_meshes: dipole_array(&params.rx, params.r_r, params.n_bases_dipole, Group::Rx)?,
        ris_meshes,
        ground_plane: params.ground_plane,
        r_t: params.r_t,
        r_r: params.r_r,
        dims: params.clone(),
    };
    check_clearance(&scene)?;
    Ok(scene)
}

fn check_clearance(scene: &Scene) -> Result<()> {
    let all: Vec<(&'static str, usize, &StructureMesh)> = [Group::Tx, Group::Rx, Group::Ris]
        .iter()
        .flat_map(|g| {
            scene
                .meshes(*g)
                .iter()
                .enumerate()
                .map(move |(i, m)| (g.label(), i, m))
        })
        .collect();
    if let Some(plane) = scene.ground_z() {
        for (label, i, mesh) in &all {
            let (lo, _) = mesh.bounding_box();
            if lo.z <= plane {
                return Err(Error::Geometry(format!(
                    "{label} element {i} is not above the ground plane at z = {plane}"
                )));
            }
        }
    }
    let boxes: Vec<_> = all.iter().map(|(_, _, m)| m.bounding_box()).collect();
    for a in 0..all.len() {
        for b in a + 1..all.len() {
            let (lo_a, hi_a) = boxes[a];
            let (lo_b, hi_b) = boxes[b];
            let disjoint = (0..3).any(|k| hi_a[k] < lo_b[k] || hi_b[k] < lo_a[k]);
            if disjoint {
                continue;
            }
            for sa in &all[a].2.segments {
                for sb in &all[b].2.segments {
                    let d = segment_distance(&sa.start, &sa.end, &sb.start, &sb.end);
                    if d < sa.radius + sb.radius {
                        return Err(Error::Geometry(format!(
                            "overlapping conductors: {} element {} and {} element {} are {d:.3e} apart",
                            all[a].0, all[a].1, all[b].0, all[b].1
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Minimum distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_distance(p0: &Point, p1: &Point, q0: &Point, q1: &Point) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > f64::EPSILON * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

//! URDF subset parsing and forward kinematics for serial chains.
//!
//! Only `<link><inertial>`, revolute/fixed `<joint>`s with `<origin>`,
//! `<axis>` and `<limit>` are read. Fixed joints are folded away: a link
//! rigidly attached to a moving link contributes its inertia to that link,
//! and its transform is composed into the next joint origin.

use std::collections::{BTreeSet, HashMap};

use log::{info, warn};
use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Velocity limit assumed when a `<limit>` element has no `velocity`.
pub const DEFAULT_VELOCITY_LIMIT: f64 = 1.0;

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub q_min: f64,
    pub q_max: f64,
    pub dq_min: f64,
    pub dq_max: f64,
}

impl JointLimits {
    /// Half-width of the position interval around `offset`, i.e. the largest
    /// symmetric excursion that stays inside the limits.
    pub fn range_about(&self, offset: f64) -> f64 {
        (self.q_max - offset).min(offset - self.q_min)
    }

    /// Largest speed allowed in both directions.
    pub fn speed(&self) -> f64 {
        self.dq_max.min(-self.dq_min)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.q_min + self.q_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    /// Parent-link frame to joint frame.
    pub origin: Isometry3<f64>,
    pub axis: Vector3<f64>,
    pub limits: Option<JointLimits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Inertia about the center of mass, expressed in the link frame.
    pub inertia: Matrix3<f64>,
    pub has_inertial: bool,
}

/// A moving rigid body of the folded chain: the child link of a revolute
/// joint together with every link fixed to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub joint: String,
    pub link: String,
    /// Previous body frame (world for the first body) to this body's frame
    /// at zero joint angle.
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub limits: JointLimits,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub name: String,
    /// All joints, root to tip.
    pub joints: Vec<JointSpec>,
    /// All links, root to tip.
    pub links: Vec<LinkSpec>,
    /// Moving bodies, one per revolute joint.
    pub bodies: Vec<Body>,
    /// Last body frame to the tip link frame (trailing fixed joints).
    pub tip: Isometry3<f64>,
    pub gravity: Vector3<f64>,
    pub dof: usize,
}

fn parse_floats(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split_whitespace().map(|s| s.parse::<f64>().map_err(|_| Error::Urdf(format!("bad number `{s}` in {what}")))).collect()
}

fn parse_vec3(text: &str, what: &str) -> Result<Vector3<f64>> {
    let v = parse_floats(text, what)?;
    if v.len() != 3 {
        return Err(Error::Urdf(format!("{what} needs 3 numbers, got {}", v.len())));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn parse_origin(node: Option<roxmltree::Node<'_, '_>>, what: &str) -> Result<Isometry3<f64>> {
    let Some(node) = node else {
        return Ok(Isometry3::identity());
    };
    let xyz = match node.attribute("xyz") {
        Some(s) => parse_vec3(s, what)?,
        None => Vector3::zeros(),
    };
    let rpy = match node.attribute("rpy") {
        Some(s) => parse_vec3(s, what)?,
        None => Vector3::zeros(),
    };
    Ok(Isometry3::from_parts(Translation3::from(xyz), UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z)))
}

fn child<'a, 'input>(node: roxmltree::Node<'a, 'input>, tag: &str) -> Option<roxmltree::Node<'a, 'input>> {
    node.children().find(|c| c.is_element() && c.has_tag_name(tag))
}

fn attr_f64(node: roxmltree::Node<'_, '_>, name: &str, what: &str) -> Result<Option<f64>> {
    node.attribute(name).map(|s| s.trim().parse::<f64>().map_err(|_| Error::Urdf(format!("bad `{name}` in {what}")))).transpose()
}

fn parse_link(node: roxmltree::Node<'_, '_>, ignored: &mut BTreeSet<String>) -> Result<LinkSpec> {
    let name = node.attribute("name").ok_or_else(|| Error::Urdf("link without name".into()))?.to_string();
    for c in node.children().filter(|c| c.is_element()) {
        if !c.has_tag_name("inertial") {
            ignored.insert(format!("link/{}", c.tag_name().name()));
        }
    }
    let Some(inertial) = child(node, "inertial") else {
        return Ok(LinkSpec { name, mass: 0.0, com: Vector3::zeros(), inertia: Matrix3::zeros(), has_inertial: false });
    };
    let what = format!("inertial of link `{name}`");
    let frame = parse_origin(child(inertial, "origin"), &what)?;
    let mass = child(inertial, "mass").map(|m| attr_f64(m, "value", &what)).transpose()?.flatten().unwrap_or(0.0);
    if !(mass >= 0.0) || !mass.is_finite() {
        return Err(Error::Urdf(format!("negative or non-finite mass in {what}")));
    }
    let mut inertia = Matrix3::zeros();
    if let Some(i) = child(inertial, "inertia") {
        let get = |k: &str| -> Result<f64> { Ok(attr_f64(i, k, &what)?.unwrap_or(0.0)) };
        let (ixx, ixy, ixz, iyy, iyz, izz) = (get("ixx")?, get("ixy")?, get("ixz")?, get("iyy")?, get("iyz")?, get("izz")?);
        inertia = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
    }
    // The inertia tensor is given in the inertial frame; rotate it into the
    // link frame.
    let r = frame.rotation.to_rotation_matrix();
    let inertia = r.matrix() * inertia * r.matrix().transpose();
    let inertia = 0.5 * (inertia + inertia.transpose());
    check_physical(&name, mass, &inertia);
    Ok(LinkSpec { name, mass, com: frame.translation.vector, inertia, has_inertial: true })
}

fn check_physical(link: &str, mass: f64, inertia: &Matrix3<f64>) {
    if mass == 0.0 && inertia.norm() == 0.0 {
        return;
    }
    let eig = inertia.symmetric_eigenvalues();
    let tol = 1e-12 * eig.amax().max(1.0);
    let mut bad = eig.iter().any(|&l| l < -tol);
    for k in 0..3 {
        if eig[k] > eig[(k + 1) % 3] + eig[(k + 2) % 3] + tol {
            bad = true;
        }
    }
    if bad {
        warn!("link `{link}`: inertia violates positivity/triangle inequalities ({eig:?})");
    }
}

fn parse_joint(node: roxmltree::Node<'_, '_>) -> Result<JointSpec> {
    let name = node.attribute("name").ok_or_else(|| Error::Urdf("joint without name".into()))?.to_string();
    let kind_attr = node.attribute("type").unwrap_or("");
    let limit = child(node, "limit");
    let kind = match kind_attr {
        "revolute" => JointKind::Revolute,
        "fixed" => JointKind::Fixed,
        "continuous" if limit.is_some_and(|l| l.has_attribute("lower") && l.has_attribute("upper")) => JointKind::Revolute,
        other => return Err(Error::UnsupportedJoint { joint: name, kind: other.to_string() }),
    };
    let link_attr = |tag: &str| -> Result<String> {
        child(node, tag)
            .and_then(|c| c.attribute("link"))
            .map(str::to_string)
            .ok_or_else(|| Error::Urdf(format!("joint `{name}` has no {tag} link")))
    };
    let parent = link_attr("parent")?;
    let child_link = link_attr("child")?;
    let what = format!("joint `{name}`");
    let origin = parse_origin(child(node, "origin"), &what)?;
    let axis = match child(node, "axis").and_then(|a| a.attribute("xyz")) {
        Some(s) => parse_vec3(s, &what)?,
        None => Vector3::x(),
    };
    let norm = axis.norm();
    if !(norm > 1e-12) {
        return Err(Error::Urdf(format!("zero axis on {what}")));
    }
    let axis = axis / norm;

    let limits = if kind == JointKind::Revolute {
        let l = limit.ok_or_else(|| Error::Urdf(format!("revolute {what} has no <limit>")))?;
        let q_min = attr_f64(l, "lower", &what)?.ok_or_else(|| Error::Urdf(format!("{what}: missing lower limit")))?;
        let q_max = attr_f64(l, "upper", &what)?.ok_or_else(|| Error::Urdf(format!("{what}: missing upper limit")))?;
        let vel = match attr_f64(l, "velocity", &what)? {
            Some(v) => v,
            None => {
                info!("{what}: no velocity limit, using ±{DEFAULT_VELOCITY_LIMIT} rad/s");
                DEFAULT_VELOCITY_LIMIT
            }
        };
        if !(q_min.is_finite() && q_max.is_finite() && q_min < q_max) {
            return Err(Error::Urdf(format!("{what}: position limits must satisfy lower < upper")));
        }
        if !(vel.is_finite() && vel > 0.0) {
            return Err(Error::Urdf(format!("{what}: velocity limit must be positive")));
        }
        Some(JointLimits { q_min, q_max, dq_min: -vel, dq_max: vel })
    } else {
        None
    };

    Ok(JointSpec { name, kind, parent, child: child_link, origin, axis, limits })
}

/// Accumulates rigidly attached links into one body.
#[derive(Default)]
struct MassAccumulator {
    parts: Vec<(f64, Vector3<f64>, Matrix3<f64>)>,
}

impl MassAccumulator {
    fn add(&mut self, link: &LinkSpec, frame: &Isometry3<f64>) {
        if !link.has_inertial {
            return;
        }
        let r = frame.rotation.to_rotation_matrix();
        let com = frame * nalgebra::Point3::from(link.com);
        let inertia = r.matrix() * link.inertia * r.matrix().transpose();
        self.parts.push((link.mass, com.coords, inertia));
    }

    fn finish(self) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let mass: f64 = self.parts.iter().map(|p| p.0).sum();
        let com = if mass > 0.0 {
            self.parts.iter().map(|p| p.0 * p.1).sum::<Vector3<f64>>() / mass
        } else {
            self.parts.first().map(|p| p.1).unwrap_or_else(Vector3::zeros)
        };
        let mut inertia = Matrix3::zeros();
        for (m, c, i) in &self.parts {
            let d = c - com;
            inertia += i + *m * (d.norm_squared() * Matrix3::identity() - d * d.transpose());
        }
        (mass, com, inertia)
    }
}

/// Parses a URDF document into a serial chain ordered root to tip.
pub fn parse_urdf(xml_text: &str) -> Result<KinematicChain> {
    let doc = roxmltree::Document::parse(xml_text)?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(Error::Urdf(format!("root element is <{}>, expected <robot>", robot.tag_name().name())));
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();

    let mut ignored = BTreeSet::new();
    let mut links = HashMap::new();
    let mut joints = Vec::new();
    for node in robot.children().filter(|c| c.is_element()) {
        match node.tag_name().name() {
            "link" => {
                let link = parse_link(node, &mut ignored)?;
                links.insert(link.name.clone(), link);
            }
            "joint" => joints.push(parse_joint(node)?),
            other => {
                ignored.insert(other.to_string());
            }
        }
    }
    for tag in &ignored {
        warn!("ignoring URDF element <{tag}>");
    }
    if links.is_empty() {
        return Err(Error::Urdf("no links".into()));
    }

    // Validate the tree shape before walking it.
    let mut by_parent: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut children = BTreeSet::new();
    for (k, j) in joints.iter().enumerate() {
        for l in [&j.parent, &j.child] {
            if !links.contains_key(l.as_str()) {
                return Err(Error::Urdf(format!("joint `{}` references unknown link `{l}`", j.name)));
            }
        }
        by_parent.entry(j.parent.as_str()).or_default().push(k);
        if !children.insert(j.child.as_str()) {
            return Err(Error::Urdf(format!("link `{}` has two parent joints", j.child)));
        }
    }
    for (parent, ks) in &by_parent {
        if ks.len() > 1 {
            return Err(Error::BranchedChain { link: parent.to_string(), joints: ks.iter().map(|&k| joints[k].name.clone()).collect() });
        }
    }
    let roots: Vec<&str> = links.keys().map(String::as_str).filter(|l| !children.contains(l)).collect();
    if roots.len() != 1 {
        let mut roots = roots;
        roots.sort_unstable();
        return Err(Error::Urdf(format!("expected exactly one root link, found {roots:?}")));
    }

    let mut ordered_joints = Vec::with_capacity(joints.len());
    let mut ordered_links = vec![links[roots[0]].clone()];
    let mut current = roots[0];
    while let Some(ks) = by_parent.get(current) {
        let j = &joints[ks[0]];
        ordered_links.push(links[&j.child].clone());
        ordered_joints.push(j.clone());
        current = j.child.as_str();
    }
    if ordered_links.len() != links.len() {
        return Err(Error::Urdf("links not connected to the root chain".into()));
    }

    // Fold fixed joints into the moving bodies.
    let mut bodies: Vec<Body> = Vec::new();
    let mut pending = Isometry3::identity();
    let mut acc = MassAccumulator::default();
    for (k, j) in ordered_joints.iter().enumerate() {
        let link = &ordered_links[k + 1];
        match j.kind {
            JointKind::Fixed => {
                pending *= j.origin;
                if !bodies.is_empty() {
                    acc.add(link, &pending);
                }
            }
            JointKind::Revolute => {
                if let Some(prev) = bodies.last_mut() {
                    let (mass, com, inertia) = std::mem::take(&mut acc).finish();
                    prev.mass = mass;
                    prev.com = com;
                    prev.inertia = inertia;
                }
                if !link.has_inertial {
                    return Err(Error::Urdf(format!("moving link `{}` has no <inertial> block", link.name)));
                }
                acc.add(link, &Isometry3::identity());
                bodies.push(Body {
                    joint: j.name.clone(),
                    link: link.name.clone(),
                    origin: pending * j.origin,
                    axis: Unit::new_normalize(j.axis),
                    limits: j.limits.expect("revolute joints carry limits"),
                    mass: 0.0,
                    com: Vector3::zeros(),
                    inertia: Matrix3::zeros(),
                });
                pending = Isometry3::identity();
            }
        }
    }
    if let Some(prev) = bodies.last_mut() {
        let (mass, com, inertia) = acc.finish();
        prev.mass = mass;
        prev.com = com;
        prev.inertia = inertia;
    }
    if bodies.is_empty() {
        return Err(Error::Urdf("chain has no revolute joint".into()));
    }

    let dof = bodies.len();
    Ok(KinematicChain {
        name,
        joints: ordered_joints,
        links: ordered_links,
        bodies,
        tip: pending,
        gravity: Vector3::from(DEFAULT_GRAVITY),
        dof,
    })
}

impl KinematicChain {
    pub fn from_urdf_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_urdf(&text)
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn limits(&self) -> impl Iterator<Item = &JointLimits> {
        self.bodies.iter().map(|b| &b.limits)
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.bodies.iter().map(|b| b.joint.clone()).collect()
    }

    pub(crate) fn check_len(&self, what: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.dof {
            return Err(Error::dim(what, self.dof, v.len()));
        }
        Ok(())
    }

    /// Body frame `i` relative to body frame `i - 1` at angle `q`.
    pub fn joint_transform(&self, i: usize, q: f64) -> Isometry3<f64> {
        let b = &self.bodies[i];
        b.origin * UnitQuaternion::from_axis_angle(&b.axis, q)
    }

    /// World poses of every moving body.
    pub fn link_frames(&self, q: &[f64]) -> Result<Vec<Isometry3<f64>>> {
        self.check_len("joint positions", q)?;
        let mut frames = Vec::with_capacity(self.dof);
        let mut acc = Isometry3::identity();
        for (i, &qi) in q.iter().enumerate() {
            acc *= self.joint_transform(i, qi);
            frames.push(acc);
        }
        Ok(frames)
    }

    /// Pose of the frame the end-effector geometry is expressed in. For the
    /// last body this includes the trailing fixed joints (flange, tool).
    pub fn ee_frame(&self, frames: &[Isometry3<f64>], ee_link: usize) -> Isometry3<f64> {
        if ee_link + 1 == self.dof {
            frames[ee_link] * self.tip
        } else {
            frames[ee_link]
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Canonical, human-readable dump with 4×4 row-major transforms.
    pub fn dump(&self) -> ChainDump {
        ChainDump {
            name: self.name.clone(),
            dof: self.dof,
            gravity: self.gravity.into(),
            joints: self
                .joints
                .iter()
                .map(|j| JointDump {
                    name: j.name.clone(),
                    kind: j.kind,
                    parent: j.parent.clone(),
                    child: j.child.clone(),
                    origin: row_major(&j.origin),
                    axis: j.axis.into(),
                    limits: j.limits,
                })
                .collect(),
            bodies: self
                .bodies
                .iter()
                .map(|b| BodyDump {
                    joint: b.joint.clone(),
                    link: b.link.clone(),
                    origin: row_major(&b.origin),
                    axis: b.axis.into_inner().into(),
                    limits: b.limits,
                    mass: b.mass,
                    com: b.com.into(),
                    inertia: row_major3(&b.inertia),
                })
                .collect(),
            tip: row_major(&self.tip),
        }
    }
}

pub fn row_major(iso: &Isometry3<f64>) -> [f64; 16] {
    let m = iso.to_homogeneous();
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[4 * r + c] = m[(r, c)];
        }
    }
    out
}

fn row_major3(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDump {
    pub name: String,
    pub dof: usize,
    pub gravity: [f64; 3],
    pub joints: Vec<JointDump>,
    pub bodies: Vec<BodyDump>,
    pub tip: [f64; 16],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointDump {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    pub origin: [f64; 16],
    pub axis: [f64; 3],
    pub limits: Option<JointLimits>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodyDump {
    pub joint: String,
    pub link: String,
    pub origin: [f64; 16],
    pub axis: [f64; 3],
    pub limits: JointLimits,
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [f64; 9],
}

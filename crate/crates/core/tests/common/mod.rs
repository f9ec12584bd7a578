#![allow(dead_code)]

use std::path::PathBuf;

use excitation_id::urdf::{parse_urdf, KinematicChain};
use nalgebra::Vector3;

pub const G: f64 = 9.81;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn two_link() -> KinematicChain {
    KinematicChain::from_urdf_file(fixture("two_link.urdf")).unwrap()
}

pub fn kuka() -> KinematicChain {
    KinematicChain::from_urdf_file(fixture("kuka_like.urdf")).unwrap()
}

pub struct PlanarLink {
    pub length: f64,
    pub mass: f64,
    pub com: f64,
    pub izz: f64,
}

/// Planar chain of links along +x with z joint axes, gravity along −y.
pub fn planar(links: &[PlanarLink]) -> KinematicChain {
    let mut xml = String::from("<robot name=\"planar\"><link name=\"base\"/>");
    let mut prev_len = 0.0;
    for (i, l) in links.iter().enumerate() {
        xml += &format!(
            "<link name=\"l{i}\"><inertial><origin xyz=\"{} 0 0\"/><mass value=\"{}\"/>\
             <inertia ixx=\"{}\" ixy=\"0\" ixz=\"0\" iyy=\"{}\" iyz=\"0\" izz=\"{}\"/></inertial></link>",
            l.com,
            l.mass,
            0.5 * l.izz,
            0.7 * l.izz,
            l.izz
        );
        let parent = if i == 0 { "base".to_string() } else { format!("l{}", i - 1) };
        xml += &format!(
            "<joint name=\"j{i}\" type=\"revolute\"><parent link=\"{parent}\"/><child link=\"l{i}\"/>\
             <origin xyz=\"{prev_len} 0 0\"/><axis xyz=\"0 0 1\"/>\
             <limit lower=\"-3\" upper=\"3\" velocity=\"2\" effort=\"10\"/></joint>"
        );
        prev_len = l.length;
    }
    xml += "</robot>";
    parse_urdf(&xml).unwrap().with_gravity(Vector3::new(0.0, -G, 0.0))
}

pub fn double_pendulum() -> KinematicChain {
    planar(&[PlanarLink { length: 0.6, mass: 1.7, com: 0.27, izz: 0.04 }, PlanarLink { length: 0.4, mass: 0.9, com: 0.18, izz: 0.015 }])
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    num / den.max(1e-300)
}

//! Idealized 2D heart-in-torso geometry.
//!
//! The domain is a rectangular torso covered by a structured grid of right
//! triangles. Elements are classified by centroid into myocardial regions
//! (right ventricle plus three transmural left-ventricle layers) and torso
//! tissue (generic, optional lung/bone inclusions). Ventricular cavities are
//! conductive torso tissue, not holes, so the element regions partition the
//! full rectangle.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::{Block, Container};
use crate::error::{Error, Result};

/// Element region tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Rv,
    LvEndo,
    LvMcell,
    LvEpi,
    TorsoGeneric,
    TorsoLung,
    TorsoBone,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::Rv,
        Region::LvEndo,
        Region::LvMcell,
        Region::LvEpi,
        Region::TorsoGeneric,
        Region::TorsoLung,
        Region::TorsoBone,
    ];

    pub fn is_heart(self) -> bool {
        matches!(
            self,
            Region::Rv | Region::LvEndo | Region::LvMcell | Region::LvEpi
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Rv => "RV",
            Region::LvEndo => "LV_endo",
            Region::LvMcell => "LV_mcell",
            Region::LvEpi => "LV_epi",
            Region::TorsoGeneric => "torso_generic",
            Region::TorsoLung => "torso_lung",
            Region::TorsoBone => "torso_bone",
        }
    }

    fn index(self) -> u8 {
        Region::ALL.iter().position(|r| *r == self).unwrap() as u8
    }

    fn from_index(i: u8) -> Result<Region> {
        Region::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::Mesh(format!("bad region index {i}")))
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Region> {
        Region::ALL
            .iter()
            .find(|r| r.name() == s)
            .copied()
            .ok_or_else(|| Error::Mesh(format!("unknown region tag `{s}`")))
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryTag {
    HeartSurface,
    TorsoExterior,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [u32; 2],
    pub tag: BoundaryTag,
}

/// Named node index sets derived from the element classification.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NodeSets {
    /// Nodes incident to at least one heart element (sorted).
    pub heart_nodes: Vec<u32>,
    /// Nodes incident to both heart and torso elements (sorted).
    pub heart_boundary_nodes: Vec<u32>,
    /// Nodes incident to at least one torso element (sorted).
    pub torso_nodes: Vec<u32>,
    /// Nodes on the torso exterior boundary, candidates for electrodes.
    pub electrode_candidates: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Node coordinates in cm.
    pub nodes: Vec<[f64; 2]>,
    /// CCW node index triples.
    pub triangles: Vec<[u32; 3]>,
    /// One region tag per triangle.
    pub element_region: Vec<Region>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub node_sets: NodeSets,
}

/// Axis-aligned ellipse.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center: [f64; 2],
    pub axes: [f64; 2],
}

impl EllipseSpec {
    /// Squared elliptical radius; < 1 inside.
    fn rho2(&self, p: [f64; 2]) -> f64 {
        let dx = (p[0] - self.center[0]) / self.axes[0];
        let dy = (p[1] - self.center[1]) / self.axes[1];
        dx * dx + dy * dy
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.axes[0] > 0.0 && self.axes[1] > 0.0 && self.rho2(p) <= 1.0
    }

    fn shrunk(&self, wall: f64) -> Option<EllipseSpec> {
        let a = self.axes[0] - wall;
        let b = self.axes[1] - wall;
        if a > 0.0 && b > 0.0 {
            Some(EllipseSpec {
                center: self.center,
                axes: [a, b],
            })
        } else {
            None
        }
    }
}

/// Elliptical ventricle wall: the annulus between the outer ellipse and the
/// ellipse shrunk by `wall`. If `wall >= min(axes)` there is no cavity and
/// the ventricle is a solid disc.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VentricleSpec {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub wall: f64,
}

impl VentricleSpec {
    fn outer(&self) -> EllipseSpec {
        EllipseSpec {
            center: self.center,
            axes: self.axes,
        }
    }

    fn inner(&self) -> Option<EllipseSpec> {
        self.outer().shrunk(self.wall)
    }

    fn in_wall(&self, p: [f64; 2]) -> bool {
        self.outer().contains(p) && !self.inner().is_some_and(|e| e.contains(p))
    }

    /// 0 at the inner (endocardial) surface, 1 at the outer (epicardial)
    /// surface; for a solid ventricle the plain elliptical radius is used.
    fn transmural(&self, p: [f64; 2]) -> f64 {
        let r_out = self.outer().rho2(p).sqrt();
        match self.inner() {
            Some(inner) => {
                let r_in = inner.rho2(p).sqrt();
                let from_endo = (r_in - 1.0).max(0.0);
                let from_epi = (1.0 - r_out).max(0.0);
                let denom = from_endo + from_epi;
                if denom <= 0.0 {
                    0.5
                } else {
                    from_endo / denom
                }
            }
            None => r_out,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Torso rectangle dimensions in cm, centered at the origin.
    pub torso_width: f64,
    pub torso_height: f64,
    pub lv: VentricleSpec,
    pub rv: Option<VentricleSpec>,
    /// Optional angular clip for the RV crescent, radians measured from the
    /// LV center. `None` keeps the full crescent.
    pub rv_angle_range: Option<[f64; 2]>,
    pub lung: Option<EllipseSpec>,
    pub bone: Option<EllipseSpec>,
    /// Target edge length of the structured background grid, cm.
    pub h: f64,
    /// Minimum accepted inradius/circumradius ratio.
    pub quality_floor: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            torso_width: 20.0,
            torso_height: 20.0,
            lv: VentricleSpec {
                center: [1.2, 0.0],
                axes: [2.7, 2.7],
                wall: 1.2,
            },
            rv: Some(VentricleSpec {
                center: [-0.3, 0.0],
                axes: [3.4, 2.6],
                wall: 0.5,
            }),
            rv_angle_range: None,
            lung: None,
            bone: None,
            h: 0.15,
            quality_floor: 0.2,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, msg: &str| Err(Error::config(path, msg));
        if !(self.torso_width > 0.0) || !(self.torso_height > 0.0) {
            return err("/geometry/torso_width", "torso dimensions must be positive");
        }
        if !(self.h > 0.0) {
            return err("/geometry/h", "h must be positive");
        }
        if !(self.quality_floor > 0.0 && self.quality_floor < 1.0) {
            return err("/geometry/quality_floor", "must be in (0, 1)");
        }
        if self.lv.axes[0] <= 0.0 || self.lv.axes[1] <= 0.0 {
            return err("/geometry/lv/axes", "heart must have positive area");
        }
        if self.lv.wall <= 0.0 {
            return err("/geometry/lv/wall", "wall thickness must be positive");
        }
        if let Some(rv) = &self.rv {
            if rv.axes[0] <= 0.0 || rv.axes[1] <= 0.0 {
                return err("/geometry/rv/axes", "heart must have positive area");
            }
            if rv.wall <= 0.0 {
                return err("/geometry/rv/wall", "wall thickness must be positive");
            }
        }
        // Heart strictly inside the torso rectangle.
        let half_w = self.torso_width / 2.0;
        let half_h = self.torso_height / 2.0;
        let mut shapes = vec![self.lv.outer()];
        if let Some(rv) = &self.rv {
            shapes.push(rv.outer());
        }
        for e in shapes {
            if e.center[0].abs() + e.axes[0] >= half_w || e.center[1].abs() + e.axes[1] >= half_h {
                return err(
                    "/geometry",
                    "heart must fit strictly inside the torso rectangle",
                );
            }
        }
        // The thinnest wall must span at least two elements.
        let feature = |v: &VentricleSpec| match v.inner() {
            Some(_) => v.wall,
            None => 2.0 * v.axes[0].min(v.axes[1]),
        };
        let mut thinnest = feature(&self.lv);
        if let Some(rv) = &self.rv {
            thinnest = thinnest.min(feature(rv));
        }
        if thinnest < 2.0 * self.h {
            return err(
                "/geometry/h",
                &format!(
                    "h = {} too coarse: thinnest wall {} cm needs at least 2 elements across",
                    self.h, thinnest
                ),
            );
        }
        Ok(())
    }

    fn classify(&self, p: [f64; 2]) -> Region {
        if self.lv.in_wall(p) {
            let lambda = self.lv.transmural(p);
            return if lambda < 1.0 / 3.0 {
                Region::LvEndo
            } else if lambda < 2.0 / 3.0 {
                Region::LvMcell
            } else {
                Region::LvEpi
            };
        }
        if let Some(rv) = &self.rv {
            if rv.in_wall(p) && !self.lv.outer().contains(p) && self.rv_angle_ok(p) {
                return Region::Rv;
            }
        }
        if let Some(lung) = &self.lung {
            if lung.contains(p) {
                return Region::TorsoLung;
            }
        }
        if let Some(bone) = &self.bone {
            if bone.contains(p) {
                return Region::TorsoBone;
            }
        }
        Region::TorsoGeneric
    }

    fn rv_angle_ok(&self, p: [f64; 2]) -> bool {
        match self.rv_angle_range {
            None => true,
            Some([a0, a1]) => {
                let ang = (p[1] - self.lv.center[1]).atan2(p[0] - self.lv.center[0]);
                if a0 <= a1 {
                    ang >= a0 && ang <= a1
                } else {
                    ang >= a0 || ang <= a1
                }
            }
        }
    }
}

/// Build the structured background grid and classify elements by centroid.
pub fn build_idealized_geometry(cfg: &GeometryConfig) -> Result<Mesh> {
    cfg.validate()?;

    let nx = (cfg.torso_width / cfg.h).round().max(1.0) as usize;
    let ny = (cfg.torso_height / cfg.h).round().max(1.0) as usize;
    let x0 = -cfg.torso_width / 2.0;
    let y0 = -cfg.torso_height / 2.0;
    let dx = cfg.torso_width / nx as f64;
    let dy = cfg.torso_height / ny as f64;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([x0 + i as f64 * dx, y0 + j as f64 * dy]);
        }
    }
    let vid = |i: usize, j: usize| (j * (nx + 1) + i) as u32;

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            // Lower-left to upper-right diagonal, both triangles CCW.
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let element_region: Vec<Region> = triangles
        .iter()
        .map(|t| cfg.classify(centroid(&nodes, t)))
        .collect();

    let mesh = finish_mesh(nodes, triangles, element_region)?;

    let quality = mesh.min_quality();
    if quality < cfg.quality_floor {
        return Err(Error::Mesh(format!(
            "minimum triangle quality {quality:.3} below floor {}",
            cfg.quality_floor
        )));
    }
    Ok(mesh)
}

fn centroid(nodes: &[[f64; 2]], tri: &[u32; 3]) -> [f64; 2] {
    let a = nodes[tri[0] as usize];
    let b = nodes[tri[1] as usize];
    let c = nodes[tri[2] as usize];
    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Derive boundary edges and node sets, then run the invariant checks.
fn finish_mesh(
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[u32; 3]>,
    element_region: Vec<Region>,
) -> Result<Mesh> {
    // Edge incidence: sorted node pair -> (count, regions of incident elems).
    use std::collections::HashMap;
    let mut edges: HashMap<(u32, u32), (u8, Vec<Region>)> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            let entry = edges.entry(key).or_insert((0, Vec::new()));
            entry.0 += 1;
            entry.1.push(element_region[t]);
        }
    }

    let mut boundary_edges = Vec::new();
    for (&(a, b), (count, regions)) in &edges {
        match count {
            1 => boundary_edges.push(BoundaryEdge {
                nodes: [a, b],
                tag: BoundaryTag::TorsoExterior,
            }),
            2 => {
                let heart = regions.iter().filter(|r| r.is_heart()).count();
                if heart == 1 {
                    boundary_edges.push(BoundaryEdge {
                        nodes: [a, b],
                        tag: BoundaryTag::HeartSurface,
                    });
                }
            }
            n => {
                return Err(Error::Mesh(format!(
                    "non-conforming mesh: edge ({a},{b}) shared by {n} triangles"
                )))
            }
        }
    }
    boundary_edges.sort_by_key(|e| e.nodes);

    let mut heart_nodes = BTreeSet::new();
    let mut torso_nodes = BTreeSet::new();
    for (t, tri) in triangles.iter().enumerate() {
        let set = if element_region[t].is_heart() {
            &mut heart_nodes
        } else {
            &mut torso_nodes
        };
        for &v in tri {
            set.insert(v);
        }
    }
    let heart_boundary_nodes: Vec<u32> = heart_nodes
        .intersection(&torso_nodes)
        .copied()
        .collect();
    let electrode_candidates: Vec<u32> = boundary_edges
        .iter()
        .filter(|e| e.tag == BoundaryTag::TorsoExterior)
        .flat_map(|e| e.nodes)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mesh = Mesh {
        nodes,
        triangles,
        element_region,
        boundary_edges,
        node_sets: NodeSets {
            heart_nodes: heart_nodes.into_iter().collect(),
            heart_boundary_nodes,
            torso_nodes: torso_nodes.into_iter().collect(),
            electrode_candidates,
        },
    };
    mesh.validate()?;
    Ok(mesh)
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let t = &self.triangles[e];
        signed_area(
            self.nodes[t[0] as usize],
            self.nodes[t[1] as usize],
            self.nodes[t[2] as usize],
        )
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 2] {
        centroid(&self.nodes, &self.triangles[e])
    }

    /// Indices of all elements carrying the given region tag.
    pub fn region_elements(&self, tag: Region) -> Vec<usize> {
        self.element_region
            .iter()
            .enumerate()
            .filter_map(|(i, r)| (*r == tag).then_some(i))
            .collect()
    }

    pub fn heart_elements(&self) -> Vec<usize> {
        self.element_region
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.is_heart().then_some(i))
            .collect()
    }

    pub fn torso_elements(&self) -> Vec<usize> {
        self.element_region
            .iter()
            .enumerate()
            .filter_map(|(i, r)| (!r.is_heart()).then_some(i))
            .collect()
    }

    /// Nearest node to a point, optionally restricted to a candidate set.
    pub fn nearest_node(&self, p: [f64; 2], among: Option<&[u32]>) -> u32 {
        let dist2 = |n: u32| {
            let q = self.nodes[n as usize];
            (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
        };
        match among {
            Some(set) => *set
                .iter()
                .min_by(|a, b| dist2(**a).partial_cmp(&dist2(**b)).unwrap())
                .expect("candidate set must be nonempty"),
            None => (0..self.n_nodes() as u32)
                .min_by(|a, b| dist2(*a).partial_cmp(&dist2(*b)).unwrap())
                .expect("mesh must have nodes"),
        }
    }

    /// Minimum inradius/circumradius ratio over all triangles.
    pub fn min_quality(&self) -> f64 {
        let mut q = f64::INFINITY;
        for t in &self.triangles {
            let a = self.nodes[t[0] as usize];
            let b = self.nodes[t[1] as usize];
            let c = self.nodes[t[2] as usize];
            let la = dist(b, c);
            let lb = dist(a, c);
            let lc = dist(a, b);
            let area = signed_area(a, b, c);
            let s = (la + lb + lc) / 2.0;
            let inr = area / s;
            let circ = la * lb * lc / (4.0 * area);
            q = q.min(inr / circ);
        }
        q
    }

    /// Structural invariants: positive areas, conformity, region partition,
    /// boundary-node identification.
    pub fn validate(&self) -> Result<()> {
        if self.element_region.len() != self.triangles.len() {
            return Err(Error::Mesh("region tags do not cover all elements".into()));
        }
        for (e, t) in self.triangles.iter().enumerate() {
            for &v in t {
                if v as usize >= self.nodes.len() {
                    return Err(Error::Mesh(format!("triangle {e} references node {v}")));
                }
            }
            if self.element_area(e) <= 0.0 {
                return Err(Error::Mesh(format!(
                    "triangle {e} has non-positive signed area"
                )));
            }
        }
        // Conformity: every edge shared by at most two triangles; checked at
        // build time, re-checked here for loaded meshes.
        use std::collections::HashMap;
        let mut counts: HashMap<(u32, u32), u8> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        if counts.values().any(|&c| c > 2) {
            return Err(Error::Mesh("non-conforming mesh".into()));
        }
        // Region element sets partition all elements by construction (one tag
        // per element); verify the recorded counts agree.
        let total: usize = Region::ALL
            .iter()
            .map(|r| self.region_elements(*r).len())
            .sum();
        if total != self.n_elements() {
            return Err(Error::Mesh("region sets do not partition elements".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "n_nodes": self.n_nodes(),
            "n_triangles": self.n_elements(),
            "n_boundary_edges": self.boundary_edges.len(),
            "region_names": Region::ALL.iter().map(|r| r.name()).collect::<Vec<_>>(),
            "node_sets": {
                "heart_nodes": self.node_sets.heart_nodes,
                "heart_boundary_nodes": self.node_sets.heart_boundary_nodes,
                "torso_nodes": self.node_sets.torso_nodes,
                "electrode_candidates": self.node_sets.electrode_candidates,
            },
        });
        let mut c = Container::new("mesh", meta);
        c.push(
            "coordinates",
            Block::F64(self.nodes.iter().flatten().copied().collect()),
        );
        c.push(
            "connectivity",
            Block::U32(self.triangles.iter().flatten().copied().collect()),
        );
        c.push(
            "element_region",
            Block::U8(self.element_region.iter().map(|r| r.index()).collect()),
        );
        c.push(
            "boundary_edge_nodes",
            Block::U32(self.boundary_edges.iter().flat_map(|e| e.nodes).collect()),
        );
        c.push(
            "boundary_edge_tags",
            Block::U8(
                self.boundary_edges
                    .iter()
                    .map(|e| match e.tag {
                        BoundaryTag::HeartSurface => 0,
                        BoundaryTag::TorsoExterior => 1,
                    })
                    .collect(),
            ),
        );
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<Mesh> {
        let c = Container::read(path)?;
        if c.header.kind != "mesh" {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("expected kind `mesh`, found `{}`", c.header.kind),
            });
        }
        let coords = c.block("coordinates")?.as_f64()?;
        let nodes: Vec<[f64; 2]> = coords.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let conn = c.block("connectivity")?.as_u32()?;
        let triangles: Vec<[u32; 3]> = conn.chunks_exact(3).map(|t| [t[0], t[1], t[2]]).collect();
        let element_region = c
            .block("element_region")?
            .as_u8()?
            .iter()
            .map(|&i| Region::from_index(i))
            .collect::<Result<Vec<_>>>()?;
        let edge_nodes = c.block("boundary_edge_nodes")?.as_u32()?;
        let edge_tags = c.block("boundary_edge_tags")?.as_u8()?;
        let boundary_edges = edge_nodes
            .chunks_exact(2)
            .zip(edge_tags)
            .map(|(n, &t)| BoundaryEdge {
                nodes: [n[0], n[1]],
                tag: if t == 0 {
                    BoundaryTag::HeartSurface
                } else {
                    BoundaryTag::TorsoExterior
                },
            })
            .collect();
        let sets = &c.header.meta["node_sets"];
        let get = |k: &str| -> Result<Vec<u32>> {
            serde_json::from_value(sets[k].clone()).map_err(Error::from)
        };
        let mesh = Mesh {
            nodes,
            triangles,
            element_region,
            boundary_edges,
            node_sets: NodeSets {
                heart_nodes: get("heart_nodes")?,
                heart_boundary_nodes: get("heart_boundary_nodes")?,
                torso_nodes: get("torso_nodes")?,
                electrode_candidates: get("electrode_candidates")?,
            },
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn write_nodes_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,x,y\n");
        for (i, n) in self.nodes.iter().enumerate() {
            out.push_str(&format!("{i},{},{}\n", n[0], n[1]));
        }
        std::fs::write(path, out).map_err(Error::from)
    }

    pub fn write_elements_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,n0,n1,n2,region\n");
        for (i, t) in self.triangles.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{}\n",
                t[0],
                t[1],
                t[2],
                self.element_region[i].name()
            ));
        }
        std::fs::write(path, out).map_err(Error::from)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_only_config() -> GeometryConfig {
        // Heart shrunk to a small solid disc on a 20x20 torso.
        GeometryConfig {
            lv: VentricleSpec {
                center: [0.0, 0.0],
                axes: [1.25, 1.25],
                wall: 2.0,
            },
            rv: None,
            h: 0.5,
            ..GeometryConfig::default()
        }
    }

    #[test]
    fn zero_heart_axes_rejected() {
        let cfg = GeometryConfig {
            lv: VentricleSpec {
                center: [0.0, 0.0],
                axes: [0.0, 0.0],
                wall: 1.0,
            },
            ..GeometryConfig::default()
        };
        assert!(build_idealized_geometry(&cfg).is_err());
    }

    #[test]
    fn disc_config_element_count_matches_structured_grid() {
        let mesh = build_idealized_geometry(&disc_only_config()).unwrap();
        let expected = 2.0 * (20.0f64 / 0.5).powi(2);
        let n = mesh.n_elements() as f64;
        assert!(
            (n - expected).abs() <= 0.2 * expected,
            "count {n} not within 20% of {expected}"
        );
        // The structured grid is in fact exact.
        assert_eq!(mesh.n_elements(), 3200);
    }

    #[test]
    fn areas_partition_torso_rectangle() {
        let mesh = build_idealized_geometry(&GeometryConfig::default()).unwrap();
        let total: f64 = (0..mesh.n_elements()).map(|e| mesh.element_area(e)).sum();
        let rect = 20.0 * 20.0;
        assert!((total - rect).abs() / rect < 1e-10);
    }

    #[test]
    fn region_sets_partition_elements() {
        let mesh = build_idealized_geometry(&GeometryConfig::default()).unwrap();
        let mut seen = vec![0u8; mesh.n_elements()];
        for tag in Region::ALL {
            for e in mesh.region_elements(tag) {
                seen[e] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn rv_empty_when_unconfigured() {
        let mesh = build_idealized_geometry(&disc_only_config()).unwrap();
        assert!(mesh.region_elements(Region::Rv).is_empty());
    }

    #[test]
    fn lv_epi_nonempty_and_inside_heart_bbox() {
        let cfg = GeometryConfig::default();
        let mesh = build_idealized_geometry(&cfg).unwrap();
        let epi = mesh.region_elements(Region::LvEpi);
        assert!(!epi.is_empty());
        let (cx, cy) = (cfg.lv.center[0], cfg.lv.center[1]);
        let (ax, ay) = (cfg.lv.axes[0], cfg.lv.axes[1]);
        for e in epi {
            let c = mesh.element_centroid(e);
            assert!((c[0] - cx).abs() <= ax + 1e-12 && (c[1] - cy).abs() <= ay + 1e-12);
        }
    }

    #[test]
    fn unknown_region_tag_rejected() {
        assert!(Region::from_str("LV_epi").is_ok());
        assert!(Region::from_str("atrium").is_err());
    }

    #[test]
    fn conforming_and_quality() {
        let mesh = build_idealized_geometry(&GeometryConfig::default()).unwrap();
        mesh.validate().unwrap();
        // Right isoceles background triangles: ratio = sqrt(2) - 1.
        let expected = 2.0f64.sqrt() - 1.0;
        assert!((mesh.min_quality() - expected).abs() < 1e-12);
    }

    #[test]
    fn too_coarse_h_rejected() {
        let cfg = GeometryConfig {
            h: 1.0, // RV wall is 0.5 cm
            ..GeometryConfig::default()
        };
        assert!(build_idealized_geometry(&cfg).is_err());
    }

    #[test]
    fn heart_boundary_nodes_are_shared_nodes() {
        let mesh = build_idealized_geometry(&GeometryConfig::default()).unwrap();
        for &n in &mesh.node_sets.heart_boundary_nodes {
            assert!(mesh.node_sets.heart_nodes.binary_search(&n).is_ok());
            assert!(mesh.node_sets.torso_nodes.binary_search(&n).is_ok());
        }
        assert!(!mesh.node_sets.heart_boundary_nodes.is_empty());
        assert!(!mesh.node_sets.electrode_candidates.is_empty());
    }

    #[test]
    fn persistence_roundtrip_bit_exact() {
        let mesh = build_idealized_geometry(&disc_only_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.bin");
        mesh.write(&path).unwrap();
        let back = Mesh::read(&path).unwrap();
        assert_eq!(mesh.n_nodes(), back.n_nodes());
        for (a, b) in mesh.nodes.iter().zip(&back.nodes) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
        assert_eq!(mesh.triangles, back.triangles);
        assert_eq!(
            mesh.node_sets.heart_boundary_nodes,
            back.node_sets.heart_boundary_nodes
        );
        assert_eq!(mesh.boundary_edges.len(), back.boundary_edges.len());
    }
}

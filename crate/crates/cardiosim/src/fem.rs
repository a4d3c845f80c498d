//! P1 finite-element assembly and the constrained symmetric solver.
//!
//! Matrices are assembled over a node subset (heart or torso) through a
//! `NodeMap` that renumbers global mesh nodes into a dense local index.
//! The coupled transmembrane/extracellular system uses the constant
//! 2N x 2N block matrix
//! `[(3/2)(A_m C_m / dt) M + K1, K1; K1, K2]`,
//! which is assembled once per (parameters, dt) pair. The extracellular
//! block is defined up to a constant; the solver removes that kernel by
//! projecting the constant out of the right-hand side and of every
//! preconditioned iterate, then shifts the solution to a zero
//! lumped-mass-weighted mean.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Dense renumbering of a subset of mesh nodes.
#[derive(Debug, Clone)]
pub struct NodeMap {
    /// Global node ids, sorted ascending; local index = position.
    pub nodes: Vec<u32>,
    /// Global -> local, `u32::MAX` for nodes outside the subset.
    pub global_to_local: Vec<u32>,
}

impl NodeMap {
    pub fn new(n_global: usize, nodes: Vec<u32>) -> NodeMap {
        let mut global_to_local = vec![u32::MAX; n_global];
        for (local, &g) in nodes.iter().enumerate() {
            global_to_local[g as usize] = local as u32;
        }
        NodeMap {
            nodes,
            global_to_local,
        }
    }

    pub fn heart(mesh: &Mesh) -> NodeMap {
        NodeMap::new(mesh.n_nodes(), mesh.node_sets.heart_nodes.clone())
    }

    pub fn torso(mesh: &Mesh) -> NodeMap {
        NodeMap::new(mesh.n_nodes(), mesh.node_sets.torso_nodes.clone())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local(&self, global: u32) -> Option<usize> {
        let l = self.global_to_local[global as usize];
        (l != u32::MAX).then_some(l as usize)
    }
}

/// Symmetric sparse matrix in CSR form (full pattern stored).
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(u32, u32, f64)>) -> SparseSym {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSym {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for i in 0..self.dim {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec(x, &mut y);
        y
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] as usize == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }

    /// Row sums; for a mass matrix this is the lumped mass vector.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] as usize == j {
                return self.values[k];
            }
        }
        0.0
    }

    /// max |A - A^T| over the stored pattern.
    pub fn symmetry_defect(&self) -> f64 {
        let mut defect: f64 = 0.0;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k] as usize;
                defect = defect.max((self.values[k] - self.entry(j, i)).abs());
            }
        }
        defect
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Coordinate-list text dump for debugging.
    pub fn write_coo(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("row,col,value\n");
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push_str(&format!("{i},{},{}\n", self.col_idx[k], self.values[k]));
            }
        }
        std::fs::write(path, out).map_err(Error::from)
    }
}

/// Per-element conductivities, S/cm.
#[derive(Debug, Clone)]
pub struct ConductivityField {
    pub sigma_i: Vec<f64>,
    pub sigma_e: Vec<f64>,
    pub sigma_t: Vec<f64>,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivityConfig {
    pub sigma_i: f64,
    pub sigma_e: f64,
    pub sigma_t: f64,
    pub lung_factor: f64,
    pub bone_factor: f64,
}

impl Default for ConductivityConfig {
    fn default() -> Self {
        ConductivityConfig {
            sigma_i: 1.5e-3,
            sigma_e: 3.0e-3,
            sigma_t: 2.0e-3,
            lung_factor: 0.5,
            bone_factor: 0.05,
        }
    }
}

impl ConductivityConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_i", self.sigma_i),
            ("sigma_e", self.sigma_e),
            ("sigma_t", self.sigma_t),
            ("lung_factor", self.lung_factor),
            ("bone_factor", self.bone_factor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("/conductivity/{name}"),
                    "must be positive and finite",
                ));
            }
        }
        Ok(())
    }
}

impl ConductivityField {
    pub fn from_config(mesh: &Mesh, cfg: &ConductivityConfig) -> ConductivityField {
        use crate::mesh::Region;
        let n = mesh.n_elements();
        let mut field = ConductivityField {
            sigma_i: vec![cfg.sigma_i; n],
            sigma_e: vec![cfg.sigma_e; n],
            sigma_t: vec![cfg.sigma_t; n],
        };
        for (e, r) in mesh.element_region.iter().enumerate() {
            field.sigma_t[e] = match r {
                Region::TorsoLung => cfg.sigma_t * cfg.lung_factor,
                Region::TorsoBone => cfg.sigma_t * cfg.bone_factor,
                _ => cfg.sigma_t,
            };
        }
        field
    }
}

/// Consistent P1 mass matrix over the listed elements.
pub fn assemble_mass(mesh: &Mesh, map: &NodeMap, elements: &[usize]) -> SparseSym {
    let mut triplets = Vec::with_capacity(elements.len() * 9);
    for &e in elements {
        let tri = &mesh.triangles[e];
        let area = mesh.element_area(e);
        let local: Vec<u32> = tri
            .iter()
            .map(|&g| map.local(g).expect("element node outside map") as u32)
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let v = if i == j { area / 6.0 } else { area / 12.0 };
                triplets.push((local[i], local[j], v));
            }
        }
    }
    SparseSym::from_triplets(map.len(), triplets)
}

/// P1 stiffness matrix with per-element scalar conductivity, indexed by
/// global element id.
pub fn assemble_stiffness(
    mesh: &Mesh,
    map: &NodeMap,
    elements: &[usize],
    sigma: &[f64],
) -> Result<SparseSym> {
    let mut triplets = Vec::with_capacity(elements.len() * 9);
    for &e in elements {
        let tri = &mesh.triangles[e];
        let area = mesh.element_area(e);
        if area <= 0.0 {
            return Err(Error::Mesh(format!("degenerate element {e}")));
        }
        if !(sigma[e] > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive conductivity on element {e}"
            )));
        }
        let p: Vec<[f64; 2]> = tri.iter().map(|&g| mesh.nodes[g as usize]).collect();
        // grad(phi_i) = (b_i, c_i) / (2 area), cyclic edge-normal components
        let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
        let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
        let local: Vec<u32> = tri
            .iter()
            .map(|&g| map.local(g).expect("element node outside map") as u32)
            .collect();
        let scale = sigma[e] / (4.0 * area);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((local[i], local[j], scale * (b[i] * b[j] + c[i] * c[j])));
            }
        }
    }
    Ok(SparseSym::from_triplets(map.len(), triplets))
}

/// Constant block matrix of the coupled scheme.
pub fn build_system_matrix(
    m: &SparseSym,
    k1: &SparseSym,
    k2: &SparseSym,
    a_m: f64,
    c_m: f64,
    dt: f64,
) -> SparseSym {
    assert_eq!(m.dim, k1.dim);
    assert_eq!(m.dim, k2.dim);
    assert!(dt > 0.0);
    let n = m.dim;
    let coeff = 1.5 * a_m * c_m / dt;
    let mut triplets = Vec::with_capacity(m.nnz() + 3 * k1.nnz() + k2.nnz());
    for i in 0..n {
        for k in m.row_ptr[i]..m.row_ptr[i + 1] {
            triplets.push((i as u32, m.col_idx[k], coeff * m.values[k]));
        }
        for k in k1.row_ptr[i]..k1.row_ptr[i + 1] {
            let j = k1.col_idx[k];
            let v = k1.values[k];
            triplets.push((i as u32, j, v)); // V-V block
            triplets.push((i as u32, j + n as u32, v)); // V-u block
            triplets.push((i as u32 + n as u32, j, v)); // u-V block
        }
        for k in k2.row_ptr[i]..k2.row_ptr[i + 1] {
            triplets.push((
                i as u32 + n as u32,
                k2.col_idx[k] + n as u32,
                k2.values[k],
            ));
        }
    }
    SparseSym::from_triplets(2 * n, triplets)
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    /// Maximum iterations as a multiple of the system dimension.
    pub max_iter_factor: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter_factor: 10,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Zero-mean constraint for the extracellular block `[offset, offset+len)`.
/// `weights` are the lumped masses used for the final mean shift.
pub struct UeConstraint<'a> {
    pub offset: usize,
    pub len: usize,
    pub weights: &'a [f64],
}

/// Preconditioned conjugate gradients with Jacobi preconditioning. When a
/// constraint is given, the constant component of the u_e block is projected
/// out of the right-hand side and of every preconditioned iterate, and the
/// returned u_e block is shifted to zero weighted mean.
pub fn solve_cg(
    a: &SparseSym,
    rhs: &[f64],
    x0: Option<&[f64]>,
    constraint: Option<&UeConstraint>,
    opts: &SolveOptions,
    context: &str,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim;
    if rhs.len() != n {
        return Err(Error::Dimension {
            context: context.to_string(),
            expected: n,
            found: rhs.len(),
        });
    }
    let project = |v: &mut [f64]| {
        if let Some(c) = constraint {
            let slice = &mut v[c.offset..c.offset + c.len];
            let mean = slice.iter().sum::<f64>() / c.len as f64;
            for x in slice {
                *x -= mean;
            }
        }
    };

    let mut b = rhs.to_vec();
    project(&mut b);
    let b_norm = norm(&b);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }

    let mut x = match x0 {
        Some(x0) => {
            let mut x = x0.to_vec();
            project(&mut x);
            x
        }
        None => vec![0.0; n],
    };
    let diag = a.diag();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    project(&mut r);

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];

    let max_iter = opts.max_iter_factor * n;
    let mut history = Vec::new();
    let mut res = norm(&r);
    let mut iterations = 0;
    while res > opts.tol * b_norm {
        if iterations >= max_iter {
            history.truncate(10);
            return Err(Error::Solver {
                context: context.to_string(),
                residual: res / b_norm,
                iterations,
                history,
            });
        }
        a.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::Solver {
                context: format!("{context}: lost positive-definiteness"),
                residual: res / b_norm,
                iterations,
                history,
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm(&r);
        iterations += 1;
        if history.len() < 32 {
            history.push(res / b_norm);
        } else {
            history.remove(0);
            history.push(res / b_norm);
        }
    }

    if let Some(c) = constraint {
        let slice = &mut x[c.offset..c.offset + c.len];
        let wsum: f64 = c.weights.iter().sum();
        let mean = slice
            .iter()
            .zip(c.weights)
            .map(|(x, w)| x * w)
            .sum::<f64>()
            / wsum;
        for v in slice {
            *v -= mean;
        }
    }

    Ok((
        x,
        SolveStats {
            iterations,
            residual: res / b_norm,
        },
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lumped-mass-weighted mean of a field.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    values
        .iter()
        .zip(weights)
        .map(|(v, w)| v * w)
        .sum::<f64>()
        / wsum
}

//! Torso potential and ECG lead formation.
//!
//! The torso potential solves a generalized Laplace equation with Dirichlet
//! data equal to the extracellular potential on the heart surface and an
//! insulated exterior boundary. During time loops the torso is never solved
//! directly: a transfer matrix mapping heart-boundary nodal values to
//! electrode potentials is precomputed once, column by column, from nodal
//! hat-function boundary data.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, NodeMap, SolveOptions, SparseSym};
use crate::mesh::Mesh;

/// Default 2D electrode layout factory: limb electrodes near the upper
/// corners and bottom center, precordial analogs on the left boundary.
pub fn default_electrode_positions(torso_width: f64, torso_height: f64) -> Vec<(String, [f64; 2])> {
    let hw = torso_width / 2.0;
    let hh = torso_height / 2.0;
    vec![
        ("R".to_string(), [-hw, 0.9 * hh]),
        ("L".to_string(), [hw, 0.9 * hh]),
        ("F".to_string(), [0.0, -hh]),
        ("V1".to_string(), [-hw, 0.2 * hh]),
        ("V2".to_string(), [-hw, 0.0]),
        ("V3".to_string(), [-hw, -0.2 * hh]),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub node: u32,
    pub position: [f64; 2],
}

/// Solves the torso problem with Dirichlet data on the heart boundary.
pub struct TorsoSolver {
    map: NodeMap,
    /// Local (torso-map) indices of the free nodes, in map order.
    free: Vec<usize>,
    /// Heart-boundary nodes (global ids, sorted) carrying the Dirichlet data.
    pub boundary_nodes: Vec<u32>,
    /// Stiffness over all torso elements, on the torso map.
    k_full: SparseSym,
    /// Restriction of `k_full` to free x free.
    k_free: SparseSym,
    opts: SolveOptions,
}

impl TorsoSolver {
    pub fn new(mesh: &Mesh, sigma_t: &[f64]) -> Result<TorsoSolver> {
        let map = NodeMap::torso(mesh);
        if map.is_empty() {
            return Err(Error::Mesh("mesh has no torso elements".into()));
        }
        let elements = mesh.torso_elements();
        let k_full = fem::assemble_stiffness(mesh, &map, &elements, sigma_t)?;

        let boundary_nodes = mesh.node_sets.heart_boundary_nodes.clone();
        let mut is_dirichlet = vec![false; map.len()];
        for &g in &boundary_nodes {
            let l = map
                .local(g)
                .ok_or_else(|| Error::Mesh("heart boundary node outside torso map".into()))?;
            is_dirichlet[l] = true;
        }
        let free: Vec<usize> = (0..map.len()).filter(|&l| !is_dirichlet[l]).collect();
        let mut free_of_local = vec![usize::MAX; map.len()];
        for (f, &l) in free.iter().enumerate() {
            free_of_local[l] = f;
        }

        let mut triplets = Vec::new();
        for (fi, &li) in free.iter().enumerate() {
            for k in k_full.row_ptr[li]..k_full.row_ptr[li + 1] {
                let lj = k_full.col_idx[k] as usize;
                let fj = free_of_local[lj];
                if fj != usize::MAX {
                    triplets.push((fi as u32, fj as u32, k_full.values[k]));
                }
            }
        }
        let k_free = SparseSym::from_triplets(free.len(), triplets);

        Ok(TorsoSolver {
            map,
            free,
            boundary_nodes,
            k_full,
            k_free,
            opts: SolveOptions {
                tol: 1e-12,
                max_iter_factor: 20,
            },
        })
    }

    /// Solve for the full torso field given boundary data ordered like
    /// `boundary_nodes`. Returns values on the torso map node ordering.
    pub fn solve(&self, boundary_values: &[f64]) -> Result<Vec<f64>> {
        if boundary_values.len() != self.boundary_nodes.len() {
            return Err(Error::Dimension {
                context: "torso boundary data".into(),
                expected: self.boundary_nodes.len(),
                found: boundary_values.len(),
            });
        }
        // Lift: g on Dirichlet nodes, 0 elsewhere.
        let mut lifted = vec![0.0; self.map.len()];
        for (&g, &v) in self.boundary_nodes.iter().zip(boundary_values) {
            lifted[self.map.local(g).unwrap()] = v;
        }
        let k_lift = self.k_full.matvec_alloc(&lifted);
        let rhs: Vec<f64> = self.free.iter().map(|&l| -k_lift[l]).collect();
        let (u_free, _) = fem::solve_cg(&self.k_free, &rhs, None, None, &self.opts, "torso")?;
        let mut field = lifted;
        for (fi, &l) in self.free.iter().enumerate() {
            field[l] = u_free[fi];
        }
        Ok(field)
    }

    /// Value of a solved field at a global node id.
    pub fn field_at(&self, field: &[f64], global_node: u32) -> f64 {
        field[self.map.local(global_node).expect("node outside torso map")]
    }

    /// Snap named electrode positions to the nearest exterior-boundary node.
    pub fn place_electrodes(
        &self,
        mesh: &Mesh,
        positions: &[(String, [f64; 2])],
    ) -> Result<Vec<Electrode>> {
        if mesh.node_sets.electrode_candidates.is_empty() {
            return Err(Error::Mesh("mesh has no electrode candidate nodes".into()));
        }
        Ok(positions
            .iter()
            .map(|(name, p)| Electrode {
                name: name.clone(),
                node: mesh.nearest_node(*p, Some(&mesh.node_sets.electrode_candidates)),
                position: *p,
            })
            .collect())
    }
}

/// Dense map from heart-boundary nodal extracellular values to electrode
/// potentials.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub electrodes: Vec<Electrode>,
    /// Heart-boundary node ids (global, sorted) defining the column order.
    pub boundary_nodes: Vec<u32>,
    /// electrodes x boundary_nodes.
    pub weights: DMatrix<f64>,
}

/// Solve one torso problem per boundary hat function and tabulate electrode
/// potentials.
pub fn build_transfer_matrix(
    solver: &TorsoSolver,
    electrodes: Vec<Electrode>,
) -> Result<TransferMatrix> {
    use rayon::prelude::*;
    let nb = solver.boundary_nodes.len();
    let ne = electrodes.len();
    let columns: Vec<Vec<f64>> = (0..nb)
        .into_par_iter()
        .map(|j| {
            let mut g = vec![0.0; nb];
            g[j] = 1.0;
            let field = solver.solve(&g)?;
            Ok(electrodes
                .iter()
                .map(|e| solver.field_at(&field, e.node))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut weights = DMatrix::zeros(ne, nb);
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            weights[(i, j)] = v;
        }
    }
    Ok(TransferMatrix {
        electrodes,
        boundary_nodes: solver.boundary_nodes.clone(),
        weights,
    })
}

impl TransferMatrix {
    /// Electrode potentials for the given boundary data.
    pub fn electrode_potentials(&self, u_e_boundary: &[f64]) -> Result<Vec<f64>> {
        if u_e_boundary.len() != self.boundary_nodes.len() {
            return Err(Error::Dimension {
                context: "transfer matrix input".into(),
                expected: self.boundary_nodes.len(),
                found: u_e_boundary.len(),
            });
        }
        Ok((0..self.electrodes.len())
            .map(|i| {
                self.weights
                    .row(i)
                    .iter()
                    .zip(u_e_boundary)
                    .map(|(w, u)| w * u)
                    .sum()
            })
            .collect())
    }

    pub fn electrode_names(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.name.clone()).collect()
    }

    /// Max deviation of row sums from 1 (harmonic lifting of constants).
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.electrodes.len())
            .map(|i| (self.weights.row(i).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Lead names in output order: three limb leads, three augmented leads, and
/// the precordial analogs present in the electrode set.
pub fn lead_names(electrode_names: &[String]) -> Vec<String> {
    let mut names: Vec<String> = ["I", "II", "III", "aVR", "aVL", "aVF"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for e in electrode_names {
        if e.starts_with('V') {
            names.push(e.clone());
        }
    }
    names
}

/// Standard lead combinations from named electrode potentials. Requires R,
/// L, F; any electrode named `V*` becomes a precordial lead referenced to
/// the mean limb potential.
pub fn compute_leads(potentials: &[f64], electrode_names: &[String]) -> Result<Vec<f64>> {
    let find = |name: &str| -> Result<f64> {
        electrode_names
            .iter()
            .position(|n| n == name)
            .map(|i| potentials[i])
            .ok_or_else(|| Error::Numerical(format!("missing required electrode `{name}`")))
    };
    let r = find("R")?;
    let l = find("L")?;
    let f = find("F")?;
    let mut leads = vec![
        l - r,             // I
        f - r,             // II
        f - l,             // III
        r - 0.5 * (l + f), // aVR
        l - 0.5 * (r + f), // aVL
        f - 0.5 * (r + l), // aVF
    ];
    let wilson = (r + l + f) / 3.0;
    for (name, &p) in electrode_names.iter().zip(potentials) {
        if name.starts_with('V') {
            leads.push(p - wilson);
        }
    }
    Ok(leads)
}

/// Time series of lead voltages at a fixed step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcgTrace {
    /// Sample spacing, ms.
    pub dt: f64,
    /// Time of the first row, ms.
    pub t0: f64,
    pub lead_names: Vec<String>,
    /// One row per sample, one column per lead, mV.
    pub rows: Vec<Vec<f64>>,
}

impl EcgTrace {
    pub fn new(dt: f64, t0: f64, lead_names: Vec<String>) -> EcgTrace {
        EcgTrace {
            dt,
            t0,
            lead_names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, leads: Vec<f64>) -> Result<()> {
        if leads.len() != self.lead_names.len() {
            return Err(Error::Dimension {
                context: "ecg row".into(),
                expected: self.lead_names.len(),
                found: leads.len(),
            });
        }
        if leads.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite ECG sample".into()));
        }
        self.rows.push(leads);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn lead_index(&self, name: &str) -> Result<usize> {
        self.lead_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Numerical(format!("trace has no lead `{name}`")))
    }

    pub fn lead(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.lead_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV with a fixed-point time column and full-precision lead values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t");
        for n in &self.lead_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!("{:.6}", self.time(i)));
            for v in row {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(Error::from)
    }

    pub fn read_csv(path: &Path) -> Result<EcgTrace> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            message: "empty ECG csv".into(),
        })?;
        let mut cols = header.split(',');
        if cols.next() != Some("t") {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "first column must be `t`".into(),
            });
        }
        let lead_names: Vec<String> = cols.map(|s| s.to_string()).collect();
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let t: f64 = it.next().unwrap().parse().map_err(|e| Error::Format {
                path: path.display().to_string(),
                message: format!("bad time value: {e}"),
            })?;
            let row: Vec<f64> = it
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format {
                    path: path.display().to_string(),
                    message: format!("bad lead value: {e}"),
                })?;
            if row.len() != lead_names.len() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    message: "ragged ECG csv".into(),
                });
            }
            times.push(t);
            rows.push(row);
        }
        let (t0, dt) = match times.len() {
            0 => (0.0, 1.0),
            1 => (times[0], 1.0),
            _ => (times[0], times[1] - times[0]),
        };
        Ok(EcgTrace {
            dt,
            t0,
            lead_names,
            rows,
        })
    }

    /// Write one CSV per lead (t,value) into a directory.
    pub fn write_per_lead_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (li, name) in self.lead_names.iter().enumerate() {
            let mut out = String::from("t,value\n");
            for (i, row) in self.rows.iter().enumerate() {
                out.push_str(&format!("{:.6},{}\n", self.time(i), row[li]));
            }
            std::fs::write(dir.join(format!("lead_{name}.csv")), out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_idealized_geometry, GeometryConfig, VentricleSpec};

    fn small_mesh() -> Mesh {
        build_idealized_geometry(&GeometryConfig {
            torso_width: 8.0,
            torso_height: 8.0,
            lv: VentricleSpec {
                center: [0.0, 0.0],
                axes: [2.0, 2.0],
                wall: 0.9,
            },
            rv: None,
            h: 0.4,
            ..Default::default()
        })
        .unwrap()
    }

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn leads_zero_for_equal_potentials() {
        let en = names(&["R", "L", "F", "V1"]);
        let leads = compute_leads(&[3.3, 3.3, 3.3, 3.3], &en).unwrap();
        assert!(leads.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn einthoven_identity_hand_case() {
        let en = names(&["R", "L", "F"]);
        let leads = compute_leads(&[0.0, 1.0, 2.0], &en).unwrap();
        assert_eq!(leads[0], 1.0); // I
        assert_eq!(leads[1], 2.0); // II
        assert_eq!(leads[2], 1.0); // III
        assert!((leads[0] - leads[1] + leads[2]).abs() < 1e-15);
    }

    #[test]
    fn missing_electrode_is_error() {
        let en = names(&["R", "L"]);
        assert!(compute_leads(&[0.0, 1.0], &en).is_err());
    }

    #[test]
    fn transfer_matrix_consistency() {
        use rand::prelude::*;
        let mesh = small_mesh();
        let sigma_t = vec![2e-3; mesh.n_elements()];
        let solver = TorsoSolver::new(&mesh, &sigma_t).unwrap();
        let electrodes = solver
            .place_electrodes(&mesh, &default_electrode_positions(8.0, 8.0))
            .unwrap();
        let tm = build_transfer_matrix(&solver, electrodes).unwrap();

        // constant boundary data lifts to a constant torso potential
        assert!(tm.row_sum_defect() < 1e-8);

        // discrete maximum principle on the non-obtuse background grid
        for v in tm.weights.iter() {
            assert!(*v >= -1e-6 && *v <= 1.0 + 1e-6);
        }

        // transfer path vs direct solve for random boundary data
        let nb = tm.boundary_nodes.len();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g: Vec<f64> = (0..nb).map(|_| rng.gen::<f64>() - 0.5).collect();
        let via_tm = tm.electrode_potentials(&g).unwrap();
        let field = solver.solve(&g).unwrap();
        for (e, &v) in tm.electrodes.iter().zip(&via_tm) {
            let direct = solver.field_at(&field, e.node);
            assert!(
                (v - direct).abs() < 1e-10,
                "transfer {v} vs direct {direct}"
            );
        }

        // linearity of the electrode map
        let g2: Vec<f64> = (0..nb).map(|_| rng.gen::<f64>() - 0.5).collect();
        let sum: Vec<f64> = g.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let fa = tm.electrode_potentials(&g).unwrap();
        let fb = tm.electrode_potentials(&g2).unwrap();
        let fs = tm.electrode_potentials(&sum).unwrap();
        for i in 0..fa.len() {
            assert!((fs[i] - fa[i] - fb[i]).abs() < 1e-12);
        }
        let doubled: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let fd = tm.electrode_potentials(&doubled).unwrap();
        for i in 0..fa.len() {
            assert!((fd[i] - 2.0 * fa[i]).abs() < 1e-12);
        }

        // constant data reproduces the constant at every electrode
        let c = vec![0.7; nb];
        for v in tm.electrode_potentials(&c).unwrap() {
            assert!((v - 0.7).abs() < 1e-8);
        }
    }

    #[test]
    fn ecg_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ecg.csv");
        let mut trace = EcgTrace::new(0.5, 0.0, names(&["I", "II", "III"]));
        trace.push(vec![0.0, 0.0, 0.0]).unwrap();
        trace.push(vec![1.25e-3, -2.0, 0.5 / 3.0]).unwrap();
        trace.write_csv(&path).unwrap();
        let back = EcgTrace::read_csv(&path).unwrap();
        assert_eq!(back.lead_names, trace.lead_names);
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.dt, 0.5);
        for (a, b) in back.rows.iter().flatten().zip(trace.rows.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lead_identities(
                r in -50.0f64..50.0,
                l in -50.0f64..50.0,
                f in -50.0f64..50.0,
            ) {
                let en = names(&["R", "L", "F"]);
                let leads = compute_leads(&[r, l, f], &en).unwrap();
                // Einthoven: I - II + III = 0
                prop_assert!((leads[0] - leads[1] + leads[2]).abs() < 1e-12);
                // augmented leads sum to zero
                prop_assert!((leads[3] + leads[4] + leads[5]).abs() < 1e-12);
            }
        }
    }
}

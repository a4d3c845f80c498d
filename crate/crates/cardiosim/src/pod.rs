//! Snapshot-based model reduction.
//!
//! Snapshots stack the transmembrane and extracellular fields into one
//! column, centered by the rest state so that rest maps to the zero
//! coefficient vector. The basis comes from the snapshot Gram matrix
//! (method of snapshots), re-orthonormalized and sign-fixed for
//! reproducibility. The reduced model keeps the gate in the full space,
//! assembles the full ionic load each step, and solves a dense projected
//! system factorized once per (basis, parameters, dt) combination.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bidomain::{FullOrderModel, HeartState, Trajectory};
use crate::container::{Block, Container};
use crate::ecg::{self, EcgTrace};
use crate::error::{Error, Result};
use crate::fem::SparseSym;
use crate::ionic;

/// Stacked, rest-centered state snapshots.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    /// Stacked state dimension (2 x heart nodes).
    pub n2: usize,
    pub n_heart: usize,
    /// Columns, each of length `n2`: `[v_m - v_min; u_e]`.
    pub columns: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    /// Rest voltage subtracted from the v-block.
    pub v_shift: f64,
}

impl SnapshotMatrix {
    pub fn n_snapshots(&self) -> usize {
        self.columns.len()
    }
}

/// Column selection applied per trajectory during collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SelectionPlan {
    /// Keep all stored snapshots.
    All,
    /// Keep every k-th stored snapshot (1-based stride over the stored set).
    EveryKth(usize),
    /// Fixed snapshot counts inside time windows `[t0, t1]`, evenly spread
    /// over the available samples of each window.
    CountsInWindows(Vec<WindowCount>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowCount {
    pub t0: f64,
    pub t1: f64,
    pub count: usize,
}

fn select_indices(times: &[f64], plan: &SelectionPlan) -> Result<Vec<usize>> {
    match plan {
        SelectionPlan::All => Ok((0..times.len()).collect()),
        SelectionPlan::EveryKth(k) => {
            if *k == 0 {
                return Err(Error::config("/plan/every_kth", "stride must be >= 1"));
            }
            Ok((0..times.len()).step_by(*k).collect())
        }
        SelectionPlan::CountsInWindows(windows) => {
            let mut picked = Vec::new();
            for w in windows {
                let avail: Vec<usize> = times
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &t)| (t >= w.t0 && t <= w.t1).then_some(i))
                    .collect();
                if avail.len() < w.count {
                    return Err(Error::Numerical(format!(
                        "window [{}, {}] has {} snapshots, plan needs {}",
                        w.t0,
                        w.t1,
                        avail.len(),
                        w.count
                    )));
                }
                for j in 0..w.count {
                    picked.push(avail[j * avail.len() / w.count]);
                }
            }
            Ok(picked)
        }
    }
}

/// Gather snapshot columns from trajectories that share a mesh and node
/// ordering. The rest voltage `v_min` is subtracted from the v-block.
pub fn collect(
    trajectories: &[(&Trajectory, &str)],
    plan: &SelectionPlan,
    v_min: f64,
) -> Result<SnapshotMatrix> {
    let mut n_heart = 0usize;
    let mut columns = Vec::new();
    let mut times = Vec::new();
    let mut labels = Vec::new();
    for (traj, label) in trajectories {
        if traj.snapshots.is_empty() {
            return Err(Error::Numerical(format!(
                "trajectory `{label}` has no stored snapshots"
            )));
        }
        let n = traj.snapshots[0].v_m.len();
        if n_heart == 0 {
            n_heart = n;
        } else if n != n_heart {
            return Err(Error::Dimension {
                context: format!("snapshot collection for `{label}`"),
                expected: n_heart,
                found: n,
            });
        }
        let snap_times: Vec<f64> = traj.snapshots.iter().map(|s| s.time).collect();
        for idx in select_indices(&snap_times, plan)? {
            let s = &traj.snapshots[idx];
            let mut col = Vec::with_capacity(2 * n);
            col.extend(s.v_m.iter().map(|v| v - v_min));
            col.extend_from_slice(&s.u_e);
            columns.push(col);
            times.push(s.time);
            labels.push(label.to_string());
        }
    }
    if columns.is_empty() {
        return Err(Error::Numerical("no snapshots collected".into()));
    }
    Ok(SnapshotMatrix {
        n2: 2 * n_heart,
        n_heart,
        columns,
        times,
        labels,
        v_shift: v_min,
    })
}

/// Provenance carried inside basis files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisProvenance {
    pub labels: Vec<String>,
    pub snapshot_count: usize,
    pub requested_modes: usize,
}

/// Orthonormal mode set over the stacked state.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// n2 x n_modes, orthonormal columns.
    pub modes: DMatrix<f64>,
    /// Full singular-value spectrum of the snapshot matrix, descending.
    pub singular_values: Vec<f64>,
    pub n_modes: usize,
    pub n_heart: usize,
    pub v_shift: f64,
    /// Parameter tag for dictionary lookup.
    pub theta_tag: Option<Vec<f64>>,
    pub provenance: BasisProvenance,
}

/// SVD truncation via the snapshot Gram matrix. Modes associated with
/// numerically zero singular values are dropped (the effective mode count is
/// recorded); the retained modes are re-orthonormalized and sign-fixed so
/// that each mode's largest-magnitude entry is positive.
pub fn compute_basis(b: &SnapshotMatrix, n_modes: usize) -> Result<PodBasis> {
    let p = b.n_snapshots();
    let max_modes = p.min(b.n2);
    if n_modes == 0 || n_modes > max_modes {
        return Err(Error::Numerical(format!(
            "n_modes = {n_modes} outside [1, {max_modes}] (snapshots: {p}, state dim: {})",
            b.n2
        )));
    }

    // Gram matrix G = B^T B.
    let mut gram = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let dot: f64 = b.columns[i]
                .iter()
                .zip(&b.columns[j])
                .map(|(x, y)| x * y)
                .sum();
            gram[(i, j)] = dot;
            gram[(j, i)] = dot;
        }
    }
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &bb| {
        eig.eigenvalues[bb]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
    });
    let singular_values: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let sigma_max = singular_values[0];
    if sigma_max <= 0.0 {
        return Err(Error::Numerical("snapshot matrix is zero".into()));
    }
    let rank = singular_values
        .iter()
        .take_while(|&&s| s > sigma_max * 1e-12)
        .count();
    let kept = n_modes.min(rank);
    if kept < n_modes {
        log::warn!("requested {n_modes} modes, numerical rank is {rank}; keeping {kept}");
    }

    // Psi = B V Sigma^{-1} for the retained directions.
    let mut modes = DMatrix::zeros(b.n2, kept);
    for (m, &src) in order.iter().take(kept).enumerate() {
        let inv_sigma = 1.0 / singular_values[m];
        for (j, col) in b.columns.iter().enumerate() {
            let vj = eig.eigenvectors[(j, src)] * inv_sigma;
            if vj != 0.0 {
                for i in 0..b.n2 {
                    modes[(i, m)] += col[i] * vj;
                }
            }
        }
    }

    // Two Gram-Schmidt passes restore orthonormality lost to small sigmas.
    for _ in 0..2 {
        for m in 0..kept {
            for prev in 0..m {
                let proj = modes.column(m).dot(&modes.column(prev));
                let prev_col = modes.column(prev).clone_owned();
                let mut col = modes.column_mut(m);
                col.axpy(-proj, &prev_col, 1.0);
            }
            let norm = modes.column(m).norm();
            if norm <= 0.0 {
                return Err(Error::Numerical(
                    "orthonormalization produced a zero mode".into(),
                ));
            }
            modes.column_mut(m).scale_mut(1.0 / norm);
        }
    }

    // Deterministic sign: the entry of largest magnitude is positive.
    for m in 0..kept {
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for i in 0..b.n2 {
            let a = modes[(i, m)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if modes[(best, m)] < 0.0 {
            modes.column_mut(m).scale_mut(-1.0);
        }
    }

    Ok(PodBasis {
        modes,
        singular_values,
        n_modes: kept,
        n_heart: b.n_heart,
        v_shift: b.v_shift,
        theta_tag: None,
        provenance: BasisProvenance {
            labels: dedup(&b.labels),
            snapshot_count: p,
            requested_modes: n_modes,
        },
    })
}

fn dedup(labels: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in labels {
        if out.last() != Some(l) {
            out.push(l.clone());
        }
    }
    out
}

impl PodBasis {
    /// max |Psi^T Psi - I|.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.modes.transpose() * &self.modes;
        let mut defect: f64 = 0.0;
        for i in 0..self.n_modes {
            for j in 0..self.n_modes {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((gram[(i, j)] - target).abs());
            }
        }
        defect
    }

    /// Frobenius norm of `B - Psi Psi^T B`.
    pub fn reconstruction_error(&self, b: &SnapshotMatrix) -> f64 {
        let mut total = 0.0;
        for col in &b.columns {
            let x = DVector::from_column_slice(col);
            let coeff = self.modes.transpose() * &x;
            let recon = &self.modes * coeff;
            total += (x - recon).norm_squared();
        }
        total.sqrt()
    }

    /// Weighted mean of the u_e block of each mode (inherited zero-mean).
    pub fn ue_mode_means(&self, lumped: &[f64]) -> Vec<f64> {
        let n = self.n_heart;
        let wsum: f64 = lumped.iter().sum();
        (0..self.n_modes)
            .map(|m| {
                (0..n)
                    .map(|i| self.modes[(n + i, m)] * lumped[i])
                    .sum::<f64>()
                    / wsum
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "n2": self.modes.nrows(),
            "n_heart": self.n_heart,
            "n_modes": self.n_modes,
            "v_shift": self.v_shift,
            "theta_tag": self.theta_tag,
            "provenance": self.provenance,
        });
        let mut c = Container::new("basis", meta);
        c.push("modes", Block::F64(self.modes.as_slice().to_vec()));
        c.push("singular_values", Block::F64(self.singular_values.clone()));
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<PodBasis> {
        let c = Container::read(path)?;
        if c.header.kind != "basis" {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("expected kind `basis`, found `{}`", c.header.kind),
            });
        }
        let meta = &c.header.meta;
        let n2 = meta["n2"].as_u64().unwrap_or(0) as usize;
        let n_modes = meta["n_modes"].as_u64().unwrap_or(0) as usize;
        let data = c.block("modes")?.as_f64()?;
        if data.len() != n2 * n_modes {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "mode block size mismatch".into(),
            });
        }
        Ok(PodBasis {
            modes: DMatrix::from_column_slice(n2, n_modes, data),
            singular_values: c.block("singular_values")?.as_f64()?.to_vec(),
            n_modes,
            n_heart: meta["n_heart"].as_u64().unwrap_or(0) as usize,
            v_shift: meta["v_shift"].as_f64().unwrap_or(0.0),
            theta_tag: serde_json::from_value(meta["theta_tag"].clone()).unwrap_or(None),
            provenance: serde_json::from_value(meta["provenance"].clone()).map_err(|e| {
                Error::Format {
                    path: path.display().to_string(),
                    message: format!("bad provenance: {e}"),
                }
            })?,
        })
    }
}

/// Galerkin projection of a sparse symmetric operator; factorized once.
pub struct ReducedOperator {
    pub matrix: DMatrix<f64>,
    factor: ReducedFactor,
}

enum ReducedFactor {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

pub fn reduce_operator(a: &SparseSym, psi: &DMatrix<f64>) -> Result<ReducedOperator> {
    if a.dim != psi.nrows() {
        return Err(Error::Dimension {
            context: "operator projection".into(),
            expected: a.dim,
            found: psi.nrows(),
        });
    }
    let m = psi.ncols();
    // A Psi, column by column, then Psi^T (A Psi).
    let mut a_psi = DMatrix::zeros(a.dim, m);
    let mut tmp = vec![0.0; a.dim];
    for j in 0..m {
        let col: Vec<f64> = psi.column(j).iter().copied().collect();
        a.matvec(&col, &mut tmp);
        for i in 0..a.dim {
            a_psi[(i, j)] = tmp[i];
        }
    }
    let mut reduced = psi.transpose() * a_psi;
    // Enforce exact symmetry before factorization.
    for i in 0..m {
        for j in (i + 1)..m {
            let avg = 0.5 * (reduced[(i, j)] + reduced[(j, i)]);
            reduced[(i, j)] = avg;
            reduced[(j, i)] = avg;
        }
    }
    ReducedOperator::from_matrix(reduced)
}

impl ReducedOperator {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<ReducedOperator> {
        let factor = match Cholesky::new(matrix.clone()) {
            Some(chol) => ReducedFactor::Cholesky(chol),
            None => {
                let lu = matrix.clone().lu();
                let min_pivot = (0..matrix.nrows())
                    .map(|i| lu.u()[(i, i)].abs())
                    .fold(f64::INFINITY, f64::min);
                let max_pivot = (0..matrix.nrows())
                    .map(|i| lu.u()[(i, i)].abs())
                    .fold(0.0, f64::max);
                if min_pivot <= 0.0 || !min_pivot.is_finite() {
                    return Err(Error::Numerical(format!(
                        "reduced operator is singular (pivot range {min_pivot:.3e}..{max_pivot:.3e})"
                    )));
                }
                log::warn!(
                    "reduced operator not SPD; using LU (pivot ratio {:.3e})",
                    max_pivot / min_pivot
                );
                ReducedFactor::Lu(lu)
            }
        };
        Ok(ReducedOperator { matrix, factor })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            ReducedFactor::Cholesky(c) => c.solve(rhs),
            ReducedFactor::Lu(lu) => lu.solve(rhs).expect("factorized operator must solve"),
        }
    }

    pub fn symmetry_defect(&self) -> f64 {
        let m = self.matrix.nrows();
        let mut defect: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                defect = defect.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
            }
        }
        defect
    }
}

/// Basis-dependent projections of the constant operators, reusable across
/// parameter values: the system matrix decomposes into
/// `(3/2)(A_m C_m / dt) [M 0; 0 0] + [K1 K1; K1 K2]`.
pub struct RomProjection {
    pub basis: Arc<PodBasis>,
    /// Psi_v^T M Psi_v.
    reduced_mass_v: DMatrix<f64>,
    /// Psi^T [K1 K1; K1 K2] Psi.
    reduced_stiff: DMatrix<f64>,
}

impl RomProjection {
    pub fn new(
        basis: Arc<PodBasis>,
        mass: &SparseSym,
        k1: &SparseSym,
        k2: &SparseSym,
    ) -> Result<RomProjection> {
        let n = basis.n_heart;
        if mass.dim != n || k1.dim != n || k2.dim != n {
            return Err(Error::Dimension {
                context: "ROM projection".into(),
                expected: n,
                found: mass.dim,
            });
        }
        let m = basis.n_modes;
        let psi_v = basis.modes.rows(0, n).clone_owned();
        let psi_u = basis.modes.rows(n, n).clone_owned();

        let apply = |k: &SparseSym, block: &DMatrix<f64>| -> DMatrix<f64> {
            let mut out = DMatrix::zeros(n, m);
            let mut tmp = vec![0.0; n];
            for j in 0..m {
                let col: Vec<f64> = block.column(j).iter().copied().collect();
                k.matvec(&col, &mut tmp);
                for i in 0..n {
                    out[(i, j)] = tmp[i];
                }
            }
            out
        };

        let m_psi_v = apply(mass, &psi_v);
        let reduced_mass_v = psi_v.transpose() * m_psi_v;

        // [K1 K1; K1 K2] [psi_v; psi_u] = [K1(psi_v + psi_u); K1 psi_v + K2 psi_u]
        let sum_vu = &psi_v + &psi_u;
        let k1_sum = apply(k1, &sum_vu);
        let k1_v = apply(k1, &psi_v);
        let k2_u = apply(k2, &psi_u);
        let reduced_stiff =
            psi_v.transpose() * k1_sum + psi_u.transpose() * (k1_v + k2_u);

        Ok(RomProjection {
            basis,
            reduced_mass_v,
            reduced_stiff,
        })
    }

    /// Compose and factorize the reduced system for one parameter set.
    pub fn system(&self, a_m: f64, c_m: f64, dt: f64) -> Result<ReducedOperator> {
        let coeff = 1.5 * a_m * c_m / dt;
        let mut matrix = self.reduced_stiff.clone();
        matrix.axpy(coeff, &self.reduced_mass_v, 1.0);
        // Symmetrize away roundoff before factorizing.
        let m = matrix.nrows();
        for i in 0..m {
            for j in (i + 1)..m {
                let avg = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
                matrix[(i, j)] = avg;
                matrix[(j, i)] = avg;
            }
        }
        ReducedOperator::from_matrix(matrix)
    }
}

/// Reduced trajectory: coefficients plus everything needed for comparison
/// with full-order runs.
#[derive(Debug, Clone)]
pub struct RomTrajectory {
    pub dt: f64,
    pub snapshot_stride: usize,
    /// Lifted states at the snapshot stride (w from the full-space gate).
    pub snapshots: Vec<HeartState>,
    pub ecg: Option<EcgTrace>,
    pub probes: Vec<(u32, Vec<f64>)>,
    pub coefficients: Vec<DVector<f64>>,
}

/// Reduced-order model sharing the full model's mesh, parameters, stimulus,
/// and transfer matrix. The gate lives in the full space; only the linear
/// solve happens in reduced coordinates.
pub struct RomModel<'a> {
    pub full: &'a FullOrderModel,
    pub projection: &'a RomProjection,
    system: ReducedOperator,
    /// Electrode weights composed with the boundary rows of Psi_u.
    ecg_proj: Option<DMatrix<f64>>,
}

impl<'a> RomModel<'a> {
    pub fn new(full: &'a FullOrderModel, projection: &'a RomProjection) -> Result<RomModel<'a>> {
        if projection.basis.n_heart != full.n_heart() {
            return Err(Error::Dimension {
                context: "ROM basis vs model".into(),
                expected: full.n_heart(),
                found: projection.basis.n_heart,
            });
        }
        if (projection.basis.v_shift - full.params.base.v_min).abs() > 1e-12 {
            return Err(Error::Numerical(
                "basis rest shift differs from model v_min".into(),
            ));
        }
        let system = projection.system(full.params.base.a_m, full.params.base.c_m, full.dt)?;
        let ecg_proj = match &full.transfer {
            Some(tm) => {
                let n = full.n_heart();
                let heart_map = &full.heart_map;
                let mut boundary_rows =
                    DMatrix::zeros(tm.boundary_nodes.len(), projection.basis.n_modes);
                for (r, &g) in tm.boundary_nodes.iter().enumerate() {
                    let l = heart_map.local(g).expect("boundary node in heart");
                    for m in 0..projection.basis.n_modes {
                        boundary_rows[(r, m)] = projection.basis.modes[(n + l, m)];
                    }
                }
                Some(&tm.weights * boundary_rows)
            }
            None => None,
        };
        Ok(RomModel {
            full,
            projection,
            system,
            ecg_proj,
        })
    }

    fn n_modes(&self) -> usize {
        self.projection.basis.n_modes
    }

    /// Lift coefficients to a nodal transmembrane voltage.
    pub fn lift_v(&self, alpha: &DVector<f64>) -> Vec<f64> {
        let n = self.full.n_heart();
        let psi_v = self.projection.basis.modes.rows(0, n);
        let v = psi_v * alpha;
        let v_min = self.projection.basis.v_shift;
        v.iter().map(|x| x + v_min).collect()
    }

    pub fn lift_u(&self, alpha: &DVector<f64>) -> Vec<f64> {
        let n = self.full.n_heart();
        let psi_u = self.projection.basis.modes.rows(n, n);
        (psi_u * alpha).iter().copied().collect()
    }

    pub fn lift_state(&self, alpha: &DVector<f64>, w: &[f64], time: f64) -> HeartState {
        HeartState {
            time,
            v_m: self.lift_v(alpha),
            u_e: self.lift_u(alpha),
            w: w.to_vec(),
        }
    }

    /// One reduced step; mirrors the full-order scheme with the rest-state
    /// contribution eliminated analytically (K annihilates constants, and
    /// the rest terms of the mass block cancel between the two sides).
    pub fn rom_step(
        &self,
        alpha_k: &DVector<f64>,
        alpha_km1: &DVector<f64>,
        w_k: &[f64],
        w_km1: &[f64],
        t: f64,
        bootstrap: bool,
    ) -> Result<(DVector<f64>, Vec<f64>)> {
        let n = self.full.n_heart();
        let extr = alpha_k * 2.0 - alpha_km1;
        let v_tilde = self.lift_v(&extr);
        let w_next = self.full.gate_update(&v_tilde, w_k, w_km1, bootstrap);

        let t_next = t + self.full.dt;
        let load = self.full.ionic_stimulus_load(&v_tilde, &w_next, t_next);
        let psi_v = self.projection.basis.modes.rows(0, n);
        let load_vec = DVector::from_column_slice(&load);
        let mut rhs = psi_v.transpose() * load_vec;

        let combo = alpha_k * 2.0 - alpha_km1 * 0.5;
        let coeff = self.full.params.base.a_m * self.full.params.base.c_m / self.full.dt;
        rhs.axpy(coeff, &(&self.projection.reduced_mass_v * combo), 1.0);

        let alpha_next = self.system.solve(&rhs);
        Ok((alpha_next, w_next))
    }

    fn leads(&self, alpha: &DVector<f64>) -> Result<Option<Vec<f64>>> {
        match (&self.ecg_proj, &self.full.transfer) {
            (Some(proj), Some(tm)) => {
                let pots: Vec<f64> = (proj * alpha).iter().copied().collect();
                Ok(Some(ecg::compute_leads(&pots, &tm.electrode_names())?))
            }
            _ => Ok(None),
        }
    }

    /// March the reduced model from rest.
    pub fn run(
        &self,
        t_end: f64,
        snapshot_stride: usize,
        probe_nodes: &[u32],
    ) -> Result<RomTrajectory> {
        if !(t_end > 0.0) {
            return Err(Error::config("/t_end", "T must be positive"));
        }
        let dt = self.full.dt;
        let n_steps = (t_end / dt).ceil() as usize;
        let probe_local: Vec<usize> = probe_nodes
            .iter()
            .map(|&g| {
                self.full
                    .heart_map
                    .local(g)
                    .ok_or_else(|| Error::Mesh(format!("probe node {g} is not a heart node")))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut alpha_k = DVector::zeros(self.n_modes());
        let mut alpha_km1 = DVector::zeros(self.n_modes());
        let mut w_k = vec![self.full.params.base.rest_gate(); self.full.n_heart()];
        let mut w_km1 = w_k.clone();

        let mut ecg_trace = self.full.transfer.as_ref().map(|tm| {
            EcgTrace::new(dt, 0.0, ecg::lead_names(&tm.electrode_names()))
        });
        if let (Some(trace), Some(leads)) = (&mut ecg_trace, self.leads(&alpha_k)?) {
            trace.push(leads)?;
        }
        let v0 = self.lift_v(&alpha_k);
        let mut probes: Vec<(u32, Vec<f64>)> = probe_nodes
            .iter()
            .zip(&probe_local)
            .map(|(&g, &l)| (g, vec![v0[l]]))
            .collect();

        let mut snapshots = Vec::new();
        let mut coefficients = Vec::new();
        for k in 0..n_steps {
            let t = k as f64 * dt;
            let (alpha_next, w_next) = if k == 0 {
                self.rom_step(&alpha_k, &alpha_k.clone(), &w_k, &w_k.clone(), t, true)?
            } else {
                self.rom_step(&alpha_k, &alpha_km1, &w_k, &w_km1, t, false)?
            };
            alpha_km1 = std::mem::replace(&mut alpha_k, alpha_next);
            w_km1 = std::mem::replace(&mut w_k, w_next);

            if let (Some(trace), Some(leads)) = (&mut ecg_trace, self.leads(&alpha_k)?) {
                trace.push(leads)?;
            }
            if !probe_local.is_empty() {
                let v = self.lift_v(&alpha_k);
                for ((_, series), &l) in probes.iter_mut().zip(&probe_local) {
                    series.push(v[l]);
                }
            }
            if snapshot_stride > 0 && (k + 1) % snapshot_stride == 0 {
                let t_now = (k + 1) as f64 * dt;
                snapshots.push(self.lift_state(&alpha_k, &w_k, t_now));
                coefficients.push(alpha_k.clone());
            }
        }

        Ok(RomTrajectory {
            dt,
            snapshot_stride,
            snapshots,
            ecg: ecg_trace,
            probes,
            coefficients,
        })
    }
}

/// Dictionary of bases tagged by parameter values; selection picks the tag
/// closest to a query point in box-width-normalized coordinates, ties broken
/// by the lowest index.
pub struct BasisDictionary {
    pub bases: Vec<Arc<PodBasis>>,
    /// Normalization width per coordinate (search interval width).
    pub widths: Vec<f64>,
}

impl BasisDictionary {
    pub fn new(bases: Vec<Arc<PodBasis>>, widths: Vec<f64>) -> Result<BasisDictionary> {
        if bases.is_empty() {
            return Err(Error::Numerical("empty basis dictionary".into()));
        }
        for b in &bases {
            let tag = b
                .theta_tag
                .as_ref()
                .ok_or_else(|| Error::Numerical("dictionary basis lacks theta tag".into()))?;
            if tag.len() != widths.len() {
                return Err(Error::Dimension {
                    context: "dictionary tag".into(),
                    expected: widths.len(),
                    found: tag.len(),
                });
            }
        }
        Ok(BasisDictionary { bases, widths })
    }

    pub fn select(&self, theta: &[f64]) -> (usize, &Arc<PodBasis>) {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, b) in self.bases.iter().enumerate() {
            let tag = b.theta_tag.as_ref().unwrap();
            let d: f64 = tag
                .iter()
                .zip(theta)
                .zip(&self.widths)
                .map(|((t, q), w)| ((t - q) / w).powi(2))
                .sum();
            if d < best_d - 1e-15 {
                best_d = d;
                best = i;
            }
        }
        (best, &self.bases[best])
    }
}

/// Stack matched snapshot lists for space-time comparison.
pub fn stacked_states(snapshots: &[HeartState]) -> Vec<Vec<f64>> {
    snapshots
        .iter()
        .map(|s| {
            let mut col = Vec::with_capacity(2 * s.v_m.len());
            col.extend_from_slice(&s.v_m);
            col.extend_from_slice(&s.u_e);
            col
        })
        .collect()
}

/// Convenience: build a basis from one model run.
pub fn basis_from_model_run(
    model: &FullOrderModel,
    t_end: f64,
    snapshot_stride: usize,
    plan: &SelectionPlan,
    n_modes: usize,
    label: &str,
) -> Result<(PodBasis, Trajectory)> {
    let traj = model.run(t_end, snapshot_stride, &[])?;
    let snaps = collect(&[(&traj, label)], plan, model.params.base.v_min)?;
    let basis = compute_basis(&snaps, n_modes)?;
    Ok((basis, traj))
}

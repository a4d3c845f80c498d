//! Full-order time integration of the coupled transmembrane/extracellular
//! system.
//!
//! Each step extrapolates the transmembrane voltage to second order, updates
//! the gate in closed form, assembles the explicit ionic/stimulus load with
//! one-point centroid quadrature, and solves the constant block system under
//! the zero-mean extracellular constraint. The system matrix is assembled
//! and preconditioned exactly once per run.
//!
//! The first step has no `k-1` level: the gate uses implicit Euler and the
//! voltage history is padded (`v^{-1} := v^0`), which keeps the constant
//! matrix. All shipped experiments start from rest, where the padded step is
//! exact.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ecg::{self, EcgTrace, TransferMatrix};
use crate::error::{Error, Result};
use crate::fem::{self, NodeMap, SolveOptions, SparseSym, UeConstraint};
use crate::ionic::{self, MembraneParams, ParamField};
use crate::mesh::Mesh;

/// Rectangular stimulation pulses on a node set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StimulusProtocol {
    /// Stimulated heart nodes (global ids).
    pub support: Vec<u32>,
    /// Applied current density during a pulse.
    pub amplitude: f64,
    /// Pulse duration, ms.
    pub duration: f64,
    /// Pulse onset times, ms, strictly increasing.
    pub onsets: Vec<f64>,
}

impl StimulusProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::config("/stimulus/duration", "must be positive"));
        }
        if self.onsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "/stimulus/onsets",
                "must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// Pulse value at time t (half-open pulse windows).
    pub fn value_at(&self, t: f64) -> f64 {
        for &onset in &self.onsets {
            if t >= onset && t < onset + self.duration {
                return self.amplitude;
            }
            if onset > t {
                break;
            }
        }
        0.0
    }

    /// Accelerating pacing train: `n_beats` onsets, the first at `t0`, with
    /// the inter-beat period shrinking by `decrement` per beat.
    pub fn accelerating_onsets(
        t0: f64,
        first_period: f64,
        decrement: f64,
        n_beats: usize,
    ) -> Vec<f64> {
        let mut onsets = Vec::with_capacity(n_beats);
        let mut t = t0;
        let mut period = first_period;
        for _ in 0..n_beats {
            onsets.push(t);
            t += period;
            period -= decrement;
        }
        onsets
    }
}

/// Disc-shaped region where the outward time constant is divided, silencing
/// the plateau.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfarctSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub tau_out_divisor: f64,
}

impl InfarctSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::config("/infarct/radius", "must be positive"));
        }
        if !(self.tau_out_divisor >= 1.0) {
            return Err(Error::config("/infarct/tau_out_divisor", "must be >= 1"));
        }
        Ok(())
    }
}

/// Divide `tau_out` on every heart element whose centroid lies inside the
/// infarct disc. An empty affected set is a warning, not an error.
pub fn apply_infarct(field: &ParamField, spec: &InfarctSpec, mesh: &Mesh) -> Result<ParamField> {
    spec.validate()?;
    let mut out = field.clone();
    let mut affected = 0usize;
    for (e, region) in mesh.element_region.iter().enumerate() {
        if !region.is_heart() {
            continue;
        }
        let c = mesh.element_centroid(e);
        let d2 = (c[0] - spec.center[0]).powi(2) + (c[1] - spec.center[1]).powi(2);
        if d2 <= spec.radius * spec.radius {
            out.per_element[e].tau_out /= spec.tau_out_divisor;
            affected += 1;
        }
    }
    if affected == 0 {
        log::warn!(
            "infarct at ({}, {}) r={} affects no heart element",
            spec.center[0],
            spec.center[1],
            spec.radius
        );
    }
    Ok(out)
}

/// Discrete state on heart nodes (heart-local ordering).
#[derive(Debug, Clone)]
pub struct HeartState {
    pub time: f64,
    pub v_m: Vec<f64>,
    pub u_e: Vec<f64>,
    pub w: Vec<f64>,
}

/// Rest state: `v_m = v_min`, `u_e = 0`, `w` at the open-gate equilibrium.
pub fn initial_state(heart_map: &NodeMap, params: &MembraneParams) -> HeartState {
    let n = heart_map.len();
    HeartState {
        time: 0.0,
        v_m: vec![params.v_min; n],
        u_e: vec![0.0; n],
        w: vec![params.rest_gate(); n],
    }
}

/// Output of a forward run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub snapshot_stride: usize,
    /// States sampled every `snapshot_stride` steps (first sample at step
    /// `snapshot_stride`, i.e. strictly after t = 0).
    pub snapshots: Vec<HeartState>,
    pub ecg: Option<EcgTrace>,
    /// Transmembrane voltage recorded every step at probe nodes
    /// (global id, series including t = 0).
    pub probes: Vec<(u32, Vec<f64>)>,
    pub final_state: HeartState,
}

/// Immutable full-order model: mesh-bound matrices, parameter field,
/// stimulus, and optional ECG recording via a transfer matrix.
pub struct FullOrderModel {
    pub mesh: Arc<Mesh>,
    pub heart_map: NodeMap,
    pub heart_elements: Vec<usize>,
    pub params: ParamField,
    /// Per-heart-node parameters for the gate update, taken from the lowest
    /// indexed incident heart element.
    pub nodal_params: Vec<MembraneParams>,
    pub mass: SparseSym,
    pub k1: SparseSym,
    pub k2: SparseSym,
    pub system: SparseSym,
    pub lumped: Vec<f64>,
    pub dt: f64,
    pub stimulus: StimulusProtocol,
    pub transfer: Option<TransferMatrix>,
    /// Heart-local indices of the boundary nodes, in transfer column order.
    boundary_local: Vec<usize>,
    /// Per-element fraction of stimulated vertices (centroid quadrature).
    stim_weight: Vec<f64>,
    pub solve_opts: SolveOptions,
    /// Guard for the constant-matrix contract.
    pub assembly_count: usize,
}

impl FullOrderModel {
    pub fn new(
        mesh: Arc<Mesh>,
        params: ParamField,
        conductivity: &fem::ConductivityField,
        stimulus: StimulusProtocol,
        dt: f64,
        transfer: Option<TransferMatrix>,
        solve_opts: SolveOptions,
    ) -> Result<FullOrderModel> {
        if !(dt > 0.0) {
            return Err(Error::config("/dt", "must be positive"));
        }
        params.validate()?;
        stimulus.validate()?;
        let heart_map = NodeMap::heart(&mesh);
        if heart_map.is_empty() {
            return Err(Error::Mesh("mesh has no heart elements".into()));
        }
        let heart_elements = mesh.heart_elements();

        let mass = fem::assemble_mass(&mesh, &heart_map, &heart_elements);
        let k1 =
            fem::assemble_stiffness(&mesh, &heart_map, &heart_elements, &conductivity.sigma_i)?;
        let sigma_ie: Vec<f64> = conductivity
            .sigma_i
            .iter()
            .zip(&conductivity.sigma_e)
            .map(|(a, b)| a + b)
            .collect();
        let k2 = fem::assemble_stiffness(&mesh, &heart_map, &heart_elements, &sigma_ie)?;
        let system =
            fem::build_system_matrix(&mass, &k1, &k2, params.base.a_m, params.base.c_m, dt);
        let lumped = mass.row_sums();

        // Nodal gate parameters from the lowest indexed incident element.
        let mut owner = vec![usize::MAX; heart_map.len()];
        for &e in &heart_elements {
            for &g in &mesh.triangles[e] {
                let l = heart_map.local(g).unwrap();
                if owner[l] == usize::MAX || e < owner[l] {
                    owner[l] = e;
                }
            }
        }
        let nodal_params: Vec<MembraneParams> =
            owner.iter().map(|&e| params.per_element[e]).collect();

        let mut stim_weight = vec![0.0; mesh.n_elements()];
        let in_support: std::collections::HashSet<u32> =
            stimulus.support.iter().copied().collect();
        for &e in &heart_elements {
            let count = mesh.triangles[e]
                .iter()
                .filter(|g| in_support.contains(g))
                .count();
            stim_weight[e] = count as f64 / 3.0;
        }

        let boundary_local = match &transfer {
            Some(tm) => tm
                .boundary_nodes
                .iter()
                .map(|&g| {
                    heart_map
                        .local(g)
                        .ok_or_else(|| Error::Mesh("transfer boundary node not in heart".into()))
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };

        Ok(FullOrderModel {
            mesh,
            heart_map,
            heart_elements,
            params,
            nodal_params,
            mass,
            k1,
            k2,
            system,
            lumped,
            dt,
            stimulus,
            transfer,
            boundary_local,
            stim_weight,
            solve_opts,
            assembly_count: 1,
        })
    }

    pub fn n_heart(&self) -> usize {
        self.heart_map.len()
    }

    /// Ionic + stimulus load vector `A_m \int (I_app - I_ion) phi` with
    /// one-point centroid quadrature; shared by the full and reduced paths.
    pub fn ionic_stimulus_load(&self, v_tilde: &[f64], w: &[f64], t: f64) -> Vec<f64> {
        let n = self.n_heart();
        let mut load = vec![0.0; n];
        let stim_value = self.stimulus.value_at(t);
        let a_m = self.params.base.a_m;
        for &e in &self.heart_elements {
            let tri = &self.mesh.triangles[e];
            let p = &self.params.per_element[e];
            let la = self.heart_map.local(tri[0]).unwrap();
            let lb = self.heart_map.local(tri[1]).unwrap();
            let lc = self.heart_map.local(tri[2]).unwrap();
            let v_bar = (v_tilde[la] + v_tilde[lb] + v_tilde[lc]) / 3.0;
            let w_bar = (w[la] + w[lb] + w[lc]) / 3.0;
            let i_app = stim_value * self.stim_weight[e];
            let val =
                a_m * self.mesh.element_area(e) / 3.0 * (i_app - ionic::i_ion(v_bar, w_bar, p));
            load[la] += val;
            load[lb] += val;
            load[lc] += val;
        }
        load
    }

    /// Gate update for all heart nodes at the extrapolated voltage.
    pub fn gate_update(
        &self,
        v_tilde: &[f64],
        w_k: &[f64],
        w_km1: &[f64],
        bootstrap: bool,
    ) -> Vec<f64> {
        (0..self.n_heart())
            .map(|i| {
                let p = &self.nodal_params[i];
                if bootstrap {
                    ionic::gate_step_euler(w_k[i], v_tilde[i], self.dt, p)
                } else {
                    ionic::gate_step_bdf2(w_k[i], w_km1[i], v_tilde[i], self.dt, p)
                }
            })
            .collect()
    }

    /// One scheme step. `state_km1` supplies the second history level; pass
    /// `state_k` again (with `bootstrap = true`) for the first step.
    pub fn step(
        &self,
        state_k: &HeartState,
        state_km1: &HeartState,
        bootstrap: bool,
    ) -> Result<HeartState> {
        let n = self.n_heart();
        let t_next = state_k.time + self.dt;

        let v_tilde: Vec<f64> = (0..n)
            .map(|i| 2.0 * state_k.v_m[i] - state_km1.v_m[i])
            .collect();
        let w_next = self.gate_update(&v_tilde, &state_k.w, &state_km1.w, bootstrap);

        // rhs_V = (A_m C_m / dt) M (2 v^k - 1/2 v^{k-1}) + load
        let combo: Vec<f64> = (0..n)
            .map(|i| 2.0 * state_k.v_m[i] - 0.5 * state_km1.v_m[i])
            .collect();
        let mut rhs = vec![0.0; 2 * n];
        let m_combo = self.mass.matvec_alloc(&combo);
        let load = self.ionic_stimulus_load(&v_tilde, &w_next, t_next);
        let coeff = self.params.base.a_m * self.params.base.c_m / self.dt;
        for i in 0..n {
            rhs[i] = coeff * m_combo[i] + load[i];
        }

        let mut x0 = Vec::with_capacity(2 * n);
        x0.extend_from_slice(&state_k.v_m);
        x0.extend_from_slice(&state_k.u_e);
        let constraint = UeConstraint {
            offset: n,
            len: n,
            weights: &self.lumped,
        };
        let (x, _) = fem::solve_cg(
            &self.system,
            &rhs,
            Some(&x0),
            Some(&constraint),
            &self.solve_opts,
            &format!("bidomain step t={t_next}"),
        )?;

        Ok(HeartState {
            time: t_next,
            v_m: x[..n].to_vec(),
            u_e: x[n..].to_vec(),
            w: w_next,
        })
    }

    /// ECG leads for a state, through the transfer matrix.
    pub fn leads(&self, state: &HeartState) -> Result<Option<Vec<f64>>> {
        match &self.transfer {
            None => Ok(None),
            Some(tm) => {
                let boundary: Vec<f64> =
                    self.boundary_local.iter().map(|&l| state.u_e[l]).collect();
                let pots = tm.electrode_potentials(&boundary)?;
                Ok(Some(ecg::compute_leads(&pots, &tm.electrode_names())?))
            }
        }
    }

    /// March `ceil(t_end/dt)` steps from rest. Snapshots are taken every
    /// `snapshot_stride` steps when the stride is positive; probe voltages
    /// and ECG rows are recorded every step.
    pub fn run(
        &self,
        t_end: f64,
        snapshot_stride: usize,
        probe_nodes: &[u32],
    ) -> Result<Trajectory> {
        self.run_from(
            initial_state(&self.heart_map, &self.params.base),
            t_end,
            snapshot_stride,
            probe_nodes,
        )
    }

    pub fn run_from(
        &self,
        initial: HeartState,
        t_end: f64,
        snapshot_stride: usize,
        probe_nodes: &[u32],
    ) -> Result<Trajectory> {
        if !(t_end > 0.0) {
            return Err(Error::config("/t_end", "T must be positive"));
        }
        let n_steps = (t_end / self.dt).ceil() as usize;
        let probe_local: Vec<usize> = probe_nodes
            .iter()
            .map(|&g| {
                self.heart_map
                    .local(g)
                    .ok_or_else(|| Error::Mesh(format!("probe node {g} is not a heart node")))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut ecg_trace = self.transfer.as_ref().map(|tm| {
            EcgTrace::new(
                self.dt,
                initial.time,
                ecg::lead_names(&tm.electrode_names()),
            )
        });
        let mut probes: Vec<(u32, Vec<f64>)> = probe_nodes
            .iter()
            .zip(&probe_local)
            .map(|(&g, &l)| (g, vec![initial.v_m[l]]))
            .collect();
        if let (Some(trace), Some(leads)) = (&mut ecg_trace, self.leads(&initial)?) {
            trace.push(leads)?;
        }

        let mut snapshots = Vec::new();
        let mut state_km1 = initial.clone();
        let mut state_k = initial;
        for k in 0..n_steps {
            let next = if k == 0 {
                self.step(&state_k, &state_k.clone(), true)?
            } else {
                self.step(&state_k, &state_km1, false)?
            };
            state_km1 = std::mem::replace(&mut state_k, next);

            if let (Some(trace), Some(leads)) = (&mut ecg_trace, self.leads(&state_k)?) {
                trace.push(leads)?;
            }
            for ((_, series), &l) in probes.iter_mut().zip(&probe_local) {
                series.push(state_k.v_m[l]);
            }
            if snapshot_stride > 0 && (k + 1) % snapshot_stride == 0 {
                snapshots.push(state_k.clone());
            }
        }

        Ok(Trajectory {
            dt: self.dt,
            snapshot_stride,
            snapshots,
            ecg: ecg_trace,
            probes,
            final_state: state_k,
        })
    }

    /// Extracellular weighted mean, for invariant checks.
    pub fn ue_mean(&self, state: &HeartState) -> f64 {
        fem::weighted_mean(&state.u_e, &self.lumped)
    }
}

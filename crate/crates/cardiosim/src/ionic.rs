//! Two-variable phenomenological membrane model.
//!
//! The ionic current combines a gated inward term scaled by `tau_in` and an
//! ungated outward term scaled by `tau_out`; the gate `w` opens below
//! `v_gate` and closes above it. Both the current and the gate dynamics are
//! exactly the published two-variable formulation; the BDF2 gate update is
//! solved in closed form because the gate equation is affine in `w` once the
//! branch is fixed by the extrapolated voltage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembraneParams {
    /// Membrane area per volume, cm^-1.
    pub a_m: f64,
    /// Membrane capacitance per area, mF/cm^2.
    pub c_m: f64,
    pub tau_in: f64,
    pub tau_out: f64,
    pub tau_open: f64,
    pub tau_close: f64,
    /// Change-over voltage, mV.
    pub v_gate: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for MembraneParams {
    fn default() -> Self {
        Self::table_defaults()
    }
}

impl MembraneParams {
    /// Shipped defaults. `tau_close` is the right-ventricle value; the other
    /// regional values live in the run configuration.
    pub fn table_defaults() -> Self {
        MembraneParams {
            a_m: 200.0,
            c_m: 1e-3,
            tau_in: 16.0,
            tau_out: 360.0,
            tau_open: 100.0,
            tau_close: 120.0,
            v_gate: -67.0,
            v_min: -80.0,
            v_max: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("a_m", self.a_m),
            ("c_m", self.c_m),
            ("tau_in", self.tau_in),
            ("tau_out", self.tau_out),
            ("tau_open", self.tau_open),
            ("tau_close", self.tau_close),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("/membrane/{name}"),
                    "must be positive and finite",
                ));
            }
        }
        if !(self.v_min < self.v_gate && self.v_gate < self.v_max) {
            return Err(Error::config(
                "/membrane/v_gate",
                "must satisfy v_min < v_gate < v_max",
            ));
        }
        Ok(())
    }

    /// Voltage span `v_max - v_min`.
    pub fn span(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Resting gate value `1 / (v_max - v_min)^2`.
    pub fn rest_gate(&self) -> f64 {
        1.0 / (self.span() * self.span())
    }
}

/// Ionic current density. Enters the transmembrane balance with a plus sign,
/// so the inward (depolarizing) term is negative.
pub fn i_ion(v: f64, w: f64, p: &MembraneParams) -> f64 {
    let span = p.span();
    let dv = v - p.v_min;
    -(w / p.tau_in) * dv * dv * (p.v_max - v) / span + (1.0 / p.tau_out) * dv / span
}

/// Gate dynamics g(v, w); `dw/dt + g = 0`. The open branch applies for
/// `v <= v_gate` (the tie at `v == v_gate` is resolved to the open branch for
/// determinism).
pub fn gate_rate(v: f64, w: f64, p: &MembraneParams) -> f64 {
    if v <= p.v_gate {
        w / p.tau_open - 1.0 / (p.tau_open * p.span() * p.span())
    } else {
        w / p.tau_close
    }
}

/// Affine decomposition g(v, w) = rate * w + offset on the branch fixed by v.
fn gate_branch(v: f64, p: &MembraneParams) -> (f64, f64) {
    if v <= p.v_gate {
        (
            1.0 / p.tau_open,
            -1.0 / (p.tau_open * p.span() * p.span()),
        )
    } else {
        (1.0 / p.tau_close, 0.0)
    }
}

/// Closed-form solution of the BDF2 gate equation
/// `(3/2 w' - 2 w_k + 1/2 w_km1)/dt + g(v_tilde, w') = 0`.
/// The branch is selected from the extrapolated voltage, never from `w`.
pub fn gate_step_bdf2(w_k: f64, w_km1: f64, v_tilde: f64, dt: f64, p: &MembraneParams) -> f64 {
    let (rate, offset) = gate_branch(v_tilde, p);
    ((2.0 * w_k - 0.5 * w_km1) / dt - offset) / (1.5 / dt + rate)
}

/// Implicit-Euler gate update used to bootstrap the two-level scheme.
pub fn gate_step_euler(w_k: f64, v_tilde: f64, dt: f64, p: &MembraneParams) -> f64 {
    let (rate, offset) = gate_branch(v_tilde, p);
    (w_k / dt - offset) / (1.0 / dt + rate)
}

/// Per-element membrane parameters. The tissue-level constants `a_m`, `c_m`
/// are uniform (they enter the constant system matrix); the time constants
/// may vary per element, which covers the regional `tau_close` map and
/// infarct `tau_out` scaling.
#[derive(Debug, Clone)]
pub struct ParamField {
    pub base: MembraneParams,
    pub per_element: Vec<MembraneParams>,
}

/// Regional `tau_close` values for the four myocardial regions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauCloseRegions {
    pub rv: f64,
    pub endo: f64,
    pub mcell: f64,
    pub epi: f64,
}

impl Default for TauCloseRegions {
    fn default() -> Self {
        TauCloseRegions {
            rv: 120.0,
            endo: 130.0,
            mcell: 140.0,
            epi: 90.0,
        }
    }
}

impl ParamField {
    pub fn uniform(mesh: &Mesh, base: MembraneParams) -> ParamField {
        ParamField {
            base,
            per_element: vec![base; mesh.n_elements()],
        }
    }

    pub fn with_regions(mesh: &Mesh, base: MembraneParams, tau: &TauCloseRegions) -> ParamField {
        let mut field = ParamField::uniform(mesh, base);
        for (e, region) in mesh.element_region.iter().enumerate() {
            field.per_element[e].tau_close = match region {
                Region::Rv => tau.rv,
                Region::LvEndo => tau.endo,
                Region::LvMcell => tau.mcell,
                Region::LvEpi => tau.epi,
                _ => base.tau_close,
            };
        }
        field
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for p in &self.per_element {
            p.validate()?;
        }
        Ok(())
    }
}

/// Space-free reduction of the membrane model, integrated with the same
/// semi-implicit two-level scheme as the tissue solver: extrapolated voltage,
/// closed-form gate update, explicit ionic current. Used as the reference in
/// consistency and accuracy checks.
pub mod zero_d {
    use super::*;

    #[derive(Debug, Clone)]
    pub struct ZeroDimTrace {
        pub dt: f64,
        pub t0: f64,
        pub v: Vec<f64>,
        pub w: Vec<f64>,
    }

    /// Integrate from a single state. The first step pads the voltage
    /// history (`v_{-1} := v_0`, keeping the scheme's constant-coefficient
    /// form) and updates the gate with implicit Euler.
    pub fn integrate(
        p: &MembraneParams,
        v0: f64,
        w0: f64,
        dt: f64,
        n_steps: usize,
        i_app: impl Fn(f64) -> f64,
    ) -> ZeroDimTrace {
        let mut trace = ZeroDimTrace {
            dt,
            t0: 0.0,
            v: Vec::with_capacity(n_steps + 1),
            w: Vec::with_capacity(n_steps + 1),
        };
        trace.v.push(v0);
        trace.w.push(w0);

        let (mut v_k, mut w_k) = (v0, w0);
        let (mut v_km1, mut w_km1) = (v0, w0);
        for k in 0..n_steps {
            let t_next = (k + 1) as f64 * dt;
            let (v_next, w_next) = if k == 0 {
                step_bootstrap(p, v_k, w_k, dt, i_app(t_next))
            } else {
                step(p, v_k, v_km1, w_k, w_km1, dt, i_app(t_next))
            };
            v_km1 = v_k;
            w_km1 = w_k;
            v_k = v_next;
            w_k = w_next;
            trace.v.push(v_k);
            trace.w.push(w_k);
        }
        trace
    }

    /// Integrate with an explicit two-level history, e.g. seeded from a fine
    /// reference trajectory. No bootstrap step is taken.
    pub fn integrate_seeded(
        p: &MembraneParams,
        state_k: (f64, f64),
        state_km1: (f64, f64),
        t0: f64,
        dt: f64,
        n_steps: usize,
        i_app: impl Fn(f64) -> f64,
    ) -> ZeroDimTrace {
        let mut trace = ZeroDimTrace {
            dt,
            t0,
            v: vec![state_k.0],
            w: vec![state_k.1],
        };
        let (mut v_k, mut w_k) = state_k;
        let (mut v_km1, mut w_km1) = state_km1;
        for k in 0..n_steps {
            let t_next = t0 + (k + 1) as f64 * dt;
            let (v_next, w_next) = step(p, v_k, v_km1, w_k, w_km1, dt, i_app(t_next));
            v_km1 = v_k;
            w_km1 = w_k;
            v_k = v_next;
            w_k = w_next;
            trace.v.push(v_k);
            trace.w.push(w_k);
        }
        trace
    }

    /// One BDF2 step: `c_m (3/2 v' - 2 v_k + 1/2 v_km1)/dt + I_ion(v~, w') = I_app`.
    pub fn step(
        p: &MembraneParams,
        v_k: f64,
        v_km1: f64,
        w_k: f64,
        w_km1: f64,
        dt: f64,
        i_app: f64,
    ) -> (f64, f64) {
        let v_tilde = 2.0 * v_k - v_km1;
        let w_next = gate_step_bdf2(w_k, w_km1, v_tilde, dt, p);
        let rhs = (p.c_m / dt) * (2.0 * v_k - 0.5 * v_km1) + i_app - i_ion(v_tilde, w_next, p);
        let v_next = rhs / (1.5 * p.c_m / dt);
        (v_next, w_next)
    }

    fn step_bootstrap(
        p: &MembraneParams,
        v_0: f64,
        w_0: f64,
        dt: f64,
        i_app: f64,
    ) -> (f64, f64) {
        let v_tilde = v_0;
        let w_next = gate_step_euler(w_0, v_tilde, dt, p);
        // Padded BDF2 voltage update, identical to the tissue path.
        let rhs = (p.c_m / dt) * (2.0 * v_0 - 0.5 * v_0) + i_app - i_ion(v_tilde, w_next, p);
        let v_next = rhs / (1.5 * p.c_m / dt);
        (v_next, w_next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> MembraneParams {
        MembraneParams::table_defaults()
    }

    #[test]
    fn i_ion_zero_at_v_min() {
        let p = table();
        for w in [0.0, 1e-4, 0.3] {
            assert_eq!(i_ion(p.v_min, w, &p), 0.0);
        }
    }

    #[test]
    fn i_ion_at_v_max_is_inverse_tau_out() {
        let p = table();
        let got = i_ion(p.v_max, 5e-4, &p);
        assert!((got - 1.0 / 360.0).abs() < 1e-15);
        assert!((got - 2.7778e-3).abs() < 1e-6);
    }

    #[test]
    fn i_ion_matches_independent_evaluation() {
        // Independent symbolic re-derivation of the two-term expression,
        // coded separately from the implementation.
        let p = table();
        let (v, w) = (-30.0, 1e-4);
        let span = p.v_max - p.v_min;
        let inward = -(w / p.tau_in) * (v - p.v_min).powi(2) * (p.v_max - v) / span;
        let outward = (v - p.v_min) / (p.tau_out * span);
        let expected = inward + outward;
        assert!((i_ion(v, w, &p) - expected).abs() <= 1e-15 * expected.abs());
        // Frozen value from the hand computation.
        assert!((i_ion(v, w, &p) - (-6.423611111111111e-3)).abs() < 1e-15);
    }

    #[test]
    fn gate_rate_rest_equilibrium() {
        let p = table();
        let w_rest = p.rest_gate();
        assert!((w_rest - 1e-4).abs() < 1e-19);
        assert!(gate_rate(-80.0, w_rest, &p).abs() < 1e-20);
    }

    #[test]
    fn gate_rate_closed_branch() {
        let p = table();
        let got = gate_rate(0.0, 1e-4, &p);
        assert!((got - 1e-4 / 120.0).abs() < 1e-18);
        assert!((got - 8.3333e-7).abs() < 1e-10);
    }

    #[test]
    fn gate_rate_tie_uses_open_branch() {
        let p = table();
        let at_gate = gate_rate(p.v_gate, 1e-4, &p);
        let open = gate_rate(p.v_gate - 1e-9, 1e-4, &p);
        assert!((at_gate - open).abs() < 1e-15);
        assert!(at_gate.abs() < 1e-18); // rest value is the open equilibrium
    }

    #[test]
    fn gate_step_preserves_steady_state() {
        let p = table();
        let w = p.rest_gate();
        let next = gate_step_bdf2(w, w, -80.0, 0.5, &p);
        assert!((next - w).abs() < 1e-18);
    }

    /// Independent oracle: bisection on the scalar BDF2 residual.
    fn bisect_gate(w_k: f64, w_km1: f64, v: f64, dt: f64, p: &MembraneParams) -> f64 {
        let residual =
            |w: f64| (1.5 * w - 2.0 * w_k + 0.5 * w_km1) / dt + gate_rate(v, w, p);
        let (mut lo, mut hi) = (-1.0, 1.0);
        assert!(residual(lo) < 0.0 && residual(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn gate_step_matches_bisection_oracle() {
        let p = table();
        let cases = [
            (1e-4, 1e-4, 0.0, 0.5),
            (3e-4, 2.5e-4, -75.0, 0.5),
            (5e-5, 8e-5, 10.0, 1.0),
            (9e-4, 9e-4, -67.0, 0.25),
        ];
        for (w_k, w_km1, v, dt) in cases {
            let exact = gate_step_bdf2(w_k, w_km1, v, dt, &p);
            let oracle = bisect_gate(w_k, w_km1, v, dt, &p);
            assert!(
                (exact - oracle).abs() < 1e-12,
                "closed form {exact} vs bisection {oracle}"
            );
        }
    }

    #[test]
    fn gate_step_small_dt_limit() {
        let p = table();
        let (w_k, w_km1) = (2e-4, 1.5e-4);
        let got = gate_step_bdf2(w_k, w_km1, -80.0, 1e-8, &p);
        let limit = (4.0 * w_k - w_km1) / 3.0;
        assert!((got - limit).abs() < 1e-12);
    }

    #[test]
    fn gate_relaxes_to_rest_under_open_branch() {
        // From a fully closed gate (w = 0, the farthest physical state).
        let p = table();
        let dt = 0.5;
        let steps = (10.0 * p.tau_open / dt) as usize;
        let mut w_k = 0.0;
        let mut w_km1 = 0.0;
        for _ in 0..steps {
            let next = gate_step_bdf2(w_k, w_km1, -80.0, dt, &p);
            w_km1 = w_k;
            w_k = next;
        }
        assert!((w_k - p.rest_gate()).abs() < 1e-8);
    }

    #[test]
    fn regional_field_assigns_tau_close() {
        let mesh =
            crate::mesh::build_idealized_geometry(&crate::mesh::GeometryConfig::default())
                .unwrap();
        let tau = TauCloseRegions::default();
        let field = ParamField::with_regions(&mesh, table(), &tau);
        field.validate().unwrap();
        for (e, region) in mesh.element_region.iter().enumerate() {
            let expect = match region {
                Region::Rv => 120.0,
                Region::LvEndo => 130.0,
                Region::LvMcell => 140.0,
                Region::LvEpi => 90.0,
                _ => table().tau_close,
            };
            assert_eq!(field.per_element[e].tau_close, expect);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bdf2_residual_is_tiny(
                w_k in -1e-2f64..1e-2,
                w_km1 in -1e-2f64..1e-2,
                v in -120.0f64..60.0,
                dt in 1e-3f64..2.0,
            ) {
                let p = table();
                let w_next = gate_step_bdf2(w_k, w_km1, v, dt, &p);
                let residual = (1.5 * w_next - 2.0 * w_k + 0.5 * w_km1) / dt
                    + gate_rate(v, w_next, &p);
                let scale = (w_k.abs() / dt).max(1.0);
                prop_assert!(residual.abs() <= 1e-12 * scale);
            }

            #[test]
            fn current_and_rate_finite(
                v in -500.0f64..500.0,
                w in -1.0f64..1.0,
            ) {
                let p = table();
                prop_assert!(i_ion(v, w, &p).is_finite());
                prop_assert!(gate_rate(v, w, &p).is_finite());
            }
        }
    }
}

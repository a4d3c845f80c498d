//! Derived quantities: action-potential durations, restitution curves,
//! space-time error norms, and ECG comparison metrics.

use serde::{Deserialize, Serialize};

use crate::ecg::EcgTrace;
use crate::error::{Error, Result};

/// One restitution sample: an action potential duration paired with the
/// diastolic interval that preceded it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestitutionPoint {
    /// 1-based beat index within the trace.
    pub beat: usize,
    pub apd: f64,
    pub di: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Crossing {
    Up(f64),
    Down(f64),
}

/// Threshold crossings with linear interpolation between samples. "Above"
/// means strictly greater than the threshold.
fn crossings(trace: &[f64], dt: f64, t0: f64, threshold: f64) -> Vec<Crossing> {
    let mut events = Vec::new();
    for i in 0..trace.len().saturating_sub(1) {
        let (a, b) = (trace[i], trace[i + 1]);
        let above_a = a > threshold;
        let above_b = b > threshold;
        if above_a == above_b {
            continue;
        }
        let frac = (threshold - a) / (b - a);
        let t = t0 + (i as f64 + frac) * dt;
        events.push(if above_b {
            Crossing::Up(t)
        } else {
            Crossing::Down(t)
        });
    }
    events
}

/// APD/DI pairs from a voltage trace sampled at a fixed step. APD is the
/// time between an upward and the following downward crossing; DI is the
/// time from a downward crossing to the next upward crossing. The first
/// action potential has no preceding DI and incomplete trailing intervals
/// are dropped.
pub fn detect_apd_di(trace: &[f64], dt: f64, threshold: f64) -> Vec<RestitutionPoint> {
    let events = crossings(trace, dt, 0.0, threshold);
    // Collapse into alternating (up, down) pairs.
    let mut aps: Vec<(f64, f64)> = Vec::new(); // (t_up, t_down)
    let mut pending_up: Option<f64> = None;
    for e in events {
        match e {
            Crossing::Up(t) => {
                if pending_up.is_none() {
                    pending_up = Some(t);
                }
            }
            Crossing::Down(t) => {
                if let Some(up) = pending_up.take() {
                    aps.push((up, t));
                }
            }
        }
    }
    let mut points = Vec::new();
    for i in 1..aps.len() {
        let di = aps[i].0 - aps[i - 1].1;
        let apd = aps[i].1 - aps[i].0;
        if di > 0.0 && apd > 0.0 {
            points.push(RestitutionPoint {
                beat: i + 1,
                apd,
                di,
            });
        }
    }
    points
}

/// Time of the first upward threshold crossing (activation time).
pub fn first_crossing_time(trace: &[f64], dt: f64, threshold: f64) -> Option<f64> {
    crossings(trace, dt, 0.0, threshold)
        .into_iter()
        .find_map(|e| match e {
            Crossing::Up(t) => Some(t),
            Crossing::Down(_) => None,
        })
}

/// Sort restitution points by DI; duplicates keep input order.
pub fn restitution_curve(points: &[RestitutionPoint]) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.di, p.apd)).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs
}

/// Whether APD is nondecreasing in DI, up to a tolerance on APD.
pub fn restitution_monotone(points: &[RestitutionPoint], tol: f64) -> bool {
    let curve = restitution_curve(points);
    curve.windows(2).all(|w| w[1].1 >= w[0].1 - tol)
}

/// Discrete relative Euclidean error over matched space-time samples:
/// `||a - b|| / ||a||`.
pub fn spacetime_relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "spacetime error: sample count".into(),
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (col_a, col_b) in a.iter().zip(b) {
        if col_a.len() != col_b.len() {
            return Err(Error::Dimension {
                context: "spacetime error: field size".into(),
                expected: col_a.len(),
                found: col_b.len(),
            });
        }
        for (x, y) in col_a.iter().zip(col_b) {
            num += (x - y) * (x - y);
            den += x * x;
        }
    }
    if den == 0.0 {
        return Err(Error::Numerical(
            "spacetime error undefined for zero reference".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Mean lead values over a time window, minus the same means of a baseline
/// trace. Traces must share lead names; the window must lie inside both.
pub fn st_offset(trace: &EcgTrace, baseline: &EcgTrace, window: (f64, f64)) -> Result<Vec<f64>> {
    if trace.lead_names != baseline.lead_names {
        return Err(Error::Numerical("lead sets differ".into()));
    }
    let mean_over = |t: &EcgTrace| -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..t.len())
            .filter(|&i| {
                let ti = t.time(i);
                ti >= window.0 && ti <= window.1
            })
            .collect();
        if idx.is_empty() {
            return Err(Error::Numerical(format!(
                "window [{}, {}] outside trace",
                window.0, window.1
            )));
        }
        Ok((0..t.lead_names.len())
            .map(|l| idx.iter().map(|&i| t.rows[i][l]).sum::<f64>() / idx.len() as f64)
            .collect())
    };
    let m = mean_over(trace)?;
    let b = mean_over(baseline)?;
    Ok(m.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// Last time |d(lead)/dt| exceeds the slope threshold within the search
/// horizon; used to place the default ST window after the QRS complex.
pub fn qrs_end_time(lead: &[f64], dt: f64, slope_threshold: f64, t_max: f64) -> Option<f64> {
    let n = ((t_max / dt) as usize).min(lead.len().saturating_sub(1));
    let mut last = None;
    for i in 0..n {
        let slope = (lead[i + 1] - lead[i]) / dt;
        if slope.abs() > slope_threshold {
            last = Some((i + 1) as f64 * dt);
        }
    }
    last
}

/// Pearson correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Per-lead comparison of two traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcgMetrics {
    pub lead_names: Vec<String>,
    pub l2_mismatch: Vec<f64>,
    pub correlation: Vec<f64>,
    pub st_offset: Option<Vec<f64>>,
}

pub fn compare_ecgs(
    a: &EcgTrace,
    b: &EcgTrace,
    st_window: Option<(f64, f64)>,
) -> Result<EcgMetrics> {
    if a.lead_names != b.lead_names {
        return Err(Error::Numerical("lead sets differ".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "ecg comparison".into(),
            expected: a.len(),
            found: b.len(),
        });
    }
    let nl = a.lead_names.len();
    let mut l2 = Vec::with_capacity(nl);
    let mut corr = Vec::with_capacity(nl);
    for l in 0..nl {
        let sa: Vec<f64> = a.rows.iter().map(|r| r[l]).collect();
        let sb: Vec<f64> = b.rows.iter().map(|r| r[l]).collect();
        let mismatch = sa
            .iter()
            .zip(&sb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            * a.dt;
        l2.push(mismatch.sqrt());
        corr.push(pearson(&sa, &sb));
    }
    let st = match st_window {
        Some(w) => Some(st_offset(a, b, w)?),
        None => None,
    };
    Ok(EcgMetrics {
        lead_names: a.lead_names.clone(),
        l2_mismatch: l2,
        correlation: corr,
        st_offset: st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ionic::{self, MembraneParams};

    fn square_wave(high_ms: f64, low_ms: f64, periods: usize, dt: f64) -> Vec<f64> {
        let mut v = Vec::new();
        // Start below threshold so the first upstroke is a crossing.
        let lead_in = (50.0 / dt) as usize;
        v.extend(std::iter::repeat(-1.0).take(lead_in));
        for _ in 0..periods {
            v.extend(std::iter::repeat(1.0).take((high_ms / dt) as usize));
            v.extend(std::iter::repeat(-1.0).take((low_ms / dt) as usize));
        }
        v
    }

    #[test]
    fn square_wave_apd_di() {
        let dt = 1.0;
        let v = square_wave(200.0, 300.0, 3, dt);
        let points = detect_apd_di(&v, dt, 0.0);
        assert_eq!(points.len(), 2); // first AP has no preceding DI
        for p in &points {
            assert!((p.apd - 200.0).abs() < 1e-9, "apd {}", p.apd);
            assert!((p.di - 300.0).abs() < 1e-9, "di {}", p.di);
        }
    }

    #[test]
    fn constant_trace_empty() {
        let v = vec![-1.0; 100];
        assert!(detect_apd_di(&v, 0.5, 0.0).is_empty());
        assert!(first_crossing_time(&v, 0.5, 0.0).is_none());
    }

    #[test]
    fn zero_d_apd_close_to_fine_reference() {
        // Fine-step oracle for the membrane model with a single beat.
        let p = MembraneParams::table_defaults();
        let pulse = |t: f64| if (5.0..7.0).contains(&t) { 0.05 } else { 0.0 };
        let coarse = ionic::zero_d::integrate(&p, p.v_min, p.rest_gate(), 0.5, 1200, pulse);
        let fine = ionic::zero_d::integrate(&p, p.v_min, p.rest_gate(), 0.01, 60000, pulse);
        let apd_of = |v: &[f64], dt: f64| {
            let up = first_crossing_time(v, dt, p.v_gate).unwrap();
            let events = super::crossings(v, dt, 0.0, p.v_gate);
            let down = events
                .iter()
                .find_map(|e| match e {
                    Crossing::Down(t) if *t > up => Some(*t),
                    _ => None,
                })
                .unwrap();
            down - up
        };
        let apd_c = apd_of(&coarse.v, 0.5);
        let apd_f = apd_of(&fine.v, 0.01);
        assert!(
            (apd_c - apd_f).abs() / apd_f < 0.02,
            "coarse {apd_c} fine {apd_f}"
        );
    }

    #[test]
    fn restitution_curve_sorting() {
        let single = vec![RestitutionPoint {
            beat: 2,
            apd: 150.0,
            di: 100.0,
        }];
        assert_eq!(restitution_curve(&single), vec![(100.0, 150.0)]);

        let dup = vec![
            RestitutionPoint {
                beat: 2,
                apd: 150.0,
                di: 100.0,
            },
            RestitutionPoint {
                beat: 3,
                apd: 160.0,
                di: 100.0,
            },
        ];
        let curve = restitution_curve(&dup);
        assert_eq!(curve, vec![(100.0, 150.0), (100.0, 160.0)]);
    }

    #[test]
    fn spacetime_error_basic_identities() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(spacetime_relative_error(&a, &a).unwrap(), 0.0);
        let zero = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!((spacetime_relative_error(&a, &zero).unwrap() - 1.0).abs() < 1e-15);
        let scaled: Vec<Vec<f64>> = a
            .iter()
            .map(|c| c.iter().map(|x| 1.01 * x).collect())
            .collect();
        let err = spacetime_relative_error(&a, &scaled).unwrap();
        assert!((err - 0.01).abs() < 1e-12);
        let short = vec![vec![1.0, 2.0]];
        assert!(spacetime_relative_error(&a, &short).is_err());
    }

    #[test]
    fn st_offset_constant_shift() {
        let names: Vec<String> = ["I", "II"].iter().map(|s| s.to_string()).collect();
        let mut base = EcgTrace::new(1.0, 0.0, names.clone());
        let mut shifted = EcgTrace::new(1.0, 0.0, names);
        for i in 0..100 {
            let v = (i as f64 * 0.1).sin();
            base.push(vec![v, -v]).unwrap();
            shifted.push(vec![v + 0.1, -v]).unwrap();
        }
        let st = st_offset(&shifted, &base, (20.0, 80.0)).unwrap();
        assert!((st[0] - 0.1).abs() < 1e-12);
        assert!(st[1].abs() < 1e-12);
        assert!(st_offset(&shifted, &base, (200.0, 300.0)).is_err());
        // identical traces: zero on every lead
        let zero = st_offset(&base, &base, (0.0, 50.0)).unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn qrs_end_detection() {
        let dt = 0.5;
        let mut lead = vec![0.0; 400];
        // steep deflections between 20 and 40 ms
        for i in 40..80 {
            lead[i] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let end = qrs_end_time(&lead, dt, 1.0, 150.0).unwrap();
        assert!((end - 40.0).abs() <= 1.0, "end {end}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn apd_invariant_under_common_shift(
                shift in -50.0f64..50.0,
                seed in 0u64..50,
            ) {
                use rand::prelude::*;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut v = Vec::with_capacity(300);
                let mut x = -1.0;
                for _ in 0..300 {
                    x += rng.gen::<f64>() - 0.5;
                    v.push(x);
                }
                let base = detect_apd_di(&v, 0.5, 0.0);
                let shifted: Vec<f64> = v.iter().map(|y| y + shift).collect();
                let moved = detect_apd_di(&shifted, 0.5, shift);
                prop_assert_eq!(base.len(), moved.len());
                for (a, b) in base.iter().zip(&moved) {
                    prop_assert!((a.apd - b.apd).abs() < 1e-9);
                    prop_assert!((a.di - b.di).abs() < 1e-9);
                }
            }

            #[test]
            fn spacetime_error_depends_only_on_relative_norm(
                scale in 0.1f64..10.0,
            ) {
                let a = vec![vec![1.0, -2.0, 0.5]];
                let e = vec![vec![0.1, 0.05, -0.2]];
                let b: Vec<Vec<f64>> = a.iter().zip(&e)
                    .map(|(ca, ce)| ca.iter().zip(ce).map(|(x, y)| x + y).collect())
                    .collect();
                let a2: Vec<Vec<f64>> = a.iter()
                    .map(|c| c.iter().map(|x| scale * x).collect())
                    .collect();
                let b2: Vec<Vec<f64>> = a2.iter().zip(&e)
                    .map(|(ca, ce)| ca.iter().zip(ce).map(|(x, y)| x + scale * y).collect())
                    .collect();
                let e1 = spacetime_relative_error(&a, &b).unwrap();
                let e2 = spacetime_relative_error(&a2, &b2).unwrap();
                prop_assert!((e1 - e2).abs() < 1e-12);
            }
        }
    }
}

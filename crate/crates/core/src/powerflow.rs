//! Newton–Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{build_ybus, AdmittanceMatrix, BusKind, GridCase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("power flow did not converge after {iterations} iterations (max mismatch {final_mismatch:.3e} pu)")]
    NonConvergence {
        iterations: usize,
        final_mismatch: f64,
    },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("load vector has {got} entries, case has {expected} buses")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

/// Per-bus active and reactive demand in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadVector {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl LoadVector {
    pub fn base(case: &GridCase) -> Self {
        LoadVector {
            p: case.buses.iter().map(|b| b.base_p_load).collect(),
            q: case.buses.iter().map(|b| b.base_q_load).collect(),
        }
    }

    pub fn zeros(n: usize) -> Self {
        LoadVector {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LoadVector {
            p: self.p.iter().map(|v| v * factor).collect(),
            q: self.q.iter().map(|v| v * factor).collect(),
        }
    }

    /// `[p_0..p_N, q_0..q_N]`
    pub fn to_flat(&self) -> Vec<f64> {
        self.p.iter().chain(&self.q).copied().collect()
    }

    pub fn from_flat(x: &[f64]) -> Self {
        let n = x.len() / 2;
        LoadVector {
            p: x[..n].to_vec(),
            q: x[n..2 * n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    /// Demand the solution was computed for.
    pub loads: LoadVector,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Max mismatch before the first update and after every iteration.
    pub mismatch_history: Vec<f64>,
}

impl PfSolution {
    /// `[v_mag_0..v_mag_N, v_ang_0..v_ang_N]`
    pub fn to_flat(&self) -> Vec<f64> {
        self.v_mag.iter().chain(&self.v_ang).copied().collect()
    }
}

/// Nodal injections `S_i = V_i · conj(Σ_k Y_ik V_k)` for a polar voltage profile.
pub fn compute_injections(y: &AdmittanceMatrix, v_mag: &[f64], v_ang: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let v = voltage_phasors(v_mag, v_ang);
    let s = power_injections(&y.y, &v);
    (s.iter().map(|c| c.re).collect(), s.iter().map(|c| c.im).collect())
}

fn voltage_phasors(v_mag: &[f64], v_ang: &[f64]) -> DVector<Complex64> {
    DVector::from_iterator(
        v_mag.len(),
        v_mag.iter().zip(v_ang).map(|(&m, &a)| Complex64::from_polar(m, a)),
    )
}

fn power_injections(y: &DMatrix<Complex64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let current = y * v;
    v.zip_map(&current, |vi, ii| vi * ii.conj())
}

struct BusSets {
    /// Non-slack buses, unknown angle.
    pvpq: Vec<usize>,
    /// Load buses, unknown magnitude.
    pq: Vec<usize>,
}

impl BusSets {
    fn new(case: &GridCase) -> Self {
        let pvpq = case
            .buses
            .iter()
            .filter(|b| b.kind != BusKind::Slack)
            .map(|b| b.id)
            .collect();
        let pq = case
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::PQ)
            .map(|b| b.id)
            .collect();
        BusSets { pvpq, pq }
    }
}

fn mismatch(s: &DVector<Complex64>, s_spec: &[Complex64], sets: &BusSets) -> DVector<f64> {
    let np = sets.pvpq.len();
    let mut f = DVector::zeros(np + sets.pq.len());
    for (k, &i) in sets.pvpq.iter().enumerate() {
        f[k] = s[i].re - s_spec[i].re;
    }
    for (k, &i) in sets.pq.iter().enumerate() {
        f[np + k] = s[i].im - s_spec[i].im;
    }
    f
}

fn jacobian(y: &DMatrix<Complex64>, v: &DVector<Complex64>, sets: &BusSets) -> DMatrix<f64> {
    let n = v.len();
    let current = y * v;
    let v_norm = v.map(|c| c / c.norm());
    // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    let mut ds_dvm = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut ds_dva = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let j = Complex64::new(0.0, 1.0);
    for r in 0..n {
        for c in 0..n {
            let yrc = y[(r, c)];
            ds_dvm[(r, c)] = v[r] * (yrc * v_norm[c]).conj();
            ds_dva[(r, c)] = -j * v[r] * (yrc * v[c]).conj();
        }
        ds_dvm[(r, r)] += current[r].conj() * v_norm[r];
        ds_dva[(r, r)] += j * v[r] * current[r].conj();
    }
    let np = sets.pvpq.len();
    let m = np + sets.pq.len();
    let mut jac = DMatrix::zeros(m, m);
    for (a, &r) in sets.pvpq.iter().enumerate() {
        for (b, &c) in sets.pvpq.iter().enumerate() {
            jac[(a, b)] = ds_dva[(r, c)].re;
        }
        for (b, &c) in sets.pq.iter().enumerate() {
            jac[(a, np + b)] = ds_dvm[(r, c)].re;
        }
    }
    for (a, &r) in sets.pq.iter().enumerate() {
        for (b, &c) in sets.pvpq.iter().enumerate() {
            jac[(np + a, b)] = ds_dva[(r, c)].im;
        }
        for (b, &c) in sets.pq.iter().enumerate() {
            jac[(np + a, np + b)] = ds_dvm[(r, c)].im;
        }
    }
    jac
}

/// Solves the AC power flow for the given demand from a flat start.
pub fn solve_pf(case: &GridCase, loads: &LoadVector, opts: &PfOptions) -> Result<PfSolution, PfError> {
    let ybus = build_ybus(case);
    solve_pf_with_ybus(case, &ybus, loads, opts)
}

/// [`solve_pf`] with a prebuilt admittance matrix, for repeated solves on one case.
pub fn solve_pf_with_ybus(
    case: &GridCase,
    ybus: &AdmittanceMatrix,
    loads: &LoadVector,
    opts: &PfOptions,
) -> Result<PfSolution, PfError> {
    let n = case.n_buses();
    if loads.p.len() != n || loads.q.len() != n {
        return Err(PfError::DimensionMismatch {
            expected: n,
            got: loads.p.len().max(loads.q.len()),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(PfError::InvalidOptions(format!("tol must be positive, got {}", opts.tol)));
    }
    let sets = BusSets::new(case);
    let s_spec: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(case.p_set(i) - loads.p[i], -loads.q[i]))
        .collect();
    let mut v_mag: Vec<f64> = case
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::PQ => 1.0,
            _ => case.v_set(b.id).expect("validated generator bus"),
        })
        .collect();
    let mut v_ang = vec![0.0; n];
    let y = &ybus.y;

    let mut v = voltage_phasors(&v_mag, &v_ang);
    let mut f = mismatch(&power_injections(y, &v), &s_spec, &sets);
    let mut norm = f.amax();
    let mut history = vec![norm];
    let mut iterations = 0;
    while !(norm < opts.tol) {
        if iterations >= opts.max_iter || !norm.is_finite() || norm > 1e12 {
            return Err(PfError::NonConvergence {
                iterations,
                final_mismatch: norm,
            });
        }
        let jac = jacobian(y, &v, &sets);
        let dx = jac
            .lu()
            .solve(&(-&f))
            .ok_or(PfError::SingularJacobian { iteration: iterations + 1 })?;
        let np = sets.pvpq.len();
        for (k, &i) in sets.pvpq.iter().enumerate() {
            v_ang[i] += dx[k];
        }
        for (k, &i) in sets.pq.iter().enumerate() {
            v_mag[i] += dx[np + k];
        }
        iterations += 1;
        v = voltage_phasors(&v_mag, &v_ang);
        f = mismatch(&power_injections(y, &v), &s_spec, &sets);
        norm = f.amax();
        history.push(norm);
    }
    let (p_inj, q_inj) = compute_injections(ybus, &v_mag, &v_ang);
    Ok(PfSolution {
        v_mag,
        v_ang,
        p_inj,
        q_inj,
        loads: loads.clone(),
        iterations,
        max_mismatch: norm,
        mismatch_history: history,
    })
}

/// One bound of the operating-limit constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// Bus index the quantity belongs to.
    pub bus: usize,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    pub violation: f64,
    pub satisfied: bool,
}

impl BoundCheck {
    pub fn new(bus: usize, value: f64, min: f64, max: f64) -> Self {
        let violation = (min - value).max(value - max).max(0.0);
        BoundCheck {
            bus,
            value,
            min,
            max,
            violation,
            satisfied: violation == 0.0,
        }
    }
}

/// Evaluation of generator real/reactive limits and bus voltage magnitude/angle limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub gen_p: Vec<BoundCheck>,
    pub gen_q: Vec<BoundCheck>,
    pub v_mag: Vec<BoundCheck>,
    pub v_ang: Vec<BoundCheck>,
}

impl LimitReport {
    pub fn all_satisfied(&self) -> bool {
        self.iter().all(|c| c.satisfied)
    }

    pub fn violations(&self) -> impl Iterator<Item = &BoundCheck> {
        self.iter().filter(|c| !c.satisfied)
    }

    fn iter(&self) -> impl Iterator<Item = &BoundCheck> {
        self.gen_p
            .iter()
            .chain(&self.gen_q)
            .chain(&self.v_mag)
            .chain(&self.v_ang)
    }
}

/// Checks a solved operating point against the case limits.
///
/// Generator output at a bus is the net injection plus the local demand;
/// several generators on one bus are checked against their summed limits.
pub fn check_limits(case: &GridCase, sol: &PfSolution) -> LimitReport {
    let mut gen_buses: Vec<usize> = case.generators.iter().map(|g| g.bus).collect();
    gen_buses.sort_unstable();
    gen_buses.dedup();
    let mut gen_p = Vec::with_capacity(gen_buses.len());
    let mut gen_q = Vec::with_capacity(gen_buses.len());
    for &bus in &gen_buses {
        let gens = case.generators.iter().filter(|g| g.bus == bus);
        let (mut p_min, mut p_max, mut q_min, mut q_max) = (0.0, 0.0, 0.0, 0.0);
        for g in gens {
            p_min += g.p_min;
            p_max += g.p_max;
            q_min += g.q_min;
            q_max += g.q_max;
        }
        gen_p.push(BoundCheck::new(bus, sol.p_inj[bus] + sol.loads.p[bus], p_min, p_max));
        gen_q.push(BoundCheck::new(bus, sol.q_inj[bus] + sol.loads.q[bus], q_min, q_max));
    }
    let v_mag = case
        .buses
        .iter()
        .map(|b| BoundCheck::new(b.id, sol.v_mag[b.id], b.v_min, b.v_max))
        .collect();
    let v_ang = case
        .buses
        .iter()
        .map(|b| BoundCheck::new(b.id, sol.v_ang[b.id], b.d_min, b.d_max))
        .collect();
    LimitReport {
        gen_p,
        gen_q,
        v_mag,
        v_ang,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, Generator};

    fn lossless_two_bus() -> GridCase {
        let bus = |id, kind| Bus {
            id,
            kind,
            base_p_load: 0.0,
            base_q_load: 0.0,
            v_min: 0.94,
            v_max: 1.06,
            d_min: -1.0,
            d_max: 1.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        };
        GridCase {
            name: "lossless".into(),
            base_mva: 100.0,
            buses: vec![bus(0, BusKind::Slack), bus(1, BusKind::PQ)],
            branches: vec![Branch {
                from: 0,
                to: 1,
                r: 0.0,
                x: 0.2,
                b_charging: 0.0,
                tap: 1.0,
            }],
            generators: vec![Generator {
                bus: 0,
                p_set: 0.0,
                p_min: 0.0,
                p_max: 5.0,
                q_min: -5.0,
                q_max: 5.0,
                v_set: 1.0,
            }],
        }
    }

    #[test]
    fn flat_profile_has_zero_injections() {
        let mut case = GridCase::ieee14();
        for br in &mut case.branches {
            br.b_charging = 0.0;
            br.tap = 1.0;
        }
        for b in &mut case.buses {
            b.shunt_b = 0.0;
        }
        let y = build_ybus(&case);
        let (p, q) = compute_injections(&y, &[1.0; 14], &[0.0; 14]);
        assert!(p.iter().chain(&q).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lossless_line_transfers_power() {
        let y = build_ybus(&lossless_two_bus());
        let (p, _) = compute_injections(&y, &[1.0, 1.0], &[0.0, -0.1]);
        assert!((p[0] + p[1]).abs() < 1e-12);
        assert!(p[0] > 0.0);
    }

    #[test]
    fn two_bus_solution_matches_closed_form() {
        let case = lossless_two_bus();
        let loads = LoadVector {
            p: vec![0.0, 0.5],
            q: vec![0.0, 0.0],
        };
        let sol = solve_pf(&case, &loads, &PfOptions::default()).unwrap();
        // P = V0 V1 sin(d0 - d1) / x with reactive balance at bus 1.
        let p = sol.v_mag[0] * sol.v_mag[1] * (sol.v_ang[0] - sol.v_ang[1]).sin() / 0.2;
        assert!((p - 0.5).abs() < 1e-8);
        assert_eq!(sol.v_ang[0], 0.0);
    }

    #[test]
    fn dimension_mismatch_and_bad_options() {
        let case = GridCase::ieee14();
        let err = solve_pf(&case, &LoadVector::zeros(3), &PfOptions::default()).unwrap_err();
        assert_eq!(err, PfError::DimensionMismatch { expected: 14, got: 3 });
        let opts = PfOptions { tol: 0.0, max_iter: 5 };
        assert!(matches!(
            solve_pf(&case, &LoadVector::base(&case), &opts),
            Err(PfError::InvalidOptions(_))
        ));
    }

    #[test]
    fn heavy_load_does_not_converge() {
        let case = GridCase::ieee14();
        let loads = LoadVector::base(&case).scaled(1000.0);
        match solve_pf(&case, &loads, &PfOptions::default()) {
            Err(PfError::NonConvergence { .. }) | Err(PfError::SingularJacobian { .. }) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn bound_check_arithmetic() {
        let c = BoundCheck::new(3, 1.10, 0.94, 1.06);
        assert!(!c.satisfied);
        assert!((c.violation - 0.04).abs() < 1e-12);
        let ok = BoundCheck::new(0, 1.0, 0.94, 1.06);
        assert!(ok.satisfied);
        assert_eq!(ok.violation, 0.0);
    }
}

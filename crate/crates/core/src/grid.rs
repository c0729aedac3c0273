//! Bus-network cases and the nodal admittance matrix.
//!
//! Cases are stored in a small JSON schema (per-unit quantities, radians,
//! 0-based bus ids). The IEEE 14-bus system ships with the crate, see
//! [`GridCase::ieee14`].

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const IEEE14_JSON: &str = include_str!("../data/case14.json");

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid case: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    #[serde(rename = "pv")]
    PV,
    #[serde(rename = "pq")]
    PQ,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BusKind::Slack => write!(f, "slack"),
            BusKind::PV => write!(f, "pv"),
            BusKind::PQ => write!(f, "pq"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    #[serde(rename = "p_load")]
    pub base_p_load: f64,
    #[serde(rename = "q_load")]
    pub base_q_load: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    #[serde(rename = "b")]
    pub b_charging: f64,
    /// Off-nominal turns ratio on the `from` side, 1.0 for plain lines.
    pub tap: f64,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    /// Scheduled real output. Ignored at the slack bus, which balances the system.
    #[serde(default)]
    pub p_set: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

impl GridCase {
    /// The bundled IEEE 14-bus case.
    pub fn ieee14() -> GridCase {
        GridCase::from_json(IEEE14_JSON).expect("bundled case14.json is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GridCase, GridError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        GridCase::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<GridCase, GridError> {
        let mut case: GridCase = serde_json::from_str(text).map_err(|e| GridError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        case.buses.sort_by_key(|b| b.id);
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Voltage setpoint of a generator bus (first generator listed wins).
    pub fn v_set(&self, bus: usize) -> Option<f64> {
        self.generators.iter().find(|g| g.bus == bus).map(|g| g.v_set)
    }

    /// Total scheduled real generation at `bus`.
    pub fn p_set(&self, bus: usize) -> f64 {
        self.generators
            .iter()
            .filter(|g| g.bus == bus)
            .map(|g| g.p_set)
            .sum()
    }

    /// Undirected bus adjacency with parallel branches merged.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_buses()];
        for br in &self.branches {
            if !adj[br.from].contains(&br.to) {
                adj[br.from].push(br.to);
                adj[br.to].push(br.from);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Checks every structural invariant of a case.
    pub fn validate(&self) -> Result<(), GridError> {
        let invalid = |msg: String| Err(GridError::Validation(msg));
        let n = self.buses.len();
        if n == 0 {
            return invalid("case has no buses".into());
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return invalid(format!("base_mva must be positive, got {}", self.base_mva));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                return invalid(format!("bus ids must be contiguous 0..{n}, missing id {i}"));
            }
            let all_finite = [
                bus.base_p_load,
                bus.base_q_load,
                bus.v_min,
                bus.v_max,
                bus.d_min,
                bus.d_max,
                bus.shunt_g,
                bus.shunt_b,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !all_finite {
                return invalid(format!("bus {i} has non-finite data"));
            }
            if bus.v_min >= bus.v_max {
                return invalid(format!("bus {i}: v_min must be below v_max"));
            }
            if bus.d_min >= bus.d_max {
                return invalid(format!("bus {i}: d_min must be below d_max"));
            }
        }
        let n_slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        match n_slack {
            0 => return invalid("no slack bus".into()),
            1 => {}
            k => return invalid(format!("{k} slack buses, exactly one required")),
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return invalid(format!("branch {k} references a missing bus"));
            }
            if br.from == br.to {
                return invalid(format!("branch {k} connects bus {} to itself", br.from));
            }
            if !(br.r.is_finite() && br.x.is_finite() && br.b_charging.is_finite()) {
                return invalid(format!("branch {k} has non-finite impedance"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return invalid(format!("branch {k} has zero series impedance"));
            }
            if !(br.tap.is_finite() && br.tap > 0.0) {
                return invalid(format!("branch {k} has non-positive tap {}", br.tap));
            }
        }
        for (k, gen) in self.generators.iter().enumerate() {
            if gen.bus >= n {
                return invalid(format!("generator {k} references missing bus {}", gen.bus));
            }
            if self.buses[gen.bus].kind == BusKind::PQ {
                return invalid(format!("generator {k} sits on PQ bus {}", gen.bus));
            }
            if gen.p_min > gen.p_max {
                return invalid(format!("generator {k}: p_min exceeds p_max"));
            }
            if gen.q_min > gen.q_max {
                return invalid(format!("generator {k}: q_min exceeds q_max"));
            }
            if !(gen.v_set.is_finite() && gen.v_set > 0.0) {
                return invalid(format!("generator {k}: v_set must be positive"));
            }
        }
        for bus in &self.buses {
            if bus.kind != BusKind::PQ && self.v_set(bus.id).is_none() {
                return invalid(format!("{} bus {} has no generator", bus.kind, bus.id));
            }
        }
        let components = count_components(n, self.branches.iter().map(|b| (b.from, b.to)));
        if components != 1 {
            return invalid(format!("network has {components} islands, expected one"));
        }
        Ok(())
    }
}

/// Number of connected components of an undirected graph given by edges.
pub(crate) fn count_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> usize {
    let mut uf = UnionFind::new(n);
    for (a, b) in edges {
        uf.union(a, b);
    }
    uf.count()
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    pub fn count(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }

    /// Component label per element, numbered in order of first appearance.
    pub fn labels(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut map = vec![usize::MAX; n];
        let mut next = 0;
        (0..n)
            .map(|i| {
                let r = self.find(i);
                if map[r] == usize::MAX {
                    map[r] = next;
                    next += 1;
                }
                map[r]
            })
            .collect()
    }
}

/// Dense complex nodal admittance matrix in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.y[(i, j)]
    }
}

/// Assembles Y-bus from the π-model of every branch plus bus shunts.
///
/// The tap sits on the `from` side: `Yff = (y + jb/2)/t²`, `Yft = Ytf = -y/t`,
/// `Ytt = y + jb/2`.
pub fn build_ybus(case: &GridCase) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &case.branches {
        let ys = br.series_admittance();
        let half_b = Complex64::new(0.0, br.b_charging / 2.0);
        let t = br.tap;
        let (f, to) = (br.from, br.to);
        y[(f, f)] += (ys + half_b) / (t * t);
        y[(to, to)] += ys + half_b;
        y[(f, to)] -= ys / t;
        y[(to, f)] -= ys / t;
    }
    for bus in &case.buses {
        y[(bus.id, bus.id)] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    AdmittanceMatrix { y }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(r: f64, x: f64) -> GridCase {
        let bus = |id, kind| Bus {
            id,
            kind,
            base_p_load: 0.0,
            base_q_load: 0.0,
            v_min: 0.9,
            v_max: 1.1,
            d_min: -1.0,
            d_max: 1.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        };
        GridCase {
            name: "two".into(),
            base_mva: 100.0,
            buses: vec![bus(0, BusKind::Slack), bus(1, BusKind::PQ)],
            branches: vec![Branch {
                from: 0,
                to: 1,
                r,
                x,
                b_charging: 0.0,
                tap: 1.0,
            }],
            generators: vec![Generator {
                bus: 0,
                p_set: 0.0,
                p_min: 0.0,
                p_max: 10.0,
                q_min: -10.0,
                q_max: 10.0,
                v_set: 1.0,
            }],
        }
    }

    #[test]
    fn bundled_case14_counts() {
        let case = GridCase::ieee14();
        assert_eq!(case.n_buses(), 14);
        assert_eq!(case.branches.len(), 20);
        assert_eq!(case.generators.len(), 5);
        assert_eq!(case.slack(), 0);
    }

    #[test]
    fn two_bus_ybus_is_structural() {
        let case = two_bus(0.1, 0.3);
        let y = build_ybus(&case);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(0.1, 0.3);
        assert_eq!(y.get(0, 0), ys);
        assert_eq!(y.get(1, 1), ys);
        assert_eq!(y.get(0, 1), -ys);
        assert_eq!(y.get(1, 0), -ys);
    }

    #[test]
    fn zero_buses_rejected() {
        let text = r#"{"name":"e","base_mva":100,"buses":[],"branches":[],"generators":[]}"#;
        match GridCase::from_json(text) {
            Err(GridError::Validation(msg)) => assert!(msg.contains("no buses")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_slack_buses_rejected() {
        let mut case = two_bus(0.1, 0.3);
        case.buses[1].kind = BusKind::Slack;
        case.generators.push(Generator { bus: 1, ..case.generators[0].clone() });
        let err = case.validate().unwrap_err().to_string();
        assert!(err.contains("2 slack buses"), "{err}");
    }

    #[test]
    fn islands_rejected() {
        let mut case = GridCase::ieee14();
        // Bus 7 (0-based) hangs off bus 6 by a single branch.
        case.branches.retain(|b| !(b.from == 6 && b.to == 7));
        let err = case.validate().unwrap_err().to_string();
        assert!(err.contains("2 islands"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = GridCase::ieee14().to_json().replacen("\"v_min\"", "\"vmin_extra\": 1, \"v_min\"", 1);
        assert!(matches!(GridCase::from_json(&text), Err(GridError::Parse { .. })));
    }

    #[test]
    fn parse_error_has_line_context() {
        let text = "{\n  \"name\": \"x\",\n  \"base_mva\": oops\n}";
        match GridCase::from_json(text) {
            Err(GridError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_branch_and_generator_rejected() {
        let mut case = two_bus(0.0, 0.0);
        assert!(case.validate().unwrap_err().to_string().contains("zero series"));
        case.branches[0].x = 0.1;
        case.generators[0].p_min = 20.0;
        assert!(case.validate().unwrap_err().to_string().contains("p_min"));
        case.generators[0].p_min = 0.0;
        case.buses[0].v_min = 1.2;
        assert!(case.validate().unwrap_err().to_string().contains("v_min"));
    }
}

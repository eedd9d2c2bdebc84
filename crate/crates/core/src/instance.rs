//! TSP / CVRP problem instances: random generation, TSPLib and CVRPLib
//! parsing, and the native JSON format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AgfnError, Result};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Tsp,
    Cvrp,
}

impl std::str::FromStr for ProblemKind {
    type Err = AgfnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(ProblemKind::Tsp),
            "cvrp" => Ok(ProblemKind::Cvrp),
            other => Err(AgfnError::Config(format!("unknown problem kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemKind::Tsp => f.write_str("tsp"),
            ProblemKind::Cvrp => f.write_str("cvrp"),
        }
    }
}

/// A routing problem on points in the plane. For CVRP node 0 is the depot.
///
/// Distances are never stored; [`Instance::dist`] computes them from the
/// coordinates. Use [`DistanceMatrix`] when repeated lookups dominate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub kind: ProblemKind,
    pub name: String,
    pub coords: Vec<(f64, f64)>,
    #[serde(default)]
    pub demands: Vec<u32>,
    #[serde(default)]
    pub capacity: u32,
    /// Round distances to the nearest integer as TSPLib does for EUC_2D.
    /// Needed to compare against published optima; off by default.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tsplib_rounding: bool,
}

impl Instance {
    pub fn tsp(name: impl Into<String>, coords: Vec<(f64, f64)>) -> Result<Self> {
        let inst = Instance {
            kind: ProblemKind::Tsp,
            name: name.into(),
            coords,
            demands: Vec::new(),
            capacity: 0,
            tsplib_rounding: false,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// `demands[0]` must be 0 (the depot).
    pub fn cvrp(
        name: impl Into<String>,
        coords: Vec<(f64, f64)>,
        demands: Vec<u32>,
        capacity: u32,
    ) -> Result<Self> {
        let inst = Instance {
            kind: ProblemKind::Cvrp,
            name: name.into(),
            coords,
            demands,
            capacity,
            tsplib_rounding: false,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() < 2 {
            return Err(AgfnError::Invariant(format!(
                "instance '{}' has {} nodes, need at least 2",
                self.name,
                self.coords.len()
            )));
        }
        if self.coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(AgfnError::Invariant("non-finite coordinate".into()));
        }
        match self.kind {
            ProblemKind::Tsp => {
                if !self.demands.is_empty() {
                    return Err(AgfnError::Invariant("TSP instance carries demands".into()));
                }
            }
            ProblemKind::Cvrp => {
                if self.capacity == 0 {
                    return Err(AgfnError::Invariant("CVRP capacity must be positive".into()));
                }
                if self.demands.len() != self.coords.len() {
                    return Err(AgfnError::Invariant(format!(
                        "{} demands for {} nodes",
                        self.demands.len(),
                        self.coords.len()
                    )));
                }
                if self.demands[0] != 0 {
                    return Err(AgfnError::Invariant("depot demand must be 0".into()));
                }
                for (i, &d) in self.demands.iter().enumerate().skip(1) {
                    if d == 0 || d > self.capacity {
                        return Err(AgfnError::Invariant(format!(
                            "demand of node {i} is {d}, must lie in 1..={}",
                            self.capacity
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn is_cvrp(&self) -> bool {
        self.kind == ProblemKind::Cvrp
    }

    pub fn demand(&self, i: usize) -> u32 {
        match self.kind {
            ProblemKind::Tsp => 0,
            ProblemKind::Cvrp => self.demands[i],
        }
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let (xi, yi) = self.coords[i];
        let (xj, yj) = self.coords[j];
        let d = (xi - xj).hypot(yi - yj);
        if self.tsplib_rounding {
            (d + 0.5).floor()
        } else {
            d
        }
    }

    /// Closed-route length of a node sequence (the last node connects back to
    /// the first).
    pub fn closed_length(&self, nodes: &[usize]) -> f64 {
        if nodes.len() < 2 {
            return 0.0;
        }
        let open: f64 = nodes.windows(2).map(|w| self.dist(w[0], w[1])).sum();
        open + self.dist(nodes[nodes.len() - 1], nodes[0])
    }

    /// Length of an open node sequence.
    pub fn path_length(&self, nodes: &[usize]) -> f64 {
        nodes.windows(2).map(|w| self.dist(w[0], w[1])).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Instance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8_lossy(&bytes);
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "json" => Instance::from_json(&text),
            "tsp" => parse_tsplib(&bytes),
            "vrp" => parse_cvrplib(&bytes),
            _ => parse_auto(&bytes),
        }
    }
}

/// Dense distance cache, opt-in for instances of at most 2000 nodes.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub const MAX_NODES: usize = 2000;

    pub fn new(inst: &Instance) -> Result<Self> {
        let n = inst.n_nodes();
        if n > Self::MAX_NODES {
            return Err(AgfnError::Config(format!(
                "dense distance cache limited to {} nodes, instance has {n}",
                Self::MAX_NODES
            )));
        }
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = inst.dist(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(DistanceMatrix { n, d })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_customers: usize,
    pub demand_low: u32,
    pub demand_high: u32,
    pub capacity: u32,
    pub seed: u64,
}

impl GenConfig {
    /// Demands U[1, 9], capacity 50.
    pub fn standard(n_customers: usize, seed: u64) -> Self {
        GenConfig {
            n_customers,
            demand_low: 1,
            demand_high: 9,
            capacity: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_customers == 0 {
            return Err(AgfnError::Config("n_customers must be positive".into()));
        }
        if self.demand_low < 1 || self.demand_low > self.demand_high {
            return Err(AgfnError::Config(format!(
                "demand range [{}, {}] invalid, need 1 <= low <= high",
                self.demand_low, self.demand_high
            )));
        }
        if self.capacity < self.demand_high {
            return Err(AgfnError::Config(format!(
                "capacity {} below maximum demand {}",
                self.capacity, self.demand_high
            )));
        }
        Ok(())
    }
}

/// Uniform instance on the unit square. TSP gets `n_customers` nodes; CVRP
/// gets a depot plus `n_customers` customers.
pub fn generate(cfg: &GenConfig, kind: ProblemKind) -> Result<Instance> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, Stream::Data, 0, 0);
    match kind {
        ProblemKind::Tsp => {
            if cfg.n_customers < 2 {
                return Err(AgfnError::Config("TSP needs at least 2 nodes".into()));
            }
            let coords = (0..cfg.n_customers)
                .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            Instance::tsp(format!("tsp{}_s{}", cfg.n_customers, cfg.seed), coords)
        }
        ProblemKind::Cvrp => {
            let n = cfg.n_customers + 1;
            let coords: Vec<(f64, f64)> =
                (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
            let mut demands = Vec::with_capacity(n);
            demands.push(0);
            for _ in 0..cfg.n_customers {
                demands.push(rng.gen_range(cfg.demand_low..=cfg.demand_high));
            }
            Instance::cvrp(
                format!("cvrp{}_s{}", cfg.n_customers, cfg.seed),
                coords,
                demands,
                cfg.capacity,
            )
        }
    }
}

#[derive(Debug, Default)]
struct LibFile {
    name: Option<String>,
    kind: Option<String>,
    dimension: Option<usize>,
    capacity: Option<u32>,
    coords: Vec<(usize, f64, f64, usize)>,
    demands: Vec<(usize, u32, usize)>,
    depots: Vec<usize>,
    saw_coord_section: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Header,
    Coords,
    Demands,
    Depots,
    Skip,
}

fn parse_lib(text: &[u8]) -> Result<LibFile> {
    let text = String::from_utf8_lossy(text);
    let mut out = LibFile::default();
    let mut section = Section::Header;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let upper = line.to_ascii_uppercase();
        if upper == "EOF" {
            break;
        }
        if upper.ends_with("_SECTION") || upper.starts_with("NODE_COORD_SECTION") {
            section = match upper.as_str() {
                "NODE_COORD_SECTION" => {
                    out.saw_coord_section = true;
                    Section::Coords
                }
                "DEMAND_SECTION" => Section::Demands,
                "DEPOT_SECTION" => Section::Depots,
                "EDGE_WEIGHT_SECTION" => {
                    return Err(AgfnError::Unsupported(format!(
                        "line {line_no}: explicit edge weights are not supported"
                    )))
                }
                _ => Section::Skip,
            };
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            if section == Section::Header || !key.trim().chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-') {
                let key = key.trim().to_ascii_uppercase();
                let value = value.trim();
                section = Section::Header;
                match key.as_str() {
                    "NAME" => out.name = Some(value.to_string()),
                    "TYPE" => out.kind = Some(value.to_ascii_uppercase()),
                    "DIMENSION" => {
                        out.dimension = Some(value.parse().map_err(|_| {
                            AgfnError::parse(line_no, format!("bad DIMENSION '{value}'"))
                        })?)
                    }
                    "CAPACITY" => {
                        out.capacity = Some(value.parse().map_err(|_| {
                            AgfnError::parse(line_no, format!("bad CAPACITY '{value}'"))
                        })?)
                    }
                    "EDGE_WEIGHT_TYPE" => {
                        if !value.eq_ignore_ascii_case("EUC_2D") {
                            return Err(AgfnError::Unsupported(format!(
                                "line {line_no}: EDGE_WEIGHT_TYPE {value} (only EUC_2D)"
                            )));
                        }
                    }
                    _ => {}
                }
                continue;
            }
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Header => {
                return Err(AgfnError::parse(line_no, format!("unexpected line '{line}'")))
            }
            Section::Skip => {}
            Section::Coords => {
                if fields.len() != 3 {
                    return Err(AgfnError::parse(line_no, "coordinate line needs 'id x y'"));
                }
                let id = parse_id(fields[0], line_no)?;
                let x: f64 = fields[1]
                    .parse()
                    .map_err(|_| AgfnError::parse(line_no, format!("bad x '{}'", fields[1])))?;
                let y: f64 = fields[2]
                    .parse()
                    .map_err(|_| AgfnError::parse(line_no, format!("bad y '{}'", fields[2])))?;
                out.coords.push((id, x, y, line_no));
            }
            Section::Demands => {
                if fields.len() != 2 {
                    return Err(AgfnError::parse(line_no, "demand line needs 'id demand'"));
                }
                let id = parse_id(fields[0], line_no)?;
                let d: u32 = fields[1]
                    .parse()
                    .map_err(|_| AgfnError::parse(line_no, format!("bad demand '{}'", fields[1])))?;
                out.demands.push((id, d, line_no));
            }
            Section::Depots => {
                for f in fields {
                    let v: i64 = f
                        .parse()
                        .map_err(|_| AgfnError::parse(line_no, format!("bad depot id '{f}'")))?;
                    if v == -1 {
                        section = Section::Skip;
                        break;
                    }
                    if v < 1 {
                        return Err(AgfnError::parse(line_no, format!("bad depot id '{v}'")));
                    }
                    out.depots.push(v as usize);
                }
            }
        }
    }
    Ok(out)
}

fn parse_id(s: &str, line_no: usize) -> Result<usize> {
    let id: usize = s
        .parse()
        .map_err(|_| AgfnError::parse(line_no, format!("bad node id '{s}'")))?;
    if id == 0 {
        return Err(AgfnError::parse(line_no, "node ids are 1-based"));
    }
    Ok(id)
}

fn ordered_coords(file: &LibFile) -> Result<Vec<(f64, f64)>> {
    if !file.saw_coord_section {
        return Err(AgfnError::parse(0, "missing NODE_COORD_SECTION"));
    }
    let dim = file
        .dimension
        .ok_or_else(|| AgfnError::parse(0, "missing DIMENSION"))?;
    let mut coords = vec![None; dim];
    for &(id, x, y, line) in &file.coords {
        if id > dim {
            return Err(AgfnError::parse(line, format!("node id {id} exceeds DIMENSION {dim}")));
        }
        if coords[id - 1].is_some() {
            return Err(AgfnError::parse(line, format!("duplicate node id {id}")));
        }
        coords[id - 1] = Some((x, y));
    }
    coords
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| AgfnError::parse(0, format!("node {} has no coordinates", i + 1)))
        })
        .collect()
}

/// Parses a TSPLib EUC_2D file.
pub fn parse_tsplib(text: &[u8]) -> Result<Instance> {
    let file = parse_lib(text)?;
    if let Some(kind) = &file.kind {
        if kind != "TSP" {
            return Err(AgfnError::Unsupported(format!("TYPE {kind} is not TSP")));
        }
    }
    let coords = ordered_coords(&file)?;
    Instance::tsp(file.name.clone().unwrap_or_else(|| "unnamed".into()), coords)
}

/// Parses a CVRPLib (Uchoa-style) file. The depot is moved to index 0; the
/// other nodes keep their relative order.
pub fn parse_cvrplib(text: &[u8]) -> Result<Instance> {
    let file = parse_lib(text)?;
    if let Some(kind) = &file.kind {
        if kind != "CVRP" {
            return Err(AgfnError::Unsupported(format!("TYPE {kind} is not CVRP")));
        }
    }
    let coords = ordered_coords(&file)?;
    let dim = coords.len();
    let capacity = file
        .capacity
        .ok_or_else(|| AgfnError::parse(0, "missing CAPACITY"))?;
    let depot = *file
        .depots
        .first()
        .ok_or_else(|| AgfnError::parse(0, "missing DEPOT_SECTION or depot id"))?;
    if depot > dim {
        return Err(AgfnError::parse(0, format!("depot {depot} exceeds DIMENSION {dim}")));
    }
    if file.depots.len() > 1 {
        return Err(AgfnError::Unsupported("multiple depots".into()));
    }
    let mut demand = vec![None; dim];
    for &(id, d, line) in &file.demands {
        if id > dim {
            return Err(AgfnError::parse(line, format!("node id {id} exceeds DIMENSION {dim}")));
        }
        if d > capacity {
            return Err(AgfnError::parse(
                line,
                format!("demand {d} of node {id} exceeds CAPACITY {capacity}"),
            ));
        }
        if id != depot && d == 0 {
            return Err(AgfnError::parse(line, format!("customer {id} has zero demand")));
        }
        demand[id - 1] = Some(d);
    }
    let depot_idx = depot - 1;
    let order: Vec<usize> = std::iter::once(depot_idx)
        .chain((0..dim).filter(|&i| i != depot_idx))
        .collect();
    let mut new_coords = Vec::with_capacity(dim);
    let mut new_demands = Vec::with_capacity(dim);
    for &i in &order {
        new_coords.push(coords[i]);
        let d = if i == depot_idx {
            0
        } else {
            demand[i].ok_or_else(|| AgfnError::parse(0, format!("node {} has no demand", i + 1)))?
        };
        new_demands.push(d);
    }
    Instance::cvrp(
        file.name.clone().unwrap_or_else(|| "unnamed".into()),
        new_coords,
        new_demands,
        capacity,
    )
}

/// Dispatches on the TYPE header.
pub fn parse_auto(text: &[u8]) -> Result<Instance> {
    let s = String::from_utf8_lossy(text).to_ascii_uppercase();
    if s.lines().any(|l| {
        l.split_once(':')
            .is_some_and(|(k, v)| k.trim() == "TYPE" && v.trim() == "CVRP")
    }) {
        parse_cvrplib(text)
    } else {
        parse_tsplib(text)
    }
}

/// Writes the instance in TSPLib (TSP) or CVRPLib (CVRP) text form. Coordinates
/// use shortest round-trip formatting so parsing the output reproduces them
/// exactly.
pub fn to_lib_format(inst: &Instance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {}", inst.name);
    match inst.kind {
        ProblemKind::Tsp => {
            let _ = writeln!(s, "TYPE : TSP");
        }
        ProblemKind::Cvrp => {
            let _ = writeln!(s, "TYPE : CVRP");
        }
    }
    let _ = writeln!(s, "DIMENSION : {}", inst.n_nodes());
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
    if inst.is_cvrp() {
        let _ = writeln!(s, "CAPACITY : {}", inst.capacity);
    }
    let _ = writeln!(s, "NODE_COORD_SECTION");
    for (i, (x, y)) in inst.coords.iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?}", i + 1, x, y);
    }
    if inst.is_cvrp() {
        let _ = writeln!(s, "DEMAND_SECTION");
        for (i, d) in inst.demands.iter().enumerate() {
            let _ = writeln!(s, "{} {}", i + 1, d);
        }
        let _ = writeln!(s, "DEPOT_SECTION");
        let _ = writeln!(s, " 1");
        let _ = writeln!(s, " -1");
    }
    let _ = writeln!(s, "EOF");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TSP3: &str = "NAME : tri\nTYPE : TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 0\n3 0 1\nEOF\n";

    fn cvrp_fixture(demands: [u32; 3], depot_last: bool) -> String {
        let mut s = String::from("NAME : small\nTYPE : CVRP\nDIMENSION : 4\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : 50\nNODE_COORD_SECTION\n");
        let pts = [(10.0, 10.0), (1.0, 2.0), (3.0, 4.0), (5.0, 6.0)];
        if depot_last {
            for (i, p) in pts[1..].iter().enumerate() {
                s += &format!("{} {} {}\n", i + 1, p.0, p.1);
            }
            s += &format!("4 {} {}\n", pts[0].0, pts[0].1);
            s += "DEMAND_SECTION\n";
            for (i, d) in demands.iter().enumerate() {
                s += &format!("{} {}\n", i + 1, d);
            }
            s += "4 0\nDEPOT_SECTION\n 4\n -1\nEOF\n";
        } else {
            for (i, p) in pts.iter().enumerate() {
                s += &format!("{} {} {}\n", i + 1, p.0, p.1);
            }
            s += "DEMAND_SECTION\n1 0\n";
            for (i, d) in demands.iter().enumerate() {
                s += &format!("{} {}\n", i + 2, d);
            }
            s += "DEPOT_SECTION\n 1\n -1\nEOF\n";
        }
        s
    }

    #[test]
    fn generate_cvrp_standard() {
        let inst = generate(&GenConfig::standard(100, 7), ProblemKind::Cvrp).unwrap();
        assert_eq!(inst.n_nodes(), 101);
        assert_eq!(inst.demands[0], 0);
        assert!(inst.demands[1..].iter().all(|&d| (1..=9).contains(&d)));
        assert_eq!(inst.capacity, 50);
        assert!(inst
            .coords
            .iter()
            .all(|&(x, y)| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)));
    }

    #[test]
    fn generate_tiny_tsp_and_determinism() {
        let cfg = GenConfig::standard(2, 11);
        let a = generate(&cfg, ProblemKind::Tsp).unwrap();
        assert_eq!(a.n_nodes(), 2);
        assert!(a.coords.iter().all(|&(x, y)| (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y)));
        let b = generate(&cfg, ProblemKind::Tsp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generate_rejects_bad_config() {
        let mut cfg = GenConfig::standard(5, 1);
        cfg.capacity = 5;
        assert!(matches!(generate(&cfg, ProblemKind::Cvrp), Err(AgfnError::Config(_))));
        cfg = GenConfig::standard(5, 1);
        cfg.demand_low = 0;
        assert!(generate(&cfg, ProblemKind::Cvrp).is_err());
    }

    #[test]
    fn parse_tsplib_fixture() {
        let inst = parse_tsplib(TSP3.as_bytes()).unwrap();
        assert_eq!(inst.coords, vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(inst.kind, ProblemKind::Tsp);
        assert_eq!(inst.name, "tri");
    }

    #[test]
    fn parse_tsplib_errors() {
        let missing = "NAME: x\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\nEOF\n";
        assert!(matches!(parse_tsplib(missing.as_bytes()), Err(AgfnError::Parse { .. })));
        let explicit = "NAME: x\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EXPLICIT\nEOF\n";
        assert!(matches!(parse_tsplib(explicit.as_bytes()), Err(AgfnError::Unsupported(_))));
        let bad = "NAME: x\nDIMENSION: 2\nNODE_COORD_SECTION\n1 0 0\n2 zz 1\nEOF\n";
        match parse_tsplib(bad.as_bytes()) {
            Err(AgfnError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_cvrplib_fixture() {
        let inst = parse_cvrplib(cvrp_fixture([3, 4, 5], false).as_bytes()).unwrap();
        assert_eq!(inst.capacity, 50);
        assert_eq!(inst.demands, vec![0, 3, 4, 5]);
        assert_eq!(inst.coords[0], (10.0, 10.0));
    }

    #[test]
    fn parse_cvrplib_relocates_depot() {
        let inst = parse_cvrplib(cvrp_fixture([3, 4, 5], true).as_bytes()).unwrap();
        assert_eq!(inst.coords[0], (10.0, 10.0));
        assert_eq!(inst.coords[1], (1.0, 2.0));
        assert_eq!(inst.demands, vec![0, 3, 4, 5]);
    }

    #[test]
    fn parse_cvrplib_rejects_overweight_and_missing_depot() {
        assert!(matches!(
            parse_cvrplib(cvrp_fixture([3, 60, 5], false).as_bytes()),
            Err(AgfnError::Parse { .. })
        ));
        let no_depot = cvrp_fixture([3, 4, 5], false).replace("DEPOT_SECTION\n 1\n -1\n", "");
        assert!(matches!(parse_cvrplib(no_depot.as_bytes()), Err(AgfnError::Parse { .. })));
    }

    #[test]
    fn json_round_trip() {
        let inst = generate(&GenConfig::standard(6, 3), ProblemKind::Cvrp).unwrap();
        let back = Instance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn tsplib_rounding_flag() {
        let mut inst = Instance::tsp("r", vec![(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!((inst.dist(0, 1) - 2f64.sqrt()).abs() < 1e-15);
        inst.tsplib_rounding = true;
        assert_eq!(inst.dist(0, 1), 1.0);
    }

    #[test]
    fn distance_matrix_matches() {
        let inst = generate(&GenConfig::standard(12, 5), ProblemKind::Tsp).unwrap();
        let m = DistanceMatrix::new(&inst).unwrap();
        for i in 0..12 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..12 {
                assert_eq!(m.get(i, j), inst.dist(i, j));
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lib_format_round_trips(seed in 0u64..10_000, n in 2usize..30, cvrp in any::<bool>()) {
                let kind = if cvrp { ProblemKind::Cvrp } else { ProblemKind::Tsp };
                let inst = generate(&GenConfig::standard(n, seed), kind).unwrap();
                let text = to_lib_format(&inst);
                let parsed = parse_auto(text.as_bytes()).unwrap();
                prop_assert_eq!(&parsed, &inst);
                let again = parse_auto(to_lib_format(&parsed).as_bytes()).unwrap();
                prop_assert_eq!(again, parsed);
            }

            #[test]
            fn triangle_inequality(seed in 0u64..10_000) {
                let inst = generate(&GenConfig::standard(8, seed), ProblemKind::Cvrp).unwrap();
                let n = inst.n_nodes();
                for i in 0..n { for j in 0..n { for k in 0..n {
                    prop_assert!(inst.dist(i, k) <= inst.dist(i, j) + inst.dist(j, k) + 1e-12);
                }}}
                prop_assert!(inst.demands[1..].iter().all(|&d| (1..=9).contains(&d)) && inst.capacity == 50);
            }
        }
    }
}

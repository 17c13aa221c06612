//! Rectangle-structured chip topologies and the path sets assessed on them.
//!
//! A chip is a coupling graph whose qubits are tiled by 12-qubit rectangles
//! (heavy-hex cells). Sub-chips are single rectangles or adjacent pairs; the
//! assessment stages run protocols over the shortest paths enumerated here.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type QubitId = u32;

pub const TOPOLOGY_SCHEMA_VERSION: u32 = 1;
pub const RECT_CYCLE_LEN: usize = 12;

const EAGLE_DOC: &str = include_str!("../data/eagle.json");
const HERON_DOC: &str = include_str!("../data/heron.json");

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Malformed(String),
    #[error("unsupported topology schema version {0}")]
    SchemaVersion(u32),
    #[error("edge ({0}, {1}) is invalid for a chip of {2} qubits")]
    BadEdge(QubitId, QubitId, u32),
    #[error("coupling graph is not connected")]
    Disconnected,
    #[error("rectangle {index}: cycle has {len} qubits, expected 12")]
    CycleLength { index: u32, len: usize },
    #[error("rectangle {index}: {a}-{b} is not an edge, cycle is not closed")]
    CycleNotClosed { index: u32, a: QubitId, b: QubitId },
    #[error("rectangle {0}: cycle does not induce a simple 12-cycle")]
    CycleNotSimple(u32),
    #[error("rectangle {index}: corner {corner} is invalid or has no antipodal corner")]
    BadCorner { index: u32, corner: QubitId },
    #[error("rectangle indices must be 1..=N in order, found {0}")]
    BadIndex(u32),
    #[error("adjacency pair ({0}, {1}) shares no qubit or names an unknown rectangle")]
    BadAdjacency(u32, u32),
    #[error("unknown rectangle {0}")]
    UnknownRectangle(u32),
    #[error("rectangles {0} and {1} are not adjacent")]
    NotAdjacent(u32, u32),
    #[error("a sub-chip holds one or two rectangles, got {0}")]
    BadSubChipSize(usize),
    #[error("qubit {0} is not part of the sub-chip")]
    QubitNotInSubChip(QubitId),
    #[error("path endpoints must differ")]
    SameEndpoints,
    #[error("M-L is not scheduled for rectangle pairs in strict mode")]
    MaxLengthsOnPair,
    #[error("unknown stage '{0}'")]
    UnknownStage(String),
}

/// On-disk form of a topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub schema_version: u32,
    pub name: String,
    pub qubit_count: u32,
    pub edges: Vec<[QubitId; 2]>,
    pub rectangles: Vec<RectangleDocument>,
    pub adjacency: Vec<[u32; 2]>,
    /// Optional drawing coordinates, one `[x, y]` per qubit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Vec<[i32; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectangleDocument {
    pub index: u32,
    pub cycle: Vec<QubitId>,
    pub corners: Vec<QubitId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rectangle {
    pub index: u32,
    pub cycle: Vec<QubitId>,
    pub corners: [QubitId; 4],
}

impl Rectangle {
    fn position(&self, q: QubitId) -> Option<usize> {
        self.cycle.iter().position(|&c| c == q)
    }

    /// The corner diametrically opposite `corner` on the cycle.
    pub fn antipode(&self, q: QubitId) -> Option<QubitId> {
        let pos = self.position(q)?;
        Some(self.cycle[(pos + RECT_CYCLE_LEN / 2) % RECT_CYCLE_LEN])
    }

    /// The two antipodal corner pairs, each ordered low id first.
    pub fn corner_pairs(&self) -> Vec<(QubitId, QubitId)> {
        let mut pairs = BTreeSet::new();
        for &c in &self.corners {
            if let Some(o) = self.antipode(c) {
                pairs.insert((c.min(o), c.max(o)));
            }
        }
        pairs.into_iter().collect()
    }
}

#[derive(Debug, Clone)]
pub struct ChipTopology {
    pub name: String,
    pub qubit_count: u32,
    pub edges: BTreeSet<(QubitId, QubitId)>,
    pub rectangles: Vec<Rectangle>,
    pub rect_adjacency: BTreeSet<(u32, u32)>,
    pub layout: Option<Vec<[i32; 2]>>,
    digest: String,
}

fn edge_key(a: QubitId, b: QubitId) -> (QubitId, QubitId) {
    (a.min(b), a.max(b))
}

/// Parses and validates a topology document.
pub fn load_topology(source: &str) -> Result<ChipTopology, TopologyError> {
    let doc: TopologyDocument = serde_json::from_str(source).map_err(|e| TopologyError::Malformed(e.to_string()))?;
    ChipTopology::from_document(doc)
}

impl ChipTopology {
    pub fn from_document(doc: TopologyDocument) -> Result<Self, TopologyError> {
        if doc.schema_version != TOPOLOGY_SCHEMA_VERSION {
            return Err(TopologyError::SchemaVersion(doc.schema_version));
        }
        let n = doc.qubit_count;
        let mut edges = BTreeSet::new();
        for &[a, b] in &doc.edges {
            if a >= n || b >= n || a == b {
                return Err(TopologyError::BadEdge(a, b, n));
            }
            edges.insert(edge_key(a, b));
        }
        if !is_connected(n, &edges) {
            return Err(TopologyError::Disconnected);
        }
        if let Some(layout) = &doc.layout {
            if layout.len() != n as usize {
                return Err(TopologyError::Malformed(format!("layout has {} entries for {} qubits", layout.len(), n)));
            }
        }

        let mut rectangles = Vec::with_capacity(doc.rectangles.len());
        for (i, r) in doc.rectangles.iter().enumerate() {
            if r.index != i as u32 + 1 {
                return Err(TopologyError::BadIndex(r.index));
            }
            rectangles.push(validate_rectangle(r, n, &edges)?);
        }

        let mut rect_adjacency = BTreeSet::new();
        for &[i, j] in &doc.adjacency {
            let count = rectangles.len() as u32;
            if i == j || i == 0 || j == 0 || i > count || j > count {
                return Err(TopologyError::BadAdjacency(i, j));
            }
            let a: BTreeSet<_> = rectangles[i as usize - 1].cycle.iter().collect();
            if !rectangles[j as usize - 1].cycle.iter().any(|q| a.contains(q)) {
                return Err(TopologyError::BadAdjacency(i, j));
            }
            rect_adjacency.insert((i.min(j), i.max(j)));
        }

        let canonical = TopologyDocument {
            schema_version: TOPOLOGY_SCHEMA_VERSION,
            name: doc.name.clone(),
            qubit_count: n,
            edges: edges.iter().map(|&(a, b)| [a, b]).collect(),
            rectangles: doc.rectangles.clone(),
            adjacency: rect_adjacency.iter().map(|&(a, b)| [a, b]).collect(),
            layout: doc.layout.clone(),
        };
        let bytes = serde_json::to_vec(&canonical).expect("topology serializes");
        let digest = hex::encode(Sha256::digest(&bytes));

        Ok(ChipTopology {
            name: doc.name,
            qubit_count: n,
            edges,
            rectangles,
            rect_adjacency,
            layout: doc.layout,
            digest,
        })
    }

    /// Bundled IBM Eagle r3 (127 qubits, 18 rectangles).
    pub fn eagle() -> Self {
        load_topology(EAGLE_DOC).expect("bundled eagle topology is valid")
    }

    /// Bundled IBM Heron r2 (156 qubits, 21 rectangles).
    pub fn heron() -> Self {
        load_topology(HERON_DOC).expect("bundled heron topology is valid")
    }

    /// Resolves `eagle` / `heron` to the bundled documents, anything else is
    /// read as a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, TopologyError> {
        match name_or_path {
            "eagle" | "eagle-r3" => Ok(Self::eagle()),
            "heron" | "heron-r2" => Ok(Self::heron()),
            path => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| TopologyError::Malformed(format!("{path}: {e}")))?;
                load_topology(&text)
            }
        }
    }

    /// Hex SHA-256 of the canonical document; journals pin this.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn rectangle(&self, index: u32) -> Result<&Rectangle, TopologyError> {
        index.checked_sub(1).and_then(|i| self.rectangles.get(i as usize)).ok_or(TopologyError::UnknownRectangle(index))
    }

    pub fn are_adjacent(&self, a: u32, b: u32) -> bool {
        self.rect_adjacency.contains(&(a.min(b), a.max(b)))
    }

    pub fn has_edge(&self, a: QubitId, b: QubitId) -> bool {
        self.edges.contains(&edge_key(a, b))
    }
}

fn validate_rectangle(
    r: &RectangleDocument,
    n: u32,
    edges: &BTreeSet<(QubitId, QubitId)>,
) -> Result<Rectangle, TopologyError> {
    if r.cycle.len() != RECT_CYCLE_LEN {
        return Err(TopologyError::CycleLength { index: r.index, len: r.cycle.len() });
    }
    let members: BTreeSet<_> = r.cycle.iter().copied().collect();
    if members.len() != RECT_CYCLE_LEN || members.iter().any(|&q| q >= n) {
        return Err(TopologyError::CycleNotSimple(r.index));
    }
    for i in 0..RECT_CYCLE_LEN {
        let (a, b) = (r.cycle[i], r.cycle[(i + 1) % RECT_CYCLE_LEN]);
        if !edges.contains(&edge_key(a, b)) {
            return Err(TopologyError::CycleNotClosed { index: r.index, a, b });
        }
    }
    // No chords: the induced sub-graph has exactly the 12 cycle edges.
    let induced = edges.iter().filter(|(a, b)| members.contains(a) && members.contains(b)).count();
    if induced != RECT_CYCLE_LEN {
        return Err(TopologyError::CycleNotSimple(r.index));
    }
    if r.corners.len() != 4 {
        return Err(TopologyError::Malformed(format!("rectangle {} lists {} corners", r.index, r.corners.len())));
    }
    let corners = [r.corners[0], r.corners[1], r.corners[2], r.corners[3]];
    let rect = Rectangle { index: r.index, cycle: r.cycle.clone(), corners };
    let corner_set: BTreeSet<_> = corners.iter().copied().collect();
    if corner_set.len() != 4 {
        return Err(TopologyError::BadCorner { index: r.index, corner: corners[0] });
    }
    for &c in &corners {
        match rect.antipode(c) {
            Some(o) if corner_set.contains(&o) => {}
            _ => return Err(TopologyError::BadCorner { index: r.index, corner: c }),
        }
    }
    Ok(rect)
}

fn is_connected(n: u32, edges: &BTreeSet<(QubitId, QubitId)>) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n as usize];
    for &(a, b) in edges {
        adj[a as usize].push(b as usize);
        adj[b as usize].push(a as usize);
    }
    let mut seen = vec![false; n as usize];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubChipKind {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "pair")]
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairGeometry {
    #[serde(rename = "side_by_side")]
    SideBySide,
    #[serde(rename = "diagonal")]
    Diagonal,
}

/// Stable identifier of a sub-chip: its sorted rectangle indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubChipKey(pub Vec<u32>);

impl SubChipKey {
    pub fn single(index: u32) -> Self {
        SubChipKey(vec![index])
    }

    pub fn pair(a: u32, b: u32) -> Self {
        SubChipKey(vec![a.min(b), a.max(b)])
    }

    pub fn kind(&self) -> SubChipKind {
        if self.0.len() == 1 {
            SubChipKind::Single
        } else {
            SubChipKind::Pair
        }
    }

    pub fn first(&self) -> u32 {
        self.0[0]
    }
}

impl fmt::Display for SubChipKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| format!("R{i}")).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for SubChipKey {
    type Err = TopologyError;

    /// Accepts `R3`, `R1+R5`, `3` or `1,5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Vec::new();
        for part in s.split(['+', ',']) {
            let part = part.trim().trim_start_matches(['R', 'r']);
            let idx: u32 = part.parse().map_err(|_| TopologyError::Malformed(format!("bad sub-chip id '{s}'")))?;
            out.push(idx);
        }
        match out.len() {
            1 => Ok(SubChipKey(out)),
            2 if out[0] != out[1] => Ok(SubChipKey::pair(out[0], out[1])),
            n => Err(TopologyError::BadSubChipSize(n)),
        }
    }
}

impl Serialize for SubChipKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SubChipKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Induced sub-graph over one rectangle or an adjacent pair.
#[derive(Debug, Clone)]
pub struct SubChip {
    pub key: SubChipKey,
    pub kind: SubChipKind,
    pub geometry: Option<PairGeometry>,
    pub qubits: BTreeSet<QubitId>,
    pub edges: BTreeSet<(QubitId, QubitId)>,
    members: Vec<Rectangle>,
    local: BTreeMap<QubitId, usize>,
    ids: Vec<QubitId>,
    adj: Vec<Vec<usize>>,
    dist: Vec<Vec<u32>>,
}

/// Builds the induced sub-chip over one rectangle or an adjacent pair.
pub fn make_subchip(topology: &ChipTopology, rect_indices: &[u32]) -> Result<SubChip, TopologyError> {
    let members: Vec<Rectangle> = match rect_indices {
        [a] => vec![topology.rectangle(*a)?.clone()],
        [a, b] if a != b => {
            let (ra, rb) = (topology.rectangle(*a)?, topology.rectangle(*b)?);
            if !topology.are_adjacent(*a, *b) {
                return Err(TopologyError::NotAdjacent(*a, *b));
            }
            let (ra, rb) = if a < b { (ra, rb) } else { (rb, ra) };
            vec![ra.clone(), rb.clone()]
        }
        other => return Err(TopologyError::BadSubChipSize(other.len())),
    };
    let qubits: BTreeSet<QubitId> = members.iter().flat_map(|r| r.cycle.iter().copied()).collect();
    let edges: BTreeSet<_> =
        topology.edges.iter().filter(|(a, b)| qubits.contains(a) && qubits.contains(b)).copied().collect();
    let key = if members.len() == 1 {
        SubChipKey::single(members[0].index)
    } else {
        SubChipKey::pair(members[0].index, members[1].index)
    };
    let geometry = (members.len() == 2).then(|| classify_pair(&members[0], &members[1]));

    let ids: Vec<QubitId> = qubits.iter().copied().collect();
    let local: BTreeMap<QubitId, usize> = ids.iter().enumerate().map(|(i, &q)| (q, i)).collect();
    let mut adj = vec![Vec::new(); ids.len()];
    for &(a, b) in &edges {
        adj[local[&a]].push(local[&b]);
        adj[local[&b]].push(local[&a]);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let dist = (0..ids.len()).map(|s| bfs(&adj, s)).collect();

    Ok(SubChip { kind: key.kind(), key, geometry, qubits, edges, members, local, ids, adj, dist })
}

/// Side by side when the shared segment runs between corners of both
/// rectangles (a shared bridge); diagonal when the overlap ends on corners of
/// only one rectangle each.
fn classify_pair(a: &Rectangle, b: &Rectangle) -> PairGeometry {
    let shared_corners = a.corners.iter().filter(|c| b.corners.contains(c)).count();
    if shared_corners >= 2 {
        PairGeometry::SideBySide
    } else {
        PairGeometry::Diagonal
    }
}

fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adj.len()];
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

impl SubChip {
    pub fn members(&self) -> &[Rectangle] {
        &self.members
    }

    pub fn contains(&self, q: QubitId) -> bool {
        self.local.contains_key(&q)
    }

    pub fn has_edge(&self, a: QubitId, b: QubitId) -> bool {
        self.edges.contains(&edge_key(a, b))
    }

    fn index_of(&self, q: QubitId) -> Result<usize, TopologyError> {
        self.local.get(&q).copied().ok_or(TopologyError::QubitNotInSubChip(q))
    }

    /// Graph distance inside the induced sub-graph.
    pub fn distance(&self, a: QubitId, b: QubitId) -> Result<u32, TopologyError> {
        Ok(self.dist[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn diameter(&self) -> u32 {
        self.dist.iter().flatten().copied().max().unwrap_or(0)
    }

    /// True when `path` is a simple walk over sub-chip edges.
    pub fn contains_path(&self, path: &Path) -> bool {
        let distinct: BTreeSet<_> = path.qubits().iter().collect();
        distinct.len() == path.len()
            && path.len() >= 2
            && path.qubits().iter().all(|&q| self.contains(q))
            && path.qubits().windows(2).all(|w| self.has_edge(w[0], w[1]))
    }

    /// Every shortest path from `a` to `b`, lexicographic by qubit sequence.
    pub fn all_shortest_paths(&self, a: QubitId, b: QubitId) -> Result<Vec<Path>, TopologyError> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        if ia == ib {
            return Err(TopologyError::SameEndpoints);
        }
        let to_b = &self.dist[ib];
        let mut out = Vec::new();
        let mut stack = vec![ia];
        self.extend_shortest(&mut stack, ib, to_b, &mut out);
        Ok(out)
    }

    fn extend_shortest(&self, stack: &mut Vec<usize>, target: usize, to_target: &[u32], out: &mut Vec<Path>) {
        let u = *stack.last().expect("non-empty");
        if u == target {
            out.push(Path(stack.iter().map(|&i| self.ids[i]).collect()));
            return;
        }
        // adjacency is sorted by local index, which follows qubit id order
        for &v in &self.adj[u] {
            if to_target[v] + 1 == to_target[u] {
                stack.push(v);
                self.extend_shortest(stack, target, to_target, out);
                stack.pop();
            }
        }
    }

    fn corner_candidates(&self) -> BTreeSet<QubitId> {
        self.members.iter().flat_map(|r| r.corners.iter().copied()).collect()
    }

    /// Endpoint pairs (unordered, low id first) that the c2c stage connects.
    pub fn c2c_endpoints(&self) -> Vec<(QubitId, QubitId)> {
        match self.geometry {
            None => self.members[0].corner_pairs(),
            Some(PairGeometry::Diagonal) => {
                let corners: Vec<_> = self.corner_candidates().into_iter().collect();
                let mut best: Option<(u32, QubitId, QubitId)> = None;
                for (i, &a) in corners.iter().enumerate() {
                    for &b in &corners[i + 1..] {
                        let d = self.dist[self.local[&a]][self.local[&b]];
                        // strict > keeps the lexicographically lowest pair on ties
                        if best.is_none_or(|(bd, _, _)| d > bd) {
                            best = Some((d, a, b));
                        }
                    }
                }
                best.map(|(_, a, b)| vec![(a, b)]).unwrap_or_default()
            }
            Some(PairGeometry::SideBySide) => {
                let shared: BTreeSet<QubitId> =
                    self.members[0].corners.iter().filter(|c| self.members[1].corners.contains(c)).copied().collect();
                let outer: Vec<QubitId> =
                    self.corner_candidates().into_iter().filter(|c| !shared.contains(c)).collect();
                self.opposing_matching(&outer)
            }
        }
    }

    /// Pairs four corners so that the shorter of the two matched distances is
    /// as large as possible; ties resolved by qubit ids.
    fn opposing_matching(&self, corners: &[QubitId]) -> Vec<(QubitId, QubitId)> {
        if corners.len() != 4 {
            return Vec::new();
        }
        let d = |a: QubitId, b: QubitId| self.dist[self.local[&a]][self.local[&b]];
        let c = corners;
        let matchings = [[(c[0], c[1]), (c[2], c[3])], [(c[0], c[2]), (c[1], c[3])], [(c[0], c[3]), (c[1], c[2])]];
        let mut best = matchings[0];
        let mut best_score = (0, 0);
        for m in matchings {
            let (x, y) = (d(m[0].0, m[0].1), d(m[1].0, m[1].1));
            let score = (x.min(y), x + y);
            if score > best_score {
                best_score = score;
                best = m;
            }
        }
        best.to_vec()
    }

    /// Unordered endpoint pairs at maximal graph distance.
    pub fn max_distance_endpoints(&self) -> Vec<(QubitId, QubitId)> {
        let diameter = self.diameter();
        let mut out = Vec::new();
        for i in 0..self.ids.len() {
            for j in i + 1..self.ids.len() {
                if self.dist[i][j] == diameter {
                    out.push((self.ids[i], self.ids[j]));
                }
            }
        }
        out
    }

    pub fn qubit_ids(&self) -> &[QubitId] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "c2c")]
    CornerToCorner,
    #[serde(rename = "M-L")]
    MaxLengths,
    #[serde(rename = "A-L")]
    AllLengths,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::CornerToCorner, Stage::MaxLengths, Stage::AllLengths];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::CornerToCorner => "c2c",
            Stage::MaxLengths => "M-L",
            Stage::AllLengths => "A-L",
        }
    }

    /// Stage ladder for a sub-chip kind; pairs skip M-L.
    pub fn ladder(kind: SubChipKind) -> &'static [Stage] {
        match kind {
            SubChipKind::Single => &Stage::ALL,
            SubChipKind::Pair => &[Stage::CornerToCorner, Stage::AllLengths],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c2c" => Ok(Stage::CornerToCorner),
            "m-l" | "ml" => Ok(Stage::MaxLengths),
            "a-l" | "al" => Ok(Stage::AllLengths),
            _ => Err(TopologyError::UnknownStage(s.to_string())),
        }
    }
}

/// Ordered sequence of distinct, consecutively coupled qubits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(pub Vec<QubitId>);

impl Path {
    pub fn qubits(&self) -> &[QubitId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Path {
        Path(self.0.iter().rev().copied().collect())
    }

    pub fn first(&self) -> QubitId {
        self.0[0]
    }

    pub fn last(&self) -> QubitId {
        self.0[self.0.len() - 1]
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|q| q.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone)]
pub struct PathSet {
    pub subchip: SubChipKey,
    pub stage: Stage,
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Enumerates the stage's path set. Paths shorter than `min_len` qubits are
/// dropped at every stage; `strict` forbids M-L on pairs.
pub fn enumerate_paths(
    subchip: &SubChip,
    stage: Stage,
    min_len: usize,
    strict: bool,
) -> Result<PathSet, TopologyError> {
    if strict && stage == Stage::MaxLengths && subchip.kind == SubChipKind::Pair {
        return Err(TopologyError::MaxLengthsOnPair);
    }
    let endpoints: Vec<(QubitId, QubitId)> = match stage {
        Stage::CornerToCorner => subchip.c2c_endpoints(),
        Stage::MaxLengths => subchip.max_distance_endpoints(),
        Stage::AllLengths => {
            let ids = subchip.qubit_ids();
            let mut v = Vec::new();
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    v.push((a, b));
                }
            }
            v
        }
    };
    let mut paths = BTreeSet::new();
    for (a, b) in endpoints {
        for p in subchip.all_shortest_paths(a, b)? {
            if p.len() >= min_len.max(2) {
                paths.insert(p.reversed());
                paths.insert(p);
            }
        }
    }
    Ok(PathSet { subchip: subchip.key.clone(), stage, paths: paths.into_iter().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_document(cycle_len: usize) -> TopologyDocument {
        let n = cycle_len as u32;
        TopologyDocument {
            schema_version: 1,
            name: "ring".into(),
            qubit_count: n,
            edges: (0..n).map(|i| [i, (i + 1) % n]).collect(),
            rectangles: vec![RectangleDocument { index: 1, cycle: (0..n).collect(), corners: vec![0, 3, 6, 9] }],
            adjacency: vec![],
            layout: None,
        }
    }

    #[test]
    fn bundled_sizes() {
        let eagle = ChipTopology::eagle();
        assert_eq!((eagle.qubit_count, eagle.rectangles.len()), (127, 18));
        let heron = ChipTopology::heron();
        assert_eq!((heron.qubit_count, heron.rectangles.len()), (156, 21));
    }

    #[test]
    fn eleven_cycle_rejected() {
        let mut doc = ring_document(11);
        doc.rectangles[0].corners = vec![0, 3, 6, 9];
        assert_eq!(ChipTopology::from_document(doc).unwrap_err(), TopologyError::CycleLength { index: 1, len: 11 });
    }

    #[test]
    fn validation_errors() {
        let mut doc = ring_document(12);
        doc.edges.retain(|e| *e != [5, 6]);
        doc.edges.push([5, 7]);
        doc.edges.push([6, 7]);
        assert!(matches!(ChipTopology::from_document(doc), Err(TopologyError::CycleNotClosed { .. })));

        let mut doc = ring_document(12);
        doc.rectangles[0].corners = vec![0, 3, 6, 8];
        assert!(matches!(ChipTopology::from_document(doc), Err(TopologyError::BadCorner { .. })));

        let mut doc = ring_document(12);
        doc.edges.push([0, 6]);
        assert_eq!(ChipTopology::from_document(doc).unwrap_err(), TopologyError::CycleNotSimple(1));

        let mut doc = ring_document(12);
        doc.qubit_count = 13;
        assert_eq!(ChipTopology::from_document(doc).unwrap_err(), TopologyError::Disconnected);

        let mut doc = ring_document(12);
        doc.schema_version = 7;
        assert_eq!(ChipTopology::from_document(doc).unwrap_err(), TopologyError::SchemaVersion(7));

        assert!(matches!(load_topology("{"), Err(TopologyError::Malformed(_))));
    }

    #[test]
    fn adjacency_must_share_a_qubit() {
        let eagle = ChipTopology::eagle();
        let mut doc: TopologyDocument = serde_json::from_str(EAGLE_DOC).unwrap();
        doc.adjacency.push([1, 18]);
        assert_eq!(ChipTopology::from_document(doc).unwrap_err(), TopologyError::BadAdjacency(1, 18));
        assert!(!eagle.are_adjacent(1, 18));
    }

    #[test]
    fn ring_shortest_paths() {
        let topo = ChipTopology::from_document(ring_document(12)).unwrap();
        let sc = make_subchip(&topo, &[1]).unwrap();
        let anti = sc.all_shortest_paths(0, 6).unwrap();
        assert_eq!(anti.len(), 2);
        assert!(anti.iter().all(|p| p.len() == 7));
        assert!(anti[0] < anti[1]);
        assert_eq!(sc.all_shortest_paths(4, 5).unwrap(), vec![Path(vec![4, 5])]);
        assert_eq!(sc.all_shortest_paths(4, 4).unwrap_err(), TopologyError::SameEndpoints);
        assert_eq!(sc.all_shortest_paths(4, 40).unwrap_err(), TopologyError::QubitNotInSubChip(40));
    }

    #[test]
    fn heron_rectangle_one_matches_reference_numbering() {
        let heron = ChipTopology::heron();
        let r1 = heron.rectangle(1).unwrap();
        assert_eq!(r1.corner_pairs(), vec![(3, 27), (7, 23)]);
        let sc = make_subchip(&heron, &[1, 5]).unwrap();
        assert_eq!(sc.geometry, Some(PairGeometry::Diagonal));
        let paths = sc.all_shortest_paths(3, 49).unwrap();
        assert_eq!(paths.len(), 3);
        assert_eq!(sc.c2c_endpoints(), vec![(3, 49)]);
    }

    #[test]
    fn pair_geometry() {
        let eagle = ChipTopology::eagle();
        let diag = make_subchip(&eagle, &[1, 5]).unwrap();
        assert_eq!(diag.geometry, Some(PairGeometry::Diagonal));
        assert_eq!(diag.qubits.len(), 21);
        let side = make_subchip(&eagle, &[2, 1]).unwrap();
        assert_eq!(side.geometry, Some(PairGeometry::SideBySide));
        assert_eq!(side.key, SubChipKey::pair(1, 2));
        let single = make_subchip(&eagle, &[1]).unwrap();
        let cycle: BTreeSet<_> = eagle.rectangle(1).unwrap().cycle.iter().copied().collect();
        assert_eq!(single.qubits, cycle);
        assert_eq!(make_subchip(&eagle, &[1, 18]).unwrap_err(), TopologyError::NotAdjacent(1, 18));
        assert_eq!(make_subchip(&eagle, &[19]).unwrap_err(), TopologyError::UnknownRectangle(19));
    }

    #[test]
    fn side_by_side_c2c_uses_long_rectangle_corners() {
        let heron = ChipTopology::heron();
        let sc = make_subchip(&heron, &[1, 2]).unwrap();
        // long rectangle over rows 0-1, columns 3..11
        assert_eq!(sc.c2c_endpoints(), vec![(3, 31), (11, 23)]);
        let set = enumerate_paths(&sc, Stage::CornerToCorner, 2, true).unwrap();
        assert_eq!(set.len(), 12);
    }

    #[test]
    fn stage_counts_single() {
        let eagle = ChipTopology::eagle();
        let sc = make_subchip(&eagle, &[1]).unwrap();
        let c2c = enumerate_paths(&sc, Stage::CornerToCorner, 2, true).unwrap();
        let ml = enumerate_paths(&sc, Stage::MaxLengths, 2, true).unwrap();
        let al = enumerate_paths(&sc, Stage::AllLengths, 2, true).unwrap();
        assert_eq!((c2c.len(), ml.len(), al.len()), (8, 24, 144));
        let al5 = enumerate_paths(&sc, Stage::AllLengths, 5, true).unwrap();
        assert!(al5.paths.iter().all(|p| p.len() >= 5));
    }

    #[test]
    fn strict_mode_rejects_pair_max_lengths() {
        let eagle = ChipTopology::eagle();
        let sc = make_subchip(&eagle, &[1, 5]).unwrap();
        assert_eq!(enumerate_paths(&sc, Stage::MaxLengths, 2, true).unwrap_err(), TopologyError::MaxLengthsOnPair);
        assert_eq!(enumerate_paths(&sc, Stage::MaxLengths, 2, false).unwrap().len(), 16);
    }

    #[test]
    fn subchip_key_round_trip() {
        for s in ["R3", "R1+R5"] {
            assert_eq!(s.parse::<SubChipKey>().unwrap().to_string(), s);
        }
        assert_eq!("5,1".parse::<SubChipKey>().unwrap(), SubChipKey::pair(1, 5));
        assert!("1,1".parse::<SubChipKey>().is_err());
    }
}

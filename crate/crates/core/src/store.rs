//! Knowledge-graph store: canonicalized entity nodes, relation edges with
//! provenance, search and neighborhood queries, JSONL persistence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::pipeline::ExtractedTriple;

pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.jsonl";
pub const LOCK_FILE: &str = "LOCK";

/// Case-fold, collapse whitespace, trim.
pub fn canonicalize(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: u64,
    pub canonical: String,
    pub aliases: BTreeSet<String>,
    pub mention_count: u64,
    pub paper_titles: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeProvenance {
    pub abstract_id: String,
    pub sentence: usize,
    pub title: String,
    pub journal: String,
    pub year: i32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub id: u64,
    pub head: u64,
    pub relation: String,
    pub tail: u64,
    /// Highest score among the provenance entries.
    pub score: f64,
    pub provenance: Vec<EdgeProvenance>,
}

/// Where an upsert landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Upserted {
    pub head: u64,
    pub tail: u64,
    pub edge: u64,
    /// False when the (head, relation, tail, sentence) entry already existed.
    pub inserted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchTier {
    Exact,
    Prefix,
    Substring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: u64,
    pub canonical: String,
    pub mention_count: u64,
    pub degree: usize,
    pub tier: MatchTier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: u64,
    pub canonical: String,
    pub mention_count: u64,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    /// The queried node first, then other endpoints in edge order.
    pub nodes: Vec<NodeSummary>,
    pub edges: Vec<RelationEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDetails {
    pub id: u64,
    pub canonical: String,
    pub aliases: Vec<String>,
    pub mention_count: u64,
    pub paper_titles: Vec<String>,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub nodes: usize,
    pub edges: usize,
    pub provenance: usize,
    pub relations: BTreeMap<String, usize>,
}

/// One line of an export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExportRecord {
    Node(EntityNode),
    Edge(RelationEdge),
}

#[derive(Debug, Default)]
struct GraphData {
    nodes: Vec<EntityNode>,
    by_canonical: HashMap<String, u64>,
    edges: Vec<RelationEdge>,
    edge_index: HashMap<(u64, String, u64), u64>,
    incident: Vec<Vec<u64>>,
}

impl GraphData {
    fn node_id(&mut self, surface: &str) -> u64 {
        let canonical = canonicalize(surface);
        if let Some(&id) = self.by_canonical.get(&canonical) {
            return id;
        }
        let id = self.nodes.len() as u64;
        self.nodes.push(EntityNode {
            id,
            canonical: canonical.clone(),
            aliases: BTreeSet::new(),
            mention_count: 0,
            paper_titles: BTreeSet::new(),
        });
        self.incident.push(Vec::new());
        self.by_canonical.insert(canonical, id);
        id
    }

    fn upsert(&mut self, t: &ExtractedTriple) -> Upserted {
        let head = self.node_id(&t.head.text);
        let tail = self.node_id(&t.tail.text);
        let key = (head, t.relation.clone(), tail);
        let edge = match self.edge_index.get(&key) {
            Some(&e) => e,
            None => {
                let e = self.edges.len() as u64;
                self.edges.push(RelationEdge {
                    id: e,
                    head,
                    relation: t.relation.clone(),
                    tail,
                    score: t.score,
                    provenance: Vec::new(),
                });
                self.edge_index.insert(key, e);
                self.incident[head as usize].push(e);
                if tail != head {
                    self.incident[tail as usize].push(e);
                }
                e
            }
        };
        let p = &t.provenance;
        let rec = &mut self.edges[edge as usize];
        if rec
            .provenance
            .iter()
            .any(|q| q.abstract_id == p.abstract_id && q.sentence == p.sentence)
        {
            return Upserted {
                head,
                tail,
                edge,
                inserted: false,
            };
        }
        rec.provenance.push(EdgeProvenance {
            abstract_id: p.abstract_id.clone(),
            sentence: p.sentence,
            title: p.title.clone(),
            journal: p.journal.clone(),
            year: p.year,
            score: t.score,
        });
        rec.score = rec.score.max(t.score);
        for (id, surface) in [(head, &t.head.text), (tail, &t.tail.text)] {
            let n = &mut self.nodes[id as usize];
            n.aliases.insert(surface.trim().to_string());
            n.mention_count += 1;
            if !p.title.is_empty() {
                n.paper_titles.insert(p.title.clone());
            }
        }
        Upserted {
            head,
            tail,
            edge,
            inserted: true,
        }
    }

    /// Rebuild from node and edge records, renumbering ids densely in the given order.
    fn from_records(nodes: Vec<EntityNode>, edges: Vec<RelationEdge>) -> Result<Self> {
        let mut g = GraphData::default();
        let mut remap = HashMap::new();
        for mut n in nodes {
            let old = n.id;
            if n.canonical != canonicalize(&n.canonical) {
                return Err(Error::InvariantViolation(format!("node {old} is not canonical: {:?}", n.canonical)));
            }
            if g.by_canonical.contains_key(&n.canonical) {
                return Err(Error::InvariantViolation(format!("duplicate node {:?}", n.canonical)));
            }
            if remap.insert(old, g.nodes.len() as u64).is_some() {
                return Err(Error::InvariantViolation(format!("duplicate node id {old}")));
            }
            n.id = g.nodes.len() as u64;
            g.by_canonical.insert(n.canonical.clone(), n.id);
            g.nodes.push(n);
            g.incident.push(Vec::new());
        }
        let lookup = |id: u64| {
            remap
                .get(&id)
                .copied()
                .ok_or_else(|| Error::DanglingRef(format!("edge endpoint {id}")))
        };
        for mut e in edges {
            e.head = lookup(e.head)?;
            e.tail = lookup(e.tail)?;
            e.id = g.edges.len() as u64;
            let key = (e.head, e.relation.clone(), e.tail);
            if g.edge_index.insert(key, e.id).is_some() {
                return Err(Error::InvariantViolation(format!("duplicate edge {}", e.id)));
            }
            g.incident[e.head as usize].push(e.id);
            if e.tail != e.head {
                g.incident[e.tail as usize].push(e.id);
            }
            g.edges.push(e);
        }
        Ok(g)
    }

    fn summary(&self, id: u64) -> NodeSummary {
        let n = &self.nodes[id as usize];
        NodeSummary {
            id,
            canonical: n.canonical.clone(),
            mention_count: n.mention_count,
            degree: self.incident[id as usize].len(),
        }
    }

    fn check(&self, id: u64) -> Result<()> {
        if (id as usize) < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::NotFound(format!("node {id}")))
        }
    }
}

/// Held while a store directory is open for writing.
#[derive(Debug)]
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::StoreLocked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Thread-safe graph store. Reads take a shared lock; upserts take the exclusive one.
#[derive(Debug)]
pub struct GraphStore {
    data: RwLock<GraphData>,
    closed: AtomicBool,
    writable: bool,
    dir: Option<PathBuf>,
    lock: std::sync::Mutex<Option<DirLock>>,
}

impl Default for GraphStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl GraphStore {
    pub fn in_memory() -> Self {
        Self::with_data(GraphData::default(), true, None, None)
    }

    fn with_data(data: GraphData, writable: bool, dir: Option<PathBuf>, lock: Option<DirLock>) -> Self {
        Self {
            data: RwLock::new(data),
            closed: AtomicBool::new(false),
            writable,
            dir,
            lock: std::sync::Mutex::new(lock),
        }
    }

    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a ExtractedTriple>) -> Self {
        let store = Self::in_memory();
        {
            let mut g = store.data.write().expect("fresh lock");
            for t in triples {
                g.upsert(t);
            }
        }
        store
    }

    /// Open `dir` for writing, creating it if needed. Fails with `StoreLocked`
    /// if another writer holds it.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let lock = DirLock::acquire(dir)?;
        let data = Self::read_dir(dir)?;
        Ok(Self::with_data(data, true, Some(dir.to_path_buf()), Some(lock)))
    }

    /// Open `dir` read-only; upserts fail with `StoreClosed`.
    pub fn open_read_only(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::NotFound(format!("store directory {}", dir.display())));
        }
        Ok(Self::with_data(Self::read_dir(dir)?, false, Some(dir.to_path_buf()), None))
    }

    fn read_dir(dir: &Path) -> Result<GraphData> {
        let nodes_path = dir.join(NODES_FILE);
        let edges_path = dir.join(EDGES_FILE);
        let nodes = if nodes_path.exists() { read_jsonl(&nodes_path)? } else { Vec::new() };
        let edges = if edges_path.exists() { read_jsonl(&edges_path)? } else { Vec::new() };
        GraphData::from_records(nodes, edges)
    }

    fn read(&self) -> Result<RwLockReadGuard<'_, GraphData>> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::StoreClosed);
        }
        self.data.read().map_err(|_| Error::InvariantViolation("store lock poisoned".into()))
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    pub fn upsert_triple(&self, triple: &ExtractedTriple) -> Result<Upserted> {
        if !self.writable || self.is_closed() {
            return Err(Error::StoreClosed);
        }
        let mut g = self
            .data
            .write()
            .map_err(|_| Error::InvariantViolation("store lock poisoned".into()))?;
        Ok(g.upsert(triple))
    }

    /// Write the node and edge segments to the store directory.
    pub fn commit(&self) -> Result<()> {
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| Error::InvariantViolation("in-memory store has no directory".into()))?;
        if !self.writable {
            return Err(Error::StoreClosed);
        }
        let g = self.read()?;
        write_atomic(&dir.join(NODES_FILE), &g.nodes)?;
        write_atomic(&dir.join(EDGES_FILE), &g.edges)?;
        Ok(())
    }

    /// Commit (for directory writers), release the lock and refuse further use.
    pub fn close(&self) -> Result<()> {
        if self.is_closed() {
            return Ok(());
        }
        if self.writable && self.dir.is_some() {
            self.commit()?;
        }
        self.closed.store(true, Ordering::SeqCst);
        if let Ok(mut l) = self.lock.lock() {
            l.take();
        }
        Ok(())
    }

    /// Ranked candidates: exact canonical match, then prefix, then substring;
    /// within a tier by mention count descending, then canonical ascending.
    pub fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>> {
        let g = self.read()?;
        let q = canonicalize(query);
        if q.is_empty() || limit == 0 {
            return Ok(Vec::new());
        }
        let mut hits: Vec<SearchHit> = g
            .nodes
            .iter()
            .filter_map(|n| {
                let tier = if n.canonical == q {
                    MatchTier::Exact
                } else if n.canonical.starts_with(&q) {
                    MatchTier::Prefix
                } else if n.canonical.contains(&q) {
                    MatchTier::Substring
                } else {
                    return None;
                };
                Some(SearchHit {
                    id: n.id,
                    canonical: n.canonical.clone(),
                    mention_count: n.mention_count,
                    degree: g.incident[n.id as usize].len(),
                    tier,
                })
            })
            .collect();
        hits.sort_by(|a, b| {
            a.tier
                .cmp(&b.tier)
                .then(b.mention_count.cmp(&a.mention_count))
                .then_with(|| a.canonical.cmp(&b.canonical))
        });
        hits.truncate(limit);
        Ok(hits)
    }

    /// Incident edges in either direction, ordered by score descending then edge id.
    pub fn neighbors(&self, id: u64, limit: usize, relation: Option<&str>) -> Result<Neighborhood> {
        let g = self.read()?;
        g.check(id)?;
        let mut edges: Vec<&RelationEdge> = g.incident[id as usize]
            .iter()
            .map(|&e| &g.edges[e as usize])
            .filter(|e| relation.is_none_or(|r| e.relation == r))
            .collect();
        edges.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        edges.truncate(limit);
        let mut seen = BTreeSet::from([id]);
        let mut nodes = vec![g.summary(id)];
        for e in &edges {
            for end in [e.head, e.tail] {
                if seen.insert(end) {
                    nodes.push(g.summary(end));
                }
            }
        }
        Ok(Neighborhood {
            nodes,
            edges: edges.into_iter().cloned().collect(),
        })
    }

    pub fn node_details(&self, id: u64) -> Result<NodeDetails> {
        let g = self.read()?;
        g.check(id)?;
        let n = &g.nodes[id as usize];
        Ok(NodeDetails {
            id,
            canonical: n.canonical.clone(),
            aliases: n.aliases.iter().cloned().collect(),
            mention_count: n.mention_count,
            paper_titles: n.paper_titles.iter().cloned().collect(),
            degree: g.incident[id as usize].len(),
        })
    }

    pub fn node(&self, id: u64) -> Result<EntityNode> {
        let g = self.read()?;
        g.check(id)?;
        Ok(g.nodes[id as usize].clone())
    }

    pub fn node_by_name(&self, surface: &str) -> Result<Option<EntityNode>> {
        let g = self.read()?;
        Ok(g.by_canonical.get(&canonicalize(surface)).map(|&id| g.nodes[id as usize].clone()))
    }

    pub fn stats(&self) -> Result<StoreStats> {
        let g = self.read()?;
        let mut relations = BTreeMap::new();
        for e in &g.edges {
            *relations.entry(e.relation.clone()).or_insert(0) += 1;
        }
        Ok(StoreStats {
            nodes: g.nodes.len(),
            edges: g.edges.len(),
            provenance: g.edges.iter().map(|e| e.provenance.len()).sum(),
            relations,
        })
    }

    pub fn nodes(&self) -> Result<Vec<EntityNode>> {
        Ok(self.read()?.nodes.clone())
    }

    pub fn edges(&self) -> Result<Vec<RelationEdge>> {
        Ok(self.read()?.edges.clone())
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let g = self.read()?;
        let records: Vec<ExportRecord> = g
            .nodes
            .iter()
            .cloned()
            .map(ExportRecord::Node)
            .chain(g.edges.iter().cloned().map(ExportRecord::Edge))
            .collect();
        write_jsonl(path, &records)
    }

    /// Build an in-memory store from an export file. Ids are renumbered.
    pub fn import(path: &Path) -> Result<Self> {
        let records: Vec<ExportRecord> = read_jsonl(path)?;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for r in records {
            match r {
                ExportRecord::Node(n) => nodes.push(n),
                ExportRecord::Edge(e) => edges.push(e),
            }
        }
        Ok(Self::with_data(GraphData::from_records(nodes, edges)?, true, None, None))
    }

    /// Replace the contents of an empty writable store with an export file.
    pub fn import_into(&self, path: &Path) -> Result<()> {
        if !self.writable || self.is_closed() {
            return Err(Error::StoreClosed);
        }
        let imported = Self::import(path)?.data.into_inner().expect("unshared lock");
        let mut g = self
            .data
            .write()
            .map_err(|_| Error::InvariantViolation("store lock poisoned".into()))?;
        if !g.nodes.is_empty() {
            return Err(Error::InvariantViolation("import target is not empty".into()));
        }
        *g = imported;
        Ok(())
    }

    /// Id-free description of the graph: equal for isomorphic stores.
    pub fn canonical_form(&self) -> Result<CanonicalGraph> {
        let g = self.read()?;
        let name = |id: u64| g.nodes[id as usize].canonical.clone();
        let nodes = g
            .nodes
            .iter()
            .map(|n| {
                (
                    n.canonical.clone(),
                    (n.aliases.clone(), n.mention_count, n.paper_titles.clone()),
                )
            })
            .collect();
        let edges = g
            .edges
            .iter()
            .map(|e| {
                let mut prov: Vec<String> = e
                    .provenance
                    .iter()
                    .map(|p| serde_json::to_string(p).expect("provenance serializes"))
                    .collect();
                prov.sort();
                ((name(e.head), e.relation.clone(), name(e.tail)), (e.score.to_bits(), prov))
            })
            .collect();
        Ok(CanonicalGraph { nodes, edges })
    }
}

type NodeKey = (BTreeSet<String>, u64, BTreeSet<String>);
type EdgeKey = (String, String, String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalGraph {
    pub nodes: BTreeMap<String, NodeKey>,
    pub edges: BTreeMap<EdgeKey, (u64, Vec<String>)>,
}

fn write_atomic<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    write_jsonl(&tmp, rows)?;
    File::open(&tmp)?.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

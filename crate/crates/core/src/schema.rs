//! Relation-schema induction: embed and cluster entities, rewrite triples with
//! cluster representatives, then embed and cluster the rewritten triples.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{embed, EncoderProvider};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, representative_with_centroid, KMeansConfig};
use crate::oie::CandidateTriple;
use crate::scalar::{squared_distance, Scalar};

/// How a rewritten triple is turned into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleEmbedding {
    /// Embed "head relation tail" as one text.
    #[default]
    WholeText,
    /// Average of the head, relation and tail embeddings.
    ComponentMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub k_entities: usize,
    pub k_relations: usize,
    pub kmeans: KMeansConfig,
    pub triple_embedding: TripleEmbedding,
    /// Nearest members listed per relation.
    pub exemplars: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            k_entities: 56,
            k_relations: 29,
            kmeans: KMeansConfig::default(),
            triple_embedding: TripleEmbedding::WholeText,
            exemplars: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RewrittenTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RewrittenTriple {
    pub fn text(&self) -> String {
        format!("{} {} {}", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCluster {
    pub id: usize,
    pub representative: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaRelation {
    pub id: usize,
    /// Relation phrase of the triple nearest the cluster centroid.
    pub name: String,
    /// Identifier used by annotations and extraction output, e.g. `lead_to`.
    pub label: String,
    /// Distinct relation phrases in the cluster.
    pub members: Vec<String>,
    pub triples: Vec<RewrittenTriple>,
    /// Texts of the triples nearest the centroid, closest first.
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifest {
    pub seed: u64,
    pub provider: String,
    pub dim: usize,
    pub tol: f64,
    pub k_entities: usize,
    pub k_relations: usize,
    pub triple_embedding: TripleEmbedding,
    pub entity_objective: f64,
    pub relation_objective: f64,
    pub truncated_inputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub relations: Vec<SchemaRelation>,
    #[serde(default)]
    pub entity_clusters: Vec<EntityCluster>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<SchemaManifest>,
}

impl Schema {
    /// Schema with the given relation labels and no induction provenance.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let relations = labels
            .iter()
            .enumerate()
            .map(|(id, l)| SchemaRelation {
                id,
                name: l.as_ref().replace('_', " "),
                label: l.as_ref().to_string(),
                members: vec![l.as_ref().replace('_', " ")],
                triples: Vec::new(),
                exemplars: Vec::new(),
            })
            .collect();
        Self {
            relations,
            entity_clusters: Vec::new(),
            manifest: None,
        }
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.relations.iter().find(|r| r.label == label).map(|r| r.id)
    }

    pub fn labels(&self) -> Vec<String> {
        self.relations.iter().map(|r| r.label.clone()).collect()
    }

    /// SHA-256 over the ordered relation labels, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.relations {
            h.update(r.id.to_le_bytes());
            h.update(r.label.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.relations.iter().enumerate() {
            if r.id != i {
                return Err(Error::InvariantViolation(format!(
                    "relation ids must be dense: position {i} has id {}",
                    r.id
                )));
            }
        }
        let labels: BTreeSet<&str> = self.relations.iter().map(|r| r.label.as_str()).collect();
        if labels.len() != self.relations.len() {
            return Err(Error::InvariantViolation("duplicate relation labels".into()));
        }
        Ok(())
    }
}

/// Snake-case identifier of a relation phrase.
pub fn label_of(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

/// Output of [`induce_schema`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaInduction {
    pub schema: Schema,
    /// One rewritten triple per input candidate, in input order.
    pub rewritten: Vec<RewrittenTriple>,
    /// Schema relation id of every input candidate.
    pub relation_of_input: Vec<usize>,
}

fn embed_triples<T: Scalar, P: EncoderProvider + ?Sized>(
    triples: &[RewrittenTriple],
    mode: TripleEmbedding,
    provider: &P,
) -> Result<(Vec<Vec<T>>, usize)> {
    match mode {
        TripleEmbedding::WholeText => {
            let texts: Vec<String> = triples.iter().map(RewrittenTriple::text).collect();
            let e = embed(&texts, provider)?;
            Ok((e.vectors, e.truncated))
        }
        TripleEmbedding::ComponentMean => {
            let mut texts = Vec::with_capacity(triples.len() * 3);
            for t in triples {
                texts.extend([t.head.clone(), t.relation.clone(), t.tail.clone()]);
            }
            let e = embed::<T, P>(&texts, provider)?;
            let three = T::of(3.0);
            let vectors = e
                .vectors
                .chunks(3)
                .map(|c| {
                    (0..c[0].len())
                        .map(|j| (c[0][j] + c[1][j] + c[2][j]) / three)
                        .collect()
                })
                .collect();
            Ok((vectors, e.truncated))
        }
    }
}

/// Induce a relation schema from candidate triples.
pub fn induce_schema<T: Scalar, P: EncoderProvider + ?Sized>(
    triples: &[CandidateTriple],
    cfg: &SchemaConfig,
    provider: &P,
) -> Result<SchemaInduction> {
    // (1) distinct entity strings, sorted for determinism
    let entities: Vec<String> = triples
        .iter()
        .flat_map(|t| [t.head_text.clone(), t.tail_text.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if cfg.k_entities > entities.len() {
        return Err(Error::InvalidK(format!(
            "k_entities = {} exceeds {} distinct entities",
            cfg.k_entities,
            entities.len()
        )));
    }

    // (2) cluster entities
    let ent_emb = embed::<T, P>(&entities, provider)?;
    let ent_model = kmeans(&ent_emb.vectors, cfg.k_entities, &cfg.kmeans)?;

    // (3) representatives and rewrite
    let mut entity_clusters = Vec::with_capacity(cfg.k_entities);
    let mut rep_of: BTreeMap<&str, String> = BTreeMap::new();
    for (c, members) in ent_model.clusters().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let labels: Vec<String> = members.iter().map(|&i| entities[i].clone()).collect();
        let vecs: Vec<Vec<T>> = members.iter().map(|&i| ent_emb.vectors[i].clone()).collect();
        let rep = labels[representative_with_centroid(&labels, &vecs, &ent_model.centroids[c])?].clone();
        for &i in &members {
            rep_of.insert(entities[i].as_str(), rep.clone());
        }
        entity_clusters.push(EntityCluster {
            id: entity_clusters.len(),
            representative: rep,
            members: labels,
        });
    }
    let rewritten: Vec<RewrittenTriple> = triples
        .iter()
        .map(|t| RewrittenTriple {
            head: rep_of[t.head_text.as_str()].clone(),
            relation: t.relation_text.clone(),
            tail: rep_of[t.tail_text.as_str()].clone(),
        })
        .collect();

    // (4) deduplicate
    let distinct: Vec<RewrittenTriple> = rewritten
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if cfg.k_relations > distinct.len() {
        return Err(Error::InvalidK(format!(
            "k_relations = {} exceeds {} distinct rewritten triples",
            cfg.k_relations,
            distinct.len()
        )));
    }

    // (5) cluster triples
    let (tri_vecs, tri_truncated) = embed_triples::<T, P>(&distinct, cfg.triple_embedding, provider)?;
    let tri_model = kmeans(&tri_vecs, cfg.k_relations, &cfg.kmeans)?;

    // (6) name each relation cluster by its representative triple's phrase
    let mut relations = Vec::new();
    let mut cluster_to_relation = vec![usize::MAX; cfg.k_relations];
    for (c, members) in tri_model.clusters().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let texts: Vec<String> = members.iter().map(|&i| distinct[i].text()).collect();
        let vecs: Vec<Vec<T>> = members.iter().map(|&i| tri_vecs[i].clone()).collect();
        let centroid = &tri_model.centroids[c];
        let rep = members[representative_with_centroid(&texts, &vecs, centroid)?];
        let mut ranked: Vec<(T, &String)> = vecs
            .iter()
            .zip(&texts)
            .map(|(v, t)| (squared_distance(v, centroid), t))
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(b.1)));
        let name = distinct[rep].relation.clone();
        cluster_to_relation[c] = relations.len();
        relations.push(SchemaRelation {
            id: 0,
            label: label_of(&name),
            name,
            members: members
                .iter()
                .map(|&i| distinct[i].relation.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            triples: members.iter().map(|&i| distinct[i].clone()).collect(),
            exemplars: ranked.into_iter().take(cfg.exemplars).map(|(_, t)| t.clone()).collect(),
        });
    }
    // stable ids: order by name, then by first triple
    let mut order: Vec<usize> = (0..relations.len()).collect();
    order.sort_by(|&a, &b| {
        (&relations[a].name, &relations[a].triples[0]).cmp(&(&relations[b].name, &relations[b].triples[0]))
    });
    let mut new_id = vec![0; relations.len()];
    for (id, &old) in order.iter().enumerate() {
        new_id[old] = id;
    }
    let mut sorted: Vec<SchemaRelation> = order.iter().map(|&i| relations[i].clone()).collect();
    for (id, r) in sorted.iter_mut().enumerate() {
        r.id = id;
    }
    dedupe_labels(&mut sorted);

    let triple_index: BTreeMap<&RewrittenTriple, usize> =
        distinct.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let relation_of_input = rewritten
        .iter()
        .map(|t| new_id[cluster_to_relation[tri_model.assignments[triple_index[t]]]])
        .collect();

    Ok(SchemaInduction {
        schema: Schema {
            relations: sorted,
            entity_clusters,
            manifest: Some(SchemaManifest {
                seed: cfg.kmeans.seed,
                provider: provider.id(),
                dim: provider.dim(),
                tol: cfg.kmeans.tol,
                k_entities: cfg.k_entities,
                k_relations: cfg.k_relations,
                triple_embedding: cfg.triple_embedding,
                entity_objective: ent_model.objective.as_f64(),
                relation_objective: tri_model.objective.as_f64(),
                truncated_inputs: ent_emb.truncated + tri_truncated,
            }),
        },
        rewritten,
        relation_of_input,
    })
}

fn dedupe_labels(relations: &mut [SchemaRelation]) {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for r in relations.iter_mut() {
        let n = seen.entry(r.label.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            r.label = format!("{}_{}", r.label, n);
        }
    }
}

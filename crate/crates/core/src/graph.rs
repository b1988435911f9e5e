//! Directed multi-relational triple store with adjacency indices.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A `(head, relation, tail)` fact over dense ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self { head, rel, tail }
    }
}

/// Bidirectional string <-> dense id mapping; ids follow first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for n in names {
            v.intern(n.as_ref());
        }
        v
    }

    /// Returns the id of `name`, assigning the next id if it is new.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Immutable knowledge graph. Indices are derived from `triples` and are
/// rebuilt, never edited.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    /// Per node: sorted `(relation, tail)` pairs.
    out_index: Vec<Vec<(usize, usize)>>,
    /// Per node: sorted `(relation, head)` pairs.
    in_index: Vec<Vec<(usize, usize)>>,
    /// Per node: sorted distinct neighbors, ignoring direction and relation.
    undirected_index: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph over the given vocabularies. Exact duplicate triples are
    /// dropped; the number dropped is returned alongside the graph.
    pub fn from_triples(
        entities: Vocab,
        relations: Vocab,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<(Self, usize)> {
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for t in triples {
            if t.head >= entities.len() {
                return Err(Error::UnknownEntity(t.head));
            }
            if t.tail >= entities.len() {
                return Err(Error::UnknownEntity(t.tail));
            }
            if t.rel >= relations.len() {
                return Err(Error::UnknownRelation(t.rel));
            }
            if seen.insert(t) {
                kept.push(t);
            } else {
                duplicates += 1;
            }
        }
        let mut g = Self {
            entities,
            relations,
            triples: kept,
            out_index: Vec::new(),
            in_index: Vec::new(),
            undirected_index: Vec::new(),
        };
        g.reindex();
        Ok((g, duplicates))
    }

    /// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<(Self, usize)> {
        Self::parse_with(text, Vocab::new(), Vocab::new())
    }

    /// Like [`KnowledgeGraph::parse`] but extends existing vocabularies, so ids
    /// already assigned there are kept.
    pub fn parse_with(text: &str, mut entities: Vocab, mut relations: Vocab) -> Result<(Self, usize)> {
        let mut triples = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    found: fields.len(),
                });
            }
            let h = entities.intern(fields[0]);
            let r = relations.intern(fields[1]);
            let t = entities.intern(fields[2]);
            triples.push(Triple::new(h, r, t));
        }
        if triples.is_empty() {
            return Err(Error::EmptyInput);
        }
        Self::from_triples(entities, relations, triples)
    }

    /// Serializes back to triple lines (one per triple, LF terminated).
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&self.entities.names[t.head]);
            out.push('\t');
            out.push_str(&self.relations.names[t.rel]);
            out.push('\t');
            out.push_str(&self.entities.names[t.tail]);
            out.push('\n');
        }
        out
    }

    fn reindex(&mut self) {
        let n = self.entities.len();
        let mut out_index = vec![Vec::new(); n];
        let mut in_index = vec![Vec::new(); n];
        let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in &self.triples {
            out_index[t.head].push((t.rel, t.tail));
            in_index[t.tail].push((t.rel, t.head));
            undirected[t.head].push(t.tail);
            undirected[t.tail].push(t.head);
        }
        for list in out_index.iter_mut().chain(in_index.iter_mut()) {
            list.sort_unstable();
        }
        for list in &mut undirected {
            list.sort_unstable();
            list.dedup();
        }
        self.out_index = out_index;
        self.in_index = in_index;
        self.undirected_index = undirected;
    }

    /// A copy with indices rebuilt from the triple list.
    pub fn rebuilt(&self) -> Self {
        let mut g = self.clone();
        g.reindex();
        g
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        t.head < self.out_index.len() && self.out_index[t.head].binary_search(&(t.rel, t.tail)).is_ok()
    }

    pub fn check_entity(&self, e: usize) -> Result<()> {
        if e < self.entities.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(e))
        }
    }

    pub fn check_relation(&self, r: usize) -> Result<()> {
        if r < self.relations.len() {
            Ok(())
        } else {
            Err(Error::UnknownRelation(r))
        }
    }

    /// Sorted tails of `node --rel-->` edges.
    pub fn out_neighbors(&self, node: usize, rel: usize) -> Result<Vec<usize>> {
        self.check_entity(node)?;
        self.check_relation(rel)?;
        Ok(relation_range(&self.out_index[node], rel))
    }

    /// Sorted heads of `--rel--> node` edges.
    pub fn in_neighbors(&self, node: usize, rel: usize) -> Result<Vec<usize>> {
        self.check_entity(node)?;
        self.check_relation(rel)?;
        Ok(relation_range(&self.in_index[node], rel))
    }

    /// All `(relation, tail)` pairs leaving `node`, sorted.
    pub fn out_edges(&self, node: usize) -> &[(usize, usize)] {
        &self.out_index[node]
    }

    /// All `(relation, head)` pairs entering `node`, sorted.
    pub fn in_edges(&self, node: usize) -> &[(usize, usize)] {
        &self.in_index[node]
    }

    /// Distinct neighbors ignoring direction and relation, sorted.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.undirected_index[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.out_index[node].len() + self.in_index[node].len()
    }

    /// Undirected BFS distances from `node`, `None` where unreachable.
    pub fn bfs_distances(&self, node: usize) -> Result<Vec<Option<usize>>> {
        self.check_entity(node)?;
        let mut dist = vec![None; self.num_entities()];
        dist[node] = Some(0);
        let mut queue = VecDeque::from([node]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x].unwrap_or(0);
            for &y in &self.undirected_index[x] {
                if dist[y].is_none() {
                    dist[y] = Some(d + 1);
                    queue.push_back(y);
                }
            }
        }
        Ok(dist)
    }

    /// Nodes at undirected distance at most `k` from `node`, including itself.
    pub fn khop_nodes(&self, node: usize, k: usize) -> Result<BTreeSet<usize>> {
        self.check_entity(node)?;
        if k == 0 {
            return Err(Error::InvalidArgument("hop count must be at least 1".to_string()));
        }
        let mut seen = BTreeSet::from([node]);
        let mut frontier = vec![node];
        for _ in 0..k {
            let mut next = Vec::new();
            for &x in &frontier {
                for &y in &self.undirected_index[x] {
                    if seen.insert(y) {
                        next.push(y);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(seen)
    }

    /// A graph over the same vocabularies containing only `triples`.
    pub fn with_triples(&self, triples: impl IntoIterator<Item = Triple>) -> Result<Self> {
        Ok(Self::from_triples(self.entities.clone(), self.relations.clone(), triples)?.0)
    }

    /// A copy without the listed triples; vocabularies are unchanged.
    pub fn without(&self, removed: &[Triple]) -> Self {
        let drop: BTreeSet<Triple> = removed.iter().copied().collect();
        let kept: Vec<Triple> = self.triples.iter().copied().filter(|t| !drop.contains(t)).collect();
        // Ids stay within the same vocabularies, so this cannot fail.
        self.with_triples(kept).expect("ids already validated")
    }

    /// Re-indexes `triples` into a fresh entity vocabulary (first-appearance
    /// order) while keeping this graph's relation vocabulary.
    pub fn compact(&self, triples: &[Triple]) -> Self {
        let mut entities = Vocab::new();
        let mapped: Vec<Triple> = triples
            .iter()
            .map(|t| {
                let h = entities.intern(&self.entities.names[t.head]);
                let tl = entities.intern(&self.entities.names[t.tail]);
                Triple::new(h, t.rel, tl)
            })
            .collect();
        Self::from_triples(entities, self.relations.clone(), mapped)
            .expect("ids assigned above")
            .0
    }

    /// Relation ids that occur in at least one triple.
    pub fn relations_used(&self) -> BTreeSet<usize> {
        self.triples.iter().map(|t| t.rel).collect()
    }

    /// Entity ids that occur in at least one triple.
    pub fn entities_used(&self) -> BTreeSet<usize> {
        self.triples.iter().flat_map(|t| [t.head, t.tail]).collect()
    }

    /// Re-expresses this graph over `target` relation ids, matching by name.
    /// Fails listing every relation name that `target` lacks.
    pub fn align_relations(&self, target: &Vocab) -> Result<Self> {
        let mut missing = Vec::new();
        let mut map = vec![usize::MAX; self.relations.len()];
        for (id, name) in self.relations.names.iter().enumerate() {
            match target.id(name) {
                Some(t) => map[id] = t,
                None => {
                    if self.triples.iter().any(|t| t.rel == id) {
                        missing.push(name.clone());
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::UnknownRelations(missing));
        }
        let triples = self.triples.iter().map(|t| Triple::new(t.head, map[t.rel], t.tail));
        Ok(Self::from_triples(self.entities.clone(), target.clone(), triples)?.0)
    }

    /// Maps a triple of this graph's ids onto `other` by entity and relation name.
    pub fn translate(&self, t: &Triple, other: &KnowledgeGraph) -> Option<Triple> {
        let h = other.entities.id(self.entities.name(t.head)?)?;
        let r = other.relations.id(self.relations.name(t.rel)?)?;
        let tl = other.entities.id(self.entities.name(t.tail)?)?;
        Some(Triple::new(h, r, tl))
    }
}

fn relation_range(list: &[(usize, usize)], rel: usize) -> Vec<usize> {
    let start = list.partition_point(|&(r, _)| r < rel);
    list[start..]
        .iter()
        .take_while(|&&(r, _)| r == rel)
        .map(|&(_, n)| n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> KnowledgeGraph {
        KnowledgeGraph::parse("a\tr\tb\nb\tr\tc\nc\tr\td\n").unwrap().0
    }

    #[test]
    fn single_line() {
        let (g, dups) = KnowledgeGraph::parse("a\tr1\tb\n").unwrap();
        assert_eq!((g.num_entities(), g.num_relations(), g.num_triples()), (2, 1, 1));
        assert_eq!(dups, 0);
    }

    #[test]
    fn duplicates_dropped_and_counted() {
        let (g, dups) = KnowledgeGraph::parse("a\tr1\tb\na\tr1\tb\n").unwrap();
        assert_eq!(g.num_triples(), 1);
        assert_eq!(dups, 1);
    }

    #[test]
    fn malformed_and_empty_input() {
        assert_eq!(
            KnowledgeGraph::parse("a\tr\tb\na\tb\n").unwrap_err(),
            Error::MalformedLine { line: 2, found: 2 }
        );
        assert_eq!(KnowledgeGraph::parse("").unwrap_err(), Error::EmptyInput);
        assert_eq!(KnowledgeGraph::parse("\n\n").unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn self_loops_and_parallel_edges_kept() {
        let (g, _) = KnowledgeGraph::parse("a\tr\ta\na\tr\tb\na\ts\tb\n").unwrap();
        assert_eq!(g.num_triples(), 3);
        assert_eq!(g.out_neighbors(0, 0).unwrap(), vec![0, 1]);
        assert_eq!(g.neighbors(0), &[0, 1]);
    }

    #[test]
    fn khop_on_chain() {
        let g = chain();
        assert_eq!(g.khop_nodes(0, 1).unwrap(), BTreeSet::from([0, 1]));
        assert_eq!(g.khop_nodes(0, 2).unwrap(), BTreeSet::from([0, 1, 2]));
        assert!(g.khop_nodes(9, 1).is_err());
        assert!(g.khop_nodes(0, 0).is_err());
    }

    #[test]
    fn out_neighbors_sorted_and_empty() {
        let (g, _) = KnowledgeGraph::parse("a\tr1\tc\na\tr1\tb\n").unwrap();
        let (a, b, c) = (0, 2, 1);
        assert_eq!(g.out_neighbors(a, 0).unwrap(), vec![c, b]);
        assert_eq!(g.out_neighbors(b, 0).unwrap(), Vec::<usize>::new());
        assert_eq!(g.in_neighbors(b, 0).unwrap(), vec![a]);
        assert!(g.out_neighbors(a, 5).is_err());
    }

    #[test]
    fn align_relations_lists_missing() {
        let (g, _) = KnowledgeGraph::parse("a\tx\tb\nb\ty\tc\nc\tz\ta\n").unwrap();
        let target = Vocab::from_names(["y"]);
        match g.align_relations(&target) {
            Err(Error::UnknownRelations(names)) => assert_eq!(names, vec!["x", "z"]),
            other => panic!("unexpected {other:?}"),
        }
        let target = Vocab::from_names(["z", "y", "x"]);
        let aligned = g.align_relations(&target).unwrap();
        assert!(aligned.contains(&Triple::new(0, 2, 1)));
    }
}

//! Heterogeneous document graph over tokens, sentence roots, mentions and a
//! document node; GCN, entity pooling, shortest-path features and the
//! dependency score head.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;

use crate::corpus::AnnotatedDocument;
use crate::encoder::{mention_embedding, EncodedDocument};
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::scalar::Real;

/// Rows of a path feature: both entities plus up to 12 interior nodes.
pub const PATH_ROWS: usize = 14;
pub const MAX_INTERIOR: usize = PATH_ROWS - 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeKind {
    Token,
    Root,
    Mention,
    Document,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Token => "token",
            NodeKind::Root => "root",
            NodeKind::Mention => "mention",
            NodeKind::Document => "document",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub sentence: Option<usize>,
    /// Global token index for token and root nodes.
    pub token: Option<usize>,
    /// (entity position, mention ordinal) for mention nodes.
    pub mention: Option<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    Dependency,
    AdjacentRoot,
    RootDocument,
    /// Directed, earlier root to a later non-adjacent root.
    LongRange,
    MentionToken,
}

impl EdgeKind {
    pub fn is_directed(self) -> bool {
        self == EdgeKind::LongRange
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Dependency => "dependency",
            EdgeKind::AdjacentRoot => "adjacent-root",
            EdgeKind::RootDocument => "root-document",
            EdgeKind::LongRange => "long-range",
            EdgeKind::MentionToken => "mention-token",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Node list and edge list of a document graph; weights live in [`SyntaxGraph`].
///
/// Node order: one node per token (global index), then mention nodes in entity
/// order, then the document node.
#[derive(Clone, Debug)]
pub struct GraphTopology {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
    pub roots: Vec<usize>,
    /// Mention node indices per entity position.
    pub mention_nodes: Vec<Vec<usize>>,
    pub document: Option<usize>,
}

impl GraphTopology {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sorted neighbour lists ignoring edge direction.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        self.neighbors(false)
    }

    /// Sorted neighbour lists; long-range edges only point forward.
    pub fn directed_neighbors(&self) -> Vec<Vec<usize>> {
        self.neighbors(true)
    }

    fn neighbors(&self, directed: bool) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.from].push(e.to);
            if !(directed && e.kind.is_directed()) {
                adj[e.to].push(e.from);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Builds the graph structure; the document node is optional for ablations.
pub fn build_topology(doc: &AnnotatedDocument, with_document_node: bool) -> GraphTopology {
    let mut nodes: Vec<GraphNode> = doc
        .tokens
        .iter()
        .map(|t| GraphNode {
            kind: NodeKind::Token,
            sentence: Some(t.sentence_index),
            token: Some(t.global_index),
            mention: None,
        })
        .collect();
    let roots: Vec<usize> = (0..doc.num_sentences())
        .map(|s| {
            doc.root_token(s)
                .expect("validated document has one root per sentence")
        })
        .collect();
    for &r in &roots {
        nodes[r].kind = NodeKind::Root;
    }
    let mut edges = Vec::new();
    for (s, parse) in doc.dependency_parses.iter().enumerate() {
        let base = doc.sentence_spans[s].start;
        for (dep, head) in parse.arcs() {
            edges.push(Edge {
                from: base + head,
                to: base + dep,
                kind: EdgeKind::Dependency,
            });
        }
    }
    for w in roots.windows(2) {
        edges.push(Edge {
            from: w[0],
            to: w[1],
            kind: EdgeKind::AdjacentRoot,
        });
    }
    for i in 0..roots.len() {
        for j in i + 2..roots.len() {
            edges.push(Edge {
                from: roots[i],
                to: roots[j],
                kind: EdgeKind::LongRange,
            });
        }
    }
    let mut mention_nodes = Vec::with_capacity(doc.entities.len());
    for (e, ent) in doc.entities.iter().enumerate() {
        let mut ids = Vec::with_capacity(ent.mentions.len());
        for (k, m) in ent.mentions.iter().enumerate() {
            let id = nodes.len();
            nodes.push(GraphNode {
                kind: NodeKind::Mention,
                sentence: Some(m.sentence_index),
                token: None,
                mention: Some((e, k)),
            });
            for t in m.tokens() {
                edges.push(Edge {
                    from: id,
                    to: t,
                    kind: EdgeKind::MentionToken,
                });
            }
            ids.push(id);
        }
        mention_nodes.push(ids);
    }
    let document = with_document_node.then(|| {
        let id = nodes.len();
        nodes.push(GraphNode {
            kind: NodeKind::Document,
            sentence: None,
            token: None,
            mention: None,
        });
        for &r in &roots {
            edges.push(Edge {
                from: r,
                to: id,
                kind: EdgeKind::RootDocument,
            });
        }
        id
    });
    GraphTopology {
        nodes,
        edges,
        roots,
        mention_nodes,
        document,
    }
}

#[derive(Clone, Debug)]
pub struct DepGraphParams {
    pub w_tok: ParamId,
    pub w_f1: ParamId,
    pub b_f1: ParamId,
    pub w_f2: ParamId,
    pub b_f2: ParamId,
    pub w_doc: ParamId,
    pub gcn: Vec<ParamId>,
    pub w_p1: ParamId,
    pub w_p2: ParamId,
    pub w_d1: ParamId,
    pub b_d1: ParamId,
    pub w_d2: ParamId,
    pub b_d2: ParamId,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DepGraphDims {
    /// Encoder row width.
    pub encoder: usize,
    /// Sentence vector width.
    pub sentence: usize,
    pub gcn: usize,
    pub gcn_layers: usize,
    pub fusion_hidden: usize,
    pub pair: usize,
    pub dep_hidden: usize,
    pub classes: usize,
}

impl DepGraphDims {
    pub fn pair_width(&self) -> usize {
        2 * self.gcn + self.pair + PATH_ROWS * self.gcn
    }
}

impl DepGraphParams {
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        dims: &DepGraphDims,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let (d, k, g) = (dims.encoder, dims.sentence, dims.gcn);
        let fuse_in = d + k;
        let width = dims.pair_width();
        let gcn = (0..dims.gcn_layers)
            .map(|l| store.add_uniform(format!("graph.gcn{l}"), [g, g], g, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DepGraphParams {
            w_tok: store.add_uniform("graph.w_tok", [d, g], d, rng)?,
            w_f1: store.add_uniform(
                "graph.fuse.w1",
                [fuse_in, dims.fusion_hidden],
                fuse_in,
                rng,
            )?,
            b_f1: store.add_uniform("graph.fuse.b1", [dims.fusion_hidden], fuse_in, rng)?,
            w_f2: store.add_uniform(
                "graph.fuse.w2",
                [dims.fusion_hidden, g],
                dims.fusion_hidden,
                rng,
            )?,
            b_f2: store.add_uniform("graph.fuse.b2", [g], dims.fusion_hidden, rng)?,
            w_doc: store.add_uniform("graph.w_doc", [k, g], k, rng)?,
            gcn,
            w_p1: store.add_uniform("graph.pair.w1", [g, dims.pair], 2 * g, rng)?,
            w_p2: store.add_uniform("graph.pair.w2", [g, dims.pair], 2 * g, rng)?,
            w_d1: store.add_uniform("graph.score.w1", [width, dims.dep_hidden], width, rng)?,
            b_d1: store.add_uniform("graph.score.b1", [dims.dep_hidden], width, rng)?,
            w_d2: store.add_uniform(
                "graph.score.w2",
                [dims.dep_hidden, dims.classes],
                dims.dep_hidden,
                rng,
            )?,
            b_d2: store.add_uniform("graph.score.b2", [dims.classes], dims.dep_hidden, rng)?,
            dim: g,
        })
    }
}

/// Edge weights and node features of one document graph on a tape.
#[derive(Clone, Copy, Debug)]
pub struct SyntaxGraph<'a> {
    pub topology: &'a GraphTopology,
    /// `ADJ[i][j]` is the weight of the edge from `i` to `j`, `[n × n]`.
    pub adj: Var,
    /// `[n × d_g]`.
    pub features: Var,
}

/// Edge-weight matrix: 1 on both directions of every bi-directed edge and the
/// cosine of the sentence vectors on each long-range edge.
pub fn adjacency<T: Real>(
    tape: &Tape<T>,
    topo: &GraphTopology,
    bank: Var,
) -> Result<Var, TensorError> {
    let n = topo.len();
    let mut base = Tensor::zeros([n, n]);
    let mut long = Vec::new();
    let sentence_of = |node: usize| {
        topo.roots
            .iter()
            .position(|&r| r == node)
            .expect("root node")
    };
    for e in &topo.edges {
        if e.kind.is_directed() {
            long.push((e.from * n + e.to, sentence_of(e.from), sentence_of(e.to)));
        } else {
            base.data_mut()[e.from * n + e.to] = T::one();
            base.data_mut()[e.to * n + e.from] = T::one();
        }
    }
    let base = tape.constant(base);
    if long.is_empty() {
        return Ok(base);
    }
    let cos = long
        .iter()
        .map(|&(_, i, j)| tape.cosine(tape.row(bank, i)?, tape.row(bank, j)?))
        .collect::<Result<Vec<_>, _>>()?;
    let positions: Vec<usize> = long.iter().map(|l| l.0).collect();
    tape.scatter_add(base, &positions, tape.concat(&cos, 0)?)
}

/// Assembles adjacency and pre-GCN node features for one entity pair.
///
/// `weights` are the pair's sentence attention weights `[I]`, used for the
/// document node.
pub fn build_graph<'a, T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &DepGraphParams,
    doc: &AnnotatedDocument,
    topo: &'a GraphTopology,
    enc: &EncodedDocument,
    bank: Var,
    weights: Var,
) -> Result<SyntaxGraph<'a>, TensorError> {
    let t = tape;
    let g = params.dim;
    let adj = adjacency(t, topo, bank)?;

    let tok_rows = enc.token_rows(t)?;
    let mut tok = t.matmul(tok_rows, p[params.w_tok])?;
    let fuse_in = topo
        .roots
        .iter()
        .enumerate()
        .map(|(i, &r)| t.concat(&[t.row(tok_rows, r)?, t.row(bank, i)?], 0))
        .collect::<Result<Vec<_>, _>>()?;
    let hidden = t.tanh(t.add(
        t.matmul(t.stack(&fuse_in)?, p[params.w_f1])?,
        p[params.b_f1],
    )?);
    let fused = t.add(t.matmul(hidden, p[params.w_f2])?, p[params.b_f2])?;
    let n_tok = doc.tokens.len();
    let mut mask = Tensor::full([n_tok, 1], T::one());
    for &r in &topo.roots {
        mask.data_mut()[r] = T::zero();
    }
    tok = t.mul(tok, t.constant(mask))?;
    let positions: Vec<usize> = topo
        .roots
        .iter()
        .flat_map(|&r| r * g..(r + 1) * g)
        .collect();
    tok = t.scatter_add(tok, &positions, t.flatten(fused)?)?;

    let mut blocks = vec![tok];
    let mentions = doc
        .mentions()
        .map(|m| mention_embedding(t, enc, m))
        .collect::<Result<Vec<_>, _>>()?;
    if !mentions.is_empty() {
        blocks.push(t.matmul(t.stack(&mentions)?, p[params.w_tok])?);
    }
    if topo.document.is_some() {
        let pooled = t.matmul(weights, bank)?;
        blocks.push(t.reshape(t.matmul(pooled, p[params.w_doc])?, [1, g])?);
    }
    let features = t.concat(&blocks, 0)?;
    Ok(SyntaxGraph {
        topology: topo,
        adj,
        features,
    })
}

/// `(ADJ + I)` with each row divided by its absolute sum.
pub fn normalized_adjacency<T: Real>(tape: &Tape<T>, adj: Var) -> Result<Var, TensorError> {
    let n = tape.shape(adj)[0];
    let with_loops = tape.add(adj, tape.constant(Tensor::identity(n)))?;
    let norms = tape.sum_axis(tape.abs(with_loops), 1)?;
    tape.div(with_loops, tape.reshape(norms, [n, 1])?)
}

/// `q ← Â q W_l` per layer, tanh between layers and none after the last.
pub fn gcn_forward<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    layers: &[ParamId],
    adj: Var,
    features: Var,
) -> Result<Var, TensorError> {
    let a_hat = normalized_adjacency(tape, adj)?;
    let mut q = features;
    for (l, &w) in layers.iter().enumerate() {
        q = tape.matmul(tape.matmul(a_hat, q)?, p[w])?;
        if l + 1 < layers.len() {
            q = tape.tanh(q);
        }
    }
    Ok(q)
}

/// Logsumexp over the rows of the entity's mention nodes.
pub fn entity_pool<T: Real>(
    tape: &Tape<T>,
    q: Var,
    topo: &GraphTopology,
    entity: usize,
) -> Result<Var, TensorError> {
    tape.logsumexp(tape.gather(q, &topo.mention_nodes[entity])?, 0)
}

/// Hop distances to the nearest of `sources`; `usize::MAX` when unreachable.
pub fn bfs(neighbors: &[Vec<usize>], sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; neighbors.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s] != 0 {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Node sequence of the shortest undirected path from any mention of `s` to
/// any mention of `o`, the lexicographically smallest one among ties.
pub fn shortest_path(topo: &GraphTopology, s: usize, o: usize) -> Option<Vec<usize>> {
    shortest_path_in(
        &topo.undirected_neighbors(),
        &topo.mention_nodes[s],
        &topo.mention_nodes[o],
    )
}

/// As [`shortest_path`] over explicit sorted neighbour lists.
pub fn shortest_path_in(
    neighbors: &[Vec<usize>],
    from: &[usize],
    to: &[usize],
) -> Option<Vec<usize>> {
    let dist = bfs(neighbors, to);
    let best = from.iter().map(|&m| dist[m]).min()?;
    if best == usize::MAX {
        return None;
    }
    let mut cur = *from.iter().filter(|&&m| dist[m] == best).min()?;
    let mut path = vec![cur];
    while dist[cur] > 0 {
        cur = *neighbors[cur]
            .iter()
            .find(|&&v| dist[v] + 1 == dist[cur])
            .expect("BFS layers are contiguous");
        path.push(cur);
    }
    Some(path)
}

/// `[e_s, interior…, e_o]` zero-padded to 14 rows and flattened.
///
/// Only the first 12 interior nodes are kept; a missing path contributes no
/// interior rows.
pub fn path_feature<T: Real>(
    tape: &Tape<T>,
    q: Var,
    path: Option<&[usize]>,
    e_s: Var,
    e_o: Var,
) -> Result<Var, TensorError> {
    let g = tape.shape(e_s)[0];
    let mut rows = vec![tape.reshape(e_s, [1, g])?];
    if let Some(p) = path {
        if p.len() > 2 {
            let interior: Vec<usize> = p[1..p.len() - 1]
                .iter()
                .copied()
                .take(MAX_INTERIOR)
                .collect();
            rows.push(tape.gather(q, &interior)?);
        }
    }
    rows.push(tape.reshape(e_o, [1, g])?);
    tape.flatten(tape.zero_pad_to(tape.concat(&rows, 0)?, PATH_ROWS)?)
}

/// `LeakyReLU(e_s W_p1 + e_o W_p2)` with slope 0.01.
pub fn pair_transform<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &DepGraphParams,
    e_s: Var,
    e_o: Var,
) -> Result<Var, TensorError> {
    let z = tape.add(
        tape.matmul(e_s, p[params.w_p1])?,
        tape.matmul(e_o, p[params.w_p2])?,
    )?;
    Ok(tape.leaky_relu(z, T::lit(0.01)))
}

/// `z_dep = σ(I W_d1 + b_d1) W_d2 + b_d2`.
pub fn dep_score<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &DepGraphParams,
    pair_repr: Var,
) -> Result<Var, TensorError> {
    let hidden = tape.sigmoid(tape.add(tape.matmul(pair_repr, p[params.w_d1])?, p[params.b_d1])?);
    tape.add(tape.matmul(hidden, p[params.w_d2])?, p[params.b_d2])
}

/// Post-GCN scoring of one ordered pair: pooling, path, pair MLP and `z_dep`.
pub fn score_pair<T: Real>(
    tape: &Tape<T>,
    p: &Bound,
    params: &DepGraphParams,
    graph: &SyntaxGraph<'_>,
    q: Var,
    s: usize,
    o: usize,
) -> Result<Var, TensorError> {
    let e_s = entity_pool(tape, q, graph.topology, s)?;
    let e_o = entity_pool(tape, q, graph.topology, o)?;
    let path = shortest_path(graph.topology, s, o);
    let path = path_feature(tape, q, path.as_deref(), e_s, e_o)?;
    let pair = pair_transform(tape, p, params, e_s, e_o)?;
    let repr = tape.concat(&[e_s, e_o, pair, path], 0)?;
    dep_score(tape, p, params, repr)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct DistanceStats {
    pub pairs: usize,
    pub avg: f64,
    pub std: f64,
    pub max: usize,
    pub min: usize,
}

/// Hop distance from the nearest mention of `s` to the nearest mention of `o`
/// following edge direction.
pub fn entity_distance(
    topo: &GraphTopology,
    neighbors: &[Vec<usize>],
    s: usize,
    o: usize,
) -> Option<usize> {
    let dist = bfs(neighbors, &topo.mention_nodes[s]);
    topo.mention_nodes[o]
        .iter()
        .map(|&m| dist[m])
        .filter(|&d| d != usize::MAX)
        .min()
}

/// Distances of every ordered entity pair of every document.
pub fn pair_distances(docs: &[AnnotatedDocument], with_document_node: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for d in docs {
        let topo = build_topology(d, with_document_node);
        let nb = topo.directed_neighbors();
        let n = d.entities.len();
        for s in 0..n {
            for o in 0..n {
                if s != o {
                    if let Some(x) = entity_distance(&topo, &nb, s, o) {
                        out.push(x);
                    }
                }
            }
        }
    }
    out
}

/// Mean, population standard deviation and range of entity-pair distances.
pub fn graph_distance_stats(docs: &[AnnotatedDocument], with_document_node: bool) -> DistanceStats {
    let d = pair_distances(docs, with_document_node);
    if d.is_empty() {
        return DistanceStats::default();
    }
    let n = d.len() as f64;
    let avg = d.iter().sum::<usize>() as f64 / n;
    let var = d.iter().map(|&x| (x as f64 - avg).powi(2)).sum::<f64>() / n;
    DistanceStats {
        pairs: d.len(),
        avg,
        std: var.sqrt(),
        max: *d.iter().max().unwrap_or(&0),
        min: *d.iter().min().unwrap_or(&0),
    }
}

/// Plain-text node and edge listing with weights.
pub fn dump_graph<T: Real>(
    doc: &AnnotatedDocument,
    topo: &GraphTopology,
    adj: &Tensor<T>,
) -> String {
    let n = topo.len();
    let mut out = String::new();
    let _ = writeln!(out, "# doc {}", doc.doc_id);
    let _ = writeln!(out, "nodes {n}");
    for (i, node) in topo.nodes.iter().enumerate() {
        let detail = match node.kind {
            NodeKind::Token | NodeKind::Root => {
                let t = node.token.expect("token node");
                format!(
                    "s{} t{} {}",
                    node.sentence.unwrap_or(0),
                    t,
                    doc.tokens[t].surface
                )
            }
            NodeKind::Mention => {
                let (e, k) = node.mention.expect("mention node");
                let m = &doc.entities[e].mentions[k];
                format!(
                    "e{} m{} [{}, {})",
                    doc.entities[e].entity_id, k, m.start, m.end
                )
            }
            NodeKind::Document => "-".into(),
        };
        let _ = writeln!(out, "{i}\t{}\t{detail}", node.kind.name());
    }
    let _ = writeln!(out, "edges {}", topo.edges.len());
    for e in &topo.edges {
        let arrow = if e.kind.is_directed() { "->" } else { "<->" };
        let w = adj.data()[e.from * n + e.to];
        let _ = writeln!(
            out,
            "{}\t{arrow}\t{}\t{}\t{w:.6}",
            e.from,
            e.to,
            e.kind.name()
        );
    }
    out
}

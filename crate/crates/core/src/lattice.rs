//! Word lattices: acyclic graphs of time-stamped states joined by word arcs
//! that carry an acoustic score and a small-LM score (both natural logs).
//!
//! Text format, one item per line:
//!
//! ```text
//! start <node>
//! <from> <to> <word-id> <acoustic> <small-lm>
//! ...
//! final <node> [<node> ...]
//! ```
//!
//! Node times are not stored in text; a loaded lattice stamps each node
//! with its longest arc distance from the start.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ngram::NgramModel;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeArc {
    pub from: u32,
    pub to: u32,
    pub word: u32,
    pub acoustic: f64,
    pub smalllm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    times: Vec<u32>,
    arcs: Vec<LatticeArc>,
    start: u32,
    finals: Vec<u32>,
    outgoing: Vec<Vec<usize>>,
    topo: Vec<u32>,
}

impl Lattice {
    /// Validates node references and acyclicity. Arcs must move forward in
    /// time when `times` is given.
    pub fn new(
        num_nodes: usize,
        times: Option<Vec<u32>>,
        arcs: Vec<LatticeArc>,
        start: u32,
        finals: Vec<u32>,
    ) -> Result<Self> {
        Self::build(num_nodes, times, arcs, start, finals, None)
    }

    fn build(
        num_nodes: usize,
        times: Option<Vec<u32>>,
        arcs: Vec<LatticeArc>,
        start: u32,
        mut finals: Vec<u32>,
        arc_lines: Option<&[usize]>,
    ) -> Result<Self> {
        let line_of = |i: usize| arc_lines.map_or(0, |l| l[i]);
        let bad = |i: usize, msg: String| -> Error {
            match arc_lines {
                Some(_) => Error::parse(line_of(i), msg),
                None => Error::InvalidArgument(msg),
            }
        };
        if start as usize >= num_nodes {
            return Err(Error::InvalidArgument(format!("start node {start} out of range")));
        }
        finals.sort_unstable();
        finals.dedup();
        if finals.is_empty() {
            return Err(Error::InvalidArgument("lattice has no final node".into()));
        }
        if let Some(&f) = finals.iter().find(|&&f| f as usize >= num_nodes) {
            return Err(Error::InvalidArgument(format!("final node {f} out of range")));
        }
        let mut outgoing = vec![Vec::new(); num_nodes];
        let mut indegree = vec![0usize; num_nodes];
        for (i, a) in arcs.iter().enumerate() {
            if a.from as usize >= num_nodes || a.to as usize >= num_nodes {
                return Err(bad(i, format!("arc {}->{} references a missing node", a.from, a.to)));
            }
            if !a.acoustic.is_finite() || !a.smalllm.is_finite() {
                return Err(bad(i, "non-finite score".into()));
            }
            if let Some(t) = &times {
                if t[a.to as usize] <= t[a.from as usize] {
                    return Err(bad(i, format!("arc {}->{} does not advance time", a.from, a.to)));
                }
            }
            outgoing[a.from as usize].push(i);
            indegree[a.to as usize] += 1;
        }

        // Kahn's algorithm, lowest node id first among ready nodes
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<u32>> = (0..num_nodes as u32)
            .filter(|&n| indegree[n as usize] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut topo = Vec::with_capacity(num_nodes);
        let mut depth = vec![0u32; num_nodes];
        while let Some(std::cmp::Reverse(n)) = ready.pop() {
            topo.push(n);
            for &ai in &outgoing[n as usize] {
                let to = arcs[ai].to as usize;
                depth[to] = depth[to].max(depth[n as usize] + 1);
                indegree[to] -= 1;
                if indegree[to] == 0 {
                    ready.push(std::cmp::Reverse(to as u32));
                }
            }
        }
        if topo.len() != num_nodes {
            let i = arcs
                .iter()
                .position(|a| indegree[a.to as usize] > 0 && indegree[a.from as usize] > 0)
                .unwrap_or(0);
            return Err(bad(i, "lattice contains a cycle".into()));
        }
        let times = times.unwrap_or(depth);
        if times.len() != num_nodes {
            return Err(Error::InvalidArgument("one time stamp per node required".into()));
        }
        // frame-synchronous order: by time, then by topological position
        let mut pos = vec![0usize; num_nodes];
        for (i, &n) in topo.iter().enumerate() {
            pos[n as usize] = i;
        }
        topo.sort_by_key(|&n| (times[n as usize], pos[n as usize]));
        Ok(Lattice {
            times,
            arcs,
            start,
            finals,
            outgoing,
            topo,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn arcs(&self) -> &[LatticeArc] {
        &self.arcs
    }

    pub fn arc(&self, i: usize) -> &LatticeArc {
        &self.arcs[i]
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn finals(&self) -> &[u32] {
        &self.finals
    }

    pub fn is_final(&self, node: u32) -> bool {
        self.finals.binary_search(&node).is_ok()
    }

    pub fn time(&self, node: u32) -> u32 {
        self.times[node as usize]
    }

    pub fn outgoing(&self, node: u32) -> &[usize] {
        &self.outgoing[node as usize]
    }

    /// Nodes ordered by time stamp; every arc points later in this order.
    pub fn frame_order(&self) -> &[u32] {
        &self.topo
    }

    /// Number of complete start-to-final paths, saturating.
    pub fn path_count(&self) -> u128 {
        let mut count = vec![0u128; self.num_nodes()];
        count[self.start as usize] = 1;
        for &n in &self.topo {
            let c = count[n as usize];
            if c == 0 {
                continue;
            }
            for &ai in &self.outgoing[n as usize] {
                let to = self.arcs[ai].to as usize;
                count[to] = count[to].saturating_add(c);
            }
        }
        self.finals
            .iter()
            .fold(0u128, |acc, &f| acc.saturating_add(count[f as usize]))
    }

    /// Every complete path as a list of arc indices, by depth-first search.
    /// Fails when there are more than `limit` paths.
    pub fn enumerate_paths(&self, limit: usize) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::new();
        let mut stack: Vec<(u32, Vec<usize>)> = vec![(self.start, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if self.is_final(node) {
                if out.len() == limit {
                    return Err(Error::InvalidArgument(format!("more than {limit} paths")));
                }
                out.push(path.clone());
            }
            for &ai in self.outgoing[node as usize].iter().rev() {
                let mut p = path.clone();
                p.push(ai);
                stack.push((self.arcs[ai].to, p));
            }
        }
        Ok(out)
    }

    pub fn words_of(&self, path: &[usize]) -> Vec<u32> {
        path.iter().map(|&i| self.arcs[i].word).collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "start {}", self.start)?;
        for a in &self.arcs {
            writeln!(out, "{} {} {} {} {}", a.from, a.to, a.word, a.acoustic, a.smalllm)?;
        }
        write!(out, "final")?;
        for f in &self.finals {
            write!(out, " {f}")?;
        }
        writeln!(out)?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut start: Option<u32> = None;
        let mut finals: Option<Vec<u32>> = None;
        let mut arcs = Vec::new();
        let mut lines = Vec::new();
        let mut max_node = 0u32;
        for (n, line) in input.lines().enumerate() {
            let lineno = n + 1;
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() || fields[0].starts_with('#') {
                continue;
            }
            let node = |s: &str| -> Result<u32> {
                s.parse()
                    .map_err(|_| Error::parse(lineno, format!("bad node id {s:?}")))
            };
            match fields[0] {
                "start" => {
                    if fields.len() != 2 || start.is_some() {
                        return Err(Error::parse(lineno, "expected a single `start <id>`"));
                    }
                    if !arcs.is_empty() || finals.is_some() {
                        return Err(Error::parse(lineno, "`start` must come first"));
                    }
                    let s = node(fields[1])?;
                    max_node = max_node.max(s);
                    start = Some(s);
                }
                "final" => {
                    if fields.len() < 2 || finals.is_some() {
                        return Err(Error::parse(lineno, "expected a single `final <id>...`"));
                    }
                    let f = fields[1..].iter().map(|s| node(s)).collect::<Result<Vec<_>>>()?;
                    max_node = f.iter().copied().fold(max_node, u32::max);
                    finals = Some(f);
                }
                _ => {
                    if start.is_none() {
                        return Err(Error::parse(lineno, "arc before `start` header"));
                    }
                    if finals.is_some() {
                        return Err(Error::parse(lineno, "arc after `final` trailer"));
                    }
                    if fields.len() != 5 {
                        return Err(Error::parse(lineno, "expected `from to word acoustic smalllm`"));
                    }
                    let from = node(fields[0])?;
                    let to = node(fields[1])?;
                    let word: u32 = fields[2]
                        .parse()
                        .map_err(|_| Error::parse(lineno, format!("bad word id {:?}", fields[2])))?;
                    let score = |s: &str| -> Result<f64> {
                        s.parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| Error::parse(lineno, format!("bad score {s:?}")))
                    };
                    arcs.push(LatticeArc {
                        from,
                        to,
                        word,
                        acoustic: score(fields[3])?,
                        smalllm: score(fields[4])?,
                    });
                    lines.push(lineno);
                    max_node = max_node.max(from).max(to);
                }
            }
        }
        let start = start.ok_or_else(|| Error::Format("missing `start` header".into()))?;
        let finals = finals.ok_or_else(|| Error::Format("missing `final` trailer".into()))?;
        Self::build(max_node as usize + 1, None, arcs, start, finals, Some(&lines))
    }
}

/// Parameters of the synthetic lattice generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeGenConfig {
    /// Candidate words per reference position, the reference included.
    pub confusion_breadth: usize,
    /// Alternative end frames per word boundary.
    pub alignments: usize,
    /// Probability that a transition between two non-reference candidates
    /// of adjacent positions exists.
    pub arc_density: f64,
    pub min_frames: u32,
    pub max_frames: u32,
    /// Mean and spread of the per-(position, word) confusion penalty.
    pub penalty_mean: f64,
    pub penalty_std: f64,
    /// Penalty per frame of misalignment.
    pub alignment_penalty: f64,
    /// Spread of the per-arc noise on non-reference arcs.
    pub arc_noise_std: f64,
}

impl Default for LatticeGenConfig {
    fn default() -> Self {
        LatticeGenConfig {
            confusion_breadth: 3,
            alignments: 1,
            arc_density: 1.0,
            min_frames: 8,
            max_frames: 30,
            penalty_mean: 1.0,
            penalty_std: 1.0,
            alignment_penalty: 0.2,
            arc_noise_std: 0.1,
        }
    }
}

/// Builds a lattice around `reference`: each position offers the reference
/// word plus `confusion_breadth - 1` random regular words, every word
/// boundary may fall on one of `alignments` frames, and states are split by
/// the small LM's history so each arc's small-LM score is exact for every
/// path through it. Arcs carrying the reference word at its nominal
/// alignment score 0 acoustically; all others get a negative,
/// Gaussian-perturbed penalty.
pub fn generate_lattice(
    reference: &[u32],
    vocab: &Vocabulary,
    small_lm: &NgramModel,
    config: &LatticeGenConfig,
    seed: u64,
) -> Result<Lattice> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("reference must be non-empty".into()));
    }
    if config.confusion_breadth == 0 || config.alignments == 0 {
        return Err(Error::InvalidArgument(
            "breadth and alignments must be at least 1".into(),
        ));
    }
    if config.min_frames as usize <= config.alignments || config.max_frames < config.min_frames {
        return Err(Error::InvalidArgument(
            "word durations must exceed the alignment spread".into(),
        ));
    }
    for &w in reference {
        vocab.check(w)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regular: Vec<u32> = (0..vocab.len() as u32).filter(|&w| !vocab.is_special(w)).collect();
    let penalty = Normal::new(config.penalty_mean, config.penalty_std.max(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, config.arc_noise_std.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    // candidates and their confusion penalties per position
    let mut candidates: Vec<Vec<(u32, f64)>> = Vec::with_capacity(reference.len());
    for &r in reference {
        let mut cands = vec![(r, 0.0)];
        let pool: Vec<u32> = regular.iter().copied().filter(|&w| w != r).collect();
        let extra = (config.confusion_breadth - 1).min(pool.len());
        for i in sample(&mut rng, pool.len(), extra) {
            cands.push((pool[i], penalty.sample(&mut rng).abs()));
        }
        candidates.push(cands);
    }

    // allowed[i][u][v]: transition from candidate u at i-1 to v at i
    let mut allowed: Vec<Vec<Vec<bool>>> = vec![Vec::new()];
    for i in 1..reference.len() {
        let (nu, nv) = (candidates[i - 1].len(), candidates[i].len());
        let mut m = vec![vec![false; nv]; nu];
        for (u, row) in m.iter_mut().enumerate() {
            for (v, cell) in row.iter_mut().enumerate() {
                *cell = u == 0 || v == 0 || rng.random::<f64>() < config.arc_density;
            }
        }
        allowed.push(m);
    }

    let mut boundaries = Vec::with_capacity(reference.len());
    let mut frame = 0u32;
    for _ in reference {
        frame += rng.random_range(config.min_frames..=config.max_frames);
        boundaries.push(frame);
    }

    let bos = small_lm.sentence_begin();
    let start_history: Vec<u32> = small_lm.truncate(&[bos]).to_vec();
    let mut times = vec![0u32];
    let mut arcs = Vec::new();
    // (candidate slot, alignment offset, small-LM history) per node
    let mut frontier: Vec<(u32, usize, u32, Vec<u32>)> = vec![(0, 0, 0, start_history)];
    for (i, cands) in candidates.iter().enumerate() {
        let mut next: HashMap<(usize, u32, Vec<u32>), u32> = HashMap::new();
        let mut next_frontier = Vec::new();
        for (node, u_slot, u_offset, history) in &frontier {
            for (v_slot, &(v, confusion)) in cands.iter().enumerate() {
                if i > 0 && !allowed[i][*u_slot][v_slot] {
                    continue;
                }
                let mut h = history.clone();
                h.push(v);
                let h = small_lm.truncate(&h).to_vec();
                let smalllm = small_lm.logprob(history, v);
                for offset in 0..config.alignments as u32 {
                    let t = boundaries[i] + offset;
                    let key = (v_slot, t, h.clone());
                    let to = *next.entry(key).or_insert_with(|| {
                        times.push(t);
                        let id = (times.len() - 1) as u32;
                        next_frontier.push((id, v_slot, offset, h.clone()));
                        id
                    });
                    let nominal = v_slot == 0 && *u_offset == 0 && offset == 0;
                    let acoustic = if nominal {
                        0.0
                    } else {
                        -(confusion
                            + config.alignment_penalty * (*u_offset + offset) as f64
                            + noise.sample(&mut rng).abs())
                    };
                    arcs.push(LatticeArc {
                        from: *node,
                        to,
                        word: v,
                        acoustic,
                        smalllm,
                    });
                }
            }
        }
        frontier = next_frontier;
    }
    let finals = frontier.iter().map(|f| f.0).collect();
    Lattice::new(times.len(), Some(times), arcs, 0, finals)
}

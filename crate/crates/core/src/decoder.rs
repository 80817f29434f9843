//! Lattice search with on-the-fly RNNLM rescoring, plus the n-best and
//! two-pass alternatives it is compared against.
//!
//! The on-the-fly search walks lattice nodes in time order. Each node keeps
//! a list of tokens, one per distinct RNNLM context index, pruned to the
//! beam before the node is expanded. Every (token, arc) expansion sends one
//! request across the codec boundary and gets back the RNNLM correction to
//! the arc's small-LM score together with the successor context index.
//!
//! No end-of-sentence term is added to any path score.

use std::collections::HashSet;

use crate::cache::{CacheStats, RnnlmRescorer};
use crate::codec::{pack, unpack, RescoreRequest, RescoreResponse, TransferLedger};
use crate::context_table::ContextIndex;
use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::lattice::Lattice;
use crate::ngram::NgramModel;
use crate::rnnlm::RnnlmModel;

#[derive(Debug, Clone, PartialEq)]
pub struct PathHypothesis {
    /// Arc indices into the lattice, start to final.
    pub arcs: Vec<usize>,
    pub words: Vec<u32>,
    pub acoustic: f64,
    /// Total LM log score under whichever LM produced this hypothesis.
    pub lm: f64,
    pub lm_weight: f64,
    pub combined_score: f64,
    /// RNNLM context index at the path end, for on-the-fly results.
    pub context: Option<ContextIndex>,
}

impl PathHypothesis {
    fn from_arcs(lattice: &Lattice, arcs: Vec<usize>, lm: f64, lm_weight: f64) -> Self {
        let acoustic = arcs.iter().map(|&i| lattice.arc(i).acoustic).sum();
        let words = lattice.words_of(&arcs);
        PathHypothesis {
            arcs,
            words,
            acoustic,
            lm,
            lm_weight,
            combined_score: acoustic + lm_weight * lm,
            context: None,
        }
    }

    pub fn recompute(&self) -> f64 {
        self.acoustic + self.lm_weight * self.lm
    }
}

/// Everything one decoding stream owns on the rescoring side.
#[derive(Debug, Clone)]
pub struct RescoreStack<'m> {
    pub rescorer: RnnlmRescorer<'m>,
    pub ledger: TransferLedger,
    pub rnn_bits: u32,
}

impl<'m> RescoreStack<'m> {
    pub fn new(rescorer: RnnlmRescorer<'m>, rnn_bits: u32) -> Self {
        let context_bytes = rescorer.table.element_bytes() as u64;
        RescoreStack {
            rescorer,
            ledger: TransferLedger::new(context_bytes),
            rnn_bits,
        }
    }

    /// Serves one request: decodes it from wire bytes, looks up the RNNLM,
    /// and answers with the correction relative to `smalllm`. The small-LM
    /// half of the packed index is carried through to the successor.
    pub fn serve(&mut self, request: &[u8; 16], smalllm: f64) -> Result<[u8; 16]> {
        let req = RescoreRequest::from_bytes(request);
        let (rnn, small) = unpack(req.packed, self.rnn_bits);
        let value = self.rescorer.rnnlm_prob(req.word, ContextIndex(rnn))?;
        let response = RescoreResponse {
            delta: (value.logprob - smalllm) as f32,
            next_packed: pack(value.next.0, small, self.rnn_bits)?,
        };
        self.ledger.record();
        Ok(response.to_bytes())
    }

    /// Ends an utterance; see [`RnnlmRescorer::reset_utterance`].
    pub fn reset_utterance(&mut self, retain: bool) {
        self.rescorer.reset_utterance(retain);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnTheFlyResult {
    pub best: PathHypothesis,
    /// Requests made during this call.
    pub ledger: TransferLedger,
    /// Cache statistics of the current utterance after this call.
    pub cache: CacheStats,
}

#[derive(Debug, Clone, Copy)]
struct Token {
    score: f64,
    lm: f64,
    context: ContextIndex,
    trace: Option<usize>,
}

fn insert_token(list: &mut Vec<Token>, token: Token) {
    match list.iter_mut().find(|t| t.context == token.context) {
        Some(t) if token.score > t.score => *t = token,
        Some(_) => {}
        None => list.push(token),
    }
}

fn by_score_desc(a: &Token, b: &Token) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.context.cmp(&b.context))
}

/// Best path under acoustic + `lm_weight` × RNNLM, with at most `beam`
/// tokens expanded per node.
pub fn rescore_onthefly(
    lattice: &Lattice,
    stack: &mut RescoreStack<'_>,
    lm_weight: f64,
    beam: usize,
) -> Result<OnTheFlyResult> {
    if beam == 0 {
        return Err(Error::InvalidArgument("beam must be at least 1".into()));
    }
    let before = stack.ledger;
    let mut tokens: Vec<Vec<Token>> = vec![Vec::new(); lattice.num_nodes()];
    // (arc, previous trace entry)
    let mut traces: Vec<(usize, Option<usize>)> = Vec::new();
    tokens[lattice.start() as usize].push(Token {
        score: 0.0,
        lm: 0.0,
        context: ContextIndex::START,
        trace: None,
    });
    for &node in lattice.frame_order() {
        let mut live = std::mem::take(&mut tokens[node as usize]);
        live.sort_by(by_score_desc);
        live.truncate(beam);
        for &ai in lattice.outgoing(node) {
            let arc = *lattice.arc(ai);
            for tok in &live {
                let request = RescoreRequest {
                    packed: pack(tok.context.0, node as u64, stack.rnn_bits)?,
                    word: arc.word,
                    frame: lattice.time(arc.to),
                };
                let reply = stack.serve(&request.to_bytes(), arc.smalllm)?;
                let response = RescoreResponse::from_bytes(&reply);
                let (next, _) = unpack(response.next_packed, stack.rnn_bits);
                let lm = arc.smalllm + response.delta as f64;
                traces.push((ai, tok.trace));
                insert_token(
                    &mut tokens[arc.to as usize],
                    Token {
                        score: tok.score + arc.acoustic + lm_weight * lm,
                        lm: tok.lm + lm,
                        context: ContextIndex(next),
                        trace: Some(traces.len() - 1),
                    },
                );
            }
        }
        tokens[node as usize] = live;
    }

    let best = lattice
        .finals()
        .iter()
        .flat_map(|&f| tokens[f as usize].iter())
        .copied()
        .min_by(by_score_desc)
        .ok_or_else(|| Error::InvalidArgument("no path reaches a final node".into()))?;
    let mut arcs = Vec::new();
    let mut cursor = best.trace;
    while let Some(t) = cursor {
        arcs.push(traces[t].0);
        cursor = traces[t].1;
    }
    arcs.reverse();
    let mut hyp = PathHypothesis::from_arcs(lattice, arcs, best.lm, lm_weight);
    hyp.context = Some(best.context);

    let mut ledger = TransferLedger::new(stack.ledger.context_bytes);
    ledger.requests = stack.ledger.requests - before.requests;
    ledger.bytes_indexed = stack.ledger.bytes_indexed - before.bytes_indexed;
    ledger.bytes_full_baseline = stack.ledger.bytes_full_baseline - before.bytes_full_baseline;
    Ok(OnTheFlyResult {
        best: hyp,
        ledger,
        cache: stack.rescorer.cache.stats(),
    })
}

#[derive(Debug, Clone)]
struct Partial {
    score: f64,
    lm: f64,
    arcs: Vec<usize>,
    words: Vec<u32>,
}

fn rank_distinct(mut list: Vec<Partial>, n: usize) -> Vec<Partial> {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.words.cmp(&b.words)));
    let mut seen = HashSet::new();
    list.retain(|p| seen.insert(p.words.clone()));
    list.truncate(n);
    list
}

/// The `n` best distinct word sequences under acoustic + `lm_weight` ×
/// small-LM score, best first.
pub fn nbest(lattice: &Lattice, n: usize, lm_weight: f64) -> Result<Vec<PathHypothesis>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut lists: Vec<Vec<Partial>> = vec![Vec::new(); lattice.num_nodes()];
    lists[lattice.start() as usize].push(Partial {
        score: 0.0,
        lm: 0.0,
        arcs: Vec::new(),
        words: Vec::new(),
    });
    for &node in lattice.frame_order() {
        let live = rank_distinct(std::mem::take(&mut lists[node as usize]), n);
        for &ai in lattice.outgoing(node) {
            let arc = lattice.arc(ai);
            for p in &live {
                let mut arcs = p.arcs.clone();
                arcs.push(ai);
                let mut words = p.words.clone();
                words.push(arc.word);
                lists[arc.to as usize].push(Partial {
                    score: p.score + arc.acoustic + lm_weight * arc.smalllm,
                    lm: p.lm + arc.smalllm,
                    arcs,
                    words,
                });
            }
        }
        lists[node as usize] = live;
    }
    let finals: Vec<Partial> = lattice
        .finals()
        .iter()
        .flat_map(|&f| lists[f as usize].iter().cloned())
        .collect();
    Ok(rank_distinct(finals, n)
        .into_iter()
        .map(|p| PathHypothesis::from_arcs(lattice, p.arcs, p.lm, lm_weight))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TwoPassMode<'a> {
    /// Acoustic + weight × RNNLM.
    Rnnlm,
    /// Per word ln(λ·P_ngram + (1 − λ)·P_rnnlm).
    Hybrid { ngram: &'a NgramModel, interp_weight: f64 },
}

/// ln(λ·e^a + (1 − λ)·e^b), exact at the endpoints.
pub fn interpolate_log(lambda: f64, a: f64, b: f64) -> f64 {
    if lambda >= 1.0 {
        return a;
    }
    if lambda <= 0.0 {
        return b;
    }
    let (x, y) = (lambda.ln() + a, (1.0 - lambda).ln() + b);
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// Re-scores `hyp` under `mode`, keeping its arcs and acoustic score.
pub fn rescore_hypothesis(
    hyp: &PathHypothesis,
    mode: TwoPassMode<'_>,
    model: &RnnlmModel,
    tree: &HuffmanTree,
) -> Result<PathHypothesis> {
    let mut ctx = model.zero_context();
    let mut history = match mode {
        TwoPassMode::Hybrid { ngram, .. } => vec![ngram.sentence_begin()],
        TwoPassMode::Rnnlm => Vec::new(),
    };
    let mut lm = 0.0;
    for &w in &hyp.words {
        let (p_rnn, next) = model.compute(tree, &ctx, w)?;
        lm += match mode {
            TwoPassMode::Rnnlm => p_rnn,
            TwoPassMode::Hybrid { ngram, interp_weight } => {
                interpolate_log(interp_weight, ngram.score(&history, w)?, p_rnn)
            }
        };
        ctx = next;
        history.push(w);
    }
    Ok(PathHypothesis {
        lm,
        combined_score: hyp.acoustic + hyp.lm_weight * lm,
        context: None,
        ..hyp.clone()
    })
}

/// Re-ranks an n-best list and returns the winner with its new scores.
/// Ties keep the earlier hypothesis.
pub fn rescore_twopass(
    hyps: &[PathHypothesis],
    mode: TwoPassMode<'_>,
    model: &RnnlmModel,
    tree: &HuffmanTree,
) -> Result<PathHypothesis> {
    let mut best: Option<PathHypothesis> = None;
    for h in hyps {
        let r = rescore_hypothesis(h, mode, model, tree)?;
        if best.as_ref().is_none_or(|b| r.combined_score > b.combined_score) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty hypothesis list".into()))
}

/// Token-level edit distance.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

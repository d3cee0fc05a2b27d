use super::literals::fill_literals;
use super::{Decoder, DecoderError, Memory, Result, SkeletonToken, SpineState};
use crate::encoder::EncoderOutput;
use crate::grammar::{rules, Action, Cursor, RuleId, Slot};
use crate::layers::Fwd;
use crate::numerics::concat_rows;
use crate::schema::{NodeId, SchemaGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub beam_size: usize,
    pub max_len: usize,
    /// Also run greedy decoding and keep the better-scoring result.
    pub compare_greedy: bool,
}

/// Actions with nonzero probability at one step of the returned sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOptions {
    Rules(Vec<RuleId>),
    Nodes(Vec<NodeId>),
    Literal,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub actions: Vec<Action>,
    /// Log-probability of the skeleton plus the chosen details.
    pub score: f64,
    pub options: Vec<StepOptions>,
}

#[derive(Clone)]
struct Step<'t> {
    token: SkeletonToken,
    state: SpineState<'t>,
    /// Allowed rules at this step (empty for placeholders).
    options: Vec<RuleId>,
}

#[derive(Clone)]
struct Hyp<'t> {
    steps: Vec<Step<'t>>,
    score: f64,
    cursor: Cursor,
    state: SpineState<'t>,
}

impl Decoder {
    pub fn default_options(&self) -> DecodeOptions {
        DecodeOptions {
            beam_size: self.config.beam_size,
            max_len: self.config.max_len,
            compare_greedy: true,
        }
    }

    /// Beam search under the grammar mask; literal slots take `literals` in order.
    pub fn decode<'t>(
        &self,
        fwd: &Fwd<'t>,
        enc: &EncoderOutput<'t>,
        graph: &SchemaGraph,
        literals: &[String],
        opts: &DecodeOptions,
    ) -> Result<Decoded> {
        if opts.beam_size == 0 {
            return Err(DecoderError::InvalidArgument("beam size must be at least 1".into()));
        }
        let mem = self.memory(fwd, enc, graph)?;
        let mut best = self.search(fwd, &mem, graph, opts.beam_size, opts.max_len)?;
        if opts.compare_greedy && opts.beam_size > 1 {
            let greedy = self.search(fwd, &mem, graph, 1, opts.max_len)?;
            if greedy.score > best.score {
                best = greedy;
            }
        }
        best.actions = fill_literals(&best.actions, literals);
        Ok(best)
    }

    fn search<'t>(
        &self,
        fwd: &Fwd<'t>,
        mem: &Memory<'t>,
        graph: &SchemaGraph,
        beam: usize,
        max_len: usize,
    ) -> Result<Decoded> {
        let lens = rules::min_slot_lengths();
        let mut live = vec![Hyp {
            steps: Vec::new(),
            score: 0.0,
            cursor: Cursor::new(),
            state: self.initial_state(fwd, mem)?,
        }];
        let mut finished: Vec<Hyp<'t>> = Vec::new();
        let mut longest_dead: Option<Hyp<'t>> = None;

        while !live.is_empty() && finished.len() < beam {
            // (score, hyp, token, options)
            let mut candidates: Vec<(f64, usize, SkeletonToken, Vec<RuleId>)> = Vec::new();
            for (i, hyp) in live.iter().enumerate() {
                let slot = hyp.cursor.frontier().expect("live hypotheses are incomplete");
                let len = hyp.steps.len() + 1;
                let before = candidates.len();
                match slot {
                    Slot::Kind(kind) => {
                        let mask = super::legal_rules(kind);
                        let probs = self
                            .rule_logits(fwd, hyp.state.h, hyp.state.ctx)?
                            .softmax_rows(Some(&mask))?
                            .value();
                        let options: Vec<RuleId> =
                            (0..mask.len()).filter(|&r| probs.data()[r] > 0.0).map(RuleId).collect();
                        for &r in &options {
                            let mut c = hyp.cursor.clone();
                            c.apply(&Action::ApplyRule(r))?;
                            if len + c.min_remaining(&lens) <= max_len {
                                candidates.push((hyp.score + probs.data()[r.0].ln(), i, SkeletonToken::Rule(r), options.clone()));
                            }
                        }
                    }
                    slot => {
                        let rest = hyp.cursor.min_remaining(&lens) - lens[slot.index()];
                        if len + rest <= max_len {
                            candidates.push((hyp.score, i, SkeletonToken::Placeholder(slot), Vec::new()));
                        }
                    }
                }
                if candidates.len() == before && longest_dead.as_ref().is_none_or(|d| d.steps.len() < hyp.steps.len()) {
                    longest_dead = Some(hyp.clone());
                }
            }
            // Stable sort keeps earlier hypotheses first on ties.
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
            candidates.truncate(beam - finished.len());

            let mut next = Vec::with_capacity(candidates.len());
            for (score, i, token, options) in candidates {
                let parent = &live[i];
                let mut hyp = parent.clone();
                hyp.score = score;
                hyp.cursor.apply(&token_action(token))?;
                hyp.steps.push(Step {
                    token,
                    state: parent.state,
                    options,
                });
                if hyp.cursor.is_complete() {
                    finished.push(hyp);
                } else {
                    hyp.state = self.advance(fwd, mem, parent.state, token)?;
                    next.push(hyp);
                }
            }
            live = next;
        }

        if finished.is_empty() {
            let partial = longest_dead
                .map(|h| h.steps.iter().map(|s| token_action(s.token)).collect())
                .unwrap_or_default();
            return Err(DecoderError::DecodeTimeout {
                max_len,
                best_partial: partial,
            });
        }

        let mut best: Option<Decoded> = None;
        for hyp in &finished {
            let d = self.fill_details(fwd, mem, graph, hyp)?;
            if best.as_ref().is_none_or(|b| d.score > b.score) {
                best = Some(d);
            }
        }
        Ok(best.expect("at least one finished hypothesis"))
    }

    /// Picks the most likely node for every column and table slot.
    fn fill_details<'t>(&self, fwd: &Fwd<'t>, mem: &Memory<'t>, graph: &SchemaGraph, hyp: &Hyp<'t>) -> Result<Decoded> {
        let slots: Vec<usize> = hyp
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s.token, SkeletonToken::Placeholder(Slot::Column | Slot::Table)))
            .map(|(i, _)| i)
            .collect();
        let mut actions: Vec<Action> = hyp.steps.iter().map(|s| token_action(s.token)).collect();
        let mut options: Vec<StepOptions> = hyp
            .steps
            .iter()
            .map(|s| match s.token {
                SkeletonToken::Rule(_) => StepOptions::Rules(s.options.clone()),
                _ => StepOptions::Literal,
            })
            .collect();
        let mut score = hyp.score;
        if !slots.is_empty() {
            let summary = concat_rows(&hyp.steps.iter().map(|s| s.state.h).collect::<Vec<_>>())?.mean_rows();
            let h = concat_rows(&slots.iter().map(|&i| hyp.steps[i].state.h).collect::<Vec<_>>())?;
            let ctx = concat_rows(&slots.iter().map(|&i| hyp.steps[i].state.ctx).collect::<Vec<_>>())?;
            let logits = self.pointer_logits(fwd, mem, h, ctx, summary)?;
            let m = graph.num_nodes();
            let mut mask = Vec::with_capacity(slots.len() * m);
            for &i in &slots {
                let SkeletonToken::Placeholder(slot) = hyp.steps[i].token else { unreachable!() };
                mask.extend_from_slice(self.node_mask(mem, slot));
            }
            let probs = logits.softmax_rows(Some(&mask))?.value();
            for (k, &i) in slots.iter().enumerate() {
                let row = probs.row(k);
                let allowed: Vec<NodeId> = (0..m).filter(|&j| mask[k * m + j] && row[j] > 0.0).map(NodeId).collect();
                // First maximum wins ties.
                let pick = allowed
                    .iter()
                    .copied()
                    .fold(None::<NodeId>, |best, n| match best {
                        Some(b) if row[b.0] >= row[n.0] => Some(b),
                        _ => Some(n),
                    })
                    .expect("masked softmax leaves a legal node");
                score += row[pick.0].ln();
                actions[i] = match hyp.steps[i].token {
                    SkeletonToken::Placeholder(Slot::Table) => Action::SelectTable(pick),
                    _ => Action::SelectColumn(pick),
                };
                options[i] = StepOptions::Nodes(allowed);
            }
        }
        Ok(Decoded { actions, score, options })
    }
}

/// Action standing for a skeleton token; placeholders use dummy contents.
fn token_action(token: SkeletonToken) -> Action {
    match token {
        SkeletonToken::Rule(r) => Action::ApplyRule(r),
        SkeletonToken::Placeholder(Slot::Column) => Action::SelectColumn(NodeId(usize::MAX)),
        SkeletonToken::Placeholder(Slot::Table) => Action::SelectTable(NodeId(usize::MAX)),
        SkeletonToken::Placeholder(_) => Action::EmitLiteral(String::new()),
    }
}

use rand_chacha::ChaCha8Rng;

use crate::comms::{communicate, CommParams};
use crate::diffcore::{Binding, ParamStore, Tape, Var};
use crate::error::Result;
use crate::gating::{compete, Competition, GatingParams};
use crate::model::learner::BaseLearner;
use crate::scalar::Scalar;

/// One group: `G` learners with their competition and communication
/// parameters.
#[derive(Clone, Debug)]
pub struct Group<T> {
    pub gating: GatingParams,
    pub comms: CommParams,
    pub learners: Vec<BaseLearner<T>>,
}

/// Per-learner outputs on the rows the learner was active for.
#[derive(Clone, Debug)]
pub struct LearnerVars {
    pub rows: Vec<usize>,
    pub pooled: Var,
    /// Context after communication, `[n, D]`.
    pub context: Var,
    pub backcast: Var,
    pub forecast: Var,
}

/// Record handles of one group's forward pass over a batch.
#[derive(Clone, Debug)]
pub struct GroupVars<T> {
    pub input: Var,
    pub competition: Competition<T>,
    pub learners: Vec<Option<LearnerVars>>,
    /// `[B, t]` group backcast (average over all `G` learners).
    pub backcast: Var,
    /// `[B, H]` group forecast.
    pub forecast: Var,
    /// `[B, t]` input minus backcast.
    pub residual: Var,
    /// `G` arrays `[B, D]` handed to the next group's competition.
    pub contexts: Vec<Var>,
}

impl<T: Scalar> Group<T> {
    /// Five stages: compete, embed, communicate, predict, average and
    /// subtract.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        binding: &mut Binding,
        store: &ParamStore<T>,
        input: Var,
        previous: &[Var],
        top_k: usize,
        rngs: Option<&mut [ChaCha8Rng]>,
    ) -> Result<GroupVars<T>> {
        let batch = tape.shape(input)[0];
        let learners = self.learners.len();

        let competition = compete(tape, binding, store, &self.gating, input, previous, top_k)?;
        let masks = competition.masks(learners);

        let mut fresh = Vec::with_capacity(learners);
        for (g, pooled) in competition.pooled.iter().enumerate() {
            fresh.push(match pooled {
                Some((rows, p)) => Some((rows.clone(), self.learners[g].embed(tape, binding, store, *p)?)),
                None => None,
            });
        }

        let mut current = Vec::with_capacity(learners);
        for g in 0..learners {
            current.push(match &fresh[g] {
                Some((rows, theta)) => {
                    let spread = tape.scatter_rows(*theta, rows, batch)?;
                    tape.where_rows(&masks[g], spread, previous[g])?
                }
                None => previous[g],
            });
        }

        let updated = communicate(tape, binding, store, &self.comms, &current, &fresh, &masks, rngs)?;

        let mut back_sum: Option<Var> = None;
        let mut fore_sum: Option<Var> = None;
        let mut outputs = Vec::with_capacity(learners);
        let mut contexts = Vec::with_capacity(learners);
        for g in 0..learners {
            let (Some(theta), Some((rows, _))) = (updated[g], &fresh[g]) else {
                outputs.push(None);
                contexts.push(previous[g]);
                continue;
            };
            let (b, f) = self.learners[g].predict(tape, binding, store, theta)?;
            let b_full = tape.scatter_rows(b, rows, batch)?;
            let f_full = tape.scatter_rows(f, rows, batch)?;
            back_sum = Some(match back_sum {
                Some(s) => tape.add(s, b_full)?,
                None => b_full,
            });
            fore_sum = Some(match fore_sum {
                Some(s) => tape.add(s, f_full)?,
                None => f_full,
            });
            let spread = tape.scatter_rows(theta, rows, batch)?;
            contexts.push(tape.where_rows(&masks[g], spread, previous[g])?);
            let pooled = competition.pooled[g].as_ref().map(|(_, p)| *p).expect("active learner has input");
            outputs.push(Some(LearnerVars {
                rows: rows.clone(),
                pooled,
                context: theta,
                backcast: b,
                forecast: f,
            }));
        }

        // top_k >= 1 guarantees at least one active learner per sample
        let inv_g = T::one() / T::of(learners as f64);
        let backcast = tape.scale(back_sum.expect("some learner active"), inv_g)?;
        let forecast = tape.scale(fore_sum.expect("some learner active"), inv_g)?;
        let residual = tape.sub(input, backcast)?;

        Ok(GroupVars {
            input,
            competition,
            learners: outputs,
            backcast,
            forecast,
            residual,
            contexts,
        })
    }
}

//! The IDEA stack: `L` groups of `G` base learners chained by backcast
//! residuals, with learner contexts carried from group to group.

mod checkpoint;
mod config;
mod group;
mod learner;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{Mode, ModelConfig};
pub use group::{Group, GroupVars, LearnerVars};
pub use learner::{BaseLearner, Dense};

use crate::basis::{BasisSpec, LearnerKind};
use crate::comms::CommParams;
use crate::diffcore::{glorot_uniform, uniform, Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gating::{GatingParams, TOKEN_WIDTH};
use crate::scalar::Scalar;

/// Half-width of the uniform initialisation of the first-group contexts.
pub const CONTEXT_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct IdeaModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    /// `G` trainable `[1, D]` contexts queried by the first group.
    pub initial_contexts: Vec<ParamId>,
    pub groups: Vec<Group<T>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Enables communication dropout.
    pub training: bool,
    /// Seed of the per-sample dropout streams.
    pub seed: u64,
    /// Stream index of batch row 0; row `b` uses stream `offset + b`.
    pub sample_offset: u64,
}

#[derive(Clone, Debug)]
pub struct ForwardVars<T> {
    /// `[B, H]`, sum of the group forecasts.
    pub forecast: Var,
    pub groups: Vec<GroupVars<T>>,
}

/// Activation outcome of one group on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord<T> {
    pub group: usize,
    /// Relevance of every learner, in `[0, 1]`.
    pub relevance: Vec<T>,
    /// Exactly `k` learner indices, ascending.
    pub activated: Vec<usize>,
    /// Pooled input of each activated learner, same order as `activated`.
    pub pooled: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerOutput<T> {
    pub learner: usize,
    pub context: Vec<T>,
    pub backcast: Vec<T>,
    pub forecast: Vec<T>,
}

/// Values of one group's forward pass on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupTrace<T> {
    pub group: usize,
    pub input: Vec<T>,
    pub activation: ActivationRecord<T>,
    pub learners: Vec<LearnerOutput<T>>,
    pub backcast: Vec<T>,
    pub forecast: Vec<T>,
    pub residual: Vec<T>,
}

impl<T: Scalar> IdeaModel<T> {
    /// Builds a model with freshly initialised parameters; the seed comes
    /// from the config.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let mut store = ParamStore::new();
        let initial_contexts = (0..c.learners)
            .map(|g| {
                store.add(
                    format!("context0.{g}"),
                    uniform(&[1, c.context_width], CONTEXT_INIT_SCALE, &mut rng),
                )
            })
            .collect();

        let mut groups = Vec::with_capacity(c.groups);
        for l in 0..c.groups {
            let key = store.add(format!("g{l}.gate.key"), glorot_uniform(TOKEN_WIDTH, c.key_width, &mut rng));
            let value = store.add(format!("g{l}.gate.value"), glorot_uniform(TOKEN_WIDTH, c.value_width, &mut rng));
            let queries = (0..c.learners)
                .map(|g| store.add(format!("g{l}.gate.query{g}"), glorot_uniform(c.context_width, c.key_width, &mut rng)))
                .collect();
            let gating = GatingParams {
                key,
                value,
                queries,
                key_width: c.key_width,
                value_width: c.value_width,
            };

            let mut comms = CommParams {
                queries: vec![],
                keys: vec![],
                values: vec![],
                width: c.comm_width,
                alpha: c.alpha,
                dropout: c.comm_dropout,
            };
            for g in 0..c.learners {
                comms.queries.push(store.add(format!("g{l}.comm.query{g}"), glorot_uniform(c.context_width, c.comm_width, &mut rng)));
                comms.keys.push(store.add(format!("g{l}.comm.key{g}"), glorot_uniform(c.context_width, c.comm_width, &mut rng)));
                comms.values.push(store.add(format!("g{l}.comm.value{g}"), glorot_uniform(c.context_width, c.context_width, &mut rng)));
            }

            let mut learners = Vec::with_capacity(c.learners);
            for g in 0..c.learners {
                let spec = BasisSpec::new(c.mode.kind_of(g), c.trend_degree, c.lookback, c.horizon)?;
                let mut widths = vec![c.value_width];
                widths.extend(std::iter::repeat(c.hidden_width).take(c.layers - 1));
                widths.push(c.context_width);
                let layers = widths
                    .windows(2)
                    .enumerate()
                    .map(|(m, w)| Dense {
                        weight: store.add(format!("g{l}.b{g}.fc{m}.weight"), glorot_uniform(w[0], w[1], &mut rng)),
                        bias: store.add(format!("g{l}.b{g}.fc{m}.bias"), Tensor::zeros(vec![w[1]])),
                    })
                    .collect();
                let backcast_head = store.add(
                    format!("g{l}.b{g}.head.backcast"),
                    glorot_uniform(c.context_width, spec.backcast_dim(), &mut rng),
                );
                let forecast_head = store.add(
                    format!("g{l}.b{g}.head.forecast"),
                    glorot_uniform(c.context_width, spec.forecast_dim(), &mut rng),
                );
                learners.push(BaseLearner::new(spec, layers, backcast_head, forecast_head)?);
            }
            groups.push(Group {
                gating,
                comms,
                learners,
            });
        }
        Ok(Self {
            config,
            store,
            initial_contexts,
            groups,
        })
    }

    pub fn learner_kinds(&self) -> Vec<LearnerKind> {
        self.config.learner_kinds()
    }

    /// Every parameter that belongs to learner `g` of group `l`: its query,
    /// layers, heads and communication projections.
    pub fn learner_params(&self, group: usize, learner: usize) -> Vec<ParamId> {
        let grp = &self.groups[group];
        let b = &grp.learners[learner];
        let mut ids = vec![
            grp.gating.queries[learner],
            grp.comms.queries[learner],
            grp.comms.keys[learner],
            grp.comms.values[learner],
            b.backcast_head,
            b.forecast_head,
        ];
        for d in &b.layers {
            ids.push(d.weight);
            ids.push(d.bias);
        }
        ids
    }

    /// Batched forward pass over `x` (`[B, t]`) recorded on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        binding: &mut Binding,
        x: Var,
        opts: &ForwardOptions,
    ) -> Result<ForwardVars<T>> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.lookback {
            return Err(Error::shape("model_forward", &[&shape, &[self.config.lookback]]));
        }
        let batch = shape[0];
        let mut rngs: Option<Vec<ChaCha8Rng>> = (opts.training && self.config.comm_dropout > 0.0).then(|| {
            (0..batch)
                .map(|b| {
                    let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
                    r.set_stream(opts.sample_offset + b as u64);
                    r
                })
                .collect()
        });

        let mut contexts = Vec::with_capacity(self.config.learners);
        for &id in &self.initial_contexts {
            let v = binding.bind(tape, &self.store, id);
            contexts.push(tape.broadcast_rows(v, batch)?);
        }

        let mut input = x;
        let mut forecast: Option<Var> = None;
        let mut groups = Vec::with_capacity(self.groups.len());
        for group in &self.groups {
            let out = group.forward(
                tape,
                binding,
                &self.store,
                input,
                &contexts,
                self.config.top_k,
                rngs.as_deref_mut(),
            )?;
            forecast = Some(match forecast {
                Some(f) => tape.add(f, out.forecast)?,
                None => out.forecast,
            });
            input = out.residual;
            contexts = out.contexts.clone();
            groups.push(out);
        }
        Ok(ForwardVars {
            forecast: forecast.expect("at least one group"),
            groups,
        })
    }

    /// Forecasts and per-group traces for a batch of lookback windows.
    pub fn forward_traces(&self, windows: &[Vec<T>], opts: &ForwardOptions) -> Result<(Vec<Vec<T>>, Vec<Vec<GroupTrace<T>>>)> {
        if windows.is_empty() {
            return Ok((vec![], vec![]));
        }
        let mut tape = Tape::new();
        let mut binding = Binding::new(&self.store);
        let x = tape.constant(Tensor::from_rows(windows)?);
        let out = self.forward(&mut tape, &mut binding, x, opts)?;
        let batch = windows.len();
        let forecasts = (0..batch).map(|b| tape.value(out.forecast).row(b).to_vec()).collect();

        let mut traces = vec![Vec::with_capacity(out.groups.len()); batch];
        for (l, g) in out.groups.iter().enumerate() {
            for (b, trace) in traces.iter_mut().enumerate() {
                let activated = g.competition.activated[b].clone();
                let mut pooled = Vec::with_capacity(activated.len());
                let mut learners = Vec::with_capacity(activated.len());
                for &a in &activated {
                    let lv = g.learners[a].as_ref().expect("activated learner has outputs");
                    let r = lv.rows.iter().position(|&row| row == b).expect("row recorded");
                    pooled.push(tape.value(lv.pooled).row(r).to_vec());
                    learners.push(LearnerOutput {
                        learner: a,
                        context: tape.value(lv.context).row(r).to_vec(),
                        backcast: tape.value(lv.backcast).row(r).to_vec(),
                        forecast: tape.value(lv.forecast).row(r).to_vec(),
                    });
                }
                trace.push(GroupTrace {
                    group: l,
                    input: tape.value(g.input).row(b).to_vec(),
                    activation: ActivationRecord {
                        group: l,
                        relevance: g.competition.relevance[b].clone(),
                        activated,
                        pooled,
                    },
                    learners,
                    backcast: tape.value(g.backcast).row(b).to_vec(),
                    forecast: tape.value(g.forecast).row(b).to_vec(),
                    residual: tape.value(g.residual).row(b).to_vec(),
                });
            }
        }
        Ok((forecasts, traces))
    }

    /// Forecast and traces of one window.
    pub fn forward_one(&self, x: &[T], opts: &ForwardOptions) -> Result<(Vec<T>, Vec<GroupTrace<T>>)> {
        let (mut f, mut t) = self.forward_traces(&[x.to_vec()], opts)?;
        Ok((f.remove(0), t.remove(0)))
    }

    /// Forecasts without traces, evaluated in chunks.
    pub fn predict(&self, windows: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(512) {
            let mut tape = Tape::new();
            let mut binding = Binding::new(&self.store);
            let x = tape.constant(Tensor::from_rows(chunk)?);
            let fwd = self.forward(&mut tape, &mut binding, x, &ForwardOptions::default())?;
            let f = tape.value(fwd.forecast);
            out.extend((0..chunk.len()).map(|b| f.row(b).to_vec()));
        }
        Ok(out)
    }
}

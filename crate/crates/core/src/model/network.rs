use pkchat_tensor::{seeded_init, InitScheme, ParamGrads, ParamId, ParamStore, Tape, Tensor, Var, MASK_FILL};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::grid::{assemble_input, assign_placeholders, ExtendedVocab, InputGrid, MaskMode};
use crate::error::{Error, Result};
use crate::text::{tokenize, Role, Utterance, Vocab};

struct LayerIds {
    ln1: (ParamId, ParamId),
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    w1: (ParamId, ParamId),
    w2: (ParamId, ParamId),
}

struct Ids {
    token: ParamId,
    position: ParamId,
    role: ParamId,
    turn: ParamId,
    layers: Vec<LayerIds>,
    final_ln: (ParamId, ParamId),
    out: (ParamId, ParamId),
    posterior: (ParamId, ParamId),
    gate: (ParamId, ParamId),
    bow: (ParamId, ParamId),
    switch: (ParamId, ParamId),
    pointer: ParamId,
}

impl Ids {
    fn resolve(store: &ParamStore, layers: usize) -> Result<Self> {
        let id = |n: &str| store.id(n).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")));
        let pair = |a: &str, b: &str| Ok::<_, Error>((id(a)?, id(b)?));
        let mut ls = Vec::with_capacity(layers);
        for l in 0..layers {
            let p = |s: &str| format!("layer{l}.{s}");
            ls.push(LayerIds {
                ln1: pair(&p("ln1.gamma"), &p("ln1.beta"))?,
                wq: pair(&p("attn.wq"), &p("attn.bq"))?,
                wk: pair(&p("attn.wk"), &p("attn.bk"))?,
                wv: pair(&p("attn.wv"), &p("attn.bv"))?,
                wo: pair(&p("attn.wo"), &p("attn.bo"))?,
                ln2: pair(&p("ln2.gamma"), &p("ln2.beta"))?,
                w1: pair(&p("ffn.w1"), &p("ffn.b1"))?,
                w2: pair(&p("ffn.w2"), &p("ffn.b2"))?,
            });
        }
        Ok(Self {
            token: id("embed.token")?,
            position: id("embed.position")?,
            role: id("embed.role")?,
            turn: id("embed.turn")?,
            layers: ls,
            final_ln: pair("final_ln.gamma", "final_ln.beta")?,
            out: pair("out.w", "out.b")?,
            posterior: pair("posterior.w", "posterior.b")?,
            gate: pair("gate.w", "gate.b")?,
            bow: pair("bow.w", "bow.b")?,
            switch: pair("switch.w", "switch.b")?,
            pointer: id("pointer.w")?,
        })
    }
}

/// How the latent act enters the generation pass during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentChoice {
    /// Hard sample by inverse CDF at `u` in [0, 1); gradients pass straight
    /// through to the posterior.
    Sample(f64),
    /// Posterior-weighted mix of latent embeddings (fully differentiable).
    Expected,
    /// Most probable act, hard, no gradient through the choice.
    Argmax,
}

/// Scalar loss components. `total` is `nll + bow + ts` evaluated in that order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub nll: f64,
    pub bow: f64,
    pub ts: f64,
    pub total: f64,
}

impl LossParts {
    pub fn new(nll: f64, bow: f64, ts: f64) -> Self {
        Self { nll, bow, ts, total: nll + bow + ts }
    }
}

/// One training unit: history, grounding, gold reply and other-topic knowledge.
#[derive(Clone, Copy, Debug)]
pub struct LossInput<'a> {
    pub context: &'a [Utterance],
    pub knowledge: &'a [String],
    pub response: &'a str,
    pub negative: &'a [String],
}

/// Training-time input corruption. Each distinct word is treated as unknown
/// (given a placeholder id at the embedding lookup) with probability `rate`,
/// so the model also sees familiar structure around unfamiliar entities.
/// Copy and bag-of-words targets keep the original word.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordDropout {
    pub rate: f64,
    pub seed: u64,
}

impl WordDropout {
    fn drops(&self, word: &str) -> bool {
        // FNV-1a over seed and word, then a splitmix64 finalizer.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in self.seed.to_le_bytes().iter().chain(word.as_bytes()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.rate
    }

    pub fn apply(&self, grid: &mut InputGrid, vocab: &Vocab) {
        assign_placeholders(grid, vocab, None, |w| self.drops(w));
    }
}

/// Per-position outputs of one generation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub p_vocab: Vec<f64>,
    /// Pointer attention over every grid position (zero off the sources).
    pub a: Vec<f64>,
    pub lambda: f64,
    pub h_d: Vec<f64>,
}

pub(crate) struct GenVars {
    pub p_vocab: Var,
    pub lambda: Var,
    pub attn: Var,
    pub hidden: Var,
}

pub struct DialogueModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    ids: Ids,
    latent_ids: Vec<usize>,
}

impl Clone for DialogueModel {
    fn clone(&self) -> Self {
        Self::from_parts(self.config.clone(), self.vocab.clone(), self.params.clone()).expect("valid model")
    }
}

impl std::fmt::Debug for DialogueModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DialogueModel")
            .field("config", &self.config)
            .field("vocab", &self.vocab.len())
            .field("params", &self.params.num_scalars())
            .finish()
    }
}

fn init_scheme(name: &str) -> Option<InitScheme> {
    let last = name.rsplit('.').next().unwrap_or(name);
    if last == "gamma" {
        None
    } else if last == "beta" || last.starts_with('b') {
        Some(InitScheme::Zeros)
    } else {
        Some(InitScheme::UniformScaled)
    }
}

/// Starting point for the learned position table: the usual sine/cosine
/// pairs, scaled to the spread of the other embedding tables. Neighbouring
/// positions are then one fixed rotation apart from the first step.
fn sinusoid_table(positions: usize, d: usize) -> Tensor {
    let scale = (6.0 / (positions + d) as f64).sqrt() * (2.0f64 / 3.0).sqrt();
    let mut data = vec![0.0; positions * d];
    for p in 0..positions {
        for i in 0..d {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = p as f64 * freq;
            data[p * d + i] = scale * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(positions, d, data).expect("shape matches data")
}

impl DialogueModel {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() || config.latent != vocab.num_latent() {
            return Err(Error::invalid(format!(
                "config expects {} tokens and {} latent acts; vocabulary has {} and {}",
                config.vocab_size,
                config.latent,
                vocab.len(),
                vocab.num_latent()
            )));
        }
        let mut params = ParamStore::new();
        for (i, (name, shape)) in config.param_shapes().into_iter().enumerate() {
            let t = match init_scheme(&name) {
                _ if name == "embed.position" => sinusoid_table(shape[0], shape[1]),
                None => Tensor::full(&shape, 1.0),
                Some(s) => seeded_init(&shape, s, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)),
            };
            params.add(name, t)?;
        }
        Self::from_parts(config, vocab, params)
    }

    /// Wraps existing parameters, checking every name and shape.
    pub fn from_parts(config: ModelConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
        }
        if vocab.len() != config.vocab_size {
            return Err(Error::Checkpoint("vocabulary size disagrees with config".into()));
        }
        let ids = Ids::resolve(&params, config.layers)?;
        let latent_ids = (0..config.latent).map(|k| vocab.latent_id(k)).collect();
        Ok(Self { config, vocab, params, ids, latent_ids })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.by_name(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let id = self.params.id(name)?;
        Some(self.params.get_mut(id))
    }

    pub fn assemble(
        &self,
        context: &[Utterance],
        knowledge: &[String],
        response: Option<&[String]>,
        latent: Option<usize>,
        mode: MaskMode,
    ) -> Result<InputGrid> {
        assemble_input(&self.config, &self.vocab, context, knowledge, response, latent, mode)
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(&self.params, id)
    }

    fn linear(&self, tape: &mut Tape, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let w = self.p(tape, w);
        let b = self.p(tape, b);
        let y = tape.matmul(x, w)?;
        Ok(tape.add(y, b)?)
    }

    fn norm(&self, tape: &mut Tape, x: Var, (g, b): (ParamId, ParamId)) -> Result<Var> {
        let g = self.p(tape, g);
        let b = self.p(tape, b);
        Ok(tape.layer_norm(x, g, b, self.config.ln_eps)?)
    }

    /// Final-layer hidden states, `[n, D]`. With `latent` (a `[1, K]` weight
    /// vector) the first row's token embedding is the weighted sum of the
    /// latent-token embeddings instead of a table lookup.
    pub fn hidden(&self, tape: &mut Tape, grid: &InputGrid, latent: Option<Var>) -> Result<Var> {
        let n = grid.len();
        if grid.position_ids.iter().any(|&p| p >= self.config.max_positions()) {
            return Err(Error::invalid("grid longer than the configured maximum"));
        }
        let table = self.p(tape, self.ids.token);
        let mut x = tape.gather(table, &grid.token_ids)?;
        if let Some(weights) = latent {
            if grid.latent_pos() != Some(0) {
                return Err(Error::invalid("latent weights need a generation-mode grid"));
            }
            let rows = tape.gather(table, &self.latent_ids)?;
            let z = tape.matmul(weights, rows)?;
            x = if n > 1 {
                let rest = tape.slice(x, 0, 1, n)?;
                tape.concat(&[z, rest], 0)?
            } else {
                z
            };
        }
        for (id, idx) in [
            (self.ids.position, &grid.position_ids),
            (self.ids.role, &grid.role_ids),
            (self.ids.turn, &grid.turn_ids),
        ] {
            let t = self.p(tape, id);
            let e = tape.gather(t, idx)?;
            x = tape.add(x, e)?;
        }
        let blocked: Vec<bool> = grid.mask.iter().map(|v| !v).collect();
        let (h, dh) = (self.config.heads, self.config.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in &self.ids.layers {
            let a = self.norm(tape, x, layer.ln1)?;
            let q = self.linear(tape, a, layer.wq)?;
            let k = self.linear(tape, a, layer.wk)?;
            let v = self.linear(tape, a, layer.wv)?;
            let mut heads = Vec::with_capacity(h);
            for i in 0..h {
                let (lo, hi) = (i * dh, (i + 1) * dh);
                let qh = tape.slice(q, 1, lo, hi)?;
                let kh = tape.slice(k, 1, lo, hi)?;
                let vh = tape.slice(v, 1, lo, hi)?;
                let kt = tape.transpose(kh)?;
                let s = tape.matmul(qh, kt)?;
                let s = tape.scale(s, scale);
                let s = tape.masked_fill(s, &blocked, MASK_FILL)?;
                let w = tape.softmax(s, 1)?;
                heads.push(tape.matmul(w, vh)?);
            }
            let att = if h == 1 { heads[0] } else { tape.concat(&heads, 1)? };
            let att = self.linear(tape, att, layer.wo)?;
            x = tape.add(x, att)?;
            let b = self.norm(tape, x, layer.ln2)?;
            let f = self.linear(tape, b, layer.w1)?;
            let f = tape.gelu(f);
            let f = self.linear(tape, f, layer.w2)?;
            x = tape.add(x, f)?;
        }
        self.norm(tape, x, self.ids.final_ln)
    }

    /// `[1, K]` posterior logits and the `[1, D]` status hidden state.
    pub(crate) fn posterior_vars(&self, tape: &mut Tape, hidden: Var, grid: &InputGrid) -> Result<(Var, Var)> {
        let m = grid.status_pos().ok_or_else(|| Error::invalid("posterior needs a posterior-mode grid"))?;
        let hm = tape.slice(hidden, 0, m, m + 1)?;
        let logits = self.linear(tape, hm, self.ids.posterior)?;
        Ok((logits, hm))
    }

    pub(crate) fn switch_logit(&self, tape: &mut Tape, hm: Var) -> Result<Var> {
        self.linear(tape, hm, self.ids.switch)
    }

    pub(crate) fn bow_log_probs(&self, tape: &mut Tape, hidden: Var, grid: &InputGrid) -> Result<Var> {
        let z = grid.latent_pos().ok_or_else(|| Error::invalid("bag-of-words needs a generation-mode grid"))?;
        let hz = tape.slice(hidden, 0, z, z + 1)?;
        let f = self.linear(tape, hz, self.ids.bow)?;
        Ok(tape.log_softmax(f, 1)?)
    }

    /// Vocabulary distribution, gate and pointer attention for every response slot.
    pub(crate) fn generation_vars(&self, tape: &mut Tape, hidden: Var, grid: &InputGrid) -> Result<GenVars> {
        let r = grid.response.clone();
        if r.is_empty() {
            return Err(Error::invalid("generation grid has no response slots"));
        }
        let hr = tape.slice(hidden, 0, r.start, r.end)?;
        let logits = self.linear(tape, hr, self.ids.out)?;
        let p_vocab = tape.softmax(logits, 1)?;
        let wp = self.p(tape, self.ids.pointer);
        let q = tape.matmul(hr, wp)?;
        let ht = tape.transpose(hidden)?;
        let s = tape.matmul(q, ht)?;
        let s = tape.scale(s, 1.0 / (self.config.hidden as f64).sqrt());
        let n = grid.len();
        let off: Vec<bool> = (0..n).map(|p| !grid.is_source(p)).collect();
        let blocked: Vec<bool> = (0..r.len()).flat_map(|_| off.iter().copied()).collect();
        let s = tape.masked_fill(s, &blocked, MASK_FILL)?;
        let attn = tape.softmax(s, 1)?;
        // The gate also reads what the pointer is looking at.
        let ctx = tape.matmul(attn, hidden)?;
        let gate_in = tape.add(hr, ctx)?;
        let g = self.linear(tape, gate_in, self.ids.gate)?;
        let lambda = tape.sigmoid(g);
        Ok(GenVars { p_vocab, lambda, attn, hidden: hr })
    }

    /// `[T, E]` mixed distribution over the extended vocabulary.
    pub(crate) fn mixed(&self, tape: &mut Tape, g: &GenVars, ext: &ExtendedVocab) -> Result<Var> {
        let t = tape.shape(g.p_vocab)[0];
        let pv = if ext.oov.is_empty() {
            g.p_vocab
        } else {
            let pad = tape.constant(Tensor::zeros(&[t, ext.oov.len()]));
            tape.concat(&[g.p_vocab, pad], 1)?
        };
        let gen = tape.mul(pv, g.lambda)?;
        let copy = tape.scatter_cols(g.attn, &ext.source_ids, ext.len())?;
        let neg = tape.scale(g.lambda, -1.0);
        let rest = tape.add_scalar(neg, 1.0);
        let copy = tape.mul(copy, rest)?;
        Ok(tape.add(gen, copy)?)
    }

    /// Response targets over the extended vocabulary, ending with `[EOS]`.
    pub fn targets(&self, grid: &InputGrid, ext: &ExtendedVocab) -> Vec<usize> {
        let r = grid.response.clone();
        let mut t: Vec<usize> = grid.words[r.start + 1..r.end].iter().map(|w| ext.id(&self.vocab, w)).collect();
        t.push(Vocab::EOS_ID);
        t
    }

    fn latent_weights(&self, tape: &mut Tape, probs: Var, choice: LatentChoice) -> Result<(Var, usize)> {
        let p = tape.value(probs).data().to_vec();
        let argmax = p.iter().enumerate().fold(0, |b, (i, &v)| if v > p[b] { i } else { b });
        Ok(match choice {
            LatentChoice::Expected => (probs, argmax),
            LatentChoice::Argmax => {
                let mut onehot = vec![0.0; p.len()];
                onehot[argmax] = 1.0;
                (tape.constant(Tensor::matrix(1, p.len(), onehot)?), argmax)
            }
            LatentChoice::Sample(u) => {
                let mut acc = 0.0;
                let mut k = p.len() - 1;
                for (i, &pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let mut onehot = vec![0.0; p.len()];
                onehot[k] = 1.0;
                (tape.straight_through(probs, Tensor::matrix(1, p.len(), onehot)?)?, k)
            }
        })
    }

    /// Mean negative log-probability of the response words under the
    /// bag-of-words head. The bag is sorted, so word order cannot matter.
    fn record_bow(&self, tape: &mut Tape, hidden: Var, grid: &InputGrid) -> Result<Var> {
        let bow_lp = self.bow_log_probs(tape, hidden, grid)?;
        let mut bag: Vec<(usize, usize)> =
            grid.words[grid.response.start + 1..grid.response.end].iter().map(|w| (0, self.vocab.id(w))).collect();
        bag.sort_unstable();
        if bag.is_empty() {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let picked = tape.pick(bow_lp, &bag)?;
        let mean = tape.mean(picked);
        Ok(tape.scale(mean, -1.0))
    }

    /// Bag-of-words loss of `response` under a fixed latent act.
    pub fn bow_loss(&self, context: &[Utterance], knowledge: &[String], z: usize, response: &str) -> Result<f64> {
        let resp = tokenize(response);
        let grid = self.assemble(context, knowledge, Some(&resp), Some(z), MaskMode::Generation)?;
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, &grid, None)?;
        let bow = self.record_bow(&mut tape, h, &grid)?;
        Ok(tape.value(bow).item())
    }

    /// Records all three losses for one example on `tape`. Returns the
    /// total as a tape variable, the parts, and the chosen latent act.
    pub fn record_losses(
        &self,
        tape: &mut Tape,
        input: &LossInput<'_>,
        choice: LatentChoice,
        dropout: Option<WordDropout>,
    ) -> Result<(Var, LossParts, usize)> {
        if input.negative.is_empty() {
            return Err(Error::invalid("topic-switch loss needs negative knowledge"));
        }
        let resp = tokenize(input.response);
        if resp.is_empty() {
            return Err(Error::invalid("empty response"));
        }
        let corrupt = |mut g: InputGrid| {
            if let Some(d) = dropout {
                d.apply(&mut g, &self.vocab);
            }
            g
        };
        let post = corrupt(self.assemble(input.context, input.knowledge, Some(&resp), None, MaskMode::Posterior)?);
        let h = self.hidden(tape, &post, None)?;
        let (zlogits, hm) = self.posterior_vars(tape, h, &post)?;
        let probs = tape.softmax(zlogits, 1)?;
        let pos = self.switch_logit(tape, hm)?;

        let switch_logit = |tape: &mut Tape, ctx: &[Utterance], k: &[String], r: &[String]| -> Result<Var> {
            let g = corrupt(self.assemble(ctx, k, Some(r), None, MaskMode::Posterior)?);
            let h = self.hidden(tape, &g, None)?;
            let (_, hm) = self.posterior_vars(tape, h, &g)?;
            self.switch_logit(tape, hm)
        };
        let mut logits = vec![pos, switch_logit(tape, input.context, input.negative, &resp)?];
        let mut labels = vec![1.0, 0.0];
        // The same pair again with the user turn in the response slot, which
        // is how the switch head is queried before a reply exists.
        if let Some((last, prior)) = input.context.split_last().filter(|(u, _)| u.role == Role::User) {
            let user = tokenize(&last.text);
            logits.push(switch_logit(tape, prior, input.knowledge, &user)?);
            logits.push(switch_logit(tape, prior, input.negative, &user)?);
            labels.extend([1.0, 0.0]);
        }
        let all = tape.concat(&logits, 0)?;
        let ts = tape.bce_with_logits(all, &labels)?;
        let ts = tape.scale(ts, 2.0);

        let (weights, z) = self.latent_weights(tape, probs, choice)?;
        let grid = corrupt(self.assemble(input.context, input.knowledge, Some(&resp), Some(z), MaskMode::Generation)?);
        let ext = ExtendedVocab::build(&grid, &self.vocab);
        let hg = self.hidden(tape, &grid, Some(weights))?;
        let gv = self.generation_vars(tape, hg, &grid)?;
        let mixed = self.mixed(tape, &gv, &ext)?;
        let targets = self.targets(&grid, &ext);
        let coords: Vec<(usize, usize)> = targets.iter().copied().enumerate().collect();
        let picked = tape.pick(mixed, &coords)?;
        let logp = tape.log(picked);
        let mean = tape.mean(logp);
        let nll = tape.scale(mean, -1.0);

        let bow = self.record_bow(tape, hg, &grid)?;

        let partial = tape.add(nll, bow)?;
        let total = tape.add(partial, ts)?;
        let parts = LossParts::new(tape.value(nll).item(), tape.value(bow).item(), tape.value(ts).item());
        Ok((total, parts, z))
    }

    /// Loss parts for one example without gradients.
    pub fn compute_losses(&self, input: &LossInput<'_>, choice: LatentChoice) -> Result<LossParts> {
        let mut tape = Tape::new();
        Ok(self.record_losses(&mut tape, input, choice, None)?.1)
    }

    /// Mean loss over `inputs` and its parameter gradients. `choices` pairs
    /// one latent choice with each input.
    pub fn batch_gradients(&self, inputs: &[LossInput<'_>], choices: &[LatentChoice]) -> Result<(LossParts, ParamGrads)> {
        self.batch_gradients_with(inputs, choices, None)
    }

    /// [`Self::batch_gradients`] with word dropout; example `i` uses seed
    /// `dropout.seed + i`.
    pub fn batch_gradients_with(
        &self,
        inputs: &[LossInput<'_>],
        choices: &[LatentChoice],
        dropout: Option<WordDropout>,
    ) -> Result<(LossParts, ParamGrads)> {
        if inputs.is_empty() || inputs.len() != choices.len() {
            return Err(Error::invalid("batch needs one latent choice per example"));
        }
        let scale = 1.0 / inputs.len() as f64;
        let mut grads = self.params.zero_grads();
        let (mut nll, mut bow, mut ts) = (0.0, 0.0, 0.0);
        for (i, (input, &choice)) in inputs.iter().zip(choices).enumerate() {
            let mut tape = Tape::new();
            let d = dropout.map(|d| WordDropout { seed: d.seed.wrapping_add(i as u64), ..d });
            let (total, parts, _) = self.record_losses(&mut tape, input, choice, d)?;
            let scaled = tape.scale(total, scale);
            tape.backward(scaled)?.accumulate_into(&mut grads);
            nll += parts.nll * scale;
            bow += parts.bow * scale;
            ts += parts.ts * scale;
        }
        Ok((LossParts::new(nll, bow, ts), grads))
    }

    /// Posterior over latent acts and the status hidden state.
    pub fn posterior(&self, context: &[Utterance], knowledge: &[String], response: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let resp = tokenize(response);
        let grid = self.assemble(context, knowledge, Some(&resp), None, MaskMode::Posterior)?;
        self.posterior_grid(&grid)
    }

    pub fn posterior_grid(&self, grid: &InputGrid) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, grid, None)?;
        let (logits, hm) = self.posterior_vars(&mut tape, h, grid)?;
        let probs = tape.softmax(logits, 1)?;
        Ok((tape.value(probs).data().to_vec(), tape.value(hm).data().to_vec()))
    }

    /// Probability that `knowledge` matches the dialogue `(context, response)`.
    pub fn topic_switch_score(&self, knowledge: &[String], context: &[Utterance], response: &str) -> Result<f64> {
        let resp = tokenize(response);
        let grid = self.assemble(context, knowledge, Some(&resp), None, MaskMode::Posterior)?;
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, &grid, None)?;
        let (_, hm) = self.posterior_vars(&mut tape, h, &grid)?;
        let logit = self.switch_logit(&mut tape, hm)?;
        let p = tape.sigmoid(logit);
        Ok(tape.value(p).item())
    }

    /// Bag-of-words logits `W3 h + b3` for a `D`-wide latent hidden state.
    pub fn bow_logits(&self, h_z: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, h_z.len(), h_z.to_vec())?);
        let f = self.linear(&mut tape, h, self.ids.bow)?;
        Ok(tape.value(f).data().to_vec())
    }

    /// Outputs at response slot `t` of a generation-mode grid.
    pub fn decode_step(&self, grid: &InputGrid, t: usize) -> Result<DecodeOutput> {
        if grid.mode != MaskMode::Generation {
            return Err(Error::invalid("decode_step needs a generation-mode grid"));
        }
        if t >= grid.response.len() {
            return Err(Error::invalid(format!("step {t} outside {} response slots", grid.response.len())));
        }
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, grid, None)?;
        let g = self.generation_vars(&mut tape, h, grid)?;
        Ok(step_output(&tape, &g, t))
    }

    pub(crate) fn generation_outputs(&self, grid: &InputGrid) -> Result<(Tape, GenVars)> {
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, grid, None)?;
        let g = self.generation_vars(&mut tape, h, grid)?;
        Ok((tape, g))
    }
}

pub(crate) fn step_output(tape: &Tape, g: &GenVars, t: usize) -> DecodeOutput {
    DecodeOutput {
        p_vocab: tape.value(g.p_vocab).row(t).to_vec(),
        a: tape.value(g.attn).row(t).to_vec(),
        lambda: tape.value(g.lambda).at(t, 0),
        h_d: tape.value(g.hidden).row(t).to_vec(),
    }
}

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig, ParamStore, PROJECTION_DIM, STOP_MARGIN};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Additive score for positions a query may not attend to.
const MASKED: f64 = -1e30;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIds {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
}

#[derive(Debug, Clone, Copy)]
struct FeedForwardIds {
    up: LinearIds,
    down: LinearIds,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayerIds {
    norm1: NormIds,
    attn: AttnIds,
    norm2: NormIds,
    ff: FeedForwardIds,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayerIds {
    norm1: NormIds,
    self_attn: AttnIds,
    norm2: NormIds,
    cross_attn: AttnIds,
    norm3: NormIds,
    ff: FeedForwardIds,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIds {
    embed: usize,
    encoder: Vec<EncoderLayerIds>,
    encoder_norm: NormIds,
    frame_in: LinearIds,
    decoder: Vec<DecoderLayerIds>,
    decoder_norm: NormIds,
    pub head: LinearIds,
    projection: LinearIds,
}

struct Allocator<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Allocator<'_> {
    fn xavier(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::uniform(rows, cols, limit, &mut self.rng);
        self.store.add(name, t)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIds {
        let w = self.xavier(format!("{name}.weight"), fan_in, fan_out);
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        LinearIds { w, b }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormIds {
        let gain = self.store.add(format!("{name}.gain"), Tensor::filled(1, dim, 1.0));
        let bias = self.store.add(format!("{name}.bias"), Tensor::zeros(1, dim));
        NormIds { gain, bias }
    }

    fn attention(&mut self, name: &str, d: usize) -> AttnIds {
        AttnIds {
            q: self.linear(&format!("{name}.query"), d, d),
            k: self.linear(&format!("{name}.key"), d, d),
            v: self.linear(&format!("{name}.value"), d, d),
            o: self.linear(&format!("{name}.out"), d, d),
        }
    }

    fn feed_forward(&mut self, name: &str, d: usize, ff: usize) -> FeedForwardIds {
        FeedForwardIds {
            up: self.linear(&format!("{name}.up"), d, ff),
            down: self.linear(&format!("{name}.down"), ff, d),
        }
    }
}

impl ParamIds {
    pub(crate) fn allocate(config: &ModelConfig, store: &mut ParamStore, seed: u64) -> ParamIds {
        let d = config.embed_dim;
        let ff = config.feedforward_dim;
        let mut a = Allocator {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let embed = a.xavier("encoder.embedding".into(), config.vocab_size, d);
        let encoder = (0..config.num_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerIds {
                    norm1: a.norm(&format!("{p}.norm1"), d),
                    attn: a.attention(&format!("{p}.self_attn"), d),
                    norm2: a.norm(&format!("{p}.norm2"), d),
                    ff: a.feed_forward(&format!("{p}.ff"), d, ff),
                }
            })
            .collect();
        let encoder_norm = a.norm("encoder.norm", d);
        let frame_in = a.linear("decoder.frame_in", config.layout().width(), d);
        let decoder = (0..config.num_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerIds {
                    norm1: a.norm(&format!("{p}.norm1"), d),
                    self_attn: a.attention(&format!("{p}.self_attn"), d),
                    norm2: a.norm(&format!("{p}.norm2"), d),
                    cross_attn: a.attention(&format!("{p}.cross_attn"), d),
                    norm3: a.norm(&format!("{p}.norm3"), d),
                    ff: a.feed_forward(&format!("{p}.ff"), d, ff),
                }
            })
            .collect();
        let decoder_norm = a.norm("decoder.norm", d);
        let head = a.linear("decoder.head", d, config.layout().width());
        let projection = a.linear("projection", d, PROJECTION_DIM);
        ParamIds {
            embed,
            encoder,
            encoder_norm,
            frame_in,
            decoder,
            decoder_norm,
            head,
            projection,
        }
    }
}

/// Inverted dropout applied to every sublayer output during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

/// One training sample: its gloss tokens and teacher-forced decoder input rows.
#[derive(Debug, Clone, Copy)]
pub struct SampleInput<'a> {
    pub glosses: &'a [u32],
    pub frames: &'a Tensor,
}

/// Graph handles produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Output frames of every sample, row-stacked.
    pub output: Var,
    /// Per decoder layer, the captured latent rows of every sample.
    pub latents: Vec<Var>,
    /// Per decoder layer, latents mean-pooled over time: one row per sample.
    pub pooled: Vec<Var>,
    /// Per decoder layer, pooled latents passed through the projection head.
    pub projected: Option<Vec<Var>>,
    /// `(start, len)` of each sample's rows in `output`.
    pub spans: Vec<(usize, usize)>,
}

/// Result of autoregressive generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Emitted frames, quaternion blocks normalized.
    pub frames: Tensor,
    /// Generation hit `max_frames` without the counter reaching the stop level.
    pub truncated: bool,
}

struct Ctx<'m, 'g, 'r> {
    model: &'m Model,
    g: &'g mut Graph,
    bound: Vec<Option<Var>>,
    dropout: Option<Dropout<'r>>,
}

fn spans_of(lengths: impl Iterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut start = 0;
    lengths
        .map(|n| {
            let s = (start, n);
            start += n;
            s
        })
        .collect()
}

pub(crate) fn sinusoidal(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 / rate;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(len, dim, data).expect("consistent shape")
}

fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASKED;
        }
    }
    Tensor::new(n, n, data).expect("consistent shape")
}

impl Ctx<'_, '_, '_> {
    fn p(&mut self, id: usize) -> Result<Var> {
        if let Some(v) = self.bound[id] {
            return Ok(v);
        }
        let v = self.g.param(id, self.model.params.get(id))?;
        self.bound[id] = Some(v);
        Ok(v)
    }

    fn linear(&mut self, x: Var, ids: LinearIds) -> Result<Var> {
        let w = self.p(ids.w)?;
        let b = self.p(ids.b)?;
        self.g.linear(x, w, b)
    }

    fn norm(&mut self, x: Var, ids: NormIds) -> Result<Var> {
        let n = self.g.layer_norm_rows(x)?;
        let gain = self.p(ids.gain)?;
        let bias = self.p(ids.bias)?;
        let y = self.g.mul(n, gain)?;
        self.g.add(y, bias)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some(d) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if d.rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.g.shape(x);
        let keep = 1.0 / (1.0 - d.rate);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if d.rng.gen::<f64>() < d.rate { 0.0 } else { keep })
            .collect();
        let m = self.g.constant(Tensor::new(r, c, mask)?)?;
        self.g.mul(x, m)
    }

    fn attention(
        &mut self,
        ids: AttnIds,
        queries: Var,
        q_spans: &[(usize, usize)],
        keys: Var,
        k_spans: &[(usize, usize)],
        causal: bool,
    ) -> Result<Var> {
        let heads = self.model.config.num_heads;
        let dh = self.model.config.embed_dim / heads;
        let q = self.linear(queries, ids.q)?;
        let k = self.linear(keys, ids.k)?;
        let v = self.linear(keys, ids.v)?;
        let mut per_sample = Vec::with_capacity(q_spans.len());
        for (&(qs, qn), &(ks, kn)) in q_spans.iter().zip(k_spans) {
            let qi = self.g.slice_rows(q, qs, qn)?;
            let ki = self.g.slice_rows(k, ks, kn)?;
            let vi = self.g.slice_rows(v, ks, kn)?;
            let mask = if causal {
                Some(self.g.constant(causal_mask(qn))?)
            } else {
                None
            };
            let mut per_head = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = self.g.slice_cols(qi, h * dh, dh)?;
                let kh = self.g.slice_cols(ki, h * dh, dh)?;
                let vh = self.g.slice_cols(vi, h * dh, dh)?;
                let kt = self.g.transpose(kh)?;
                let s = self.g.matmul(qh, kt)?;
                let mut s = self.g.scale(s, 1.0 / (dh as f64).sqrt())?;
                if let Some(m) = mask {
                    s = self.g.add(s, m)?;
                }
                let a = self.g.softmax_rows(s)?;
                per_head.push(self.g.matmul(a, vh)?);
            }
            per_sample.push(self.g.concat_cols(&per_head)?);
        }
        let joined = self.g.concat_rows(&per_sample)?;
        self.linear(joined, ids.o)
    }

    fn feed_forward(&mut self, x: Var, ids: FeedForwardIds) -> Result<Var> {
        let h = self.linear(x, ids.up)?;
        let h = self.g.relu(h)?;
        self.linear(h, ids.down)
    }

    /// Residual add with dropout on the sublayer output.
    fn residual(&mut self, x: Var, sub: Var) -> Result<Var> {
        let sub = self.dropout(sub)?;
        self.g.add(x, sub)
    }

    fn encode(&mut self, glosses: &[&[u32]]) -> Result<(Var, Vec<(usize, usize)>)> {
        let cfg = &self.model.config;
        let d = cfg.embed_dim;
        let mut idx = Vec::new();
        for gs in glosses {
            if gs.is_empty() {
                return Err(Error::InvalidArgument("empty gloss input".into()));
            }
            for &t in gs.iter() {
                if t as usize >= cfg.vocab_size {
                    return Err(Error::InvalidArgument(format!(
                        "gloss id {t} outside vocabulary of {}",
                        cfg.vocab_size
                    )));
                }
                idx.push(t as usize);
            }
        }
        let spans = spans_of(glosses.iter().map(|g| g.len()));
        let mut pe = Vec::with_capacity(idx.len() * d);
        for gs in glosses {
            pe.extend_from_slice(sinusoidal(gs.len(), d).data());
        }
        let ids = self.model.ids.clone();
        let table = self.p(ids.embed)?;
        let e = self.g.gather_rows(table, &idx)?;
        let pe = self.g.constant(Tensor::new(idx.len(), d, pe)?)?;
        let mut x = self.g.add(e, pe)?;
        x = self.dropout(x)?;
        for layer in &ids.encoder {
            let h = self.norm(x, layer.norm1)?;
            let a = self.attention(layer.attn, h, &spans, h, &spans, false)?;
            x = self.residual(x, a)?;
            let h = self.norm(x, layer.norm2)?;
            let f = self.feed_forward(h, layer.ff)?;
            x = self.residual(x, f)?;
        }
        let memory = self.norm(x, ids.encoder_norm)?;
        Ok((memory, spans))
    }

    fn decode(
        &mut self,
        frames: Var,
        spans: &[(usize, usize)],
        memory: Var,
        memory_spans: &[(usize, usize)],
    ) -> Result<(Var, Vec<Var>)> {
        let ids = self.model.ids.clone();
        let d = self.model.config.embed_dim;
        let mut pe = Vec::with_capacity(spans.iter().map(|s| s.1).sum::<usize>() * d);
        for &(_, len) in spans {
            pe.extend_from_slice(sinusoidal(len, d).data());
        }
        let rows = pe.len() / d;
        let pe = self.g.constant(Tensor::new(rows, d, pe)?)?;
        let x = self.linear(frames, ids.frame_in)?;
        let mut x = self.g.add(x, pe)?;
        x = self.dropout(x)?;
        let mut latents = Vec::with_capacity(ids.decoder.len());
        for layer in &ids.decoder {
            let h = self.norm(x, layer.norm1)?;
            let a = self.attention(layer.self_attn, h, spans, h, spans, true)?;
            x = self.residual(x, a)?;
            let z = self.norm(x, layer.norm2)?;
            latents.push(z);
            let c = self.attention(layer.cross_attn, z, spans, memory, memory_spans, false)?;
            x = self.residual(x, c)?;
            let h = self.norm(x, layer.norm3)?;
            let f = self.feed_forward(h, layer.ff)?;
            x = self.residual(x, f)?;
        }
        let h = self.norm(x, ids.decoder_norm)?;
        let out = self.linear(h, ids.head)?;
        Ok((out, latents))
    }
}

impl Model {
    fn ctx<'m, 'g, 'r>(&'m self, g: &'g mut Graph, dropout: Option<Dropout<'r>>) -> Ctx<'m, 'g, 'r> {
        Ctx {
            model: self,
            g,
            bound: vec![None; self.params.len()],
            dropout,
        }
    }

    fn check_frames(&self, frames: &Tensor) -> Result<()> {
        let w = self.config.layout().width();
        if frames.cols() != w {
            return Err(Error::shape("decoder frames", w, frames.cols()));
        }
        if frames.rows() == 0 {
            return Err(Error::EmptySequence("decoder frames"));
        }
        if frames.rows() > self.config.max_frames {
            return Err(Error::InvalidArgument(format!(
                "{} decoder frames exceed max_frames {}",
                frames.rows(),
                self.config.max_frames
            )));
        }
        Ok(())
    }

    /// Teacher-forced pass over a batch, recording everything on `g`.
    ///
    /// Parameters enter the graph under their store ids, so
    /// [`Graph::param_grads`] lines up with [`Model::params`].
    pub fn forward(
        &self,
        g: &mut Graph,
        samples: &[SampleInput<'_>],
        dropout: Option<Dropout<'_>>,
        project: bool,
    ) -> Result<ForwardOutput> {
        if samples.is_empty() {
            return Err(Error::EmptySequence("batch"));
        }
        for s in samples {
            self.check_frames(s.frames)?;
        }
        let mut cx = self.ctx(g, dropout);
        let glosses: Vec<&[u32]> = samples.iter().map(|s| s.glosses).collect();
        let (memory, memory_spans) = cx.encode(&glosses)?;
        let spans = spans_of(samples.iter().map(|s| s.frames.rows()));
        let stacked = samples
            .iter()
            .map(|s| cx.g.constant(s.frames.clone()))
            .collect::<Result<Vec<_>>>()?;
        let frames = cx.g.concat_rows(&stacked)?;
        let (output, latents) = cx.decode(frames, &spans, memory, &memory_spans)?;
        let mut pooled = Vec::with_capacity(latents.len());
        for &z in &latents {
            let rows = spans
                .iter()
                .map(|&(s, n)| {
                    let part = cx.g.slice_rows(z, s, n)?;
                    cx.g.mean_rows(part)
                })
                .collect::<Result<Vec<_>>>()?;
            pooled.push(cx.g.concat_rows(&rows)?);
        }
        let projected = if project {
            let head = self.ids.projection;
            Some(pooled.iter().map(|&p| cx.linear(p, head)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(ForwardOutput {
            output,
            latents,
            pooled,
            projected,
            spans,
        })
    }

    /// Encoder output (one row per gloss) for a single gloss sequence.
    pub fn encode(&self, glosses: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut cx = self.ctx(&mut g, None);
        let (memory, _) = cx.encode(&[glosses])?;
        Ok(g.value(memory).clone())
    }

    /// Decoder pass over `history` attending to `memory`.
    ///
    /// Returns the output rows (one per history row) and each layer's latent rows.
    pub fn decode(&self, history: &Tensor, memory: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_frames(history)?;
        if memory.cols() != self.config.embed_dim || memory.rows() == 0 {
            return Err(Error::shape(
                "encoder memory",
                format!("n x {}", self.config.embed_dim),
                format!("{}x{}", memory.rows(), memory.cols()),
            ));
        }
        let mut g = Graph::new();
        let mut cx = self.ctx(&mut g, None);
        let h = cx.g.constant(history.clone())?;
        let m = cx.g.constant(memory.clone())?;
        let (out, latents) = cx.decode(h, &[(0, history.rows())], m, &[(0, memory.rows())])?;
        Ok((
            g.value(out).clone(),
            latents.iter().map(|&z| g.value(z).clone()).collect(),
        ))
    }

    /// Emit frames one at a time, feeding each back in, until the counter
    /// reaches the stop level or `max_frames` frames exist.
    pub fn generate(&self, glosses: &[u32]) -> Result<Generated> {
        let layout = self.config.layout();
        let w = layout.width();
        let memory = self.encode(glosses)?;
        let mut history = vec![0.0; w];
        let mut emitted: Vec<f64> = Vec::new();
        let mut n = 0;
        loop {
            let rows = history.len() / w;
            let (out, _) = self.decode(&Tensor::new(rows, w, history.clone())?, &memory)?;
            let mut frame = out.row(rows - 1).to_vec();
            layout.normalize_row(&mut frame);
            emitted.extend_from_slice(&frame);
            n += 1;
            let done = layout.counter_col().is_some_and(|c| frame[c] >= 1.0 - STOP_MARGIN);
            if done {
                return Ok(Generated {
                    frames: Tensor::new(n, w, emitted)?,
                    truncated: false,
                });
            }
            if n == self.config.max_frames {
                return Ok(Generated {
                    frames: Tensor::new(n, w, emitted)?,
                    truncated: layout.counter,
                });
            }
            history.extend_from_slice(&frame);
        }
    }

    /// Mean-pool each sample's latent rows and apply the projection head.
    ///
    /// `stack[l][n]` is layer `l`'s latent rows for sample `n`; the result has
    /// one `samples x 384` matrix per layer.
    pub fn project_latents(&self, stack: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let mut cx = self.ctx(&mut g, None);
        let head = self.ids.projection;
        let mut out = Vec::with_capacity(stack.len());
        for layer in stack {
            let pooled = layer
                .iter()
                .map(|z| {
                    let v = cx.g.constant(z.clone())?;
                    cx.g.mean_rows(v)
                })
                .collect::<Result<Vec<_>>>()?;
            let p = cx.g.concat_rows(&pooled)?;
            let y = cx.linear(p, head)?;
            out.push(cx.g.value(y).clone());
        }
        Ok(out)
    }
}

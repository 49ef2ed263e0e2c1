use avatarkit_tensor::nn::{uniform, BiRnn, Conv2d, GruCell, Linear};
use avatarkit_tensor::{concat, seeded_rng, Array, Graph, ParamId, ParamStore, Scalar, Session, Var};
use serde::{Deserialize, Serialize};

use super::ctc::{ctc_nll, greedy_decode};
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Result};
use crate::syndata::{vocab_size, AUDIO_DIM};

pub const MODULE: &str = "recognizer";

/// Time downsampling of the convolutional prenet.
pub const DOWNSAMPLE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerConfig {
    pub input_dim: usize,
    /// Output symbols of the CTC head, blank included.
    pub vocab_size: usize,
    pub conv_channels: [usize; 2],
    pub hidden: usize,
    pub bottleneck: usize,
    pub embed: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub seed: u64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            input_dim: AUDIO_DIM,
            vocab_size: vocab_size(),
            conv_channels: [4, 8],
            hidden: 32,
            bottleneck: 32,
            embed: 16,
            decoder_hidden: 32,
            attention_dim: 24,
            seed: 1,
        }
    }
}

/// CTC weight `lambda` of the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridLossConfig {
    pub lambda: f64,
}

impl Default for HybridLossConfig {
    fn default() -> Self {
        Self { lambda: 0.3 }
    }
}

impl HybridLossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        let c = Self { lambda };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.lambda) {
            Ok(())
        } else {
            Err(invalid(format!("CTC weight {} outside [0, 1]", self.lambda)))
        }
    }
}

/// Per-dimension zero mean, unit variance over the utterance.
pub fn normalize_utterance<T: Scalar>(x: &Array<T>) -> Array<T> {
    let [t_len, d] = x.shape() else { panic!("expected [T, D], got {:?}", x.shape()) };
    let (t_len, d) = (*t_len, *d);
    let mut out = x.clone();
    if t_len == 0 {
        return out;
    }
    for j in 0..d {
        let col = (0..t_len).map(|t| x.data()[t * d + j].f64());
        let mean = col.clone().sum::<f64>() / t_len as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / t_len as f64;
        let sd = var.max(1e-8).sqrt();
        for t in 0..t_len {
            out.data_mut()[t * d + j] = T::of((x.data()[t * d + j].f64() - mean) / sd);
        }
    }
    out
}

/// Convolutional prenet, BiLSTM encoder, tanh bottleneck, CTC head and an
/// additive-attention GRU decoder.
#[derive(Clone, Debug)]
pub struct RecognizerModel<T> {
    pub cfg: RecognizerConfig,
    pub store: ParamStore<T>,
    conv1: Conv2d,
    conv2: Conv2d,
    encoder: BiRnn,
    bottleneck: Linear,
    ctc_head: Linear,
    embed: ParamId,
    decoder: GruCell,
    att_enc: Linear,
    att_dec: Linear,
    att_v: Linear,
    output: Linear,
}

impl<T: Scalar> RecognizerModel<T> {
    pub fn new(cfg: RecognizerConfig) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.vocab_size < 2 || cfg.bottleneck == 0 || cfg.hidden == 0 {
            return Err(invalid("recognizer dimensions must be positive and vocab_size >= 2"));
        }
        let mut rng = seeded_rng(cfg.seed);
        let mut store = ParamStore::new();
        let [c1, c2] = cfg.conv_channels;
        let conv1 = Conv2d::new(&mut store, &mut rng, "prenet.conv1", 1, c1, 3, 1, 1);
        let conv2 = Conv2d::new(&mut store, &mut rng, "prenet.conv2", c1, c2, 3, DOWNSAMPLE, 1);
        let freq = cfg.input_dim.div_ceil(DOWNSAMPLE);
        let encoder = BiRnn::lstm(&mut store, &mut rng, "encoder", c2 * freq, cfg.hidden);
        let bottleneck = Linear::new(&mut store, &mut rng, "bottleneck", 2 * cfg.hidden, cfg.bottleneck);
        let ctc_head = Linear::new(&mut store, &mut rng, "ctc_head", cfg.bottleneck, cfg.vocab_size);
        let n_out = cfg.vocab_size + 1;
        let embed = store.add("decoder.embed", uniform(&mut rng, &[n_out, cfg.embed], 0.5));
        let decoder = GruCell::new(&mut store, &mut rng, "decoder.gru", cfg.embed + cfg.bottleneck, cfg.decoder_hidden);
        let att_enc = Linear::new(&mut store, &mut rng, "decoder.att_enc", cfg.bottleneck, cfg.attention_dim);
        let att_dec = Linear::new(&mut store, &mut rng, "decoder.att_dec", cfg.decoder_hidden, cfg.attention_dim);
        let att_v = Linear::new(&mut store, &mut rng, "decoder.att_v", cfg.attention_dim, 1);
        let output = Linear::new(&mut store, &mut rng, "decoder.out", cfg.decoder_hidden + cfg.bottleneck, n_out);
        Ok(Self { cfg, store, conv1, conv2, encoder, bottleneck, ctc_head, embed, decoder, att_enc, att_dec, att_v, output })
    }

    /// End-of-sequence id of the attention decoder (one past the CTC vocab).
    pub fn eos(&self) -> usize {
        self.cfg.vocab_size
    }

    /// Encoder frames for `t` input frames.
    pub fn output_frames(t: usize) -> usize {
        t.div_ceil(DOWNSAMPLE)
    }

    fn check_input(&self, x: &Array<T>) -> Result<()> {
        match x.shape() {
            [t, d] if *t > 0 && *d == self.cfg.input_dim => Ok(()),
            s => Err(invalid(format!("expected [T>0, {}] audio features, got {s:?}", self.cfg.input_dim))),
        }
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(invalid("label sequence is empty"));
        }
        match labels.iter().find(|&&l| l == 0 || l >= self.cfg.vocab_size) {
            Some(bad) => Err(invalid(format!("label {bad} outside inventory 1..{}", self.cfg.vocab_size))),
            None => Ok(()),
        }
    }

    /// Bottleneck features `[ceil(T/2), bottleneck]`.
    pub fn encode<'g>(&self, s: &Session<'g, '_, T>, x: &Array<T>) -> Result<Var<'g, T>> {
        self.check_input(x)?;
        let t_len = x.shape()[0];
        let x = normalize_utterance(x).into_shape(&[1, 1, t_len, self.cfg.input_dim]);
        let h = self.conv1.forward(s, s.constant(x)).relu();
        let h = self.conv2.forward(s, h).relu();
        let [_, c, tp, f] = h.shape()[..] else { unreachable!() };
        let h = h.permute(&[0, 2, 1, 3]).reshape(&[tp, c * f]);
        let h = self.encoder.forward(s, h);
        Ok(self.bottleneck.forward(s, h).tanh())
    }

    /// CTC log-posteriors `[T', V]` from bottleneck features.
    pub fn ctc_log_posteriors<'g>(&self, s: &Session<'g, '_, T>, bnf: Var<'g, T>) -> Var<'g, T> {
        self.ctc_head.forward(s, bnf).log_softmax()
    }

    /// Teacher-forced decoder log-distributions, one `[1, V+1]` row per
    /// label plus the final end-of-sequence step.
    pub fn attention_steps<'g>(&self, s: &Session<'g, '_, T>, bnf: Var<'g, T>, labels: &[usize]) -> Vec<Var<'g, T>> {
        let t_len = bnf.shape()[0];
        let keys = self.att_enc.forward(s, bnf);
        let v = s.param(self.embed);
        let mut h = s.constant(Array::zeros(&[1, self.cfg.decoder_hidden]));
        let mut ctx = s.constant(Array::zeros(&[1, self.cfg.bottleneck]));
        let mut prev = self.eos();
        let mut rows = Vec::with_capacity(labels.len() + 1);
        for step in 0..=labels.len() {
            let e = v.index_select0(&[prev]);
            h = self.decoder.step(s, concat(&[e, ctx], 1), h);
            let scores = self.att_v.forward(s, (keys + self.att_dec.forward(s, h)).tanh());
            let weights = scores.reshape(&[1, t_len]).softmax();
            ctx = weights.matmul(bnf);
            rows.push(self.output.forward(s, concat(&[h, ctx], 1)).log_softmax());
            if step < labels.len() {
                prev = labels[step];
            }
        }
        rows
    }

    /// `log P_att(labels | x)`; the end-of-sequence step is appended here,
    /// so `labels` may or may not already end with [`Self::eos`].
    pub fn attention_log_prob_var<'g>(&self, s: &Session<'g, '_, T>, bnf: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
        let labels = self.strip_eos(labels);
        self.check_labels(labels)?;
        let rows = self.attention_steps(s, bnf, labels);
        let picks: Vec<_> = rows
            .iter()
            .zip(labels.iter().copied().chain(std::iter::once(self.eos())))
            .map(|(r, y)| r.narrow(1, y, 1))
            .collect();
        Ok(concat(&picks, 1).sum())
    }

    fn strip_eos<'a>(&self, labels: &'a [usize]) -> &'a [usize] {
        match labels.split_last() {
            Some((&last, rest)) if last == self.eos() => rest,
            _ => labels,
        }
    }

    /// `-(lambda log P_ctc + (1 - lambda) log P_att)`.
    pub fn hybrid_loss_var<'g>(
        &self,
        s: &Session<'g, '_, T>,
        x: &Array<T>,
        labels: &[usize],
        cfg: &HybridLossConfig,
    ) -> Result<Var<'g, T>> {
        cfg.validate()?;
        let labels = self.strip_eos(labels);
        self.check_labels(labels)?;
        let bnf = self.encode(s, x)?;
        let ctc = ctc_nll(self.ctc_log_posteriors(s, bnf), labels)?;
        let att = self.attention_log_prob_var(s, bnf, labels)?;
        Ok(ctc.scale(cfg.lambda) - att.scale(1.0 - cfg.lambda))
    }

    pub fn hybrid_loss(&self, x: &Array<T>, labels: &[usize], cfg: &HybridLossConfig) -> Result<T> {
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        Ok(self.hybrid_loss_var(&s, x, labels, cfg)?.item())
    }

    pub fn ctc_log_prob(&self, x: &Array<T>, labels: &[usize]) -> Result<T> {
        let lp = self.log_posteriors(x)?;
        super::ctc::ctc_log_prob(&lp, self.strip_eos(labels))
    }

    pub fn attention_log_prob(&self, x: &Array<T>, labels: &[usize]) -> Result<T> {
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        let bnf = self.encode(&s, x)?;
        Ok(self.attention_log_prob_var(&s, bnf, labels)?.item())
    }

    pub fn log_posteriors(&self, x: &Array<T>) -> Result<Array<T>> {
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        let bnf = self.encode(&s, x)?;
        Ok((*self.ctc_log_posteriors(&s, bnf).value()).clone())
    }

    /// Bottleneck features for one utterance, `[ceil(T/2), bottleneck]`.
    pub fn extract_bnf(&self, x: &Array<T>) -> Result<Array<T>> {
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        Ok((*self.encode(&s, x)?.value()).clone())
    }

    /// Each utterance is encoded on its own, so results do not depend on
    /// batch composition.
    pub fn extract_bnf_batch(&self, xs: &[Array<T>]) -> Result<Vec<Array<T>>> {
        xs.iter().map(|x| self.extract_bnf(x)).collect()
    }

    pub fn greedy_decode(&self, x: &Array<T>) -> Result<Vec<usize>> {
        Ok(greedy_decode(&self.log_posteriors(x)?))
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::new(
            MODULE,
            step,
            &self.cfg,
            &[
                ("input_dim", self.cfg.input_dim),
                ("vocab_size", self.cfg.vocab_size),
                ("bottleneck", self.cfg.bottleneck),
                ("downsample", DOWNSAMPLE),
            ],
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_module(MODULE)?;
        let mut model = Self::new(ckpt.config()?)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }
}

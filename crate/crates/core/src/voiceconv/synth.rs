use avatarkit_tensor::nn::{BiRnn, GruCell, Linear};
use avatarkit_tensor::{concat, seeded_rng, Array, Graph, ParamStore, Scalar, Session, Var};
use serde::{Deserialize, Serialize};

use super::mol::{mol_attention, MIXTURES};
use super::prosody::SpeakerProfile;
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Result};
use crate::syndata::AUDIO_DIM;

pub const MODULE: &str = "voiceconv";

/// Log-F0 offset applied before the pitch encoder.
const LOGF0_CENTRE: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesizerConfig {
    pub bnf_dim: usize,
    pub output_dim: usize,
    pub num_speakers: usize,
    /// Per-direction width of the two bidirectional GRU layers.
    pub encoder_hidden: usize,
    pub pitch_channels: usize,
    pub kernel: usize,
    pub prenet: usize,
    pub decoder_hidden: usize,
    pub mixtures: usize,
    /// Generation stops after this many multiples of the input length.
    pub max_length_factor: usize,
    pub seed: u64,
}

impl Default for SynthesizerConfig {
    fn default() -> Self {
        Self {
            bnf_dim: 32,
            output_dim: AUDIO_DIM,
            num_speakers: 4,
            encoder_hidden: 24,
            pitch_channels: 16,
            kernel: 3,
            prenet: 32,
            decoder_hidden: 64,
            mixtures: MIXTURES,
            max_length_factor: 3,
            seed: 2,
        }
    }
}

/// Inputs of one utterance at the synthesizer's frame rate.
#[derive(Clone, Debug)]
pub struct SynthInput<'a, T> {
    /// `[N, bnf_dim]`.
    pub bnf: &'a Array<T>,
    /// Interpolated log-F0, length `N`.
    pub logf0: &'a [T],
    pub voiced: &'a [bool],
    pub speaker: &'a [f64],
}

/// Generated spectra plus the attention trace of every decoder step.
#[derive(Clone, Debug)]
pub struct Synthesis<T> {
    pub spectra: Array<T>,
    pub attention: Vec<Vec<f64>>,
    /// Component means after each step.
    pub means: Vec<Vec<f64>>,
    /// Stop probability at each step.
    pub stop: Vec<f64>,
}

struct DecoderState<'g, T> {
    h: Var<'g, T>,
    ctx: Var<'g, T>,
    means: Var<'g, T>,
}

/// BNF encoder and pitch encoder summed element-wise, speaker one-hot
/// appended, then a GRU decoder with mixture-of-logistics attention.
#[derive(Clone, Debug)]
pub struct SynthesizerModel<T> {
    pub cfg: SynthesizerConfig,
    pub store: ParamStore<T>,
    enc1: BiRnn,
    enc2: BiRnn,
    pitch1: Linear,
    pitch2: Linear,
    prenet: Linear,
    decoder: GruCell,
    mol_head: Linear,
    frame_out: Linear,
    stop_out: Linear,
}

/// Same-padded 1-D convolution over rows, as shifted copies times a matrix.
fn conv1d<'g, T: Scalar>(s: &Session<'g, '_, T>, x: Var<'g, T>, layer: &Linear, k: usize) -> Var<'g, T> {
    let [n, c] = x.shape()[..] else { unreachable!() };
    let left = (k - 1) / 2;
    let right = k - 1 - left;
    let mut parts = Vec::new();
    if left > 0 {
        parts.push(s.constant(Array::zeros(&[left, c])));
    }
    parts.push(x);
    if right > 0 {
        parts.push(s.constant(Array::zeros(&[right, c])));
    }
    let padded = if parts.len() > 1 { concat(&parts, 0) } else { x };
    let taps: Vec<_> = (0..k).map(|i| padded.narrow(0, i, n)).collect();
    layer.forward(s, concat(&taps, 1))
}

impl<T: Scalar> SynthesizerModel<T> {
    pub fn new(cfg: SynthesizerConfig) -> Result<Self> {
        if cfg.mixtures == 0 || cfg.kernel == 0 || cfg.num_speakers == 0 || cfg.max_length_factor == 0 {
            return Err(invalid("synthesizer needs mixtures, kernel, speakers and max_length_factor >= 1"));
        }
        let mut rng = seeded_rng(cfg.seed);
        let mut store = ParamStore::new();
        let enc = 2 * cfg.encoder_hidden;
        let mem = enc + cfg.num_speakers;
        let k = cfg.mixtures;
        let enc1 = BiRnn::gru(&mut store, &mut rng, "bnf_encoder.0", cfg.bnf_dim, cfg.encoder_hidden);
        let enc2 = BiRnn::gru(&mut store, &mut rng, "bnf_encoder.1", enc, cfg.encoder_hidden);
        let pitch1 = Linear::new(&mut store, &mut rng, "pitch_encoder.0", 2 * cfg.kernel, cfg.pitch_channels);
        let pitch2 = Linear::new(&mut store, &mut rng, "pitch_encoder.1", cfg.pitch_channels * cfg.kernel, enc);
        let prenet = Linear::new(&mut store, &mut rng, "decoder.prenet", cfg.output_dim, cfg.prenet);
        let decoder = GruCell::new(&mut store, &mut rng, "decoder.gru", cfg.prenet + mem, cfg.decoder_hidden);
        let mol_head = Linear::new(&mut store, &mut rng, "decoder.mol", cfg.decoder_hidden, 3 * k);
        // start near one encoder frame per step, unit scale, equal mixture weights
        store.get_mut(mol_head.w).data_mut().iter_mut().for_each(|w| *w = *w * T::of(0.1));
        let b = store.get_mut(mol_head.b.expect("bias"));
        for i in 0..k {
            b.data_mut()[i] = T::of((std::f64::consts::E - 1.0).ln());
            b.data_mut()[k + i] = T::of(0.5);
        }
        let frame_out = Linear::new(&mut store, &mut rng, "decoder.frame", cfg.decoder_hidden + mem, cfg.output_dim);
        let stop_out = Linear::new(&mut store, &mut rng, "decoder.stop", cfg.decoder_hidden + mem + 1, 1);
        Ok(Self { cfg, store, enc1, enc2, pitch1, pitch2, prenet, decoder, mol_head, frame_out, stop_out })
    }

    fn check(&self, input: &SynthInput<'_, T>) -> Result<usize> {
        let [n, d] = input.bnf.shape()[..] else {
            return Err(invalid(format!("BNF must be [N, D], got {:?}", input.bnf.shape())));
        };
        if d != self.cfg.bnf_dim {
            return Err(invalid(format!("BNF width {d} but synthesizer expects {}", self.cfg.bnf_dim)));
        }
        if n == 0 {
            return Err(invalid("empty BNF sequence"));
        }
        if input.logf0.len() != n || input.voiced.len() != n {
            return Err(invalid(format!(
                "frame-count mismatch: {n} BNF frames, {} log-F0 values, {} UV flags",
                input.logf0.len(),
                input.voiced.len()
            )));
        }
        if input.speaker.len() != self.cfg.num_speakers {
            return Err(invalid(format!(
                "speaker embedding has {} entries, synthesizer knows {} speakers",
                input.speaker.len(),
                self.cfg.num_speakers
            )));
        }
        Ok(n)
    }

    /// Encoder memory `[N, 2 * encoder_hidden + num_speakers]`.
    fn memory<'g>(&self, s: &Session<'g, '_, T>, input: &SynthInput<'_, T>) -> Var<'g, T> {
        let n = input.bnf.shape()[0];
        let h = self.enc1.forward(s, s.constant(input.bnf.clone()));
        let content = self.enc2.forward(s, h);
        let pitch: Vec<f64> = input
            .logf0
            .iter()
            .zip(input.voiced)
            .flat_map(|(f, &v)| [f.f64() - LOGF0_CENTRE, if v { 1.0 } else { 0.0 }])
            .collect();
        let p = s.constant(Array::from_f64(&[n, 2], &pitch));
        let p = conv1d(s, p, &self.pitch1, self.cfg.kernel).relu();
        let p = conv1d(s, p, &self.pitch2, self.cfg.kernel);
        let spk: Vec<f64> = (0..n).flat_map(|_| input.speaker.iter().copied()).collect();
        concat(&[content + p, s.constant(Array::from_f64(&[n, self.cfg.num_speakers], &spk))], 1)
    }

    fn initial_state<'g>(&self, s: &Session<'g, '_, T>, mem_dim: usize) -> DecoderState<'g, T> {
        DecoderState {
            h: s.constant(Array::zeros(&[1, self.cfg.decoder_hidden])),
            ctx: s.constant(Array::zeros(&[1, mem_dim])),
            means: s.constant(Array::full(&[1, self.cfg.mixtures], T::of(-1.0))),
        }
    }

    /// One decoder step; returns `(frame [1, out], stop logit [1, 1], attention weights [1, N])`.
    fn step<'g>(
        &self,
        s: &Session<'g, '_, T>,
        memory: Var<'g, T>,
        prev_frame: Var<'g, T>,
        state: &mut DecoderState<'g, T>,
    ) -> (Var<'g, T>, Var<'g, T>, Var<'g, T>) {
        let n = memory.shape()[0];
        let pre = self.prenet.forward(s, prev_frame).tanh();
        state.h = self.decoder.step(s, concat(&[pre, state.ctx], 1), state.h);
        let raw = self.mol_head.forward(s, state.h);
        let (weights, means, position) = mol_attention(raw, state.means, n);
        state.means = means;
        state.ctx = weights.matmul(memory);
        let hc = concat(&[state.h, state.ctx], 1);
        let frame = self.frame_out.forward(s, hc);
        // distance of the attention centre from the last encoder frame
        let remaining = position.add_scalar(-((n - 1) as f64));
        let stop = self.stop_out.forward(s, concat(&[hc, remaining], 1));
        (frame, stop, weights)
    }

    /// Teacher-forced loss against `target [M, out]`: mean L1 of the frames
    /// plus binary cross-entropy of the stop flag (set on the last frame).
    pub fn loss_var<'g>(&self, s: &Session<'g, '_, T>, input: &SynthInput<'_, T>, target: &Array<T>) -> Result<Var<'g, T>> {
        self.check(input)?;
        let [m, d] = target.shape()[..] else { return Err(invalid("target spectra must be [M, D]")) };
        if d != self.cfg.output_dim || m == 0 {
            return Err(invalid(format!("target spectra {:?} do not match output_dim {}", target.shape(), self.cfg.output_dim)));
        }
        let memory = self.memory(s, input);
        let mut state = self.initial_state(s, memory.shape()[1]);
        let tgt = s.constant(target.clone());
        let mut prev = s.constant(Array::zeros(&[1, d]));
        let mut frames = Vec::with_capacity(m);
        let mut stops = Vec::with_capacity(m);
        for t in 0..m {
            let (frame, stop, _) = self.step(s, memory, prev, &mut state);
            frames.push(frame);
            stops.push(stop);
            prev = tgt.narrow(0, t, 1);
        }
        let l1 = (concat(&frames, 0) - tgt).abs().mean();
        let z = concat(&stops, 0);
        let mut flags = vec![0.0; m];
        flags[m - 1] = 1.0;
        let y = s.constant(Array::from_f64(&[m, 1], &flags));
        let bce = (z.softplus() - z * y).mean();
        Ok(l1 + bce)
    }

    pub fn loss(&self, input: &SynthInput<'_, T>, target: &Array<T>) -> Result<T> {
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        Ok(self.loss_var(&s, input, target)?.item())
    }

    /// Free-running generation until the stop flag fires or the length cap.
    pub fn synthesize(&self, input: &SynthInput<'_, T>) -> Result<Synthesis<T>> {
        let n = self.check(input)?;
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        let memory = self.memory(&s, input);
        let mut state = self.initial_state(&s, memory.shape()[1]);
        let mut prev = s.constant(Array::zeros(&[1, self.cfg.output_dim]));
        let mut out = Synthesis { spectra: Array::zeros(&[0, self.cfg.output_dim]), attention: Vec::new(), means: Vec::new(), stop: Vec::new() };
        let mut rows = Vec::new();
        for _ in 0..self.cfg.max_length_factor * n {
            let (frame, stop, weights) = self.step(&s, memory, prev, &mut state);
            let p_stop = avatarkit_tensor::sigmoid(stop.item().f64());
            rows.push((*frame.value()).clone());
            out.attention.push(weights.value().to_f64_vec());
            out.means.push(state.means.value().to_f64_vec());
            out.stop.push(p_stop);
            // keep the graph small: the next step only needs values
            prev = s.constant((*frame.value()).clone());
            state = DecoderState {
                h: s.constant((*state.h.value()).clone()),
                ctx: s.constant((*state.ctx.value()).clone()),
                means: s.constant((*state.means.value()).clone()),
            };
            if p_stop > 0.5 {
                break;
            }
        }
        out.spectra = Array::concat0(&rows);
        Ok(out)
    }

    pub fn synthesize_spectra(&self, input: &SynthInput<'_, T>) -> Result<Array<T>> {
        Ok(self.synthesize(input)?.spectra)
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::new(
            MODULE,
            step,
            &self.cfg,
            &[("bnf_dim", self.cfg.bnf_dim), ("output_dim", self.cfg.output_dim), ("num_speakers", self.cfg.num_speakers)],
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

/// Speaker embedding of `profile`, checked against the synthesizer.
pub fn speaker_embedding<T: Scalar>(model: &SynthesizerModel<T>, profile: &SpeakerProfile) -> Result<Vec<f64>> {
    if profile.embedding.len() != model.cfg.num_speakers {
        return Err(invalid(format!(
            "speaker profile covers {} speakers, synthesizer {}",
            profile.embedding.len(),
            model.cfg.num_speakers
        )));
    }
    Ok(profile.embedding.clone())
}

//! Forward pass on a tape. Feature maps are kept channel-last as
//! `[C, F, T, N]` so every pointwise layer is a `linear` over the last axis.

use std::sync::Arc;

use crate::dsp::Framer;
use crate::error::{Result, UsesError};
use crate::model::config::UsesConfig;
use crate::model::params::{Affine, Block, Layout, Tac, Transformer, KERNEL};
use crate::numerics::{AttentionParams, Conv2dSpec, Scalar, Tape, Var};

const NORM_EPS: f64 = 1e-5;

/// Parameters of one model bound to vars on a tape.
pub(crate) struct Net<'a> {
    pub cfg: &'a UsesConfig,
    pub layout: &'a Layout,
    pub params: &'a [Var],
}

impl Net<'_> {
    fn affine<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, a: Affine) -> Result<Var> {
        tape.linear(x, self.params[a.weight], Some(self.params[a.bias]))
    }

    fn norm_last<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, a: Affine) -> Result<Var> {
        let axis = tape.shape(x).len() - 1;
        tape.layer_norm(x, axis, self.params[a.weight], self.params[a.bias], T::of(NORM_EPS))
    }

    fn prelu_last<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, slope: usize) -> Result<Var> {
        let axis = tape.shape(x).len() - 1;
        tape.prelu(x, self.params[slope], axis)
    }

    /// `[C, 2, F, T]` spectrum → `[C, F, T, N]` features.
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, spec: Var) -> Result<Var> {
        let pad = KERNEL / 2;
        let conv = tape.conv2d(
            spec,
            self.params[self.layout.enc_conv.weight],
            Some(self.params[self.layout.enc_conv.bias]),
            Conv2dSpec::same(pad),
        )?;
        let last = tape.permute(conv, &[0, 2, 3, 1])?;
        let normed = self.norm_last(tape, last, self.layout.enc_norm)?;
        self.affine(tape, normed, self.layout.bottleneck)
    }

    /// Encodes frames `start..end` of a `[C, 2, F, T]` spectrum. One frame of
    /// context on each side feeds the convolution, so the result equals the
    /// matching slice of a full-length encoding.
    pub fn encode_frames<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        spec: Var,
        start: usize,
        end: usize,
    ) -> Result<Var> {
        let frames = tape.shape(spec)[3];
        let halo = KERNEL / 2;
        let lo = start.saturating_sub(halo);
        let hi = (end + halo).min(frames);
        let window = tape.narrow(spec, 3, lo, hi - lo)?;
        let feats = self.encode(tape, window)?;
        tape.narrow(feats, 2, start - lo, end - start)
    }

    pub fn tac<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, p: Tac) -> Result<Var> {
        let channels = tape.shape(x)[0];
        let z = self.affine(tape, x, p.transform)?;
        let z = self.prelu_last(tape, z, p.transform_act)?;
        let mean = tape.symmetric_mean_axis(z, 0)?;
        let mean = tape.broadcast_axis(mean, 0, channels)?;
        let joined = tape.concat(&[z, mean], 3)?;
        let y = self.affine(tape, joined, p.project)?;
        let y = self.prelu_last(tape, y, p.project_act)?;
        tape.add(x, y)
    }

    /// Pre-norm transformer layer over `[B, L, N]` sequences.
    fn transformer<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, p: Transformer) -> Result<Var> {
        let h = self.norm_last(tape, x, p.attn_norm)?;
        let pv = |a: Affine| (self.params[a.weight], self.params[a.bias]);
        let attn = AttentionParams {
            query: pv(p.query),
            key: pv(p.key),
            value: pv(p.value),
            output: pv(p.out),
        };
        let a = tape.multi_head_attention(h, h, h, self.cfg.heads, &attn)?;
        let x = tape.add(x, a)?;
        let h = self.norm_last(tape, x, p.ffn_norm)?;
        let h = self.affine(tape, h, p.ffn_in)?;
        let h = tape.relu(h);
        let h = self.affine(tape, h, p.ffn_out)?;
        tape.add(x, h)
    }

    /// TAC (when present), then the frequency-sequence and time-sequence
    /// transformers, on `[C, F, T, N]`.
    pub fn block<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, p: &Block, with_tac: bool) -> Result<Var> {
        let mut x = x;
        if with_tac {
            if let Some(tac) = p.tac {
                x = self.tac(tape, x, tac)?;
            }
        }
        let [c, f, t, n] = dims4(tape, x);
        let by_time = tape.permute(x, &[0, 2, 1, 3])?;
        let seqs = tape.reshape(by_time, &[c * t, f, n])?;
        let seqs = self.transformer(tape, seqs, p.freq)?;
        let by_time = tape.reshape(seqs, &[c, t, f, n])?;
        let x = tape.permute(by_time, &[0, 2, 1, 3])?;
        let seqs = tape.reshape(x, &[c * f, t, n])?;
        let seqs = self.transformer(tape, seqs, p.time)?;
        tape.reshape(seqs, &[c, f, t, n])
    }

    /// Keeps only `channel` of `[C, F, T, N]`.
    pub fn merge_reference<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, channel: usize) -> Result<Var> {
        let channels = tape.shape(x)[0];
        if channel >= channels {
            return Err(UsesError::Config(format!(
                "reference channel {channel} out of range for {channels} channels"
            )));
        }
        tape.narrow(x, 0, channel, 1)
    }

    /// Runs all blocks on one segment `[C, F, T, N]`, prefixed by `memory`
    /// (`[G, N]`) when given. Returns `[1, F, T, N]` and the processed tokens.
    pub fn blocks<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        feats: Var,
        memory: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let [c, f, t, n] = dims4(tape, feats);
        let g = memory.map_or(0, |m| tape.shape(m)[0]);
        let mut x = match memory {
            Some(mem) => {
                let m = tape.reshape(mem, &[1, 1, g, n])?;
                let m = tape.broadcast_axis(m, 0, c)?;
                let m = tape.broadcast_axis(m, 1, f)?;
                tape.concat(&[m, feats], 2)?
            }
            None => feats,
        };
        for (k, block) in self.layout.blocks.iter().enumerate() {
            x = self.block(tape, x, block, k < self.cfg.num_spatial_blocks)?;
            if k + 1 == self.cfg.num_spatial_blocks {
                x = self.merge_reference(tape, x, self.cfg.ref_channel)?;
            }
        }
        if g == 0 {
            return Ok((x, None));
        }
        let tokens = tape.narrow(x, 2, 0, g)?;
        let tokens = tape.mean_axis(tokens, 1)?;
        let tokens = tape.reshape(tokens, &[g, n])?;
        let rest = tape.narrow(x, 2, g, t)?;
        Ok((rest, Some(tokens)))
    }

    /// `[1, F, T, N]` features → `[S, 2, F, T]` spectra.
    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let [_, f, t, _] = dims4(tape, x);
        let h = self.prelu_last(tape, x, self.layout.dec_act)?;
        let h = self.affine(tape, h, self.layout.dec_proj)?;
        let h = tape.permute(h, &[0, 3, 1, 2])?;
        let out = tape.conv_transpose2d(
            h,
            self.params[self.layout.dec_conv.weight],
            Some(self.params[self.layout.dec_conv.bias]),
            Conv2dSpec::same(KERNEL / 2),
        )?;
        tape.reshape(out, &[self.cfg.num_outputs, 2, f, t])
    }

    /// Decodes frames `start..end` with one frame of context on each side, so
    /// the result equals the matching slice of a full-length decoding.
    pub fn decode_frames<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        start: usize,
        end: usize,
    ) -> Result<Var> {
        let frames = tape.shape(x)[2];
        let halo = KERNEL / 2;
        let lo = start.saturating_sub(halo);
        let hi = (end + halo).min(frames);
        let window = tape.narrow(x, 2, lo, hi - lo)?;
        let spec = self.decode(tape, window)?;
        tape.narrow(spec, 3, start - lo, end - start)
    }

    /// Waveforms `[C, L]` → estimates `[S, L]`: STFT, segment-wise encoding and
    /// blocks chained through the memory tokens, decoding, iSTFT.
    ///
    /// On a no-grad tape each segment's intermediate nodes are discarded once
    /// its outputs are copied out, so memory use does not grow with length.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        wave: Var,
        framer: &Arc<Framer>,
        memory: Option<Var>,
    ) -> Result<Var> {
        let len = tape.shape(wave)[1];
        let spec = tape.stft(wave, framer)?;
        let frames = tape.shape(spec)[3];
        let seg = self.cfg.seg_frames;
        let bounds: Vec<(usize, usize)> = (0..frames)
            .step_by(seg)
            .map(|s| (s, (s + seg).min(frames)))
            .collect();

        let mut memory = memory;
        let mut outs = Vec::with_capacity(bounds.len());
        let streaming = !tape.is_grad_enabled();
        let mut kept = Vec::new();
        for &(start, end) in &bounds {
            let mark = tape.mark();
            let feats = self.encode_frames(tape, spec, start, end)?;
            let (out, next) = self.blocks(tape, feats, memory)?;
            if streaming {
                kept.push(tape.value(out).clone());
                let next = next.map(|m| tape.value(m).clone());
                tape.rewind(mark)?;
                memory = next.map(|m| tape.constant(m));
            } else {
                outs.push(out);
                memory = next;
            }
        }
        if streaming {
            outs = kept.into_iter().map(|v| tape.constant(v)).collect();
        }
        let feats = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };

        let mut specs = Vec::with_capacity(bounds.len());
        let mut kept = Vec::new();
        for &(start, end) in &bounds {
            let mark = tape.mark();
            let s = self.decode_frames(tape, feats, start, end)?;
            if streaming {
                kept.push(tape.value(s).clone());
                tape.rewind(mark)?;
            } else {
                specs.push(s);
            }
        }
        if streaming {
            specs = kept.into_iter().map(|v| tape.constant(v)).collect();
        }
        let spec = if specs.len() == 1 { specs[0] } else { tape.concat(&specs, 3)? };
        tape.istft(spec, framer, len)
    }
}

fn dims4<T: Scalar>(tape: &Tape<T>, x: Var) -> [usize; 4] {
    let s = tape.shape(x);
    [s[0], s[1], s[2], s[3]]
}

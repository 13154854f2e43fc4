//! Stage 1: self-supervised pretraining. Two objectives share one text
//! encoder and are minimized jointly, summed per step:
//!
//! * contrastive alignment: pooled video and sentence representations are
//!   projected, L2-normalized, and scored against every pairing in the
//!   batch; the loss is the symmetric cross entropy over matching the
//!   diagonal, at a fixed temperature;
//! * masked reconstruction: content tokens are replaced by MASK at a fixed
//!   ratio and a decoder reconstructs the originals from the corrupted
//!   encoding, scored only at the masked positions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Stage1Config;
use crate::dataset::Corpus;
use crate::embeddings::{TextEmbedding, VideoEmbedding};
use crate::error::{Error, Result};
use crate::optim::SgdMomentum;
use crate::params::ParameterStore;
use crate::rng::derive_rng;
use crate::seq::{is_special, TokenSequence, VideoFeatureSequence, BOS, CLS, MASK, PAD};
use crate::tensor::{Mode, Tape, Tensor, IGNORE_INDEX};
use crate::transformer::{pool_representation, DecoderStack, EncoderStack, Linear, PoolKind};

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1LogLine {
    pub step: usize,
    pub l_sim: f64,
    pub l_r: f64,
}

pub struct Stage1Model {
    pub text_embedding: TextEmbedding,
    pub text_encoder: EncoderStack,
    pub video_embedding: VideoEmbedding,
    pub video_encoder: EncoderStack,
    pub text_decoder: DecoderStack,
    video_cls: Tensor,
    proj_v: Linear,
    proj_s: Linear,
}

impl Stage1Model {
    pub fn new(
        store: &mut ParameterStore,
        cfg: &Stage1Config,
        vocab: usize,
        frame_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Stage1Model> {
        let m = &cfg.model;
        Ok(Stage1Model {
            text_embedding: TextEmbedding::new(store, "text_embedding", vocab, m.d_model, rng)?,
            text_encoder: EncoderStack::new(store, "text_encoder", m, rng)?,
            video_embedding: VideoEmbedding::new(store, "video_embedding", frame_dim, m.d_model, rng)?,
            video_encoder: EncoderStack::new(store, "video_encoder", m, rng)?,
            text_decoder: DecoderStack::new(store, "text_decoder", m, vocab, rng)?,
            video_cls: store.register(
                "align.video_cls",
                Tensor::randn(vec![1, m.d_model], 1.0, rng).trainable(),
            )?,
            proj_v: Linear::new(store, "align.proj_v", m.d_model, m.proj_dim, rng)?,
            proj_s: Linear::new(store, "align.proj_s", m.d_model, m.proj_dim, rng)?,
        })
    }

    /// Sentence representation: encode and take the EOS state.
    pub fn pooled_sentence(&self, tape: &Tape, sentence: &TokenSequence) -> Result<Tensor> {
        let ids = sentence.ids();
        let embedded = self.text_embedding.forward(tape, ids)?;
        let states = self.text_encoder.encode(tape, &embedded, &vec![false; ids.len()])?;
        pool_representation(tape, &states, ids, PoolKind::Eos)
    }

    /// Clip representation: embed, prepend a learned CLS row, encode, take
    /// the CLS state.
    pub fn pooled_video(
        &self,
        tape: &Tape,
        video: &VideoFeatureSequence,
        mode: Mode,
    ) -> Result<Tensor> {
        let embedded = self.video_embedding.forward(tape, video, mode)?;
        self.pooled_from_embedded(tape, embedded)
    }

    /// Clip representations for a whole batch. Train-mode normalization
    /// statistics are shared across the batch, matching how the running
    /// statistics used in eval mode are accumulated.
    pub fn pooled_video_batch(
        &self,
        tape: &Tape,
        videos: &[&VideoFeatureSequence],
        mode: Mode,
    ) -> Result<Vec<Tensor>> {
        self.video_embedding
            .forward_batch(tape, videos, mode)?
            .into_iter()
            .map(|embedded| self.pooled_from_embedded(tape, embedded))
            .collect()
    }

    fn pooled_from_embedded(&self, tape: &Tape, embedded: Tensor) -> Result<Tensor> {
        let rows = embedded.shape()[0];
        let with_cls = tape.concat(&[self.video_cls.clone(), embedded], 0)?;
        let mut ids = vec![PAD; rows + 1];
        ids[0] = CLS;
        let states = self.video_encoder.encode(tape, &with_cls, &vec![false; rows + 1])?;
        pool_representation(tape, &states, &ids, PoolKind::Cls)
    }

    /// Pair-similarity logits [B×B]: cosine similarity of the projected
    /// representations, divided by the temperature. Row i column j scores
    /// video i against sentence j; matching pairs sit on the diagonal.
    pub fn alignment_logits(
        &self,
        tape: &Tape,
        pooled_videos: &[Tensor],
        pooled_sentences: &[Tensor],
        temperature: f64,
    ) -> Result<Tensor> {
        if pooled_videos.len() != pooled_sentences.len() || pooled_videos.is_empty() {
            return Err(Error::invalid(format!(
                "alignment batch has {} videos and {} sentences",
                pooled_videos.len(),
                pooled_sentences.len()
            )));
        }
        let v = tape.l2_normalize_rows(&self.proj_v.forward(tape, &tape.stack_rows(pooled_videos)?)?)?;
        let s = tape.l2_normalize_rows(&self.proj_s.forward(tape, &tape.stack_rows(pooled_sentences)?)?)?;
        tape.scale(&tape.matmul(&v, &tape.transpose(&s)?)?, 1.0 / temperature)
    }

    /// Contrastive loss for a batch of matched pairs.
    pub fn similarity_loss(
        &self,
        tape: &Tape,
        pooled_videos: &[Tensor],
        pooled_sentences: &[Tensor],
        temperature: f64,
    ) -> Result<Tensor> {
        let logits = self.alignment_logits(tape, pooled_videos, pooled_sentences, temperature)?;
        symmetric_infonce(tape, &logits)
    }

    /// Per-position reconstruction logits for one corrupted sentence. The
    /// encoder sees the corrupted tokens; the decoder is teacher-forced on
    /// the original tokens, recovered by merging `targets` back into the
    /// masked positions.
    pub fn reconstruction_logits(
        &self,
        tape: &Tape,
        masked: &TokenSequence,
        targets: &[usize],
    ) -> Result<Tensor> {
        if masked.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} targets for {} masked tokens",
                targets.len(),
                masked.len()
            )));
        }
        let masked_ids = masked.ids();
        let original: Vec<usize> = masked_ids
            .iter()
            .zip(targets)
            .map(|(&kept, &t)| if t == IGNORE_INDEX { kept } else { t })
            .collect();

        let embedded = self.text_embedding.forward(tape, masked_ids)?;
        let memory = self
            .text_encoder
            .encode(tape, &embedded, &vec![false; masked_ids.len()])?;

        let mut decoder_ids = Vec::with_capacity(original.len());
        decoder_ids.push(BOS);
        decoder_ids.extend_from_slice(&original[..original.len() - 1]);
        let dec_embedded = self.text_embedding.forward(tape, &decoder_ids)?;
        self.text_decoder
            .decode(tape, &dec_embedded, &memory, &vec![false; masked_ids.len()])
    }

    /// Reconstruction loss: cross entropy of the reconstruction logits at
    /// the masked positions only. With nothing masked the loss is exactly
    /// zero.
    pub fn reconstruction_loss(
        &self,
        tape: &Tape,
        masked: &TokenSequence,
        targets: &[usize],
    ) -> Result<Tensor> {
        let logits = self.reconstruction_logits(tape, masked, targets)?;
        tape.cross_entropy(&logits, targets, IGNORE_INDEX)
    }
}

/// Symmetric cross entropy over a square similarity matrix: half the mean
/// row-wise loss (video to sentence) plus half the column-wise loss.
pub fn symmetric_infonce(tape: &Tape, logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::invalid(format!(
            "similarity matrix must be square, got {shape:?}"
        )));
    }
    let diagonal: Vec<usize> = (0..shape[0]).collect();
    let rows = tape.cross_entropy(logits, &diagonal, IGNORE_INDEX)?;
    let cols = tape.cross_entropy(&tape.transpose(logits)?, &diagonal, IGNORE_INDEX)?;
    tape.scale(&tape.add(&rows, &cols)?, 0.5)
}

/// Replaces each maskable token with MASK independently at `ratio`.
/// Special tokens (EOS in particular) are never masked. Returns the
/// corrupted sequence and per-position targets: the original id where
/// masked, IGNORE_INDEX everywhere else.
pub fn mask_tokens(
    seq: &TokenSequence,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> (TokenSequence, Vec<usize>) {
    let mut masked = Vec::with_capacity(seq.len());
    let mut targets = Vec::with_capacity(seq.len());
    for &id in seq.ids() {
        if !is_special(id) && rng.random::<f64>() < ratio {
            masked.push(MASK);
            targets.push(id);
        } else {
            masked.push(id);
            targets.push(IGNORE_INDEX);
        }
    }
    (TokenSequence::from_ids(masked), targets)
}

pub struct Stage1Outcome {
    pub model: Stage1Model,
    pub store: ParameterStore,
    pub log: Vec<Stage1LogLine>,
}

/// Joint pretraining over the corpus. Batches cycle through a per-epoch
/// shuffle; the per-step loss is the batch similarity loss plus the batch
/// mean reconstruction loss.
pub fn train_stage1(corpus: &Corpus, cfg: &Stage1Config) -> Result<Stage1Outcome> {
    cfg.validate()?;
    if corpus.samples.is_empty() {
        return Err(Error::invalid("stage 1 needs a non-empty corpus"));
    }
    let mut store = ParameterStore::new();
    let mut init_rng = derive_rng(cfg.seed, "stage1/init");
    let model = Stage1Model::new(&mut store, cfg, corpus.vocab_size, corpus.frame_dim, &mut init_rng)?;
    let mut opt = SgdMomentum::new(cfg.optim);
    let mut order_rng = derive_rng(cfg.seed, "stage1/order");
    let mut mask_rng = derive_rng(cfg.seed, "stage1/mask");

    let n = corpus.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let tape = Tape::new();
        let mut batch = Vec::with_capacity(cfg.batch_size.min(n));
        for _ in 0..cfg.batch_size.min(n) {
            if cursor >= n {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(&corpus.samples[order[cursor]]);
            cursor += 1;
        }
        let batch_len = batch.len();

        let videos: Vec<_> = batch.iter().map(|s| &s.video).collect();
        let pooled_v = model.pooled_video_batch(&tape, &videos, Mode::Train)?;
        let mut pooled_s = Vec::with_capacity(batch_len);
        let mut recon_sum: Option<Tensor> = None;
        for sample in &batch {
            pooled_s.push(model.pooled_sentence(&tape, &sample.translation)?);
            let (masked, targets) = mask_tokens(&sample.translation, cfg.mask_ratio, &mut mask_rng);
            let r = model.reconstruction_loss(&tape, &masked, &targets)?;
            recon_sum = Some(match recon_sum {
                None => r,
                Some(acc) => tape.add(&acc, &r)?,
            });
        }
        let l_sim = model.similarity_loss(&tape, &pooled_v, &pooled_s, cfg.temperature)?;
        let l_r = tape.scale(&recon_sum.expect("batch is non-empty"), 1.0 / batch_len as f64)?;
        let total = tape.add(&l_sim, &l_r)?;
        let value = total.item();
        if !value.is_finite() {
            return Err(Error::NonFinite { step, value });
        }
        tape.backward(&total)?;
        opt.step(&store);
        store.zero_grads();
        log.push(Stage1LogLine {
            step,
            l_sim: l_sim.item(),
            l_r: l_r.item(),
        });
    }
    Ok(Stage1Outcome { model, store, log })
}

/// Fraction of masked positions whose original token is the argmax of the
/// reconstruction logits. Masking is seeded so the measurement is
/// reproducible; sentences where nothing got masked contribute nothing.
pub fn masked_recovery_accuracy(
    model: &Stage1Model,
    corpus: &Corpus,
    ratio: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = derive_rng(seed, "stage1/recovery");
    let tape = Tape::no_grad();
    let mut correct = 0usize;
    let mut total = 0usize;
    for sample in &corpus.samples {
        let (masked, targets) = mask_tokens(&sample.translation, ratio, &mut rng);
        if targets.iter().all(|&t| t == IGNORE_INDEX) {
            continue;
        }
        let logits = model.reconstruction_logits(&tape, &masked, &targets)?;
        let data = logits.data_vec();
        let vocab = logits.shape()[1];
        for (pos, &t) in targets.iter().enumerate() {
            if t == IGNORE_INDEX {
                continue;
            }
            let row = &data[pos * vocab..(pos + 1) * vocab];
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            if best == t {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("no positions were masked at this ratio"));
    }
    Ok(correct as f64 / total as f64)
}

/// Top-1 retrieval accuracy over the whole corpus in both directions:
/// (video to sentence, sentence to video). Ties resolve to the first
/// maximum.
pub fn retrieval_accuracy(model: &Stage1Model, corpus: &Corpus, temperature: f64) -> Result<(f64, f64)> {
    if corpus.samples.is_empty() {
        return Err(Error::invalid("cannot score retrieval on an empty corpus"));
    }
    let tape = Tape::no_grad();
    let mut pooled_v = Vec::with_capacity(corpus.samples.len());
    let mut pooled_s = Vec::with_capacity(corpus.samples.len());
    for sample in &corpus.samples {
        pooled_v.push(model.pooled_video(&tape, &sample.video, Mode::Eval)?);
        pooled_s.push(model.pooled_sentence(&tape, &sample.translation)?);
    }
    let logits = model.alignment_logits(&tape, &pooled_v, &pooled_s, temperature)?;
    let b = corpus.samples.len();
    let m = logits.data_vec();
    let mut v2s_hits = 0;
    let mut s2v_hits = 0;
    for i in 0..b {
        let row_best = (0..b).fold(0, |best, j| if m[i * b + j] > m[i * b + best] { j } else { best });
        if row_best == i {
            v2s_hits += 1;
        }
        let col_best = (0..b).fold(0, |best, j| if m[j * b + i] > m[best * b + i] { j } else { best });
        if col_best == i {
            s2v_hits += 1;
        }
    }
    Ok((v2s_hits as f64 / b as f64, s2v_hits as f64 / b as f64))
}

//! Stage 2: question-conditioned translation. Embedded question tokens and
//! embedded video frames are fused (by the gated block, or one of its
//! ablations), the fused sequence passes through the warm-started video
//! encoder to become the decoder memory, and a decoder is trained against
//! two teacher-forced losses at once: reproducing the question tokens and
//! producing the translation. The logged total is built as the literal sum
//! of the two logged parts so the identity holds bit for bit in every line.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::Stage2Config;
use crate::dataset::{Corpus, Sample};
use crate::embeddings::{TextEmbedding, VideoEmbedding};
use crate::error::{Error, Result};
use crate::metrics::{score_corpus, ScoreReport};
use crate::optim::SgdMomentum;
use crate::params::ParameterStore;
use crate::rng::derive_rng;
use crate::seq::{TokenSequence, VideoFeatureSequence, BOS, EOS};
use crate::ssaw::{FusionOutput, GateMode, SsawBlock};
use crate::tensor::{Mode, Tape, Tensor, IGNORE_INDEX};
use crate::transformer::{DecoderStack, EncoderStack};

/// Which fusion the model trains with. `Ssaw` is the gated block; the rest
/// are its ablations: plain concatenation, and each modality alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationArm {
    Ssaw,
    Concat,
    QuestionOnly,
    VideoOnly,
}

impl AblationArm {
    pub const ALL: [AblationArm; 4] = [
        AblationArm::Ssaw,
        AblationArm::Concat,
        AblationArm::QuestionOnly,
        AblationArm::VideoOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::Ssaw => "ssaw",
            AblationArm::Concat => "concat",
            AblationArm::QuestionOnly => "question_only",
            AblationArm::VideoOnly => "video_only",
        }
    }
}

impl fmt::Display for AblationArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<AblationArm> {
        match s {
            "ssaw" => Ok(AblationArm::Ssaw),
            "concat" => Ok(AblationArm::Concat),
            "question_only" => Ok(AblationArm::QuestionOnly),
            "video_only" => Ok(AblationArm::VideoOnly),
            other => Err(Error::Config(format!(
                "unknown fusion arm {other:?}; expected ssaw, concat, question_only or video_only"
            ))),
        }
    }
}

/// One logged training step. `l_total` is always the exact float sum of
/// `l_d` and `l_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2LogLine {
    pub step: usize,
    pub l_d: f64,
    pub l_s: f64,
    pub l_total: f64,
}

/// One dev-set scoring point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DevPoint {
    pub step: usize,
    pub bleu4: f64,
}

pub struct Stage2Model {
    pub text_embedding: TextEmbedding,
    pub video_embedding: VideoEmbedding,
    pub video_encoder: EncoderStack,
    pub text_decoder: DecoderStack,
    ssaw: Option<SsawBlock>,
    arm: AblationArm,
    d_model: usize,
}

/// Parameter prefixes shared with stage 1 and warm-started from its
/// checkpoint. The sentence encoder stays in stage 1; here the video
/// encoder runs over the fused sequence. The fusion block is always
/// trained from scratch.
pub const WARM_START_PREFIXES: [&str; 4] = [
    "text_embedding.",
    "video_embedding.",
    "video_encoder.",
    "text_decoder.",
];

impl Stage2Model {
    /// Modules are created in a fixed order so initialization draws do not
    /// depend on the arm; the fusion block comes last and is simply skipped
    /// by the concatenation arm.
    pub fn new(
        store: &mut ParameterStore,
        cfg: &Stage2Config,
        vocab: usize,
        frame_dim: usize,
        arm: AblationArm,
        rng: &mut impl Rng,
    ) -> Result<Stage2Model> {
        let m = &cfg.model;
        let text_embedding = TextEmbedding::new(store, "text_embedding", vocab, m.d_model, rng)?;
        let video_embedding = VideoEmbedding::new(store, "video_embedding", frame_dim, m.d_model, rng)?;
        let video_encoder = EncoderStack::new(store, "video_encoder", m, rng)?;
        let text_decoder = DecoderStack::new(store, "text_decoder", m, vocab, rng)?;
        let ssaw = match arm {
            AblationArm::Concat => None,
            _ => Some(SsawBlock::new(store, "ssaw", m.d_model, m.d_ff, rng)?),
        };
        Ok(Stage2Model {
            text_embedding,
            video_embedding,
            video_encoder,
            text_decoder,
            ssaw,
            arm,
            d_model: m.d_model,
        })
    }

    pub fn arm(&self) -> AblationArm {
        self.arm
    }

    fn question_rows(&self, tape: &Tape, question: &TokenSequence) -> Result<Tensor> {
        let ids = question.ids();
        if ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty question"));
        }
        self.text_embedding.forward(tape, ids)
    }

    /// Decoder memory: the fused sequence encoded by the (warm-started)
    /// video encoder, length-preserving.
    pub fn encode_fused(&self, tape: &Tape, fused: &Tensor) -> Result<Tensor> {
        let rows = fused.shape()[0];
        self.video_encoder.encode(tape, fused, &vec![false; rows])
    }

    /// Gated fusion of the embedded question and the embedded clip for one
    /// sample under this model's arm. The result is the pre-encoder fused
    /// sequence; `encode_fused` turns it into decoder memory.
    pub fn fuse_sample(
        &self,
        tape: &Tape,
        question: &TokenSequence,
        video: &VideoFeatureSequence,
        mode: Mode,
        gate: GateMode,
    ) -> Result<FusionOutput> {
        let embedded = if self.arm == AblationArm::QuestionOnly {
            None
        } else {
            Some(self.video_embedding.forward(tape, video, mode)?)
        };
        self.fuse_from_embedded(tape, question, embedded, gate)
    }

    /// Fusion from an already embedded clip, so batches can share
    /// normalization statistics upstream. `embedded` is the conv-stack
    /// output and is only None for the question-only arm.
    fn fuse_from_embedded(
        &self,
        tape: &Tape,
        question: &TokenSequence,
        embedded: Option<Tensor>,
        gate: GateMode,
    ) -> Result<FusionOutput> {
        match self.arm {
            AblationArm::Ssaw => {
                let f_q = self.question_rows(tape, question)?;
                let f_v = embedded.expect("ssaw arm embeds the clip");
                self.ssaw.as_ref().expect("ssaw arm has a fusion block").fuse(tape, &f_q, &f_v, gate)
            }
            AblationArm::Concat => {
                let f_q = self.question_rows(tape, question)?;
                let f_v = embedded.expect("concat arm embeds the clip");
                let boundary = f_q.shape()[0];
                let fused = tape.concat(&[f_q, f_v], 0)?;
                let rows = fused.shape()[0];
                Ok(FusionOutput {
                    fused,
                    gate: Tensor::full(vec![rows, self.d_model], 1.0),
                    boundary,
                })
            }
            AblationArm::QuestionOnly => {
                let f_q = self.question_rows(tape, question)?;
                let boundary = f_q.shape()[0];
                self.ssaw
                    .as_ref()
                    .expect("question arm has a fusion block")
                    .apply(tape, &f_q, boundary, gate)
            }
            AblationArm::VideoOnly => {
                let f_v = embedded.expect("video arm embeds the clip");
                self.ssaw
                    .as_ref()
                    .expect("video arm has a fusion block")
                    .apply(tape, &f_v, 0, gate)
            }
        }
    }

    /// Both teacher-forced losses for one sample: the question decoding
    /// loss and the translation decoding loss, each a mean over its own
    /// positions. The decoder consumes `[BOS, d_1..d_M, s_1..s_{N-1}]` and
    /// the two losses score disjoint halves of the same logits. The
    /// video-only arm has no question to decode, so its first loss is the
    /// constant zero.
    pub fn dual_loss(&self, tape: &Tape, sample: &Sample, mode: Mode) -> Result<(Tensor, Tensor)> {
        let mut losses = self.batch_dual_losses(tape, &[sample], mode)?;
        Ok(losses.pop().expect("one sample in, one loss pair out"))
    }

    /// `dual_loss` over a batch. Clips are embedded together so train-mode
    /// normalization statistics pool across the batch.
    pub fn batch_dual_losses(
        &self,
        tape: &Tape,
        samples: &[&Sample],
        mode: Mode,
    ) -> Result<Vec<(Tensor, Tensor)>> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot score an empty batch"));
        }
        let mut embedded: Vec<Option<Tensor>> = if self.arm == AblationArm::QuestionOnly {
            vec![None; samples.len()]
        } else {
            let videos: Vec<_> = samples.iter().map(|s| &s.video).collect();
            self.video_embedding
                .forward_batch(tape, &videos, mode)?
                .into_iter()
                .map(Some)
                .collect()
        };
        samples
            .iter()
            .zip(embedded.drain(..))
            .map(|(sample, e)| {
                let fusion = self.fuse_from_embedded(tape, &sample.question, e, GateMode::Learned)?;
                self.losses_from_fusion(tape, sample, &fusion)
            })
            .collect()
    }

    fn losses_from_fusion(
        &self,
        tape: &Tape,
        sample: &Sample,
        fusion: &FusionOutput,
    ) -> Result<(Tensor, Tensor)> {
        let memory = self.encode_fused(tape, &fusion.fused)?;
        let not_padded = vec![false; memory.shape()[0]];

        let s = sample.translation.ids();
        if s.is_empty() {
            return Err(Error::invalid("cannot decode an empty translation"));
        }
        let d = match self.arm {
            AblationArm::VideoOnly => &[][..],
            _ => sample.question.ids(),
        };

        let mut input = Vec::with_capacity(1 + d.len() + s.len() - 1);
        input.push(BOS);
        input.extend_from_slice(d);
        input.extend_from_slice(&s[..s.len() - 1]);

        let embedded = self.text_embedding.forward(tape, &input)?;
        let logits = self.text_decoder.decode(tape, &embedded, &memory, &not_padded)?;

        let mut targets_s = vec![IGNORE_INDEX; d.len()];
        targets_s.extend_from_slice(s);
        let l_s = tape.cross_entropy(&logits, &targets_s, IGNORE_INDEX)?;

        let l_d = if d.is_empty() {
            Tensor::scalar(0.0)
        } else {
            let mut targets_d = d.to_vec();
            targets_d.extend(std::iter::repeat(IGNORE_INDEX).take(s.len()));
            tape.cross_entropy(&logits, &targets_d, IGNORE_INDEX)?
        };
        Ok((l_d, l_s))
    }

    /// Greedy decoding: the question tokens are fed as a forced prefix
    /// (except in the video-only arm) and tokens are emitted until EOS or
    /// `max_len`. The terminating EOS is not part of the result.
    pub fn generate(
        &self,
        question: &TokenSequence,
        video: &VideoFeatureSequence,
        max_len: usize,
        gate: GateMode,
    ) -> Result<Vec<usize>> {
        let tape = Tape::no_grad();
        let fusion = self.fuse_sample(&tape, question, video, Mode::Eval, gate)?;
        let memory = self.encode_fused(&tape, &fusion.fused)?;
        let not_padded = vec![false; memory.shape()[0]];

        let mut ids = vec![BOS];
        if self.arm != AblationArm::VideoOnly {
            ids.extend_from_slice(question.ids());
        }
        let mut out = Vec::new();
        while out.len() < max_len {
            let embedded = self.text_embedding.forward(&tape, &ids)?;
            let logits = self.text_decoder.decode(&tape, &embedded, &memory, &not_padded)?;
            let shape = logits.shape();
            let row = &logits.data_vec()[(shape[0] - 1) * shape[1]..shape[0] * shape[1]];
            let next = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            if next == EOS {
                break;
            }
            out.push(next);
            ids.push(next);
        }
        Ok(out)
    }
}

/// Copies every warm-start parameter from a stage 1 store into `store`.
/// Returns how many tensors were copied.
pub fn warm_start(store: &ParameterStore, stage1: &ParameterStore) -> Result<usize> {
    store.adopt_prefixes(stage1, &WARM_START_PREFIXES)
}

/// Translation reference tokens for scoring: the sentence without its
/// terminating EOS, matching what `generate` emits.
pub fn reference_tokens(translation: &TokenSequence) -> Vec<usize> {
    let ids = translation.ids();
    match ids.last() {
        Some(&last) if last == EOS => ids[..ids.len() - 1].to_vec(),
        _ => ids.to_vec(),
    }
}

/// Greedy-decodes every sample and scores the output against the
/// references.
pub fn score_generation(model: &Stage2Model, corpus: &Corpus, max_len: usize) -> Result<ScoreReport> {
    let mut hyps = Vec::with_capacity(corpus.samples.len());
    let mut refs = Vec::with_capacity(corpus.samples.len());
    for sample in &corpus.samples {
        hyps.push(model.generate(&sample.question, &sample.video, max_len, GateMode::Learned)?);
        refs.push(reference_tokens(&sample.translation));
    }
    score_corpus(&hyps, &refs)
}

/// Mean gate activity over all question slots of a corpus, split by
/// whether the slot held the informative token: (informative mean,
/// distractor mean). Slots are weighted equally across the corpus.
pub fn corpus_gate_means(model: &Stage2Model, corpus: &Corpus) -> Result<(f64, f64)> {
    let tape = Tape::no_grad();
    let mut inf_sum = 0.0;
    let mut inf_n = 0usize;
    let mut dis_sum = 0.0;
    let mut dis_n = 0usize;
    for sample in &corpus.samples {
        let fusion =
            model.fuse_sample(&tape, &sample.question, &sample.video, Mode::Eval, GateMode::Learned)?;
        if fusion.boundary != sample.informative.len() {
            return Err(Error::invalid(format!(
                "fusion boundary {} does not cover the {} question slots",
                fusion.boundary,
                sample.informative.len()
            )));
        }
        let gate = fusion.gate.data_vec();
        let d = fusion.gate.shape()[1];
        for (slot, &informative) in sample.informative.iter().enumerate() {
            let row = &gate[slot * d..(slot + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            if informative {
                inf_sum += mean;
                inf_n += 1;
            } else {
                dis_sum += mean;
                dis_n += 1;
            }
        }
    }
    if inf_n == 0 || dis_n == 0 {
        return Err(Error::invalid(
            "corpus has no informative or no distractor slots to compare",
        ));
    }
    Ok((inf_sum / inf_n as f64, dis_sum / dis_n as f64))
}

pub struct Stage2Outcome {
    pub model: Stage2Model,
    pub store: ParameterStore,
    pub log: Vec<Stage2LogLine>,
    pub dev_history: Vec<DevPoint>,
    /// Step whose parameters were kept. With an empty dev set the final
    /// parameters are kept and this is the last step.
    pub best_step: usize,
    pub best_bleu4: f64,
}

/// Fine-tunes from an optional stage 1 checkpoint. Scores the dev set
/// every `eval_every` steps and at the end, keeps the parameters of the
/// best point, and restores them before returning.
pub fn train_stage2(
    train: &Corpus,
    dev: &Corpus,
    stage1: Option<&ParameterStore>,
    arm: AblationArm,
    cfg: &Stage2Config,
) -> Result<Stage2Outcome> {
    cfg.validate()?;
    if train.samples.is_empty() {
        return Err(Error::invalid("stage 2 needs a non-empty training corpus"));
    }
    let mut store = ParameterStore::new();
    let mut init_rng = derive_rng(cfg.seed, "stage2/init");
    let model = Stage2Model::new(&mut store, cfg, train.vocab_size, train.frame_dim, arm, &mut init_rng)?;
    if let Some(pre) = stage1 {
        warm_start(&store, pre)?;
    }
    let mut opt = SgdMomentum::new(cfg.optim);
    let mut order_rng = derive_rng(cfg.seed, "stage2/order");

    let n = train.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut dev_history = Vec::new();
    let mut best: Option<(usize, f64, BTreeMap<String, Vec<f64>>)> = None;

    for step in 0..cfg.steps {
        let tape = Tape::new();
        let mut batch = Vec::with_capacity(cfg.batch_size.min(n));
        for _ in 0..cfg.batch_size.min(n) {
            if cursor >= n {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(&train.samples[order[cursor]]);
            cursor += 1;
        }
        let batch_len = batch.len();

        let mut sum_d: Option<Tensor> = None;
        let mut sum_s: Option<Tensor> = None;
        for (l_d_i, l_s_i) in model.batch_dual_losses(&tape, &batch, Mode::Train)? {
            sum_d = Some(match sum_d {
                None => l_d_i,
                Some(acc) => tape.add(&acc, &l_d_i)?,
            });
            sum_s = Some(match sum_s {
                None => l_s_i,
                Some(acc) => tape.add(&acc, &l_s_i)?,
            });
        }
        let inv = 1.0 / batch_len as f64;
        let l_d = tape.scale(&sum_d.expect("batch is non-empty"), inv)?;
        let l_s = tape.scale(&sum_s.expect("batch is non-empty"), inv)?;
        let l_total = tape.add(&l_d, &l_s)?;
        let value = l_total.item();
        if !value.is_finite() {
            return Err(Error::NonFinite { step, value });
        }
        tape.backward(&l_total)?;
        opt.step(&store);
        store.zero_grads();
        log.push(Stage2LogLine {
            step,
            l_d: l_d.item(),
            l_s: l_s.item(),
            l_total: value,
        });

        let due = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps;
        if due && !dev.samples.is_empty() {
            let report = score_generation(&model, dev, cfg.max_len)?;
            let bleu4 = report.bleu[3];
            dev_history.push(DevPoint { step, bleu4 });
            let improved = match &best {
                None => true,
                Some((_, best_bleu, _)) => bleu4 > *best_bleu,
            };
            if improved {
                best = Some((step, bleu4, store.snapshot()));
            }
        }
    }

    let (best_step, best_bleu4) = match best {
        Some((step, bleu4, snapshot)) => {
            store.restore(&snapshot)?;
            (step, bleu4)
        }
        None => (cfg.steps.saturating_sub(1), 0.0),
    };
    Ok(Stage2Outcome {
        model,
        store,
        log,
        dev_history,
        best_step,
        best_bleu4,
    })
}

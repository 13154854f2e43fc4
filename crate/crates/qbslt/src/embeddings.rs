//! Token and video-frame embeddings.
//!
//! Text: table lookup plus fixed sinusoidal position encoding, unscaled.
//! Video: a linear frame projection into model width, then two blocks of
//! temporal convolution, batch norm, ReLU, and 2-wide max pooling, so a
//! clip of N frames becomes floor(floor(N/2)/2) positions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::seq::VideoFeatureSequence;
use crate::tensor::{Mode, Tape, Tensor};
use crate::transformer::Linear;

const CONV_KERNEL: usize = 5;
const POOL_WIDTH: usize = 2;
const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// Fixed sinusoidal position table: even channels sin(pos/10000^(2i/d)),
/// odd channels the matching cos.
pub fn sinusoidal_positions(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for j in 0..d {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
            out[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

pub struct TextEmbedding {
    table: Tensor,
    d_model: usize,
    vocab: usize,
}

impl TextEmbedding {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        vocab: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Result<TextEmbedding> {
        Ok(TextEmbedding {
            table: store.register(
                &format!("{prefix}.table"),
                Tensor::randn(vec![vocab, d_model], 1.0, rng).trainable(),
            )?,
            d_model,
            vocab,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Embedded sequence [len×d]: table rows plus position encoding, with no
    /// magnitude rescaling.
    pub fn forward(&self, tape: &Tape, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty sequence"));
        }
        let rows = tape.gather_rows(&self.table, ids)?;
        let pos = Tensor::from_vec(
            vec![ids.len(), self.d_model],
            sinusoidal_positions(ids.len(), self.d_model),
        )?;
        tape.add(&rows, &pos)
    }
}

struct ConvBlock {
    w: Tensor,
    b: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
}

impl ConvBlock {
    fn new(
        store: &mut ParameterStore,
        name: &str,
        d: usize,
        rng: &mut impl Rng,
    ) -> Result<ConvBlock> {
        let std = 1.0 / ((CONV_KERNEL * d) as f64).sqrt();
        Ok(ConvBlock {
            w: store.register(
                &format!("{name}.conv.w"),
                Tensor::randn(vec![CONV_KERNEL, d, d], std, rng).trainable(),
            )?,
            b: store.register(&format!("{name}.conv.b"), Tensor::zeros(vec![d]).trainable())?,
            gamma: store.register(
                &format!("{name}.bn.gamma"),
                Tensor::full(vec![d], 1.0).trainable(),
            )?,
            beta: store.register(&format!("{name}.bn.beta"), Tensor::zeros(vec![d]).trainable())?,
            running_mean: store.register(&format!("{name}.bn.running_mean"), Tensor::zeros(vec![d]))?,
            running_var: store.register(
                &format!("{name}.bn.running_var"),
                Tensor::full(vec![d], 1.0),
            )?,
        })
    }

    /// One block over several clips at once. The convolution and pooling
    /// are independent per clip, but the normalization statistics pool over
    /// every clip in the batch, which is what makes train-mode statistics
    /// agree with the running averages used in eval mode.
    fn forward_batch(&self, tape: &Tape, xs: &[Tensor], mode: Mode) -> Result<Vec<Tensor>> {
        let convs = xs
            .iter()
            .map(|x| tape.conv1d(x, &self.w, &self.b))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.concat(&convs, 0)?;
        let normed = tape.batch_norm(
            &stacked,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            BN_MOMENTUM,
            BN_EPS,
            mode,
        )?;
        let activated = tape.relu(&normed)?;
        let mut out = Vec::with_capacity(convs.len());
        let mut row = 0;
        for conv in &convs {
            let rows = conv.shape()[0];
            let part = if convs.len() == 1 {
                activated.clone()
            } else {
                tape.slice_rows(&activated, row, row + rows)?
            };
            row += rows;
            out.push(tape.max_pool1d(&part, POOL_WIDTH)?);
        }
        Ok(out)
    }
}

pub struct VideoEmbedding {
    proj: Linear,
    blocks: [ConvBlock; 2],
    frame_dim: usize,
}

impl VideoEmbedding {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        frame_dim: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Result<VideoEmbedding> {
        Ok(VideoEmbedding {
            proj: Linear::new(store, &format!("{prefix}.proj"), frame_dim, d_model, rng)?,
            blocks: [
                ConvBlock::new(store, &format!("{prefix}.block0"), d_model, rng)?,
                ConvBlock::new(store, &format!("{prefix}.block1"), d_model, rng)?,
            ],
            frame_dim,
        })
    }

    /// Positions surviving both pooling stages for an N-frame clip.
    pub fn output_len(frames: usize) -> usize {
        (frames / POOL_WIDTH) / POOL_WIDTH
    }

    /// Embedded clip [floor(floor(N/2)/2) × d]. Requires at least four
    /// frames so both pooling stages keep a position.
    pub fn forward(&self, tape: &Tape, video: &VideoFeatureSequence, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_batch(tape, &[video], mode)?.pop().expect("one clip in, one out"))
    }

    /// Embeds a batch of clips. In train mode the normalization statistics
    /// are shared across the whole batch; everything else is per clip, so
    /// eval-mode results are identical whether clips are embedded together
    /// or one at a time.
    pub fn forward_batch(
        &self,
        tape: &Tape,
        videos: &[&VideoFeatureSequence],
        mode: Mode,
    ) -> Result<Vec<Tensor>> {
        if videos.is_empty() {
            return Err(Error::invalid("cannot embed an empty clip batch"));
        }
        let mut xs = Vec::with_capacity(videos.len());
        for video in videos {
            if video.frame_dim() != self.frame_dim {
                return Err(Error::invalid(format!(
                    "clip frame_dim {} does not match embedding frame_dim {}",
                    video.frame_dim(),
                    self.frame_dim
                )));
            }
            let n = video.count();
            if n < POOL_WIDTH * POOL_WIDTH {
                return Err(Error::invalid(format!(
                    "clip has {n} frames; at least {} needed to survive pooling",
                    POOL_WIDTH * POOL_WIDTH
                )));
            }
            let x = Tensor::from_vec(vec![n, self.frame_dim], video.frames().to_vec())?;
            xs.push(self.proj.forward(tape, &x)?);
        }
        for block in &self.blocks {
            xs = block.forward_batch(tape, &xs, mode)?;
        }
        Ok(xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::rng::derive_rng;
    use approx::assert_relative_eq;

    #[test]
    fn position_table_hand_values() {
        let pe = sinusoidal_positions(2, 4);
        // Position 0: sin 0, cos 0, sin 0, cos 0.
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        // Position 1, channel pair 0: angle 1.
        assert_relative_eq!(pe[4], 1.0f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(pe[5], 1.0f64.cos(), epsilon = 1e-15);
        // Channel pair 1: angle 1/10000^(2/4).
        let angle: f64 = 1.0 / 100.0;
        assert_relative_eq!(pe[6], angle.sin(), epsilon = 1e-15);
        assert_relative_eq!(pe[7], angle.cos(), epsilon = 1e-15);
    }

    #[test]
    fn text_embedding_is_table_plus_positions_unscaled() {
        let mut rng = derive_rng(21, "emb/text");
        let mut store = ParameterStore::new();
        let emb = TextEmbedding::new(&mut store, "text_embedding", 10, 4, &mut rng).unwrap();
        let tape = Tape::no_grad();
        let out = emb.forward(&tape, &[3, 3]).unwrap();
        let table = store.get("text_embedding.table").unwrap().data_vec();
        let pe = sinusoidal_positions(2, 4);
        let v = out.data_vec();
        for j in 0..4 {
            assert_eq!(v[j], table[3 * 4 + j] + pe[j]);
            assert_eq!(v[4 + j], table[3 * 4 + j] + pe[4 + j]);
        }
        assert!(emb.forward(&tape, &[]).is_err());
        assert!(emb.forward(&tape, &[10]).is_err());
    }

    #[test]
    fn video_output_lengths_floor_twice() {
        for (n, want) in [(4, 1), (5, 1), (7, 1), (8, 2), (11, 2), (12, 3), (21, 5)] {
            assert_eq!(VideoEmbedding::output_len(n), want, "n={n}");
        }
    }

    #[test]
    fn video_forward_shape_and_read_counter() {
        let mut rng = derive_rng(22, "emb/video");
        let mut store = ParameterStore::new();
        let emb = VideoEmbedding::new(&mut store, "video_embedding", 6, 8, &mut rng).unwrap();
        let clip = VideoFeatureSequence::new(
            6,
            Tensor::randn(vec![11, 6], 1.0, &mut rng).data_vec(),
        )
        .unwrap();
        let tape = Tape::no_grad();
        assert_eq!(clip.read_count(), 0);
        let out = emb.forward(&tape, &clip, Mode::Eval).unwrap();
        assert_eq!(out.shape(), vec![2, 8]);
        assert_eq!(clip.read_count(), 1);
    }

    #[test]
    fn video_rejects_short_clips() {
        let mut rng = derive_rng(23, "emb/short");
        let mut store = ParameterStore::new();
        let emb = VideoEmbedding::new(&mut store, "video_embedding", 3, 4, &mut rng).unwrap();
        let clip = VideoFeatureSequence::new(3, vec![0.5; 9]).unwrap();
        let tape = Tape::no_grad();
        assert!(emb.forward(&tape, &clip, Mode::Eval).is_err());
    }

    #[test]
    fn eval_mode_is_frozen_train_mode_moves_running_stats() {
        let mut rng = derive_rng(24, "emb/mode");
        let mut store = ParameterStore::new();
        let emb = VideoEmbedding::new(&mut store, "video_embedding", 3, 4, &mut rng).unwrap();
        let clip =
            VideoFeatureSequence::new(3, Tensor::randn(vec![8, 3], 1.0, &mut rng).data_vec())
                .unwrap();
        let rm = store.get("video_embedding.block0.bn.running_mean").unwrap();
        let tape = Tape::no_grad();

        let e1 = emb.forward(&tape, &clip, Mode::Eval).unwrap().data_vec();
        let e2 = emb.forward(&tape, &clip, Mode::Eval).unwrap().data_vec();
        assert_eq!(e1, e2);
        assert_eq!(rm.data_vec(), vec![0.0; 4]);

        let before = rm.data_vec();
        let _ = emb.forward(&tape, &clip, Mode::Train).unwrap();
        assert_ne!(rm.data_vec(), before);
    }

    #[test]
    fn eval_batch_embedding_equals_single_clip_embedding() {
        let mut rng = derive_rng(26, "emb/batch-eval");
        let mut store = ParameterStore::new();
        let emb = VideoEmbedding::new(&mut store, "video_embedding", 3, 4, &mut rng).unwrap();
        let a = VideoFeatureSequence::new(3, Tensor::randn(vec![9, 3], 1.0, &mut rng).data_vec())
            .unwrap();
        let b = VideoFeatureSequence::new(3, Tensor::randn(vec![6, 3], 1.0, &mut rng).data_vec())
            .unwrap();
        let tape = Tape::no_grad();
        let batch = emb.forward_batch(&tape, &[&a, &b], Mode::Eval).unwrap();
        let one_a = emb.forward(&tape, &a, Mode::Eval).unwrap();
        let one_b = emb.forward(&tape, &b, Mode::Eval).unwrap();
        assert_eq!(batch[0].data_vec(), one_a.data_vec());
        assert_eq!(batch[1].data_vec(), one_b.data_vec());
    }

    #[test]
    fn train_batch_statistics_couple_clips() {
        let mut rng = derive_rng(27, "emb/batch-train");
        let mut store = ParameterStore::new();
        let emb = VideoEmbedding::new(&mut store, "video_embedding", 3, 4, &mut rng).unwrap();
        let a = VideoFeatureSequence::new(3, Tensor::randn(vec![9, 3], 1.0, &mut rng).data_vec())
            .unwrap();
        let b = VideoFeatureSequence::new(3, Tensor::randn(vec![6, 3], 1.0, &mut rng).data_vec())
            .unwrap();
        let tape = Tape::no_grad();
        let joint = emb.forward_batch(&tape, &[&a, &b], Mode::Train).unwrap();
        let alone = emb.forward(&tape, &a, Mode::Train).unwrap();
        assert_ne!(joint[0].data_vec(), alone.data_vec());
    }

    #[test]
    fn fd_video_embedding_gradients() {
        let mut rng = derive_rng(25, "emb/fd");
        let mut store = ParameterStore::new();
        let emb = VideoEmbedding::new(&mut store, "video_embedding", 3, 4, &mut rng).unwrap();
        let clip =
            VideoFeatureSequence::new(3, Tensor::randn(vec![9, 3], 1.0, &mut rng).data_vec())
                .unwrap();
        let inputs: Vec<Tensor> = store.trainable().into_iter().map(|(_, t)| t).collect();
        let mk = move |tape: &Tape, _ins: &[Tensor]| {
            let y = emb.forward(tape, &clip, Mode::Train)?;
            let y = tape.mean_pool(&y, 0)?;
            let y = tape.stack_rows(&[y])?;
            let sq = tape.elementwise_mul(&y, &y)?;
            tape.mean_pool(&sq, 1)
        };
        check_gradients(&mk, &inputs).unwrap();
    }
}

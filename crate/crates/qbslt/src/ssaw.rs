//! Sigmoid self-attention weighting: fuses an embedded question with an
//! embedded video clip by concatenating them along time, passing the result
//! through one single-head self-attention block and a feed-forward block
//! (each with a residual and post layer norm), squashing the output through
//! a sigmoid, and multiplying the concatenation elementwise by that gate.
//! Informative positions keep their features; uninformative ones shrink.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::{Tape, Tensor};
use crate::transformer::{LayerNorm, Linear};

/// Gate selection. `AllOnes` is a diagnostic hook that replaces the learned
/// gate with ones, making fusion the identity on the concatenation; it is
/// part of the block's contract so tests can prove the gate is the only
/// thing the block multiplies in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    Learned,
    AllOnes,
}

/// Result of one fusion: the gated features, the gate itself, and the row
/// index where question rows end and video rows begin.
pub struct FusionOutput {
    pub fused: Tensor,
    pub gate: Tensor,
    pub boundary: usize,
}

/// Channel-mean gate activity split into the groups the gate is supposed to
/// separate. Groups with no rows are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSummary {
    pub informative: Option<f64>,
    pub distractor: Option<f64>,
    pub video: Option<f64>,
    /// Per-row channel means, question rows first.
    pub row_means: Vec<f64>,
}

pub struct SsawBlock {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    ln1: LayerNorm,
    lift: Linear,
    drop: Linear,
    ln2: LayerNorm,
    d_model: usize,
}

impl SsawBlock {
    /// The attention projections carry no biases; the feed-forward layers do.
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut impl Rng,
    ) -> Result<SsawBlock> {
        let std = 1.0 / (d_model as f64).sqrt();
        Ok(SsawBlock {
            wq: store.register(
                &format!("{prefix}.wq"),
                Tensor::randn(vec![d_model, d_model], std, rng).trainable(),
            )?,
            wk: store.register(
                &format!("{prefix}.wk"),
                Tensor::randn(vec![d_model, d_model], std, rng).trainable(),
            )?,
            wv: store.register(
                &format!("{prefix}.wv"),
                Tensor::randn(vec![d_model, d_model], std, rng).trainable(),
            )?,
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), d_model)?,
            lift: Linear::new(store, &format!("{prefix}.ffn.lift"), d_model, d_ff, rng)?,
            drop: Linear::new(store, &format!("{prefix}.ffn.drop"), d_ff, d_model, rng)?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), d_model)?,
            d_model,
        })
    }

    /// Gates a question block [M×d] fused with a video block [N'×d].
    pub fn fuse(
        &self,
        tape: &Tape,
        f_q: &Tensor,
        f_v: &Tensor,
        mode: GateMode,
    ) -> Result<FusionOutput> {
        let boundary = f_q.shape()[0];
        let f_c = tape.concat(&[f_q.clone(), f_v.clone()], 0)?;
        self.apply(tape, &f_c, boundary, mode)
    }

    /// Gates an already concatenated sequence. `boundary` marks where the
    /// question rows end; single-modality inputs use 0 or the full length.
    pub fn apply(
        &self,
        tape: &Tape,
        f_c: &Tensor,
        boundary: usize,
        mode: GateMode,
    ) -> Result<FusionOutput> {
        let shape = f_c.shape();
        if shape.len() != 2 || shape[1] != self.d_model {
            return Err(Error::invalid(format!(
                "fusion input has shape {shape:?}, expected [_, {}]",
                self.d_model
            )));
        }
        let rows = shape[0];
        if rows == 0 {
            return Err(Error::invalid("cannot fuse an empty sequence"));
        }
        if boundary > rows {
            return Err(Error::invalid(format!(
                "fusion boundary {boundary} beyond {rows} rows"
            )));
        }
        // Single-head attention over the concatenation, scaled by 1/sqrt(d).
        let q = tape.matmul(f_c, &self.wq)?;
        let k = tape.matmul(f_c, &self.wk)?;
        let v = tape.matmul(f_c, &self.wv)?;
        let scores = tape.scale(
            &tape.matmul(&q, &tape.transpose(&k)?)?,
            1.0 / (self.d_model as f64).sqrt(),
        )?;
        let attn = tape.softmax(&scores, 1)?;
        let sa = tape.matmul(&attn, &v)?;
        let f_a = self.ln1.forward(tape, &tape.add(f_c, &sa)?)?;
        let ffn = self.drop.forward(tape, &tape.relu(&self.lift.forward(tape, &f_a)?)?)?;
        let f_f = self.ln2.forward(tape, &tape.add(&f_a, &ffn)?)?;
        let gate = match mode {
            GateMode::Learned => tape.sigmoid(&f_f)?,
            GateMode::AllOnes => Tensor::full(vec![rows, self.d_model], 1.0),
        };
        let fused = tape.elementwise_mul(f_c, &gate)?;
        Ok(FusionOutput {
            fused,
            gate,
            boundary,
        })
    }
}

/// Splits mean gate activity by row group. `informative[i]` says whether
/// question row i carries a signal token; its length must equal the fusion
/// boundary.
pub fn gate_summary(output: &FusionOutput, informative: &[bool]) -> Result<GateSummary> {
    if informative.len() != output.boundary {
        return Err(Error::invalid(format!(
            "{} informative flags for {} question rows",
            informative.len(),
            output.boundary
        )));
    }
    let shape = output.gate.shape();
    let (rows, d) = (shape[0], shape[1]);
    let data = output.gate.data_vec();
    let row_means: Vec<f64> = (0..rows)
        .map(|r| data[r * d..(r + 1) * d].iter().sum::<f64>() / d as f64)
        .collect();
    let group_mean = |rows: Vec<usize>| -> Option<f64> {
        if rows.is_empty() {
            None
        } else {
            Some(rows.iter().map(|&r| row_means[r]).sum::<f64>() / rows.len() as f64)
        }
    };
    let informative_rows: Vec<usize> = (0..output.boundary).filter(|&r| informative[r]).collect();
    let distractor_rows: Vec<usize> = (0..output.boundary).filter(|&r| !informative[r]).collect();
    let video_rows: Vec<usize> = (output.boundary..rows).collect();
    Ok(GateSummary {
        informative: group_mean(informative_rows),
        distractor: group_mean(distractor_rows),
        video: group_mean(video_rows),
        row_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::rng::derive_rng;
    use proptest::prelude::*;

    fn block(d: usize, d_ff: usize, seed: u64) -> (SsawBlock, ParameterStore) {
        let mut store = ParameterStore::new();
        let mut rng = derive_rng(seed, "ssaw/init");
        let block = SsawBlock::new(&mut store, "ssaw", d, d_ff, &mut rng).unwrap();
        (block, store)
    }

    #[test]
    fn all_ones_gate_is_bitwise_identity_on_concat() {
        let (block, _store) = block(6, 12, 31);
        let mut rng = derive_rng(32, "ssaw/inputs");
        let f_q = Tensor::randn(vec![3, 6], 1.0, &mut rng);
        let f_v = Tensor::randn(vec![2, 6], 1.0, &mut rng);
        let tape = Tape::no_grad();
        let out = block.fuse(&tape, &f_q, &f_v, GateMode::AllOnes).unwrap();
        let mut expect = f_q.data_vec();
        expect.extend(f_v.data_vec());
        let got = out.fused.data_vec();
        assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(&expect) {
            assert_eq!(g.to_bits(), e.to_bits());
        }
    }

    #[test]
    fn learned_gate_stays_in_open_unit_interval() {
        let (block, _store) = block(8, 16, 33);
        let mut rng = derive_rng(34, "ssaw/gate");
        let tape = Tape::no_grad();
        for _ in 0..20 {
            let f_q = Tensor::randn(vec![4, 8], 1.5, &mut rng);
            let f_v = Tensor::randn(vec![3, 8], 1.5, &mut rng);
            let out = block.fuse(&tape, &f_q, &f_v, GateMode::Learned).unwrap();
            assert_eq!(out.fused.shape(), vec![7, 8]);
            assert_eq!(out.boundary, 4);
            for g in out.gate.data_vec() {
                assert!(g > 0.0 && g < 1.0, "gate {g} escaped (0, 1)");
            }
        }
    }

    #[test]
    fn fused_signs_follow_inputs_and_magnitudes_shrink() {
        let (block, _store) = block(6, 12, 35);
        let mut rng = derive_rng(36, "ssaw/sign");
        let f_q = Tensor::randn(vec![2, 6], 1.0, &mut rng);
        let f_v = Tensor::randn(vec![2, 6], 1.0, &mut rng);
        let tape = Tape::no_grad();
        let out = block.fuse(&tape, &f_q, &f_v, GateMode::Learned).unwrap();
        let mut concat = f_q.data_vec();
        concat.extend(f_v.data_vec());
        for (f, c) in out.fused.data_vec().iter().zip(&concat) {
            assert!(f.abs() <= c.abs());
            if *c != 0.0 {
                assert_eq!(f.signum(), c.signum());
            }
        }
    }

    #[test]
    fn shape_and_boundary_validation() {
        let (block, _store) = block(6, 12, 37);
        let mut rng = derive_rng(38, "ssaw/bad");
        let tape = Tape::no_grad();
        let f_q = Tensor::randn(vec![2, 6], 1.0, &mut rng);
        let wrong = Tensor::randn(vec![2, 4], 1.0, &mut rng);
        assert!(block.fuse(&tape, &f_q, &wrong, GateMode::Learned).is_err());
        let f_c = Tensor::randn(vec![3, 6], 1.0, &mut rng);
        assert!(block.apply(&tape, &f_c, 4, GateMode::Learned).is_err());
        assert!(block.apply(&tape, &f_c, 3, GateMode::Learned).is_ok());
        assert!(block.apply(&tape, &f_c, 0, GateMode::Learned).is_ok());
    }

    #[test]
    fn gate_summary_hand_case() {
        // Dyadic gate values so every mean is exact.
        let gate = Tensor::from_vec(
            vec![3, 2],
            vec![0.75, 0.25, 0.125, 0.375, 0.5, 0.5],
        )
        .unwrap();
        let out = FusionOutput {
            fused: Tensor::zeros(vec![3, 2]),
            gate,
            boundary: 2,
        };
        let summary = gate_summary(&out, &[true, false]).unwrap();
        assert_eq!(summary.informative, Some(0.5));
        assert_eq!(summary.distractor, Some(0.25));
        assert_eq!(summary.video, Some(0.5));
        assert_eq!(summary.row_means, vec![0.5, 0.25, 0.5]);
        assert!(gate_summary(&out, &[true]).is_err());
    }

    #[test]
    fn gate_summary_empty_groups_are_none() {
        let out = FusionOutput {
            fused: Tensor::zeros(vec![2, 2]),
            gate: Tensor::full(vec![2, 2], 0.5),
            boundary: 0,
        };
        let summary = gate_summary(&out, &[]).unwrap();
        assert_eq!(summary.informative, None);
        assert_eq!(summary.distractor, None);
        assert_eq!(summary.video, Some(0.5));
    }

    #[test]
    fn fusion_is_deterministic() {
        let run = || {
            let (block, _store) = block(6, 12, 39);
            let mut rng = derive_rng(40, "ssaw/det");
            let f_q = Tensor::randn(vec![3, 6], 1.0, &mut rng);
            let f_v = Tensor::randn(vec![2, 6], 1.0, &mut rng);
            let tape = Tape::no_grad();
            block
                .fuse(&tape, &f_q, &f_v, GateMode::Learned)
                .unwrap()
                .gate
                .data_vec()
        };
        let a: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn fd_fusion_gradients() {
        let (block, store) = block(4, 8, 41);
        let mut rng = derive_rng(42, "ssaw/fd");
        let f_q = Tensor::randn(vec![2, 4], 1.0, &mut rng);
        let f_v = Tensor::randn(vec![2, 4], 1.0, &mut rng);
        let mut inputs = vec![f_q.clone(), f_v.clone()];
        inputs.extend(store.trainable().into_iter().map(|(_, t)| t));
        let mk = move |tape: &Tape, ins: &[Tensor]| {
            let out = block.fuse(tape, &ins[0], &ins[1], GateMode::Learned)?;
            let pooled = tape.mean_pool(&out.fused, 0)?;
            let pooled = tape.stack_rows(&[pooled])?;
            let sq = tape.elementwise_mul(&pooled, &pooled)?;
            tape.mean_pool(&sq, 1)
        };
        check_gradients(&mk, &inputs).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn gate_bounds_hold_for_arbitrary_inputs(
            seed in 0u64..10_000,
            m in 1usize..5,
            n in 1usize..5,
        ) {
            let (block, _store) = block(6, 12, 43);
            let mut rng = derive_rng(seed, "ssaw/prop");
            let f_q = Tensor::randn(vec![m, 6], 2.0, &mut rng);
            let f_v = Tensor::randn(vec![n, 6], 2.0, &mut rng);
            let tape = Tape::no_grad();
            let out = block.fuse(&tape, &f_q, &f_v, GateMode::Learned).unwrap();
            for g in out.gate.data_vec() {
                prop_assert!(g > 0.0 && g < 1.0);
            }
            // Identity under the ones hook, for the same inputs.
            let ones = block.fuse(&tape, &f_q, &f_v, GateMode::AllOnes).unwrap();
            let mut concat = f_q.data_vec();
            concat.extend(f_v.data_vec());
            let fused = ones.fused.data_vec();
            for i in 0..concat.len() {
                prop_assert_eq!(fused[i].to_bits(), concat[i].to_bits());
            }
        }
    }
}

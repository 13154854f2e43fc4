use super::*;
use crate::gradcheck::check_gradients;
use crate::rng::derive_rng;
use crate::tensor::ops::IGNORE_INDEX;
use approx::assert_relative_eq;

fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::from_vec(vec![rows, cols], data.to_vec()).unwrap()
}

fn t1(data: &[f64]) -> Tensor {
    Tensor::from_vec(vec![data.len()], data.to_vec()).unwrap()
}

// ── forward oracles, worked by hand ─────────────────────────────────

#[test]
fn matmul_hand_case() {
    let tape = Tape::no_grad();
    let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let b = t2(2, 2, &[5.0, 6.0, 7.0, 8.0]);
    let c = tape.matmul(&a, &b).unwrap();
    assert_eq!(c.data_vec(), vec![19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let tape = Tape::no_grad();
    let a = t2(2, 3, &[0.0; 6]);
    let b = t2(2, 2, &[0.0; 4]);
    let err = tape.matmul(&a, &b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
}

#[test]
fn softmax_hand_case() {
    let tape = Tape::no_grad();
    let x = t1(&[2.0f64.ln(), 0.0]);
    let y = tape.softmax(&x, 0).unwrap();
    let v = y.data_vec();
    assert_relative_eq!(v[0], 2.0 / 3.0, max_relative = 1e-12);
    assert_relative_eq!(v[1], 1.0 / 3.0, max_relative = 1e-12);
}

#[test]
fn softmax_is_stable_for_huge_inputs() {
    let tape = Tape::no_grad();
    let x = t1(&[1000.0, 1000.0]);
    let y = tape.softmax(&x, 0).unwrap();
    assert_eq!(y.data_vec(), vec![0.5, 0.5]);
}

#[test]
fn softmax_zeroes_masked_entries() {
    let tape = Tape::no_grad();
    let x = t1(&[0.0, -1e30]);
    let y = tape.softmax(&x, 0).unwrap();
    assert_eq!(y.data_vec(), vec![1.0, 0.0]);
}

#[test]
fn softmax_axis0_normalizes_columns() {
    let tape = Tape::no_grad();
    let x = t2(2, 2, &[0.0, 5.0, 0.0, 5.0]);
    let y = tape.softmax(&x, 0).unwrap();
    let v = y.data_vec();
    assert_relative_eq!(v[0] + v[2], 1.0, max_relative = 1e-12);
    assert_relative_eq!(v[1] + v[3], 1.0, max_relative = 1e-12);
    assert_eq!(v[0], v[2]);
}

#[test]
fn cross_entropy_uniform_logits() {
    let tape = Tape::no_grad();
    let logits = t2(1, 4, &[0.0; 4]);
    let loss = tape.cross_entropy(&logits, &[0], IGNORE_INDEX).unwrap();
    assert_relative_eq!(loss.item(), 4.0f64.ln(), max_relative = 1e-12);
}

#[test]
fn cross_entropy_is_stable_for_huge_logits() {
    let tape = Tape::no_grad();
    let logits = t2(1, 2, &[1000.0, 0.0]);
    let loss = tape.cross_entropy(&logits, &[0], IGNORE_INDEX).unwrap();
    assert!(loss.item().is_finite());
    assert_relative_eq!(loss.item(), 0.0, epsilon = 1e-12);
}

#[test]
fn cross_entropy_all_ignored_is_exactly_zero() {
    let tape = Tape::new();
    let logits = t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let loss = tape
        .cross_entropy(&logits, &[IGNORE_INDEX, IGNORE_INDEX], IGNORE_INDEX)
        .unwrap();
    assert_eq!(loss.item(), 0.0);
    tape.backward(&loss).unwrap();
    assert_eq!(logits.grad_vec(), vec![0.0; 6]);
}

#[test]
fn cross_entropy_rejects_out_of_range_target() {
    let tape = Tape::no_grad();
    let logits = t2(1, 3, &[0.0; 3]);
    assert!(tape.cross_entropy(&logits, &[3], IGNORE_INDEX).is_err());
}

#[test]
fn layer_norm_hand_case() {
    let tape = Tape::no_grad();
    let x = t1(&[1.0, 3.0]);
    let gamma = t1(&[1.0, 1.0]);
    let beta = t1(&[0.0, 0.0]);
    let y = tape.layer_norm(&x, &gamma, &beta, 0.0).unwrap();
    assert_eq!(y.data_vec(), vec![-1.0, 1.0]);
}

#[test]
fn l2_normalize_hand_case() {
    let tape = Tape::no_grad();
    let x = t2(1, 2, &[3.0, 4.0]);
    let y = tape.l2_normalize_rows(&x).unwrap();
    assert_eq!(y.data_vec(), vec![0.6, 0.8]);
}

#[test]
fn l2_normalize_rejects_zero_row() {
    let tape = Tape::no_grad();
    let x = t2(1, 2, &[0.0, 0.0]);
    assert!(tape.l2_normalize_rows(&x).is_err());
}

#[test]
fn concat_and_slice_round_trip() {
    let tape = Tape::no_grad();
    let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let b = t2(1, 2, &[5.0, 6.0]);
    let c = tape.concat(&[a.clone(), b], 0).unwrap();
    assert_eq!(c.shape(), vec![3, 2]);
    assert_eq!(c.data_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let d = t2(2, 1, &[9.0, 8.0]);
    let wide = tape.concat(&[a, d], 1).unwrap();
    assert_eq!(wide.shape(), vec![2, 3]);
    assert_eq!(wide.data_vec(), vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    let back = tape.slice_cols(&wide, 0, 2).unwrap();
    assert_eq!(back.data_vec(), vec![1.0, 2.0, 3.0, 4.0]);

    let tail = tape.slice_rows(&c, 1, 3).unwrap();
    assert_eq!(tail.shape(), vec![2, 2]);
    assert_eq!(tail.data_vec(), vec![3.0, 4.0, 5.0, 6.0]);
    assert!(tape.slice_rows(&c, 2, 2).is_err());
    assert!(tape.slice_rows(&c, 0, 4).is_err());
}

#[test]
fn mean_pool_hand_case() {
    let tape = Tape::no_grad();
    let x = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(tape.mean_pool(&x, 0).unwrap().data_vec(), vec![2.0, 3.0]);
    assert_eq!(tape.mean_pool(&x, 1).unwrap().data_vec(), vec![1.5, 3.5]);
}

#[test]
fn conv1d_hand_case() {
    let tape = Tape::no_grad();
    let x = t2(3, 1, &[1.0, 2.0, 3.0]);
    let w = Tensor::from_vec(vec![3, 1, 1], vec![1.0, 1.0, 1.0]).unwrap();
    let b = t1(&[0.0]);
    let y = tape.conv1d(&x, &w, &b).unwrap();
    // Zero padding outside the sequence.
    assert_eq!(y.data_vec(), vec![3.0, 6.0, 5.0]);
}

#[test]
fn max_pool_hand_case() {
    let tape = Tape::new();
    let x = t2(4, 1, &[1.0, 5.0, 3.0, 2.0]);
    let y = tape.max_pool1d(&x, 2).unwrap();
    assert_eq!(y.data_vec(), vec![5.0, 3.0]);
    let loss = tape.mean_pool(&y, 0).unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(x.grad_vec(), vec![0.0, 0.5, 0.5, 0.0]);
}

#[test]
fn max_pool_drops_trailing_rows() {
    let tape = Tape::no_grad();
    let x = t2(5, 1, &[1.0, 2.0, 3.0, 4.0, 9.0]);
    let y = tape.max_pool1d(&x, 2).unwrap();
    assert_eq!(y.data_vec(), vec![2.0, 4.0]);
}

#[test]
fn batch_norm_train_uses_batch_stats_and_moves_running() {
    let tape = Tape::no_grad();
    let x = t2(2, 1, &[1.0, 3.0]);
    let gamma = t1(&[1.0]);
    let beta = t1(&[0.0]);
    let rm = t1(&[0.0]);
    let rv = t1(&[1.0]);
    let y = tape
        .batch_norm(&x, &gamma, &beta, &rm, &rv, 0.1, 0.0, Mode::Train)
        .unwrap();
    assert_eq!(y.data_vec(), vec![-1.0, 1.0]);
    assert_relative_eq!(rm.data_vec()[0], 0.2, max_relative = 1e-12);
    assert_relative_eq!(rv.data_vec()[0], 1.0, max_relative = 1e-12);
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let tape = Tape::no_grad();
    let x = t2(2, 1, &[1.0, 3.0]);
    let gamma = t1(&[2.0]);
    let beta = t1(&[1.0]);
    let rm = t1(&[1.0]);
    let rv = t1(&[4.0]);
    let y = tape
        .batch_norm(&x, &gamma, &beta, &rm, &rv, 0.1, 0.0, Mode::Eval)
        .unwrap();
    // (x - 1) / 2 * 2 + 1
    assert_eq!(y.data_vec(), vec![1.0, 3.0]);
    assert_eq!(rm.data_vec(), vec![1.0]);
}

// ── backward behavior ───────────────────────────────────────────────

#[test]
fn sigmoid_grad_at_zero() {
    let tape = Tape::new();
    let x = t1(&[0.0]);
    let y = tape.sigmoid(&x).unwrap();
    assert_eq!(y.data_vec(), vec![0.5]);
    tape.backward(&y).unwrap();
    assert_eq!(x.grad_vec(), vec![0.25]);
}

#[test]
fn square_grad_handles_aliased_inputs() {
    let tape = Tape::new();
    let x = t1(&[3.0]);
    let y = tape.elementwise_mul(&x, &x).unwrap();
    tape.backward(&y).unwrap();
    assert_eq!(x.grad_vec(), vec![6.0]);
}

#[test]
fn repeated_backward_accumulates_on_leaves() {
    let tape = Tape::new();
    let x = t1(&[3.0]);
    let y = tape.elementwise_mul(&x, &x).unwrap();
    tape.backward(&y).unwrap();
    tape.backward(&y).unwrap();
    assert_eq!(x.grad_vec(), vec![12.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let tape = Tape::new();
    let x = t1(&[1.0, 2.0]);
    let y = tape.relu(&x).unwrap();
    assert!(tape.backward(&y).is_err());
}

#[test]
fn non_participating_tensor_keeps_zero_grad() {
    let tape = Tape::new();
    let x = t1(&[1.0]);
    let other = t1(&[5.0]);
    let y = tape.sigmoid(&x).unwrap();
    tape.backward(&y).unwrap();
    assert_eq!(other.grad_vec(), vec![0.0]);
}

#[test]
fn no_grad_tape_records_nothing() {
    let tape = Tape::no_grad();
    let x = t1(&[1.0]);
    let _ = tape.sigmoid(&x).unwrap();
    assert_eq!(tape.op_count(), 0);
    assert!(tape.backward(&x).is_err());
}

#[test]
fn embedding_gather_accumulates_repeated_ids() {
    let tape = Tape::new();
    let table = t2(3, 2, &[0.0; 6]);
    let rows = tape.gather_rows(&table, &[1, 1, 2]).unwrap();
    let loss = tape.cross_entropy(&rows, &[0, 0, 0], IGNORE_INDEX).unwrap();
    tape.backward(&loss).unwrap();
    let g = table.grad_vec();
    assert_eq!(g[0], 0.0);
    assert_eq!(g[1], 0.0);
    // Row 1 was gathered twice, row 2 once.
    assert_relative_eq!(g[2], 2.0 * g[4], max_relative = 1e-9);
}

// ── finite-difference checks per op ─────────────────────────────────

fn rand_t(shape: Vec<usize>, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

#[test]
fn fd_linear_chain() {
    let mut rng = derive_rng(11, "fd/linear");
    let a = rand_t(vec![3, 4], &mut rng);
    let b = rand_t(vec![4, 2], &mut rng);
    let bias = rand_t(vec![2], &mut rng);
    let mk = |tape: &Tape, ins: &[Tensor]| {
        let y = tape.matmul(&ins[0], &ins[1])?;
        let y = tape.add_bias(&y, &ins[2])?;
        let y = tape.relu(&y)?;
        let y = tape.mean_pool(&y, 0)?;
        let y = tape.stack_rows(&[y])?;
        tape.mean_pool(&y, 1)
    };
    check_gradients(&mk, &[a, b, bias]).unwrap();
}

#[test]
fn fd_softmax_cross_entropy() {
    let mut rng = derive_rng(12, "fd/ce");
    let x = rand_t(vec![4, 5], &mut rng);
    let mk = |tape: &Tape, ins: &[Tensor]| {
        tape.cross_entropy(&ins[0], &[1, 4, IGNORE_INDEX, 0], IGNORE_INDEX)
    };
    check_gradients(&mk, &[x]).unwrap();
}

#[test]
fn fd_layer_norm() {
    let mut rng = derive_rng(13, "fd/ln");
    let x = rand_t(vec![3, 6], &mut rng);
    let gamma = rand_t(vec![6], &mut rng);
    let beta = rand_t(vec![6], &mut rng);
    let mk = |tape: &Tape, ins: &[Tensor]| {
        let y = tape.layer_norm(&ins[0], &ins[1], &ins[2], 1e-5)?;
        let y = tape.sigmoid(&y)?;
        let y = tape.mean_pool(&y, 0)?;
        let y = tape.stack_rows(&[y])?;
        tape.mean_pool(&y, 1)
    };
    check_gradients(&mk, &[x, gamma, beta]).unwrap();
}

#[test]
fn fd_conv_bn_pool_stack() {
    let mut rng = derive_rng(14, "fd/conv");
    let x = rand_t(vec![6, 3], &mut rng);
    let w = rand_t(vec![5, 3, 2], &mut rng);
    let b = rand_t(vec![2], &mut rng);
    let gamma = rand_t(vec![2], &mut rng);
    let beta = rand_t(vec![2], &mut rng);
    let mk = |tape: &Tape, ins: &[Tensor]| {
        let rm = Tensor::zeros(vec![2]);
        let rv = Tensor::full(vec![2], 1.0);
        let y = tape.conv1d(&ins[0], &ins[1], &ins[2])?;
        let y = tape.batch_norm(&y, &ins[3], &ins[4], &rm, &rv, 0.1, 1e-5, Mode::Train)?;
        let y = tape.relu(&y)?;
        let y = tape.max_pool1d(&y, 2)?;
        let y = tape.mean_pool(&y, 0)?;
        let y = tape.stack_rows(&[y])?;
        tape.mean_pool(&y, 1)
    };
    check_gradients(&mk, &[x, w, b, gamma, beta]).unwrap();
}

#[test]
fn fd_softmax_axis_both() {
    let mut rng = derive_rng(15, "fd/softmax");
    let x = rand_t(vec![3, 4], &mut rng);
    for axis in [0usize, 1] {
        let mk = move |tape: &Tape, ins: &[Tensor]| {
            let y = tape.softmax(&ins[0], axis)?;
            let y = tape.elementwise_mul(&y, &y)?;
            let y = tape.mean_pool(&y, 0)?;
            let y = tape.stack_rows(&[y])?;
            tape.mean_pool(&y, 1)
        };
        check_gradients(&mk, std::slice::from_ref(&x)).unwrap();
        x.zero_grad();
    }
}

#[test]
fn fd_l2_normalize_and_similarity() {
    let mut rng = derive_rng(16, "fd/l2norm");
    let a = rand_t(vec![3, 4], &mut rng);
    let b = rand_t(vec![3, 4], &mut rng);
    let mk = |tape: &Tape, ins: &[Tensor]| {
        let na = tape.l2_normalize_rows(&ins[0])?;
        let nb = tape.l2_normalize_rows(&ins[1])?;
        let sims = tape.matmul(&na, &tape.transpose(&nb)?)?;
        let sims = tape.scale(&sims, 10.0)?;
        tape.cross_entropy(&sims, &[0, 1, 2], IGNORE_INDEX)
    };
    check_gradients(&mk, &[a, b]).unwrap();
}

#[test]
fn fd_concat_select_slice() {
    let mut rng = derive_rng(17, "fd/concat");
    let a = rand_t(vec![2, 3], &mut rng);
    let b = rand_t(vec![2, 3], &mut rng);
    let mk = |tape: &Tape, ins: &[Tensor]| {
        let c = tape.concat(&[ins[0].clone(), ins[1].clone()], 0)?;
        let c = tape.slice_rows(&c, 1, 4)?;
        let c = tape.slice_cols(&c, 1, 3)?;
        let row = tape.select_index(&c, 2)?;
        let y = tape.stack_rows(&[row])?;
        let y = tape.sigmoid(&y)?;
        tape.mean_pool(&y, 1)
    };
    check_gradients(&mk, &[a, b]).unwrap();
}

// ── deterministic replay ────────────────────────────────────────────

#[test]
fn gradients_are_bit_identical_across_runs() {
    let run = || {
        let mut rng = derive_rng(99, "determinism");
        let x = rand_t(vec![4, 4], &mut rng);
        let w = rand_t(vec![4, 4], &mut rng);
        let tape = Tape::new();
        let y = tape.matmul(&x, &w).unwrap();
        let y = tape.softmax(&y, 1).unwrap();
        let loss = tape.cross_entropy(&y, &[0, 1, 2, 3], IGNORE_INDEX).unwrap();
        tape.backward(&loss).unwrap();
        (loss.item(), x.grad_vec(), w.grad_vec())
    };
    let (l1, gx1, gw1) = run();
    let (l2, gx2, gw2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(gx1, gx2);
    assert_eq!(gw1, gw2);
}

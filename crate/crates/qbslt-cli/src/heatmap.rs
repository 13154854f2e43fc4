//! Gate heatmap rendering. The fused sequence has `boundary` question rows
//! followed by pooled video rows; the gate matrix assigns every row a
//! per-channel weight in (0, 1). Two renderings: a CSV of per-row channel
//! means for inspection, and a raw PGM image of the full matrix with a
//! black separator row between the question and video halves.

use crate::error::{CliError, Result};

fn check_dims(gate: &[f64], rows: usize, cols: usize, boundary: usize) -> Result<()> {
    if rows == 0 || cols == 0 || gate.len() != rows * cols {
        return Err(CliError::Data(format!(
            "gate matrix has {} values, expected {rows}x{cols}",
            gate.len()
        )));
    }
    if boundary > rows {
        return Err(CliError::Data(format!(
            "boundary {boundary} exceeds {rows} fused rows"
        )));
    }
    Ok(())
}

/// One line per fused row: `row,kind,label,mean_gate`, where question rows
/// are labeled with their token surface and video rows with their pooled
/// frame index. A trailing `boundary,<n>` line records the split point.
pub fn gate_csv(
    gate: &[f64],
    rows: usize,
    cols: usize,
    boundary: usize,
    question_labels: &[String],
) -> Result<String> {
    check_dims(gate, rows, cols, boundary)?;
    if question_labels.len() != boundary {
        return Err(CliError::Data(format!(
            "{} question labels for boundary {boundary}",
            question_labels.len()
        )));
    }
    let mut out = String::from("row,kind,label,mean_gate\n");
    for r in 0..rows {
        let mean = gate[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64;
        let (kind, label) = if r < boundary {
            ("question", question_labels[r].clone())
        } else {
            ("video", format!("frame{}", r - boundary))
        };
        out.push_str(&format!("{r},{kind},{label},{mean}\n"));
    }
    out.push_str(&format!("boundary,{boundary}\n"));
    Ok(out)
}

/// Binary PGM (P5), one pixel per gate entry scaled to 0..=255, with an
/// all-black separator row after the question rows.
pub fn gate_pgm(gate: &[f64], rows: usize, cols: usize, boundary: usize) -> Result<Vec<u8>> {
    check_dims(gate, rows, cols, boundary)?;
    let height = rows + 1;
    let mut out = format!("P5\n{cols} {height}\n255\n").into_bytes();
    let push_row = |out: &mut Vec<u8>, r: usize| {
        for c in 0..cols {
            let v = gate[r * cols + c].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    };
    for r in 0..boundary {
        push_row(&mut out, r);
    }
    out.extend(std::iter::repeat_n(0u8, cols));
    for r in boundary..rows {
        push_row(&mut out, r);
    }
    Ok(out)
}

use std::io::Write;

use super::model::Model;
use super::{HarnessError, Result};
use crate::encoder::EncoderInput;
use crate::layers::Fwd;
use crate::numerics::{Tape, Tensor};
use crate::schema::{tokenize_question, SchemaGraph};

/// `grid[i][j]` is the cosine similarity of row `i` of `a` and row `j` of `b`.
pub fn cosine_grid(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(HarnessError::LengthMismatch(format!(
            "{}x{} against {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = a.rows();
    let mut grid = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (a.row(i), b.row(j));
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let denom = norm(x) * norm(y);
            grid.set(i, j, if denom == 0.0 { 0.0 } else { dot / denom });
        }
    }
    Ok(grid)
}

/// Cosine grid between the abstracted question representations of two
/// equally long questions over `graph`.
pub fn diagnose_abstraction(model: &Model, graph: &SchemaGraph, first: &str, second: &str) -> Result<Tensor> {
    let (ta, tb) = (tokenize_question(first), tokenize_question(second));
    if ta.len() != tb.len() {
        return Err(HarnessError::LengthMismatch(format!(
            "questions have {} and {} tokens",
            ta.len(),
            tb.len()
        )));
    }
    let encode = |tokens: &[String]| -> Result<Tensor> {
        let input = EncoderInput::new(&model.vocab, tokens, graph, None)?;
        let tape = Tape::new();
        let fwd = Fwd::new(&tape, &model.store, false);
        Ok(model.encoder.encode(&fwd, &input)?.q_abstract.value())
    };
    cosine_grid(&encode(&ta)?, &encode(&tb)?)
}

pub fn write_grid_csv<W: Write>(grid: &Tensor, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in 0..grid.rows() {
        w.write_record(grid.row(r).iter().map(|x| x.to_string()))
            .map_err(|e| HarnessError::Config(format!("writing grid: {e}")))?;
    }
    w.flush().map_err(|e| HarnessError::Config(format!("writing grid: {e}")))?;
    Ok(())
}

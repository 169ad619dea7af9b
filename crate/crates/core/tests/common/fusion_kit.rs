//! Fusion fixtures: hand-set and random plain parameters, and thin wrappers
//! that run the library on them.

use std::rc::Rc;

use multidecode::diffcore::{Tape, Tensor};
use multidecode::fusion::{fuse, DecoderGraph, FusionConfig};
use rand::Rng;

use super::{fusion_shapes, fusion_vars, random_tensor, Mat, PlainFusion};

/// d = 2, attention widths 2 -> 1 -> 1 -> 1.
pub fn tiny_params() -> PlainFusion {
    PlainFusion {
        kernel: vec![vec![0.5, -0.25], vec![0.125, 0.75]],
        att: [
            (vec![vec![0.4, -0.6]], vec![0.05]),
            (vec![vec![-1.5]], vec![0.2]),
            (vec![vec![0.9]], vec![-0.1]),
        ],
        w_z: vec![vec![0.3, -0.2], vec![0.1, 0.4]],
        u_z: vec![vec![-0.5, 0.25], vec![0.6, -0.1]],
        b_z: vec![0.1, -0.2],
        w_r: vec![vec![0.2, 0.7], vec![-0.3, 0.05]],
        u_r: vec![vec![0.15, -0.4], vec![0.35, 0.2]],
        b_r: vec![-0.05, 0.3],
        w_n: vec![vec![-0.8, 0.45], vec![0.25, 0.6]],
        u_n: vec![vec![0.5, 0.1], vec![-0.35, 0.9]],
        b_n: vec![0.0, 0.15],
    }
}

pub fn random_plain<R: Rng>(rng: &mut R, d: usize) -> PlainFusion {
    let shapes = fusion_shapes(d);
    let mut t: Vec<Tensor> = shapes.iter().map(|s| random_tensor(rng, s, 0.8)).collect();
    let mat = |t: &Tensor| -> Mat { t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect() };
    let vecf = |t: &Tensor| t.data().to_vec();
    let g: Vec<Tensor> = t.drain(7..).collect();
    PlainFusion {
        kernel: mat(&t[0]),
        att: [
            (mat(&t[1]), vecf(&t[2])),
            (mat(&t[3]), vecf(&t[4])),
            (mat(&t[5]), vecf(&t[6])),
        ],
        w_z: mat(&g[0]),
        u_z: mat(&g[1]),
        b_z: vecf(&g[2]),
        w_r: mat(&g[3]),
        u_r: mat(&g[4]),
        b_r: vecf(&g[5]),
        w_n: mat(&g[6]),
        u_n: mat(&g[7]),
        b_n: vecf(&g[8]),
    }
}

pub fn lists(graph: &DecoderGraph) -> Vec<Vec<usize>> {
    let nb = graph.neighborhoods();
    (0..graph.num_nodes()).map(|v| nb.neighbors(v).to_vec()).collect()
}

/// Runs the library's fusion and returns the rows of the result.
pub fn run_fuse(h0: &Mat, graph: &DecoderGraph, p: &PlainFusion, config: FusionConfig) -> multidecode::Result<Mat> {
    let d = h0[0].len();
    let mut tape = Tape::new();
    let params: Vec<_> = p.tensors().into_iter().map(|t| tape.constant(t)).collect();
    let vars = fusion_vars(&params, d);
    let h = tape.constant(Tensor::matrix(h0)?);
    let nb = Rc::new(graph.neighborhoods());
    let out = fuse(&mut tape, h, &nb, &vars, &config)?;
    Ok(tape.value(out).data().chunks(d).map(<[f64]>::to_vec).collect())
}

/// Attention weights per receiver from the library.
pub fn run_attention(h0: &Mat, graph: &DecoderGraph, p: &PlainFusion) -> Vec<Vec<f64>> {
    let d = h0[0].len();
    let mut tape = Tape::new();
    let params: Vec<_> = p.tensors().into_iter().map(|t| tape.constant(t)).collect();
    let vars = fusion_vars(&params, d);
    let h = tape.constant(Tensor::matrix(h0).unwrap());
    let nb = Rc::new(graph.neighborhoods());
    let (_, alpha) = multidecode::fusion::attention_scores(&mut tape, h, &vars, &nb).unwrap();
    let a = tape.value(alpha).data();
    (0..graph.num_nodes()).map(|v| a[nb.edge_range(v)].to_vec()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p_edge: f64) -> DecoderGraph {
    let mut g = DecoderGraph::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(p_edge) {
                g.add_directed(j, i).unwrap();
            }
        }
    }
    g
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Mat {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect()
}

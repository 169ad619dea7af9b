//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

pub mod fusion_kit;

use std::collections::HashMap;

use multidecode::cells::{GruVars, LinearVars, LstmVars};
use multidecode::diffcore::{Tape, Tensor, Var};
use multidecode::fusion::{FusionVars, ATTENTION_SLOPE};
use multidecode::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-5;

/// Scalar probe `Σ out ⊙ R` with fixed random `R`, so that every output entry
/// contributes with a distinct weight.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    if shape.iter().product::<usize>() == 1 {
        return Ok(out);
    }
    let w = random_tensor(&mut rng(seed ^ 0x5eed), &shape, 1.0);
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn eval_probe<F>(inputs: &[Tensor], f: &F, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = probe(&mut tape, out, seed)?;
    tape.value(loss).item()
}

/// Relative error between the tape's gradient and central differences,
/// `‖g_tape - g_fd‖ / max(‖g_tape‖, ‖g_fd‖)` over all entries of all inputs.
pub fn gradient_error<F>(inputs: &[Tensor], f: F, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = probe(&mut tape, out, seed)?;
    let grads = tape.gradients(loss)?;

    let mut diff2 = 0.0;
    let mut tape2 = 0.0;
    let mut fd2 = 0.0;
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let up = eval_probe(&work, &f, seed)?;
            work[i].data_mut()[j] = x - FD_STEP;
            let down = eval_probe(&work, &f, seed)?;
            work[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            diff2 += (analytic[j] - numeric).powi(2);
            tape2 += analytic[j].powi(2);
            fd2 += numeric.powi(2);
        }
    }
    let scale = tape2.sqrt().max(fd2.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale })
}

// ---------------------------------------------------------------------------
// parameter bundles built from plain input leaves

pub fn linear_shapes(input: usize, output: usize) -> Vec<Vec<usize>> {
    vec![vec![output, input], vec![output]]
}

pub fn lstm_shapes(input: usize, hidden: usize) -> Vec<Vec<usize>> {
    vec![vec![4 * hidden, input], vec![4 * hidden, hidden], vec![4 * hidden]]
}

pub fn lstm_vars(v: &[Var], hidden: usize) -> LstmVars {
    LstmVars {
        input_to_gates: v[0],
        hidden_to_gates: v[1],
        bias: v[2],
        hidden_dim: hidden,
    }
}

pub fn gru_shapes(d: usize) -> Vec<Vec<usize>> {
    let mut s = Vec::new();
    for _ in 0..3 {
        s.push(vec![d, d]);
        s.push(vec![d, d]);
        s.push(vec![d]);
    }
    s
}

pub fn gru_vars(v: &[Var]) -> GruVars {
    GruVars {
        w_z: v[0],
        u_z: v[1],
        b_z: v[2],
        w_r: v[3],
        u_r: v[4],
        b_r: v[5],
        w_n: v[6],
        u_n: v[7],
        b_n: v[8],
    }
}

/// Kernel, three attention layers, then the GRU: 16 tensors.
pub fn fusion_shapes(d: usize) -> Vec<Vec<usize>> {
    let w = multidecode::fusion::attention_widths(d);
    let mut s = vec![vec![d, d]];
    for l in 0..3 {
        s.extend(linear_shapes(w[l], w[l + 1]));
    }
    s.extend(gru_shapes(d));
    s
}

pub fn fusion_vars(v: &[Var], d: usize) -> FusionVars {
    FusionVars {
        kernel: v[0],
        attention: [
            LinearVars {
                weight: v[1],
                bias: v[2],
            },
            LinearVars {
                weight: v[3],
                bias: v[4],
            },
            LinearVars {
                weight: v[5],
                bias: v[6],
            },
        ],
        gru: gru_vars(&v[7..16]),
        dim: d,
    }
}

// ---------------------------------------------------------------------------
// literal fusion script on nested vectors

pub type Mat = Vec<Vec<f64>>;

/// Plain-number fusion parameters; matrices are `[out][in]`.
#[derive(Clone, Debug)]
pub struct PlainFusion {
    pub kernel: Mat,
    pub att: [(Mat, Vec<f64>); 3],
    pub w_z: Mat,
    pub u_z: Mat,
    pub b_z: Vec<f64>,
    pub w_r: Mat,
    pub u_r: Mat,
    pub b_r: Vec<f64>,
    pub w_n: Mat,
    pub u_n: Mat,
    pub b_n: Vec<f64>,
}

impl PlainFusion {
    /// Tensors in the order of [`fusion_shapes`].
    pub fn tensors(&self) -> Vec<Tensor> {
        let m = |x: &Mat| Tensor::matrix(x).unwrap();
        let v = |x: &Vec<f64>| Tensor::vector(x.clone());
        let mut out = vec![m(&self.kernel)];
        for (w, b) in &self.att {
            out.push(m(w));
            out.push(v(b));
        }
        out.extend([
            m(&self.w_z),
            m(&self.u_z),
            v(&self.b_z),
            m(&self.w_r),
            m(&self.u_r),
            v(&self.b_r),
            m(&self.w_n),
            m(&self.u_n),
            v(&self.b_n),
        ]);
        out
    }
}

fn mat_vec(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn add3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x + y + z).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        ATTENTION_SLOPE * x
    }
}

/// One AGGREGATE + COMBINE round written out term by term.
/// `neighbors[v]` lists the nodes whose messages reach `v`.
pub fn literal_fuse_round(h: &Mat, neighbors: &[Vec<usize>], p: &PlainFusion) -> Mat {
    let n = h.len();
    let d = h[0].len();
    // messages m_u = W h_u
    let m: Mat = h.iter().map(|hu| mat_vec(&p.kernel, hu)).collect();
    // per-source scores through the three-layer net
    let score: Vec<f64> = m
        .iter()
        .map(|mu| {
            let mut x = mu.clone();
            for (layer, (w, b)) in p.att.iter().enumerate() {
                let y = mat_vec(w, &x);
                x = y.iter().zip(b).map(|(a, c)| a + c).collect();
                if layer < 2 {
                    x = x.into_iter().map(leaky).collect();
                }
            }
            x[0]
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for v in 0..n {
        let mut a = vec![0.0; d];
        let denom: f64 = neighbors[v].iter().map(|&u| score[u].exp()).sum();
        for &u in &neighbors[v] {
            let alpha = score[u].exp() / denom;
            for k in 0..d {
                a[k] += alpha * m[u][k];
            }
        }
        let hv = &h[v];
        let z: Vec<f64> = add3(&mat_vec(&p.w_z, &a), &mat_vec(&p.u_z, hv), &p.b_z)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = add3(&mat_vec(&p.w_r, &a), &mat_vec(&p.u_r, hv), &p.b_r)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(hv).map(|(x, y)| x * y).collect();
        let cand: Vec<f64> = add3(&mat_vec(&p.w_n, &a), &mat_vec(&p.u_n, &rh), &p.b_n)
            .into_iter()
            .map(f64::tanh)
            .collect();
        out.push((0..d).map(|k| (1.0 - z[k]) * hv[k] + z[k] * cand[k]).collect());
    }
    out
}

/// Attention weights as the literal script defines them, per receiver.
pub fn literal_attention(h: &Mat, neighbors: &[Vec<usize>], p: &PlainFusion) -> Vec<Vec<f64>> {
    let m: Mat = h.iter().map(|hu| mat_vec(&p.kernel, hu)).collect();
    let score: Vec<f64> = m
        .iter()
        .map(|mu| {
            let mut x = mu.clone();
            for (layer, (w, b)) in p.att.iter().enumerate() {
                x = mat_vec(w, &x).iter().zip(b).map(|(a, c)| a + c).collect();
                if layer < 2 {
                    x = x.into_iter().map(leaky).collect();
                }
            }
            x[0]
        })
        .collect();
    neighbors
        .iter()
        .map(|nb| {
            let denom: f64 = nb.iter().map(|&u| score[u].exp()).sum();
            nb.iter().map(|&u| score[u].exp() / denom).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// brute-force metrics

/// BLEU-1 by direct counting: for every candidate position, count how many
/// earlier candidate positions hold the same word and compare with the
/// reference count.
pub fn brute_bleu1(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut matched = 0usize;
    for (i, w) in cand.iter().enumerate() {
        let seen_before = cand[..i].iter().filter(|x| *x == w).count();
        let in_ref = reference.iter().filter(|x| *x == w).count();
        if seen_before < in_ref {
            matched += 1;
        }
    }
    let c = cand.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    matched as f64 / c * bp
}

/// Mean over ordered pairs `(i, j)`, `i != j`, of BLEU-1; equal to the mean of
/// symmetrized scores over unordered pairs.
pub fn brute_mean_pairwise(descs: &[Vec<String>]) -> Option<f64> {
    let n = descs.len();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += brute_bleu1(&descs[i], &descs[j]);
            }
        }
    }
    Some(total / (n * (n - 1)) as f64)
}

/// Consistency from flat `(image, box, description)` mentions.
pub fn brute_consistency(mentions: &[(usize, usize, Vec<String>)]) -> Option<f64> {
    let mut by_box: HashMap<(usize, usize), Vec<Vec<String>>> = HashMap::new();
    for (img, bx, d) in mentions {
        if !d.is_empty() {
            by_box.entry((*img, *bx)).or_default().push(d.clone());
        }
    }
    let scores: Vec<f64> = by_box.values().filter_map(|ds| brute_mean_pairwise(ds)).collect();
    if scores.is_empty() {
        None
    } else {
        Some(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

pub fn brute_diversity(per_box: &[Vec<Vec<String>>]) -> Option<f64> {
    let scores: Vec<f64> = per_box
        .iter()
        .filter_map(|runs| {
            let kept: Vec<Vec<String>> = runs.iter().filter(|d| !d.is_empty()).cloned().collect();
            brute_mean_pairwise(&kept)
        })
        .collect();
    if scores.is_empty() {
        None
    } else {
        Some(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------------------
// gradient oracle catalog

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One differentiable operation under test: input shapes (with the value
/// scale to draw from) and the forward builder.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, f64)>,
    pub build: Build,
}

impl GradCase {
    fn new(name: &'static str, inputs: Vec<Vec<usize>>, build: Build) -> Self {
        GradCase {
            name,
            inputs: inputs.into_iter().map(|s| (s, 1.0)).collect(),
            build,
        }
    }

    pub fn draw(&self, seed: u64) -> Vec<Tensor> {
        let mut r = rng(seed);
        self.inputs
            .iter()
            .map(|(s, scale)| random_tensor(&mut r, s, *scale))
            .collect()
    }
}

/// Three decoders: 0 <-> 1, 1 <-> 2, and 0 -> 2 only.
pub fn three_node_graph() -> std::rc::Rc<multidecode::diffcore::Neighborhoods> {
    let mut g = multidecode::fusion::DecoderGraph::path(3);
    g.add_directed(0, 2).unwrap();
    std::rc::Rc::new(g.neighborhoods())
}

/// Graph with an isolated receiver: 0 <- 1, 0 <- 2, 1 <- 0, 3 alone.
fn graph_with_isolated() -> std::rc::Rc<multidecode::diffcore::Neighborhoods> {
    std::rc::Rc::new(
        multidecode::diffcore::Neighborhoods::from_lists(vec![vec![1, 2], vec![0], vec![0, 1], vec![]]).unwrap(),
    )
}

pub fn gradient_cases() -> Vec<GradCase> {
    use multidecode::cells::{embed, gru_combine, lstm_step};
    use multidecode::fusion::{attention_scores, fuse, FusionConfig, FusionMode};

    let mut cases = vec![
        GradCase::new(
            "matmul",
            vec![vec![3, 4], vec![4, 2]],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        GradCase::new(
            "matmul_nt",
            vec![vec![3, 4], vec![2, 4]],
            Box::new(|t, v| t.matmul_nt(v[0], v[1])),
        ),
        GradCase::new(
            "linear",
            vec![vec![3, 4], vec![2, 4], vec![2]],
            Box::new(|t, v| t.linear(v[0], v[1], Some(v[2]))),
        ),
        GradCase::new(
            "linear_no_bias",
            vec![vec![3, 4], vec![2, 4]],
            Box::new(|t, v| t.linear(v[0], v[1], None)),
        ),
        GradCase::new("add", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.add(v[0], v[1]))),
        GradCase::new("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.sub(v[0], v[1]))),
        GradCase::new("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.mul(v[0], v[1]))),
        GradCase::new("tanh", vec![vec![3, 4]], Box::new(|t, v| Ok(t.tanh(v[0])))),
        GradCase::new("sigmoid", vec![vec![3, 4]], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        GradCase::new("exp", vec![vec![3, 4]], Box::new(|t, v| Ok(t.exp(v[0])))),
        GradCase::new(
            "leaky_relu",
            vec![vec![3, 4]],
            Box::new(|t, v| t.leaky_relu(v[0], 0.01)),
        ),
        GradCase::new(
            "affine",
            vec![vec![3, 4]],
            Box::new(|t, v| Ok(t.affine(v[0], 1.7, -0.3))),
        ),
        GradCase::new(
            "scale_rows",
            vec![vec![3, 4]],
            Box::new(|t, v| t.scale_rows(v[0], &[0.5, 0.0, -2.0])),
        ),
        GradCase::new(
            "concat",
            vec![vec![3, 2], vec![3, 3]],
            Box::new(|t, v| t.concat(v[0], v[1])),
        ),
        GradCase::new(
            "concat_vectors",
            vec![vec![2], vec![3]],
            Box::new(|t, v| t.concat(v[0], v[1])),
        ),
        GradCase::new(
            "concat_rows",
            vec![vec![2, 3], vec![1, 3], vec![2, 3]],
            Box::new(|t, v| t.concat_rows(&[v[0], v[1], v[2]])),
        ),
        GradCase::new(
            "slice_cols",
            vec![vec![3, 5]],
            Box::new(|t, v| t.slice_cols(v[0], 1, 3)),
        ),
        GradCase::new(
            "slice_rows",
            vec![vec![4, 3]],
            Box::new(|t, v| t.slice_rows(v[0], 1, 2)),
        ),
        GradCase::new(
            "gather_rows",
            vec![vec![5, 3]],
            Box::new(|t, v| t.gather_rows(v[0], &[0, 2, 2, 4])),
        ),
        GradCase::new("embed", vec![vec![6, 2]], Box::new(|t, v| embed(t, v[0], &[5, 1, 5]))),
        GradCase::new("softmax", vec![vec![3, 4]], Box::new(|t, v| t.softmax(v[0]))),
        GradCase::new("softmax_vector", vec![vec![5]], Box::new(|t, v| t.softmax(v[0]))),
        GradCase::new("sum", vec![vec![3, 4]], Box::new(|t, v| Ok(t.sum(v[0])))),
        GradCase::new("mean", vec![vec![3, 4]], Box::new(|t, v| Ok(t.mean(v[0])))),
        GradCase::new("mse", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.mse(v[0], v[1]))),
        GradCase::new(
            "cross_entropy",
            vec![vec![3, 5]],
            Box::new(|t, v| t.cross_entropy(v[0], &[0, 4, 2])),
        ),
        GradCase::new(
            "cross_entropy_masked",
            vec![vec![3, 5]],
            Box::new(|t, v| t.cross_entropy_masked(v[0], &[Some(1), None, Some(3)], 0.7)),
        ),
        GradCase::new(
            "neighbor_softmax",
            vec![vec![4, 1]],
            Box::new(|t, v| t.neighbor_softmax(v[0], &graph_with_isolated())),
        ),
        GradCase::new(
            "neighbor_sum",
            vec![vec![5], vec![4, 3]],
            Box::new(|t, v| t.neighbor_sum(v[0], v[1], &graph_with_isolated())),
        ),
    ];

    let (xd, hd) = (4, 3);
    let mut shapes = vec![vec![2, xd], vec![2, hd], vec![2, hd]];
    shapes.extend(lstm_shapes(xd, hd));
    cases.push(GradCase::new(
        "lstm_step",
        shapes,
        Box::new(move |t, v| {
            let (h, c) = lstm_step(t, v[0], v[1], v[2], &lstm_vars(&v[3..], hd))?;
            t.concat(h, c)
        }),
    ));

    let d = 3;
    let mut shapes = vec![vec![3, d], vec![3, d]];
    shapes.extend(gru_shapes(d));
    cases.push(GradCase::new(
        "gru_combine",
        shapes,
        Box::new(move |t, v| gru_combine(t, v[0], v[1], &gru_vars(&v[2..]))),
    ));

    let d = 4;
    let mut shapes = vec![vec![3, d]];
    shapes.extend(fusion_shapes(d));
    cases.push(GradCase::new(
        "attention_scores",
        shapes.clone(),
        Box::new(move |t, v| {
            let (_, alpha) = attention_scores(t, v[0], &fusion_vars(&v[1..], d), &three_node_graph())?;
            Ok(alpha)
        }),
    ));
    let fuse_case = |name: &'static str, config: FusionConfig| {
        GradCase::new(
            name,
            shapes.clone(),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                fuse(t, v[0], &three_node_graph(), &fusion_vars(&v[1..], d), &config)
            }),
        )
    };
    cases.push(fuse_case("fuse_k1", FusionConfig::full(1)));
    cases.push(fuse_case("fuse_k2", FusionConfig::full(2)));
    cases.push(fuse_case(
        "fuse_equal_attention",
        FusionConfig {
            mode: FusionMode::EqualAttention,
            iterations: 1,
        },
    ));
    cases.push(fuse_case(
        "fuse_no_gnn",
        FusionConfig {
            mode: FusionMode::NoGnn,
            iterations: 1,
        },
    ));
    cases
}

/// Worst relative error of `case` over `instances` random draws.
pub fn worst_gradient_error(case: &GradCase, instances: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let inputs = case.draw(seed);
        let err = gradient_error(&inputs, &case.build, seed)?;
        worst = worst.max(err);
    }
    Ok(worst)
}

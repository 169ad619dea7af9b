//! Attention weights and fused states on a small decoder graph, for each
//! fusion mode and a few round counts.
//!
//! cargo run --example fusion_attention

use std::rc::Rc;

use multidecode::diffcore::{ParamStore, Tape, Tensor};
use multidecode::fusion::{attention_scores, build_adjacency, fuse, FusionConfig, FusionMode, FusionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> multidecode::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 4;
    let mut store = ParamStore::new();
    let params = FusionParams::new(&mut store, "fusion", d, &mut rng);
    // decoder 3 shares nothing with the others
    let graph = build_adjacency(&[(0, 1), (0, 2), (1, 2)], 4)?;
    let nb = Rc::new(graph.neighborhoods());
    let h0 = Tensor::new(vec![4, d], (0..4 * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, &store);
    let h = tape.constant(h0.clone());
    let (_, alpha) = attention_scores(&mut tape, h, &vars, &nb)?;
    println!("adjacency {:?}", graph.matrix());
    for v in 0..graph.num_nodes() {
        let weights: Vec<String> = nb
            .neighbors(v)
            .iter()
            .zip(&tape.value(alpha).data()[nb.edge_range(v)])
            .map(|(u, a)| format!("{u}:{a:.3}"))
            .collect();
        println!("receiver {v} attends [{}]", weights.join(" "));
    }

    let configs = [
        ("full K=1", FusionConfig::full(1)),
        ("full K=2", FusionConfig::full(2)),
        ("full K=3", FusionConfig::full(3)),
        (
            "no_gnn",
            FusionConfig {
                mode: FusionMode::NoGnn,
                iterations: 1,
            },
        ),
        (
            "equal_attention",
            FusionConfig {
                mode: FusionMode::EqualAttention,
                iterations: 1,
            },
        ),
    ];
    for (label, config) in configs {
        let out = fuse(&mut tape, h, &nb, &vars, &config)?;
        println!("\n{label}");
        for v in 0..4 {
            let row: Vec<String> = tape.value(out).row(v).iter().map(|x| format!("{x:+.3}")).collect();
            println!("  h{v} = [{}]", row.join(", "));
        }
    }
    Ok(())
}

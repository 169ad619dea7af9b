//! Central finite differences against reverse-mode gradients for every
//! fusion parameter on a three-node graph.
//!
//! cargo run --example gradient_check

use std::rc::Rc;

use multidecode::diffcore::{Neighborhoods, ParamStore, Tape, Tensor};
use multidecode::fusion::{fuse, DecoderGraph, FusionConfig, FusionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn loss(
    store: &ParamStore,
    params: &FusionParams,
    h0: &Tensor,
    nb: &Rc<Neighborhoods>,
) -> multidecode::Result<(Tape, multidecode::diffcore::Var)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, store);
    let h = tape.constant(h0.clone());
    let out = fuse(&mut tape, h, nb, &vars, &FusionConfig::full(2))?;
    let squashed = tape.tanh(out);
    let l = tape.sum(squashed);
    Ok((tape, l))
}

fn main() -> multidecode::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 4;
    let mut store = ParamStore::new();
    let params = FusionParams::new(&mut store, "fusion", d, &mut rng);
    let h0 = Tensor::new(vec![3, d], (0..3 * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mut graph = DecoderGraph::path(3);
    graph.add_directed(0, 2)?;
    let nb = Rc::new(graph.neighborhoods());

    let (tape, l) = loss(&store, &params, &h0, &nb)?;
    tape.backward(l, &mut store)?;

    println!("{:<22} {:>8} {:>12}", "parameter", "entries", "rel. error");
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        let mut numeric = vec![0.0; analytic.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let base = store.value(id).clone();
            let mut eval = |delta: f64| -> multidecode::Result<f64> {
                let mut t = base.clone();
                t.data_mut()[k] += delta;
                store.set_value(id, t)?;
                let (tape, l) = loss(&store, &params, &h0, &nb)?;
                tape.value(l).item()
            };
            *slot = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            store.set_value(id, base)?;
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        println!(
            "{:<22} {:>8} {:>12.2e}",
            store.get(id).name,
            analytic.len(),
            diff / scale
        );
    }
    Ok(())
}

//! Consistency score across fusion variants: no graph network, equal
//! attention, and full fusion with one and two rounds.
//!
//! cargo run --release --example k_ablation

use multidecode::decoder::DecoderMode;
use multidecode::fusion::{FusionConfig, FusionMode};
use multidecode::relcap::{build_splits, evaluate, train_relcap, RelcapConfig};

fn main() -> multidecode::Result<()> {
    let base = RelcapConfig {
        train_scenes: 100,
        test_scenes: 20,
        epochs: 15,
        halve_every: 5,
        ..RelcapConfig::desk()
    };
    let (train, test) = build_splits(&base)?;
    let variants = [
        ("independent", DecoderMode::Independent, FusionConfig::full(2)),
        (
            "no_gnn",
            DecoderMode::Consistent,
            FusionConfig {
                mode: FusionMode::NoGnn,
                iterations: 1,
            },
        ),
        (
            "equal_attention",
            DecoderMode::Consistent,
            FusionConfig {
                mode: FusionMode::EqualAttention,
                iterations: 1,
            },
        ),
        ("K=1", DecoderMode::Consistent, FusionConfig::full(1)),
        ("K=2", DecoderMode::Consistent, FusionConfig::full(2)),
        ("K=3", DecoderMode::Consistent, FusionConfig::full(3)),
    ];
    println!("{:<16} {:>12} {:>10}", "variant", "consistency", "diversity");
    for (label, mode, fusion) in variants {
        let config = RelcapConfig { fusion, ..base.clone() };
        let (model, _) = train_relcap(&train, &config, mode)?;
        let r = evaluate(&model, &test, config.runs, 0)?;
        println!(
            "{label:<16} {:>12.2} {:>10.2}",
            r.consistency.value, r.bbox_diversity.value
        );
    }
    Ok(())
}

//! Independent against consistent caption decoders on toy scenes where
//! several captions mention the same region.
//!
//! cargo run --release --example relcap_consistency

use multidecode::decoder::{DecoderMode, Sampling};
use multidecode::relcap::{build_splits, evaluate, train_relcap, RelcapConfig, Scene};

fn main() -> multidecode::Result<()> {
    let config = RelcapConfig {
        train_scenes: 100,
        test_scenes: 20,
        epochs: 15,
        halve_every: 5,
        ..RelcapConfig::desk()
    };
    let (train, test) = build_splits(&config)?;
    let scene = &test[0];
    println!(
        "{:<12} {:>12} {:>10} {:>8}",
        "mode", "consistency", "diversity", "recall"
    );
    let mut captions = Vec::new();
    for mode in [DecoderMode::Independent, DecoderMode::Consistent] {
        let (model, _) = train_relcap(&train, &config, mode)?;
        let r = evaluate(&model, &test, config.runs, 0)?;
        println!(
            "{:<12} {:>12.2} {:>10.2} {:>8.2}",
            mode.to_string(),
            r.consistency.value,
            r.bbox_diversity.value,
            r.image_recall.value
        );
        let refs: Vec<&Scene> = vec![scene];
        captions.push((mode, model.caption_scenes(&refs, Sampling::Greedy, 0)?.remove(0)));
    }

    println!("\ncaptions for test scene {}", scene.id);
    for (i, pair) in scene.pairs.iter().enumerate().take(8) {
        println!("pair {i} (regions {} -> {})", pair.subject, pair.object);
        println!("  label        {}", scene.captions[i].tokens.join(" "));
        for (mode, caps) in &captions {
            println!("  {:<12} {}", mode.to_string(), caps[i].tokens.join(" "));
        }
    }
    Ok(())
}

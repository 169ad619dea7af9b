//! BLEU-1, caption consistency and box-level diversity on hand-made
//! descriptions.
//!
//! cargo run --example metrics_bleu

use multidecode::metrics::{bbox_diversity, bleu1, consistency_score, image_level_recall, BoxDescriptionGroup};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn main() -> multidecode::Result<()> {
    for (cand, reference) in [
        ("the table", "the big table"),
        ("the big table", "the table"),
        ("white table", "table"),
        ("red car", "red car"),
    ] {
        println!(
            "bleu1({cand:?}, {reference:?}) = {:.4}",
            bleu1(&words(cand), &words(reference))?
        );
    }

    let mut table = BoxDescriptionGroup::new(0);
    table.push(words("white table"));
    table.push(words("table"));
    table.push(words("wooden table"));
    let mut man = BoxDescriptionGroup::new(1);
    man.push(words("man"));
    man.push(words("man"));
    let score = consistency_score(&[vec![table, man]])?;
    println!("\nconsistency over {} boxes = {:.2}", score.n_items, score.value);

    let per_box = vec![
        vec![words("man"), words("man"), words("man")],
        vec![words("table"), words("white table"), words("desk")],
    ];
    let div = bbox_diversity(&per_box, 3)?;
    println!("diversity over {} boxes and 3 runs = {:.2}", div.n_items, div.value);

    let generated = vec![vec![words("man on table"), words("cup near man")]];
    let truth = vec![vec![words("table under man")]];
    println!(
        "image-level recall = {:.2}",
        image_level_recall(&generated, &truth)?.value
    );
    Ok(())
}

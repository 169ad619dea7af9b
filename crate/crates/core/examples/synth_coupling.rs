//! Trains the three decoder modes on the coupled linear sequences and
//! compares test MSE, then forecasts one reference pair step by step.
//!
//! cargo run --release --example synth_coupling            # about 2 minutes
//! cargo run --release --example synth_coupling -- desk    # 8K pairs, about 25 minutes

use multidecode::decoder::DecoderMode;
use multidecode::synth::{build_dataset, eval_mse, train_synth, PairedSequences, SplitSizes, SynthConfig};

fn main() -> multidecode::Result<()> {
    let config = match std::env::args().nth(1).as_deref() {
        Some("desk") => SynthConfig::desk(),
        _ => SynthConfig {
            sizes: SplitSizes {
                train: 1_000,
                val: 200,
                test: 200,
            },
            hidden: 64,
            epochs: 8,
            ..SynthConfig::desk()
        },
    };
    let data = build_dataset(config.sizes, config.seed);
    let pair = PairedSequences::from_coefficients(14.56, 5.18, 10.93, 14.66);

    let mut forecasts = Vec::new();
    println!("{:<12} {:>12} {:>12}", "mode", "mse_y1", "mse_y2");
    for mode in DecoderMode::ALL {
        let (model, _) = train_synth(&data, &config, mode)?;
        let r = eval_mse(&model, &data.test)?;
        println!("{:<12} {:>12.4} {:>12.4}", mode.to_string(), r.mse_y1, r.mse_y2);
        let [_, y2] = model.predict(std::slice::from_ref(&pair))?.remove(0);
        forecasts.push((mode, y2));
    }

    println!("\ny2 forecast for a=14.56 b=5.18 c=10.93 d=14.66");
    print!("{:>3} {:>9}", "x", "truth");
    for (mode, _) in &forecasts {
        print!(" {:>12}", mode.to_string());
    }
    println!();
    for j in 0..pair.y2.len() - 1 {
        print!("{:>3} {:>9.2}", j + 2, pair.y2[j + 1]);
        for (_, f) in &forecasts {
            print!(" {:>12.2}", f[j]);
        }
        println!();
    }
    Ok(())
}

//! Trains the hourglass model and the vanilla Transformer on the synthetic
//! copy task, then checks that greedy decoding reproduces held-out sources.
//!
//!     cargo run --release --example train_copy

use unet_transformer::data::load_spec;
use unet_transformer::eval::{evaluate_ce, exact_match_rate, perplexity};
use unet_transformer::model::{build_model, ModelConfig, Mode, Variant};
use unet_transformer::rng::Rng;
use unet_transformer::train::{train_loop, TrainConfig};

fn main() {
    let seed = 1;
    let data = load_spec(
        "synth:copy:len=10:n=64:vocab=20",
        Mode::Translation,
        0,
        150,
        seed,
    )
    .expect("synthetic data");
    println!("data: {}", data.summary());

    for variant in [Variant::Unet, Variant::Transformer] {
        let mut cfg = ModelConfig::tiny(
            variant,
            32,
            data.src_vocab.size(),
            data.tgt_vocab.size(),
        );
        cfg.heads = 8;
        let mut rng = Rng::new(seed);
        let mut model = build_model::<f32>(cfg, &mut rng).expect("config");
        println!(
            "{}: {} parameters",
            variant.label(),
            model.n_scalars()
        );
        let train_cfg = TrainConfig::smoke(2000, seed);
        let started = std::time::Instant::now();
        let outcome = train_loop(&mut model, &data, &train_cfg, None).expect("training");
        let test_ce = evaluate_ce(&model, &data.test, 32);
        let match_rate = exact_match_rate(&model, &data.test, 1);
        println!(
            "{}: stopped {:?} after {} steps in {:.1}s; best val CE {:.4}, test CE {:.4} (ppl {:.2}), exact copies {:.1}%",
            variant.label(),
            outcome.stopped,
            outcome.steps_run,
            started.elapsed().as_secs_f64(),
            outcome.best_val_ce,
            test_ce,
            perplexity(test_ce),
            100.0 * match_rate
        );
    }
}

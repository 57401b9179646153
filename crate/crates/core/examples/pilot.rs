//! Paired ENDEF / baseline runs on the flipped-bias corpus.
//!
//! cargo run --release -p endef --example pilot -- [seeds] [low] [low_later] [signal]

use std::time::Instant;

use endef::corpus::temporal_split;
use endef::metrics::{evaluate, mean_std};
use endef::synthetic::{generate, BiasSpec};
use endef::trainer::{
    predict_endef, predict_single, train_baseline_from, train_endef, train_entity_only, InputView,
    PredictMode, TrainConfig,
};

fn main() -> endef::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).map(|s| s.parse().unwrap()).unwrap_or(d);
    let seeds = arg(0, 10.0) as u64;
    let (low, low_later, signal) = (arg(1, 0.03), arg(2, 0.33), arg(3, 0.1));

    let cfg = TrainConfig::default();
    let started = Instant::now();
    let (mut gap_f1, mut gap_sp) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let mut spec = BiasSpec::flipped(8, low, low_later, seed);
        spec.content_signal_strength = signal;
        let data = generate(&spec)?;
        let (tr, va) = spec.split_ratios();
        let split = temporal_split(&data.corpus, tr, va, seed)?;
        let run_cfg = TrainConfig { seed, ..cfg.clone() };

        let e = train_endef(&split, &run_cfg)?;
        let b = train_baseline_from(&split, &run_cfg)?;
        let o = train_entity_only(&split, &run_cfg)?;
        let er = evaluate(&predict_endef(&e.model, &split.test, PredictMode::Debiased)?)?;
        let br = evaluate(&predict_single(&b.model, &split.test, InputView::Tokens)?)?;
        let ot = evaluate(&predict_single(&o.model, &split.train, InputView::Entities)?)?;
        let oe = evaluate(&predict_single(&o.model, &split.test, InputView::Entities)?)?;
        println!(
            "seed {seed}: endef macf1 {:.4} spauc {:.4} (ep {}) | base macf1 {:.4} spauc {:.4} (ep {}) | entity-only train acc {:.4} test auc {:.4}",
            er.macf1, er.spauc, e.best_epoch, br.macf1, br.spauc, b.best_epoch, ot.acc, oe.auc
        );
        gap_f1.push(er.macf1 - br.macf1);
        gap_sp.push(er.spauc - br.spauc);
    }
    let (f, fs) = mean_std(&gap_f1);
    let (s, ss) = mean_std(&gap_sp);
    println!("gap macf1 {f:.4} ± {fs:.4}, gap spauc {s:.4} ± {ss:.4}, {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

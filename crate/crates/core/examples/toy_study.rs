//! Runs the default shifted three-mode toy for five seeds: score AURCs of the
//! source model, then CoWA-JMDS against unweighted pseudo-label training.

use cowa_jmds::adaptation::{cowa_adapt, AdaptConfig, Weighting};
use cowa_jmds::data::{generate_toy, ToyShiftConfig};
use cowa_jmds::evaluation::compare_scores;
use cowa_jmds::gmm::GmmConfig;
use cowa_jmds::model::{pretrain_source, MlpModel, TrainConfig, DEFAULT_HIDDEN};

fn main() -> cowa_jmds::Result<()> {
    for seed in 0..5u64 {
        let toy = ToyShiftConfig { seed, ..Default::default() };
        let (src, tgt) = generate_toy::<f64>(&toy)?;
        let truth = tgt.labels().expect("toy targets are labelled");
        let mut model = MlpModel::init(src.dim(), DEFAULT_HIDDEN, src.class_count(), seed)?;
        let log = pretrain_source(&mut model, &src, &TrainConfig { seed, ..Default::default() })?;
        let rows = compare_scores(&model, tgt.features(), truth, &GmmConfig::default())?;
        let aurc: Vec<String> = rows.iter().map(|r| format!("{}={:.4}", r.score, r.aurc())).collect();

        let mut acc = Vec::new();
        for weighting in [Weighting::Jmds, Weighting::Uniform] {
            let cfg = AdaptConfig { weighting, seed, ..Default::default() };
            let out = cowa_adapt(model.clone(), &tgt, &cfg)?;
            acc.push((out.initial().metrics.accuracy.unwrap_or(f64::NAN), out.last().metrics.accuracy.unwrap_or(f64::NAN)));
        }
        println!(
            "seed {seed}: source acc {:.3} | {} | target acc {:.3} -> jmds {:.3}, uniform {:.3}",
            log.last().map_or(f64::NAN, |r| r.accuracy),
            aurc.join(" "),
            acc[0].0,
            acc[0].1,
            acc[1].1
        );
    }
    Ok(())
}

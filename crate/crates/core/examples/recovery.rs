//! Trains the survival model on a synthetic cohort and compares its holdout
//! concordance with the generating hazard.
//!
//! cargo run --release -p injury-forecast --example recovery [seed]

use std::time::Instant;

use injury_forecast::ingest::clean;
use injury_forecast::metrics::c_index_samples;
use injury_forecast::pipeline::{prepare, run_holdout, PipelineConfig};
use injury_forecast::synth::{generate, oracle_window_risk, HazardSpec};

fn main() -> injury_forecast::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let spec = HazardSpec { seed, ..Default::default() };
    let t0 = Instant::now();
    let cohort = generate(30, 300, &spec)?;
    let (records, report) = clean(cohort.records.clone());
    let cfg = PipelineConfig::small_cohort();
    let prepared = prepare(&records, &cohort.injuries, &cfg)?;
    let run = run_holdout(&prepared, &cfg)?;
    let oracle: Vec<f64> = run
        .test
        .iter()
        .map(|s| oracle_window_risk(&spec, &cohort.truth, &s.player_id, s.anchor_date, cfg.cohort.horizon))
        .collect();
    let oracle_c = c_index_samples(&oracle, &run.test)?;

    println!("injuries        {}", cohort.injuries.len());
    println!("rejected rows   {}", report.rejected());
    println!("features        {}", prepared.feature_names().len());
    println!("samples         {} train / {} test", run.n_train, run.test.len());
    println!("test events     {}", run.test.iter().filter(|s| s.event).count());
    println!("epochs          {} (best {:?})", run.fitted.history.len(), run.fitted.best_epoch);
    println!("model c-index   {:.4}", run.concordance.value().unwrap_or(f64::NAN));
    println!("oracle c-index  {:.4}", oracle_c.value().unwrap_or(f64::NAN));
    println!("elapsed         {:.1?}", t0.elapsed());
    Ok(())
}

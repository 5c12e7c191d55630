//! Inference with a trained estimator on many observed tables.

use std::time::Instant;

use amortize::flownet::PosteriorDraws;
use amortize::genmodels::{stream, Dataset, TrialTable};
use amortize::posterior::PosteriorEstimator;
use rayon::prelude::*;

use crate::error::AppResult;

#[derive(Debug, Clone)]
pub struct Inference {
    pub draws: PosteriorDraws,
    pub wall_time_secs: f64,
}

/// Posterior draws for every table. Table `i` samples from the stream
/// `(seed, i)`, so the output does not depend on the thread count.
pub fn infer_many(
    est: &PosteriorEstimator,
    tables: &[TrialTable],
    draws: usize,
    seed: u64,
) -> AppResult<Vec<Inference>> {
    let out: amortize::Result<Vec<Inference>> = tables
        .par_iter()
        .enumerate()
        .map(|(i, table)| {
            let started = Instant::now();
            let data = Dataset::Trials(table.clone());
            let draws = est.sample(&data, draws, &mut stream(seed, i as u64))?;
            Ok(Inference {
                draws,
                wall_time_secs: started.elapsed().as_secs_f64(),
            })
        })
        .collect();
    Ok(out?)
}

/// `name1,name2,...` header then one draw per line.
pub fn draws_csv(names: &[String], draws: &PosteriorDraws) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..draws.n_draws() {
        let row: Vec<String> = draws.draw(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::format::{partial_path, write_meta, DatasetMeta, DatasetRecord, DatasetWriter, FrameStack, GenerationInfo};
use super::{Sampler, SamplerConfig};
use crate::error::{Error, Result};
use crate::fem::Problem;
use crate::simp::{self, SimpConfig};

const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub problems: Vec<Problem>,
    pub compliances: Vec<Vec<f64>>,
    pub info: GenerationInfo,
}

/// Samples problems from one seeded stream and optimizes them, handing each
/// finished record to `sink` in index order.
///
/// The accepted records are the first `n` problems of the stream whose SIMP
/// run succeeds, so the output does not depend on scheduling.
pub fn generate_records(
    sampler_cfg: &SamplerConfig,
    simp_cfg: &SimpConfig,
    n: usize,
    seed: u64,
    mut sink: impl FnMut(usize, DatasetRecord) -> Result<()>,
) -> Result<GenerationReport> {
    simp_cfg.validate()?;
    let sampler = Sampler::new(sampler_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::with_capacity(n);
    let mut compliances = Vec::with_capacity(n);
    let (mut attempts, mut zero, mut ill, mut failures, mut clamped) = (0, 0, 0, 0, 0);
    let mut count_sums = [0usize; 3];

    while problems.len() < n {
        let need = (n - problems.len()).min(CHUNK);
        let mut batch = Vec::with_capacity(need);
        for _ in 0..need {
            let t = sampler.sample(&mut rng)?;
            attempts += t.draws.len();
            zero += t.zero_count_redraws;
            ill += t.ill_posed_rejections;
            for d in &t.draws {
                count_sums[0] += d.fixed_x;
                count_sums[1] += d.fixed_y;
                count_sums[2] += d.loads;
            }
            batch.push(t);
        }
        let runs: Vec<_> = batch
            .par_iter()
            .map(|t| simp::optimize(&t.problem, simp_cfg))
            .collect();
        for (t, run) in batch.into_iter().zip(runs) {
            match run {
                Ok(h) => {
                    clamped += t.f0_clamped as usize;
                    let record = DatasetRecord::new(t.problem.clone(), FrameStack::from_history(&h)?)?;
                    sink(problems.len(), record)?;
                    problems.push(t.problem);
                    compliances.push(h.compliances);
                }
                Err(Error::Iteration { .. }) => failures += 1,
                Err(e) => return Err(e),
            }
        }
    }

    let posed = attempts - zero;
    let info = GenerationInfo {
        seed,
        sampler: sampler_cfg.clone(),
        simp: *simp_cfg,
        attempts,
        zero_count_redraws: zero,
        ill_posed_rejections: ill,
        simp_failures: failures,
        ill_posed_rate: if posed == 0 { 0.0 } else { ill as f64 / posed as f64 },
        mean_counts: count_sums.map(|s| if attempts == 0 { 0.0 } else { s as f64 / attempts as f64 }),
        f0_clamped: clamped,
    };
    Ok(GenerationReport {
        problems,
        compliances,
        info,
    })
}

/// Generates `n` records into `path` plus its sidecar. The binary file only
/// appears under its final name once complete.
pub fn generate_dataset(
    sampler_cfg: &SamplerConfig,
    simp_cfg: &SimpConfig,
    n: usize,
    seed: u64,
    path: &Path,
) -> Result<GenerationReport> {
    let tmp = partial_path(path);
    let file = File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    let mut writer = DatasetWriter::new(BufWriter::new(file), n)?;
    let report = generate_records(sampler_cfg, simp_cfg, n, seed, |_, r| writer.write(r.frames()))?;
    writer.finish()?;
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
    let mut meta = DatasetMeta::new(report.problems.clone());
    meta.compliances = report.compliances.clone();
    meta.generation = Some(report.info.clone());
    write_meta(path, &meta)?;
    Ok(report)
}

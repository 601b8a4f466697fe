//! File formats: trajectory CSV with a JSON sidecar, measure and results
//! CSV exports, and JSON round-tripping of estimators, accumulator
//! checkpoints, and coercivity reports.
//!
//! Floating-point fields in CSV are written with 17 significant digits and
//! JSON numbers use the shortest round-trip form, so every numeric payload
//! reloads bitwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryBatch;
use crate::error::{Error, Result};
use crate::hypothesis::{Estimator, HypothesisSpace};
use crate::kernels::{KernelSpec, Tabulated};
use crate::measure::PairwiseMeasure;
use crate::regression::{DistancePolicy, NormalAccumulator};

/// Format a float with 17 significant digits (enough to reconstruct the
/// exact bits on parse).
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Sidecar metadata accompanying a trajectory CSV: everything needed to
/// re-interpret or regenerate the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub d: usize,
    pub type_sizes: Vec<usize>,
    /// Kernel grid in row-major (observer, neighbour) order.
    pub kernels: Vec<KernelSpec>,
    pub seed: u64,
    pub times: Vec<f64>,
    pub has_velocities: bool,
}

/// Write a batch as CSV (`m,l,t,agent,comp,x[,v]`, one row per coordinate)
/// plus a JSON sidecar with the system description.
pub fn write_trajectories(
    csv_path: &Path,
    meta_path: &Path,
    batch: &TrajectoryBatch,
    meta: &TrajectoryMeta,
) -> Result<()> {
    batch.validate()?;
    if meta.has_velocities != batch.velocities.is_some() {
        return Err(Error::InvalidArgument(
            "metadata and batch disagree about velocity presence".into(),
        ));
    }
    if meta.times != batch.times {
        return Err(Error::InvalidArgument(
            "metadata and batch disagree about observation times".into(),
        ));
    }
    let mut w = csv::Writer::from_path(csv_path)?;
    if batch.velocities.is_some() {
        w.write_record(["m", "l", "t", "agent", "comp", "x", "v"])?;
    } else {
        w.write_record(["m", "l", "t", "agent", "comp", "x"])?;
    }
    let (n, d) = (batch.n_agents, batch.d);
    for m in 0..batch.n_trajectories {
        for l in 0..batch.n_times() {
            let state = batch.state(m, l);
            let vel = batch.velocity(m, l);
            for i in 0..n {
                for c in 0..d {
                    let mut record = vec![
                        m.to_string(),
                        l.to_string(),
                        fmt17(batch.times[l]),
                        i.to_string(),
                        c.to_string(),
                        fmt17(state[i * d + c]),
                    ];
                    if let Some(v) = vel {
                        record.push(fmt17(v[i * d + c]));
                    }
                    w.write_record(&record)?;
                }
            }
        }
    }
    w.flush().map_err(Error::Io)?;
    write_json(meta_path, meta)
}

/// Reload a trajectory CSV written by [`write_trajectories`]. Row order and
/// indices are validated against the sidecar.
pub fn read_trajectories(
    csv_path: &Path,
    meta_path: &Path,
) -> Result<(TrajectoryBatch, TrajectoryMeta)> {
    let meta: TrajectoryMeta = read_json(meta_path)?;
    let n: usize = meta.type_sizes.iter().sum();
    if n == 0 || meta.d == 0 || meta.times.is_empty() {
        return Err(Error::Format(
            "sidecar describes an empty system or time grid".into(),
        ));
    }
    let per_time = n * meta.d;

    let mut r = csv::Reader::from_path(csv_path)?;
    let header = r.headers()?.clone();
    let expected: &[&str] = if meta.has_velocities {
        &["m", "l", "t", "agent", "comp", "x", "v"]
    } else {
        &["m", "l", "t", "agent", "comp", "x"]
    };
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "unexpected trajectory header: {header:?}"
        )));
    }

    let mut states = Vec::new();
    let mut velocities = Vec::new();
    let mut row_index = 0usize;
    for record in r.records() {
        let record = record?;
        let flat = row_index;
        let comp = flat % meta.d;
        let agent = (flat / meta.d) % n;
        let l = (flat / per_time) % meta.times.len();
        let m = flat / (per_time * meta.times.len());
        let got_m: usize = parse_field(&record, 0)?;
        let got_l: usize = parse_field(&record, 1)?;
        let got_t: f64 = parse_field(&record, 2)?;
        let got_agent: usize = parse_field(&record, 3)?;
        let got_comp: usize = parse_field(&record, 4)?;
        if (got_m, got_l, got_agent, got_comp) != (m, l, agent, comp) {
            return Err(Error::Format(format!(
                "row {row_index} out of order: ({got_m},{got_l},{got_agent},{got_comp}) \
                 where ({m},{l},{agent},{comp}) was expected"
            )));
        }
        if got_t != meta.times[l] {
            return Err(Error::Format(format!(
                "row {row_index}: time {got_t} does not match the sidecar grid"
            )));
        }
        states.push(parse_field::<f64>(&record, 5)?);
        if meta.has_velocities {
            velocities.push(parse_field::<f64>(&record, 6)?);
        }
        row_index += 1;
    }
    if row_index == 0 || row_index % (per_time * meta.times.len()) != 0 {
        return Err(Error::Format(format!(
            "{row_index} rows is not a whole number of trajectories"
        )));
    }
    let batch = TrajectoryBatch {
        times: meta.times.clone(),
        d: meta.d,
        n_agents: n,
        n_trajectories: row_index / (per_time * meta.times.len()),
        states,
        velocities: meta.has_velocities.then_some(velocities),
        seed: meta.seed,
    };
    batch.validate()?;
    Ok((batch, meta))
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| Error::Format(format!("missing field {idx}")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("unparseable field {idx}: {raw:?}")))
}

/// Export a pairwise measure as CSV: `k,kp,bin_lo,bin_hi,mass,count`, one
/// row per (ordered pair, bin).
pub fn write_measure_csv(path: &Path, mu: &PairwiseMeasure) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "kp", "bin_lo", "bin_hi", "mass", "count"])?;
    for k in 0..mu.k_count() {
        for kp in 0..mu.k_count() {
            let hist = mu.pair(k, kp);
            for b in 0..mu.n_bins() {
                let (lo, hi) = mu.bin_edges(b);
                w.write_record([
                    k.to_string(),
                    kp.to_string(),
                    fmt17(lo),
                    fmt17(hi),
                    fmt17(hist.masses[b]),
                    hist.counts[b].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(Error::Io)
}

/// One smoothed pair kernel as stored grid samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPair {
    pub k: usize,
    pub kp: usize,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

/// Serialized form of a fitted estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorExport {
    pub lo: f64,
    pub hi: f64,
    pub k_count: usize,
    pub degree: usize,
    pub partitions: usize,
    /// Subinterval breakpoints, shared by every pair.
    pub breakpoints: Vec<f64>,
    /// Stacked coefficients, pair-major in `k * k_count + kp` order.
    pub coeffs: Vec<f64>,
    /// Smoothed grid samples, when smoothing has been attached.
    pub smoothed: Option<Vec<SmoothedPair>>,
}

impl EstimatorExport {
    pub fn from_estimator(est: &Estimator) -> EstimatorExport {
        let space = est.space();
        let breakpoints = (0..=space.partitions())
            .map(|j| space.lo() + j as f64 * space.subinterval_width())
            .collect();
        let smoothed = est.smoothed().map(|tables| {
            tables
                .iter()
                .enumerate()
                .map(|(pair, t)| SmoothedPair {
                    k: pair / space.k_count(),
                    kp: pair % space.k_count(),
                    knots: t.knots().to_vec(),
                    values: t.values().to_vec(),
                })
                .collect()
        });
        EstimatorExport {
            lo: space.lo(),
            hi: space.hi(),
            k_count: space.k_count(),
            degree: space.degree(),
            partitions: space.partitions(),
            breakpoints,
            coeffs: est.coeffs().to_vec(),
            smoothed,
        }
    }

    pub fn into_estimator(self) -> Result<Estimator> {
        let space = HypothesisSpace::new(self.lo, self.hi, self.k_count, self.degree, self.partitions)?;
        let est = Estimator::new(space, self.coeffs)?;
        match self.smoothed {
            None => Ok(est),
            Some(pairs) => {
                let expected = self.k_count * self.k_count;
                if pairs.len() != expected {
                    return Err(Error::ShapeMismatch {
                        expected,
                        got: pairs.len(),
                    });
                }
                let mut tables = Vec::with_capacity(pairs.len());
                for (i, p) in pairs.into_iter().enumerate() {
                    if (p.k, p.kp) != (i / self.k_count, i % self.k_count) {
                        return Err(Error::Format(format!(
                            "smoothed pair {i} labeled ({}, {})",
                            p.k, p.kp
                        )));
                    }
                    tables.push(Tabulated::new(p.knots, p.values)?);
                }
                est.with_smoothed_tables(tables)
            }
        }
    }
}

pub fn write_estimator_json(path: &Path, est: &Estimator) -> Result<()> {
    write_json(path, &EstimatorExport::from_estimator(est))
}

pub fn read_estimator_json(path: &Path) -> Result<Estimator> {
    read_json::<EstimatorExport>(path)?.into_estimator()
}

/// Serialized accumulator state: raw sums and the trajectory count, enough
/// to resume or merge a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalCheckpoint {
    pub lo: f64,
    pub hi: f64,
    pub k_count: usize,
    pub degree: usize,
    pub partitions: usize,
    pub policy: DistancePolicy,
    pub m_count: usize,
    /// Row-major `dim x dim` raw second-moment totals.
    pub a_total: Vec<f64>,
    pub b_total: Vec<f64>,
}

pub fn write_normal_checkpoint(path: &Path, acc: &NormalAccumulator) -> Result<()> {
    let space = acc.space();
    let (a, b, m_count) = acc.raw_parts();
    let ck = NormalCheckpoint {
        lo: space.lo(),
        hi: space.hi(),
        k_count: space.k_count(),
        degree: space.degree(),
        partitions: space.partitions(),
        policy: acc.policy(),
        m_count,
        a_total: a.iter().copied().collect(),
        b_total: b.to_vec(),
    };
    write_json(path, &ck)
}

pub fn read_normal_checkpoint(path: &Path) -> Result<NormalAccumulator> {
    let ck: NormalCheckpoint = read_json(path)?;
    let space = HypothesisSpace::new(ck.lo, ck.hi, ck.k_count, ck.degree, ck.partitions)?;
    let dim = space.dim();
    if ck.a_total.len() != dim * dim {
        return Err(Error::ShapeMismatch {
            expected: dim * dim,
            got: ck.a_total.len(),
        });
    }
    let a = Array2::from_shape_vec((dim, dim), ck.a_total)
        .map_err(|e| Error::Format(e.to_string()))?;
    let b = Array1::from(ck.b_total);
    NormalAccumulator::from_raw_parts(space, ck.policy, a, b, ck.m_count)
}

/// One line of a coercivity report: the estimate for one partition count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityRecord {
    pub partitions: usize,
    pub lambda_min: f64,
    /// Smallest eigenvalue per observer-type block; null for types whose
    /// functions were all pruned.
    pub block_lambda_min: Vec<Option<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Retained functions per ordered pair, lexicographic.
    pub kept: Vec<usize>,
    pub gram_residual: f64,
    pub pruned: bool,
}

impl CoercivityRecord {
    pub fn new(partitions: usize, est: &crate::coercivity::CoercivityEstimate) -> Self {
        CoercivityRecord {
            partitions,
            lambda_min: est.lambda_min,
            block_lambda_min: est.block_lambda_min.clone(),
            eigenvalues: est.eigenvalues.clone(),
            kept: est.kept.clone(),
            gram_residual: est.gram_residual,
            pruned: est.pruned,
        }
    }
}

pub fn write_coercivity_report(path: &Path, records: &[CoercivityRecord]) -> Result<()> {
    write_json(path, &records)
}

pub fn read_coercivity_report(path: &Path) -> Result<Vec<CoercivityRecord>> {
    read_json(path)
}

/// One observation in a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub m: usize,
    pub trial: usize,
    pub metric: String,
    /// Time window or other qualifier; empty when not applicable.
    pub window: String,
    pub value: f64,
}

/// Write results as CSV with header `experiment,M,trial,metric,window,value`.
pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["experiment", "M", "trial", "metric", "window", "value"])?;
    for row in rows {
        w.write_record([
            row.experiment.as_str(),
            &row.m.to_string(),
            &row.trial.to_string(),
            row.metric.as_str(),
            row.window.as_str(),
            &fmt17(row.value),
        ])?;
    }
    w.flush().map_err(Error::Io)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let expected = ["experiment", "M", "trial", "metric", "window", "value"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!("unexpected results header: {header:?}")));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        rows.push(ResultRow {
            experiment: record
                .get(0)
                .ok_or_else(|| Error::Format("missing experiment".into()))?
                .to_string(),
            m: parse_field(&record, 1)?,
            trial: parse_field(&record, 2)?,
            metric: record
                .get(3)
                .ok_or_else(|| Error::Format("missing metric".into()))?
                .to_string(),
            window: record
                .get(4)
                .ok_or_else(|| Error::Format("missing window".into()))?
                .to_string(),
            value: parse_field(&record, 5)?,
        });
    }
    Ok(rows)
}

/// Aggregated point of an error-vs-M curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: usize,
    pub mean: f64,
    pub std: f64,
}

/// Write figure data as CSV with header `M,mean,std`.
pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["M", "mean", "std"])?;
    for p in points {
        w.write_record([p.m.to_string(), fmt17(p.mean), fmt17(p.std)])?;
    }
    w.flush().map_err(Error::Io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{equispaced_times, simulate_batch, SystemSpec, VelocityMode};
    use crate::integrate::OdeOptions;
    use crate::kernels::InitialSampler;
    use crate::measure::build_measure;
    use crate::regression::DistancePolicy;
    use crate::rng::Stream;

    fn sample_batch(with_velocities: bool) -> (SystemSpec, TrajectoryBatch) {
        let spec = SystemSpec::new(
            2,
            vec![2, 1],
            vec![
                KernelSpec::Opinion.build().unwrap(),
                KernelSpec::Zero.build().unwrap(),
                KernelSpec::Zero.build().unwrap(),
                KernelSpec::Opinion.build().unwrap(),
            ],
        )
        .unwrap();
        let samplers = vec![
            InitialSampler::UniformInterval { lo: 0.0, hi: 1.0 },
            InitialSampler::UniformDisk { radius: 0.5 },
        ];
        let mode = if with_velocities {
            VelocityMode::Exact
        } else {
            VelocityMode::PositionsOnly
        };
        let batch = simulate_batch(
            &spec,
            &samplers,
            3,
            0,
            &equispaced_times(0.0, 0.4, 5),
            1234,
            Stream::Test,
            mode,
            &OdeOptions::default(),
        )
        .unwrap();
        (spec, batch)
    }

    fn meta_for(batch: &TrajectoryBatch) -> TrajectoryMeta {
        TrajectoryMeta {
            d: batch.d,
            type_sizes: vec![2, 1],
            kernels: vec![
                KernelSpec::Opinion,
                KernelSpec::Zero,
                KernelSpec::Zero,
                KernelSpec::Opinion,
            ],
            seed: batch.seed,
            times: batch.times.clone(),
            has_velocities: batch.velocities.is_some(),
        }
    }

    #[test]
    fn trajectory_csv_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for with_velocities in [true, false] {
            let (_, batch) = sample_batch(with_velocities);
            let meta = meta_for(&batch);
            let csv_path = dir.path().join("traj.csv");
            let meta_path = dir.path().join("traj.json");
            write_trajectories(&csv_path, &meta_path, &batch, &meta).unwrap();
            let (reloaded, meta2) = read_trajectories(&csv_path, &meta_path).unwrap();
            assert_eq!(meta2, meta);
            assert_eq!(reloaded.states, batch.states);
            assert_eq!(reloaded.velocities, batch.velocities);
            assert_eq!(reloaded.times, batch.times);
            assert_eq!(reloaded.n_trajectories, batch.n_trajectories);
            assert_eq!(reloaded.seed, batch.seed);
        }
    }

    #[test]
    fn trajectory_reader_rejects_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let (_, batch) = sample_batch(true);
        let meta = meta_for(&batch);
        let csv_path = dir.path().join("traj.csv");
        let meta_path = dir.path().join("traj.json");
        write_trajectories(&csv_path, &meta_path, &batch, &meta).unwrap();

        // Sidecar that disagrees about velocity presence: the header check
        // must fail.
        let mut wrong = meta.clone();
        wrong.has_velocities = false;
        let wrong_path = dir.path().join("wrong.json");
        write_json(&wrong_path, &wrong).unwrap();
        assert!(matches!(
            read_trajectories(&csv_path, &wrong_path),
            Err(Error::Format(_))
        ));

        // Truncated CSV: not a whole number of trajectories.
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let truncated: Vec<&str> = text.lines().take(8).collect();
        let bad_csv = dir.path().join("bad.csv");
        std::fs::write(&bad_csv, truncated.join("\n")).unwrap();
        assert!(matches!(
            read_trajectories(&bad_csv, &meta_path),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn metadata_mismatches_are_rejected_at_write_time() {
        let dir = tempfile::tempdir().unwrap();
        let (_, batch) = sample_batch(true);
        let mut meta = meta_for(&batch);
        meta.has_velocities = false;
        assert!(write_trajectories(
            &dir.path().join("a.csv"),
            &dir.path().join("a.json"),
            &batch,
            &meta
        )
        .is_err());
        let mut meta = meta_for(&batch);
        meta.times[0] += 0.25;
        assert!(write_trajectories(
            &dir.path().join("b.csv"),
            &dir.path().join("b.json"),
            &batch,
            &meta
        )
        .is_err());
    }

    #[test]
    fn measure_export_has_one_row_per_pair_and_bin() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, batch) = sample_batch(false);
        let mu = build_measure(&spec, &batch, 8, Some(2.0)).unwrap();
        let path = dir.path().join("measure.csv");
        write_measure_csv(&path, &mu).unwrap();

        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            r.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["k", "kp", "bin_lo", "bin_hi", "mass", "count"]
        );
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 4 * 8);
        // Masses of each nonempty pair sum to one.
        for (k, kp) in [(0usize, 0usize), (0, 1), (1, 0)] {
            let total: f64 = rows
                .iter()
                .filter(|row| {
                    row.get(0).unwrap() == k.to_string() && row.get(1).unwrap() == kp.to_string()
                })
                .map(|row| row.get(4).unwrap().parse::<f64>().unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "pair ({k},{kp}) mass {total}");
        }
    }

    #[test]
    fn estimator_json_round_trips_with_and_without_smoothing() {
        let dir = tempfile::tempdir().unwrap();
        let space = HypothesisSpace::new(0.0, 2.0, 2, 1, 3).unwrap();
        let coeffs: Vec<f64> = (0..space.dim()).map(|i| 0.1 * i as f64 - 0.7).collect();
        let raw = Estimator::new(space.clone(), coeffs.clone()).unwrap();
        let path = dir.path().join("est.json");
        write_estimator_json(&path, &raw).unwrap();
        let back = read_estimator_json(&path).unwrap();
        assert_eq!(back, raw);

        let smoothed = raw.clone().with_default_smoothing().unwrap();
        write_estimator_json(&path, &smoothed).unwrap();
        let back = read_estimator_json(&path).unwrap();
        assert_eq!(back, smoothed);

        let export = EstimatorExport::from_estimator(&smoothed);
        assert_eq!(export.breakpoints.len(), 4);
        assert_eq!(export.breakpoints[0], 0.0);
        assert_eq!(export.breakpoints[3], 2.0);
        assert_eq!(export.smoothed.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn normal_checkpoint_round_trips_raw_totals_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, batch) = sample_batch(true);
        let space = HypothesisSpace::new(0.0, 2.0, 2, 0, 4).unwrap();
        let mut acc = NormalAccumulator::new(space, DistancePolicy::ClampToInterval);
        acc.add_batch(&spec, &batch).unwrap();
        let path = dir.path().join("checkpoint.json");
        write_normal_checkpoint(&path, &acc).unwrap();
        let back = read_normal_checkpoint(&path).unwrap();

        let (a0, b0, m0) = acc.raw_parts();
        let (a1, b1, m1) = back.raw_parts();
        assert_eq!(m0, m1);
        assert_eq!(a0, a1);
        assert_eq!(b0, b1);
        assert_eq!(back.policy(), DistancePolicy::ClampToInterval);
        // Resuming from the checkpoint behaves like the original.
        let ns0 = acc.finalize().unwrap();
        let ns1 = back.finalize().unwrap();
        assert_eq!(ns0.a(), ns1.a());
        assert_eq!(ns0.b(), ns1.b());
    }

    #[test]
    fn coercivity_report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            CoercivityRecord {
                partitions: 8,
                lambda_min: 0.0883,
                block_lambda_min: vec![Some(0.0883), None],
                eigenvalues: vec![0.0883, 0.3, 1.1],
                kept: vec![3, 0, 0, 0],
                gram_residual: 1e-15,
                pruned: true,
            },
            CoercivityRecord {
                partitions: 16,
                lambda_min: 0.0857,
                block_lambda_min: vec![Some(0.0857), Some(0.2)],
                eigenvalues: vec![0.0857, 0.4],
                kept: vec![2, 0, 0, 0],
                gram_residual: 2e-15,
                pruned: false,
            },
        ];
        let path = dir.path().join("coercivity.json");
        write_coercivity_report(&path, &records).unwrap();
        assert_eq!(read_coercivity_report(&path).unwrap(), records);
    }

    #[test]
    fn results_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ResultRow {
                experiment: "opinion".into(),
                m: 1024,
                trial: 0,
                metric: "kernel_error".into(),
                window: String::new(),
                value: 0.1 + 0.2,
            },
            ResultRow {
                experiment: "opinion".into(),
                m: 1024,
                trial: 1,
                metric: "trajectory_error".into(),
                window: "future".into(),
                value: 3.5e-4,
            },
        ];
        let path = dir.path().join("results.csv");
        write_results_csv(&path, &rows).unwrap();
        assert_eq!(read_results_csv(&path).unwrap(), rows);

        let points = vec![CurvePoint {
            m: 16,
            mean: 0.15,
            std: 0.01,
        }];
        let curve = dir.path().join("curve.csv");
        write_curve_csv(&curve, &points).unwrap();
        let text = std::fs::read_to_string(&curve).unwrap();
        assert!(text.starts_with("M,mean,std\n"));
        assert!(text.contains("16,"));
    }
}

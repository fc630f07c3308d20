//! Convergence diagnostics, region summary statistics and posterior
//! occupancy expectation.
//!
//! The diagnostics follow Gelman et al.: `W` is the mean within-sequence
//! variance, `B` the between-sequence variance, `var⁺ = (n-1)/n·W + B/n`,
//! `R̂ = sqrt(var⁺/W)` and `ρ̂_t = 1 - V_t/(2·var⁺)`. `V_t` is the mean
//! squared lag-`t` difference of each sequence, averaged over sequences.
//!
//! The effective sample size sums `ρ̂_t` from `t = 0`, not the more common
//! `t = 1`, up to (excluding) the first `t` with `ρ̂_t ≤ 0`.

use std::io::Write;
use std::sync::Arc;

use num_traits::Float;
use rustfft::num_complex::Complex;
use rustfft::{FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::abm::{state_after, AbmSpec, BoundaryConditions, Trajectory};
use crate::error::{Error, Result};
use crate::sampler::FinalStatistics;

/// One summary statistic traced over one chain segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSequence<T> {
    pub chain: usize,
    pub values: Vec<T>,
}

impl<T> AsRef<[T]> for SampleSequence<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

/// Splits every chain trace into first and last halves, all truncated to the
/// length of the shortest half so the sequences have equal length.
pub fn split_halves<T: Clone>(traces: &[Vec<T>]) -> Vec<SampleSequence<T>> {
    let half = traces.iter().map(|t| t.len() / 2).min().unwrap_or(0);
    let mut out = Vec::with_capacity(2 * traces.len());
    for (chain, trace) in traces.iter().enumerate() {
        let mid = trace.len() / 2;
        out.push(SampleSequence { chain, values: trace[mid - half..mid].to_vec() });
        out.push(SampleSequence { chain, values: trace[trace.len() - half..].to_vec() });
    }
    out
}

/// Variance components shared by every diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<T> {
    pub m: usize,
    pub n: usize,
    pub within: T,
    pub between: T,
    pub var_plus: T,
}

fn cast<T: Float>(v: usize) -> T {
    T::from(v).expect("count representable in the scalar type")
}

fn shape<T, S: AsRef<[T]>>(sequences: &[S]) -> Result<(usize, usize)> {
    let m = sequences.len();
    if m < 2 {
        return Err(Error::UndefinedDiagnostic(format!("need at least 2 sequences, got {m}")));
    }
    let n = sequences[0].as_ref().len();
    if n < 2 {
        return Err(Error::UndefinedDiagnostic(format!("need at least 2 samples per sequence, got {n}")));
    }
    if let Some(s) = sequences.iter().find(|s| s.as_ref().len() != n) {
        return Err(Error::UndefinedDiagnostic(format!(
            "sequences must have equal length ({n} vs {})",
            s.as_ref().len()
        )));
    }
    Ok((m, n))
}

/// Within, between and pooled variance estimates.
pub fn moments<T: Float, S: AsRef<[T]>>(sequences: &[S]) -> Result<Moments<T>> {
    let (m, n) = shape(sequences)?;
    let (mf, nf) = (cast::<T>(m), cast::<T>(n));
    let means: Vec<T> = sequences
        .iter()
        .map(|s| s.as_ref().iter().fold(T::zero(), |a, &x| a + x) / nf)
        .collect();
    let grand = means.iter().fold(T::zero(), |a, &x| a + x) / mf;
    let within = sequences
        .iter()
        .zip(&means)
        .map(|(s, &mu)| s.as_ref().iter().fold(T::zero(), |a, &x| a + (x - mu) * (x - mu)) / (nf - T::one()))
        .fold(T::zero(), |a, x| a + x)
        / mf;
    let between = nf / (mf - T::one()) * means.iter().fold(T::zero(), |a, &mu| a + (mu - grand) * (mu - grand));
    let var_plus = (nf - T::one()) / nf * within + between / nf;
    Ok(Moments { m, n, within, between, var_plus })
}

/// Potential scale reduction factor `R̂`. Undefined when every sequence is
/// constant.
pub fn gelman_rubin<T: Float, S: AsRef<[T]>>(sequences: &[S]) -> Result<T> {
    let mo = moments(sequences)?;
    if mo.within <= T::zero() {
        return Err(Error::UndefinedDiagnostic("within-sequence variance is zero".into()));
    }
    Ok((mo.var_plus / mo.within).sqrt())
}

fn rho<T: Float>(v_t: T, var_plus: T) -> Result<T> {
    if var_plus <= T::zero() {
        return Err(Error::UndefinedDiagnostic("pooled variance is zero".into()));
    }
    Ok(T::one() - v_t / (var_plus + var_plus))
}

/// `ρ̂_t` for a single lag, evaluated directly in `O(m·n)`.
pub fn autocorrelation<T: Float, S: AsRef<[T]>>(sequences: &[S], lag: usize) -> Result<T> {
    let mo = moments(sequences)?;
    if lag >= mo.n {
        return Err(Error::UndefinedDiagnostic(format!("lag {lag} must be below sequence length {}", mo.n)));
    }
    let count = cast::<T>(mo.n - lag);
    let v = sequences
        .iter()
        .map(|s| {
            let x = s.as_ref();
            x.iter().zip(&x[lag..]).fold(T::zero(), |a, (&p, &q)| a + (p - q) * (p - q)) / count
        })
        .fold(T::zero(), |a, x| a + x)
        / cast(mo.m);
    rho(v, mo.var_plus)
}

/// Mean squared lag-`t` differences of one sequence for `t = 0..n`, via the
/// lagged products of the centred sequence computed with a zero-padded FFT.
fn lag_differences<T: Float + FftNum>(x: &[T], planner: &mut FftPlanner<T>) -> Vec<T> {
    let n = x.len();
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / cast(n);
    let size = (2 * n).next_power_of_two();
    let forward: Arc<dyn rustfft::Fft<T>> = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<T>> = (0..size)
        .map(|i| Complex::new(if i < n { x[i] - mean } else { T::zero() }, T::zero()))
        .collect();
    forward.process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), T::zero());
    }
    inverse.process(&mut buf);
    let scale = cast::<T>(size);
    let sq: Vec<T> = x.iter().map(|&v| (v - mean) * (v - mean)).collect();
    // head[t] = Σ_{i < n-t} y_i², tail[t] = Σ_{i ≥ t} y_i²
    let mut tail = vec![T::zero(); n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + sq[i];
    }
    let mut head = vec![T::zero(); n + 1];
    for i in 0..n {
        head[i + 1] = head[i] + sq[i];
    }
    (0..n)
        .map(|t| {
            let cross = buf[t].re / scale;
            let v = (head[n - t] + tail[t] - cross - cross) / cast(n - t);
            if t == 0 {
                T::zero()
            } else {
                v.max(T::zero())
            }
        })
        .collect()
}

/// `ρ̂_t` for every lag `0..=max_lag` (clipped to `n - 1`).
pub fn autocorrelation_curve<T: Float + FftNum, S: AsRef<[T]>>(sequences: &[S], max_lag: usize) -> Result<Vec<T>> {
    let mo = moments(sequences)?;
    let lags = max_lag.min(mo.n - 1) + 1;
    let mut planner = FftPlanner::new();
    let mut v = vec![T::zero(); lags];
    for s in sequences {
        for (acc, d) in v.iter_mut().zip(lag_differences(s.as_ref(), &mut planner)) {
            *acc = *acc + d;
        }
    }
    let m = cast::<T>(mo.m);
    v.into_iter().map(|x| rho(x / m, mo.var_plus)).collect()
}

/// Truncated sum of the autocorrelation curve: from `t = 0` up to but
/// excluding the first non-positive value.
pub fn truncated_sum<T: Float>(curve: &[T]) -> T {
    curve.iter().take_while(|&&r| r > T::zero()).fold(T::zero(), |a, &r| a + r)
}

/// Effective number of samples `m·n / (1 + 2·Σ ρ̂_t)` over all sequences.
pub fn effective_samples<T: Float + FftNum, S: AsRef<[T]>>(sequences: &[S]) -> Result<T> {
    let (m, n) = shape(sequences)?;
    let curve = autocorrelation_curve(sequences, n - 1)?;
    let total = cast::<T>(m * n);
    Ok(total / (T::one() + cast::<T>(2) * truncated_sum(&curve)))
}

/// Total agent count per statistic in an occupancy vector.
pub fn summary_from_occupancy(occupancy: &[i64], stats: &FinalStatistics) -> Vec<f64> {
    stats
        .weights
        .iter()
        .map(|w| w.iter().map(|&(phi, c)| c * occupancy[phi] as f64).sum())
        .collect()
}

/// Region statistics measured on the occupancy after the last timestep.
pub fn summary_statistics(
    spec: &AbmSpec,
    traj: &Trajectory,
    bc: &BoundaryConditions,
    stats: &FinalStatistics,
) -> Vec<f64> {
    let occ = state_after(spec, traj, bc, traj.num_timesteps());
    summary_from_occupancy(&occ, stats)
}

/// Axis-aligned block of grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y0 + self.height).flat_map(move |y| (self.x0..self.x0 + self.width).map(move |x| (x, y)))
    }
}

/// Regions whose agent totals form the summary statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegionSet {
    pub grid_width: usize,
    pub grid_height: usize,
    pub regions: Vec<Region>,
}

impl RegionSet {
    pub fn new(grid_width: usize, grid_height: usize, regions: Vec<Region>) -> Result<Self> {
        for r in &regions {
            if r.width == 0 || r.height == 0 || r.x0 + r.width > grid_width || r.y0 + r.height > grid_height {
                return Err(Error::Config(format!("region {} lies outside the {grid_width}x{grid_height} grid", r.name)));
            }
        }
        Ok(RegionSet { grid_width, grid_height, regions })
    }

    /// Nested squares anchored at the origin corner with sides of 1, 1/2,
    /// 1/4, ... of the grid (at least one cell).
    pub fn nested_corner(grid_width: usize, grid_height: usize, levels: usize) -> Self {
        let regions = (0..levels)
            .map(|k| Region {
                name: format!("stat{}", k + 1),
                x0: 0,
                y0: 0,
                width: (grid_width >> k).max(1),
                height: (grid_height >> k).max(1),
            })
            .collect();
        RegionSet { grid_width, grid_height, regions }
    }

    /// Statistic weights given the agent states living in each cell.
    pub fn statistics<F>(&self, states_in_cell: F) -> FinalStatistics
    where
        F: Fn(usize, usize) -> Vec<usize>,
    {
        FinalStatistics {
            names: self.regions.iter().map(|r| r.name.clone()).collect(),
            weights: self
                .regions
                .iter()
                .map(|r| r.cells().flat_map(|(x, y)| states_in_cell(x, y)).map(|s| (s, 1.0)).collect())
                .collect(),
        }
    }
}

/// Mean final-timestep count per agent state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyExpectation {
    pub mean: Vec<f64>,
    pub samples: u64,
}

impl OccupancyExpectation {
    /// Arithmetic mean of a set of final occupancies.
    pub fn from_samples<'a, I>(num_states: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [i64]>,
    {
        let mut sum = vec![0.0; num_states];
        let mut count = 0u64;
        for occ in samples {
            for (s, &v) in sum.iter_mut().zip(occ) {
                *s += v as f64;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::UndefinedDiagnostic("occupancy expectation needs at least one sample".into()));
        }
        Ok(OccupancyExpectation { mean: sum.into_iter().map(|s| s / count as f64).collect(), samples: count })
    }

    /// Pools per-chain means, weighting each by its sample count.
    pub fn combine(parts: &[OccupancyExpectation]) -> Result<Self> {
        let samples: u64 = parts.iter().map(|p| p.samples).sum();
        let Some(first) = parts.first().filter(|_| samples > 0) else {
            return Err(Error::UndefinedDiagnostic("occupancy expectation needs at least one sample".into()));
        };
        let mut mean = vec![0.0; first.mean.len()];
        for p in parts {
            for (m, v) in mean.iter_mut().zip(&p.mean) {
                *m += v * p.samples as f64 / samples as f64;
            }
        }
        Ok(OccupancyExpectation { mean, samples })
    }

    /// One row per state: the caller's label columns followed by the mean.
    pub fn write_csv<W, F>(&self, out: W, label_header: &[&str], label: F) -> Result<()>
    where
        W: Write,
        F: Fn(usize) -> Vec<String>,
    {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = label_header.to_vec();
        header.push("mean");
        w.write_record(&header)?;
        for (s, m) in self.mean.iter().enumerate() {
            let mut row = label(s);
            row.push(m.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Diagnostics for one summary statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticDiagnostics {
    pub name: String,
    /// `None` when undefined (constant sequences).
    pub r_hat: Option<f64>,
    pub effective_samples: Option<f64>,
    pub effective_samples_per_sequence: Option<f64>,
    /// `(lag, ρ̂)` on the configured lag grid.
    pub autocorrelation: Vec<(usize, f64)>,
}

/// Diagnostics for every statistic of a multi-chain run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub sequences: usize,
    pub sequence_length: usize,
    pub statistics: Vec<StatisticDiagnostics>,
}

/// Lags `0, 1, 2, 4, ...` below `n`.
pub fn default_lags(n: usize) -> Vec<usize> {
    std::iter::once(0).chain(std::iter::successors(Some(1usize), |l| l.checked_mul(2))).take_while(|&l| l < n).collect()
}

/// Splits each chain's trace in halves and evaluates every diagnostic.
/// `traces[c][s]` is statistic `s` of chain `c`.
pub fn diagnose(names: &[String], traces: &[Vec<Vec<f64>>], lags: Option<&[usize]>) -> DiagnosticsReport {
    let mut statistics = Vec::with_capacity(names.len());
    let mut shape = (0, 0);
    for (s, name) in names.iter().enumerate() {
        let per_chain: Vec<Vec<f64>> = traces.iter().map(|c| c[s].clone()).collect();
        let seqs = split_halves(&per_chain);
        let n = seqs.first().map_or(0, |q| q.values.len());
        shape = (seqs.len(), n);
        let grid = lags.map_or_else(|| default_lags(n), <[usize]>::to_vec);
        let max_lag = grid.iter().copied().max().unwrap_or(0);
        let curve = autocorrelation_curve(&seqs, max_lag).unwrap_or_default();
        let ess = effective_samples(&seqs).ok().filter(|v: &f64| v.is_finite());
        statistics.push(StatisticDiagnostics {
            name: name.clone(),
            r_hat: gelman_rubin(&seqs).ok(),
            effective_samples: ess,
            effective_samples_per_sequence: ess.map(|v| v / seqs.len() as f64),
            autocorrelation: grid.iter().filter_map(|&l| curve.get(l).map(|&r| (l, r))).collect(),
        });
    }
    DiagnosticsReport { sequences: shape.0, sequence_length: shape.1, statistics }
}

impl DiagnosticsReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Autocorrelation curves as `statistic,lag,rho`.
    pub fn write_autocorrelation_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["statistic", "lag", "rho"])?;
        for s in &self.statistics {
            for (lag, r) in &s.autocorrelation {
                w.write_record([s.name.clone(), lag.to_string(), r.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> Vec<Vec<f64>> {
        vec![vec![0.0, 2.0], vec![1.0, 3.0]]
    }

    #[test]
    fn fixture_moments() {
        let mo = moments(&fixture()).unwrap();
        assert_eq!((mo.within, mo.between, mo.var_plus), (2.0, 1.0, 1.5));
        assert_eq!(gelman_rubin(&fixture()).unwrap(), 0.75f64.sqrt());
    }

    #[test]
    fn fixture_autocorrelation_and_ess() {
        assert_eq!(autocorrelation(&fixture(), 0).unwrap(), 1.0);
        assert!((autocorrelation(&fixture(), 1).unwrap() + 1.0 / 3.0).abs() < 1e-15);
        let curve = autocorrelation_curve(&fixture(), 1).unwrap();
        assert!((curve[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!((effective_samples(&fixture()).unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn works_in_single_precision() {
        let seqs: Vec<Vec<f32>> = vec![vec![0.0, 2.0], vec![1.0, 3.0]];
        assert!((gelman_rubin(&seqs).unwrap() - 0.75f32.sqrt()).abs() < 1e-6);
        assert!((effective_samples(&seqs).unwrap() - 4.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn fft_curve_matches_direct_lags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seqs: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let mut x = 0.0;
                (0..257)
                    .map(|_| {
                        x = 0.8 * x + rng.random::<f64>();
                        x
                    })
                    .collect()
            })
            .collect();
        let curve = autocorrelation_curve(&seqs, 256).unwrap();
        for t in 0..257 {
            let d = autocorrelation(&seqs, t).unwrap();
            assert!((curve[t] - d).abs() < 1e-12, "lag {t}: {} vs {d}", curve[t]);
        }
    }

    #[test]
    fn alternating_sequences_stop_after_lag_zero() {
        let seqs = vec![vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0, 0.0]];
        assert!(autocorrelation(&seqs, 1).unwrap() <= 0.0);
        assert!((effective_samples(&seqs).unwrap() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iid_sequences_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seqs: Vec<Vec<f64>> = (0..4).map(|_| (0..10_000).map(|_| rng.random::<f64>()).collect()).collect();
        assert!((gelman_rubin(&seqs).unwrap() - 1.0).abs() < 0.05);
        // sd of ρ̂_1 for iid data is about 1/sqrt(mn)
        assert!(autocorrelation(&seqs, 1).unwrap().abs() < 3.0 / 200.0);
    }

    #[test]
    fn r_hat_is_shift_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs: Vec<Vec<f64>> = (0..3).map(|_| (0..50).map(|_| rng.random::<f64>()).collect()).collect();
        let r = gelman_rubin(&seqs).unwrap();
        let shifted: Vec<Vec<f64>> = seqs.iter().map(|s| s.iter().map(|x| 3.0 * x + 7.0).collect()).collect();
        assert!((gelman_rubin(&shifted).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_reported() {
        assert!(gelman_rubin(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
        assert!(gelman_rubin(&[vec![1.0, 2.0]]).is_err());
        assert!(gelman_rubin(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(autocorrelation(&fixture(), 2).is_err());
    }

    #[test]
    fn halves_truncate_to_common_length() {
        let seqs = split_halves(&[vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9]]);
        let values: Vec<Vec<i32>> = seqs.iter().map(|s| s.values.clone()).collect();
        assert_eq!(values, vec![vec![1, 2], vec![4, 5], vec![6, 7], vec![8, 9]]);
        assert_eq!(seqs[2].chain, 1);
    }

    #[test]
    fn nested_regions_shrink() {
        let rs = RegionSet::nested_corner(16, 16, 4);
        let sides: Vec<usize> = rs.regions.iter().map(|r| r.width).collect();
        assert_eq!(sides, vec![16, 8, 4, 2]);
        // one state per cell, one agent everywhere
        let stats = rs.statistics(|x, y| vec![y * 16 + x]);
        let v = summary_from_occupancy(&[1; 256], &stats);
        assert_eq!(v, vec![256.0, 64.0, 16.0, 4.0]);
        assert!(RegionSet::new(4, 4, vec![Region { name: "r".into(), x0: 3, y0: 0, width: 2, height: 1 }]).is_err());
    }

    #[test]
    fn occupancy_expectation_averages() {
        let a = [0i64, 1];
        let b = [2i64, 1];
        let e = OccupancyExpectation::from_samples(2, [&a[..], &b[..]]).unwrap();
        assert_eq!(e.mean, vec![1.0, 1.0]);
        let single = OccupancyExpectation::from_samples(2, [&b[..]]).unwrap();
        assert_eq!(single.mean, vec![2.0, 1.0]);
        let pooled = OccupancyExpectation::combine(&[e, single]).unwrap();
        assert!((pooled.mean[0] - 4.0 / 3.0).abs() < 1e-15);
        let mut buf = Vec::new();
        pooled.write_csv(&mut buf, &["state"], |s| vec![s.to_string()]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("state,mean\n0,1.3333"));
    }

    #[test]
    fn report_has_lag_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traces: Vec<Vec<Vec<f64>>> =
            (0..2).map(|_| vec![(0..100).map(|_| rng.random::<f64>()).collect()]).collect();
        let r = diagnose(&["s".into()], &traces, None);
        assert_eq!((r.sequences, r.sequence_length), (4, 50));
        let lags: Vec<usize> = r.statistics[0].autocorrelation.iter().map(|p| p.0).collect();
        assert_eq!(lags, vec![0, 1, 2, 4, 8, 16, 32]);
        assert!(r.statistics[0].r_hat.is_some());
        let mut buf = Vec::new();
        r.write_autocorrelation_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("statistic,lag,rho\ns,0,1\n"));
    }
}

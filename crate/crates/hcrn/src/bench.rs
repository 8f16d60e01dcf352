//! Cost-model benchmark: closed-form cost predictions for the 2-level and
//! 3-level hierarchies against instrumented multiply-accumulate counts of
//! real forward passes.
//!
//! The closed-form model prices a relation stack by its subset-aggregation
//! work and treats the per-subset conditioning map as a constant factor, so
//! level costs are `2*T*L*F` (clip), `2*(N/M)*L*F` (sub-video) and `2*N*L*F`
//! or `2*M*L*F` (video) with `L = N*T`. The instrument counts every real
//! MAC inside the relation units (aggregation, conditioning linears, gates,
//! output pooling), attributed per level by tape scope; encoder, pool and
//! decoder costs are reported separately and excluded from the comparison.
//! The benchmark defaults to a narrow feature width, where the aggregation
//! term the formula models dominates the measurement; the width-squared
//! conditioning term that takes over at large `d` is visible in the
//! reported breakdown.

use std::time::Instant;

use thiserror::Error;

use crate::config::ConfigError;
use crate::model::{self, HierarchyConfig, KMaxPolicy, Levels};
use crate::params::{ModelError, ModelParams, TapeBinder};
use crate::seed::{self, tag};
use crate::tensor::{MacCounters, MacScope, Tape, Tensor};
use rand::Rng;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bench config invalid: {0}")]
    BadConfig(String),
}

/// Closed-form cost model for one `(T, N, M, F)` setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPrediction {
    pub two_level: f64,
    pub three_level: f64,
    pub saving: f64,
    /// The derivation assumes `t = 2` and `k_max = n - 1`; other settings
    /// still compute but are flagged.
    pub regime_ok: bool,
}

/// `2(T+N)LF`, `2(T+N/M+M)LF` and their difference, with `L = N*T`.
pub fn predict_cost(
    t_frames: usize,
    n_clips: usize,
    m_groups: usize,
    feature_f: usize,
    t_subsets: usize,
    k_max: &KMaxPolicy,
) -> CostPrediction {
    let (t, n, m, f) = (
        t_frames as f64,
        n_clips as f64,
        m_groups.max(1) as f64,
        feature_f as f64,
    );
    let l = n * t;
    let two_level = 2.0 * (t + n) * l * f;
    let three_level = 2.0 * (t + n / m + m) * l * f;
    CostPrediction {
        two_level,
        three_level,
        saving: two_level - three_level,
        regime_ok: t_subsets == 2 && matches!(k_max, KMaxPolicy::NMinus1),
    }
}

/// Instrumented MAC counts of one forward pass, split by scope.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeasuredCost {
    pub clip: MacCounters,
    pub group: MacCounters,
    pub video: MacCounters,
    pub encoder: MacCounters,
    pub pool: MacCounters,
    pub wallclock_ms: f64,
}

impl MeasuredCost {
    /// Total MACs inside the relation units (the formula's subject).
    pub fn relation_macs(&self) -> u64 {
        self.clip.total() + self.group.total() + self.video.total()
    }
}

/// Build the configured model with random parameters and inputs, run one
/// forward pass, and read the per-scope MAC counters.
pub fn measure_cost(hierarchy: &HierarchyConfig, seed_v: u64) -> Result<MeasuredCost, BenchError> {
    hierarchy.validate()?;
    let vocab = 8;
    let mut params = ModelParams::new();
    let mut rng = seed::rng(seed::derive(seed_v, &[tag::BENCH, 1]));
    model::init_model_params(&mut params, hierarchy, vocab, &mut rng)?;

    let (n, t, d_in) = (
        hierarchy.n_clips,
        hierarchy.frames_per_clip,
        hierarchy.d_in,
    );
    let appearance = Tensor {
        shape: vec![n, t, d_in],
        data: (0..n * t * d_in)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    };
    let motion = Tensor {
        shape: vec![n, d_in],
        data: (0..n * d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };

    let start = Instant::now();
    let mut tape = Tape::new();
    let mut binder = TapeBinder::new(&params);
    model::forward(
        &mut tape,
        &mut binder,
        hierarchy,
        &appearance,
        &motion,
        &[0, 1],
        seed::derive(seed_v, &[tag::BENCH, 2]),
    )?;
    let wallclock_ms = start.elapsed().as_secs_f64() * 1e3;

    Ok(MeasuredCost {
        clip: tape.macs(MacScope::ClipRelation),
        group: tape.macs(MacScope::GroupRelation),
        video: tape.macs(MacScope::VideoRelation),
        encoder: tape.macs(MacScope::Encoder),
        pool: tape.macs(MacScope::Pool),
        wallclock_ms,
    })
}

fn hierarchy_for(levels: Levels, t_frames: usize, n_clips: usize, m_groups: usize, d: usize, t: usize) -> HierarchyConfig {
    let mut h = HierarchyConfig::defaults(n_clips, t_frames, d, d.max(2));
    h.levels = levels;
    h.m_groups = m_groups;
    h.t = t;
    h
}

/// Measured and predicted costs for one video-length setting.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub l: usize,
    pub n_clips: usize,
    pub m_groups: usize,
    pub predicted: CostPrediction,
    pub measured_two: MeasuredCost,
    pub measured_three: MeasuredCost,
}

impl ScalingRow {
    pub fn measured_saving(&self) -> f64 {
        self.measured_two.relation_macs() as f64 - self.measured_three.relation_macs() as f64
    }
}

/// Saving-vs-length study at fixed `T` and fixed clips-per-group `Q`.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Coefficient of the least-squares fit `saving ~ a * L^2 / T`.
    pub fit_coefficient: f64,
    /// Relative deviation of each measured saving from the fit.
    pub fit_residuals: Vec<f64>,
    /// measured saving(2L) / saving(L) for consecutive rows.
    pub doubling_ratios: Vec<f64>,
}

pub fn scaling_report(
    t_frames: usize,
    group_q: usize,
    d: usize,
    t_subsets: usize,
    l_values: &[usize],
    seed_v: u64,
) -> Result<ScalingReport, BenchError> {
    if l_values.len() < 3 {
        return Err(BenchError::BadConfig(format!(
            "scaling study needs at least 3 video lengths, got {}",
            l_values.len()
        )));
    }
    let mut rows = Vec::with_capacity(l_values.len());
    for &l in l_values {
        if l % t_frames != 0 {
            return Err(BenchError::BadConfig(format!(
                "video length {l} not divisible into clips of {t_frames} frames"
            )));
        }
        let n = l / t_frames;
        if n % group_q != 0 {
            return Err(BenchError::BadConfig(format!(
                "{n} clips not divisible into groups of {group_q}"
            )));
        }
        let m = n / group_q;
        let two = hierarchy_for(Levels::Two, t_frames, n, 1, d, t_subsets);
        let three = hierarchy_for(Levels::Three, t_frames, n, m, d, t_subsets);
        rows.push(ScalingRow {
            l,
            n_clips: n,
            m_groups: m,
            predicted: predict_cost(t_frames, n, m, d, t_subsets, &KMaxPolicy::NMinus1),
            measured_two: measure_cost(&two, seed_v)?,
            measured_three: measure_cost(&three, seed_v)?,
        });
    }

    // least squares for saving(L) = a * L^2 / T
    let mut num = 0.0;
    let mut den = 0.0;
    for row in &rows {
        let x = (row.l * row.l) as f64 / t_frames as f64;
        num += x * row.measured_saving();
        den += x * x;
    }
    let fit_coefficient = num / den;
    let fit_residuals = rows
        .iter()
        .map(|row| {
            let x = (row.l * row.l) as f64 / t_frames as f64;
            let fit = fit_coefficient * x;
            (fit - row.measured_saving()).abs() / row.measured_saving().abs().max(1e-12)
        })
        .collect();
    let doubling_ratios = rows
        .windows(2)
        .map(|w| w[1].measured_saving() / w[0].measured_saving())
        .collect();
    Ok(ScalingReport {
        rows,
        fit_coefficient,
        fit_residuals,
        doubling_ratios,
    })
}

/// Benchmark configuration, flat `key = value` like the run config.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub ratio_frames_per_clip: usize,
    pub ratio_n_clips: usize,
    pub ratio_m_groups: usize,
    pub scaling_frames_per_clip: usize,
    pub scaling_group_q: usize,
    pub l_values: Vec<usize>,
    pub d: usize,
    pub t: usize,
    pub feature_f: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ratio_frames_per_clip: 16,
            ratio_n_clips: 24,
            ratio_m_groups: 4,
            scaling_frames_per_clip: 8,
            scaling_group_q: 4,
            l_values: vec![128, 256, 512],
            d: 2,
            t: 2,
            feature_f: 512,
            seed: 1,
        }
    }
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut config = BenchConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| BenchError::BadConfig(format!("line without '=': {line}")))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| BenchError::BadConfig(format!("bad value for {key}: {v}")))
            };
            match key {
                "ratio_frames_per_clip" => config.ratio_frames_per_clip = parse_usize(value)?,
                "ratio_n_clips" => config.ratio_n_clips = parse_usize(value)?,
                "ratio_m_groups" => config.ratio_m_groups = parse_usize(value)?,
                "scaling_frames_per_clip" => config.scaling_frames_per_clip = parse_usize(value)?,
                "scaling_group_q" => config.scaling_group_q = parse_usize(value)?,
                "l_values" => {
                    config.l_values = value
                        .split(',')
                        .map(|v| parse_usize(v.trim()))
                        .collect::<Result<_, _>>()?
                }
                "d" => config.d = parse_usize(value)?,
                "t" => config.t = parse_usize(value)?,
                "feature_f" => config.feature_f = parse_usize(value)?,
                "seed" => {
                    config.seed = value
                        .parse()
                        .map_err(|_| BenchError::BadConfig(format!("bad seed: {value}")))?
                }
                other => {
                    return Err(BenchError::BadConfig(format!("unknown bench key {other}")))
                }
            }
        }
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::BadConfig(format!("cannot read config: {e}")))?;
        Self::parse(&text)
    }
}

/// The depth-comparison rows at the ratio config plus the saving-vs-L sweep,
/// as a plot-ready tab-separated table.
pub fn run_bench(config: &BenchConfig) -> Result<String, BenchError> {
    let mut out = String::new();
    out.push_str("config_id\tlevel\tpredicted\tmeasured\twallclock_ms\n");

    let ratio_id = format!(
        "ratio_T{}N{}M{}",
        config.ratio_frames_per_clip, config.ratio_n_clips, config.ratio_m_groups
    );
    let predicted = predict_cost(
        config.ratio_frames_per_clip,
        config.ratio_n_clips,
        config.ratio_m_groups,
        config.d,
        config.t,
        &KMaxPolicy::NMinus1,
    );
    let two = hierarchy_for(
        Levels::Two,
        config.ratio_frames_per_clip,
        config.ratio_n_clips,
        1,
        config.d,
        config.t,
    );
    let three = hierarchy_for(
        Levels::Three,
        config.ratio_frames_per_clip,
        config.ratio_n_clips,
        config.ratio_m_groups,
        config.d,
        config.t,
    );
    let measured_two = measure_cost(&two, config.seed)?;
    let measured_three = measure_cost(&three, config.seed)?;
    out.push_str(&format!(
        "{ratio_id}\t2\t{:.0}\t{}\t{:.3}\n",
        predicted.two_level,
        measured_two.relation_macs(),
        measured_two.wallclock_ms
    ));
    out.push_str(&format!(
        "{ratio_id}\t3\t{:.0}\t{}\t{:.3}\n",
        predicted.three_level,
        measured_three.relation_macs(),
        measured_three.wallclock_ms
    ));

    let report = scaling_report(
        config.scaling_frames_per_clip,
        config.scaling_group_q,
        config.d,
        config.t,
        &config.l_values,
        config.seed,
    )?;
    for row in &report.rows {
        let id = format!("L{}", row.l);
        out.push_str(&format!(
            "{id}\t2\t{:.0}\t{}\t{:.3}\n",
            row.predicted.two_level,
            row.measured_two.relation_macs(),
            row.measured_two.wallclock_ms
        ));
        out.push_str(&format!(
            "{id}\t3\t{:.0}\t{}\t{:.3}\n",
            row.predicted.three_level,
            row.measured_three.relation_macs(),
            row.measured_three.wallclock_ms
        ));
    }
    out.push_str(&format!(
        "# saving fit: a = {:.3} (saving ~ a*L^2/T), residuals = {:?}, doubling ratios = {:?}\n",
        report.fit_coefficient, report.fit_residuals, report.doubling_ratios
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_two_level_formula_value() {
        // T=16, N=8, F=512: 2 * 24 * 128 * 512
        let p = predict_cost(16, 8, 1, 512, 2, &KMaxPolicy::NMinus1);
        assert_eq!(p.two_level, 3_145_728.0);
        assert!(p.regime_ok);
    }

    #[test]
    fn predicted_ratio_forty_over_twentysix() {
        let p = predict_cost(16, 24, 4, 512, 2, &KMaxPolicy::NMinus1);
        let ratio = p.two_level / p.three_level;
        assert!((ratio - 40.0 / 26.0).abs() < 1e-12);
    }

    #[test]
    fn grouping_of_one_degenerates_toward_two_level() {
        // M=1: three-level formula becomes 2(T+N+1)LF, within one unit of
        // the two-level 2(T+N)LF
        let p = predict_cost(16, 8, 1, 512, 2, &KMaxPolicy::NMinus1);
        let gap = (p.three_level - p.two_level) / p.two_level;
        assert!(gap > 0.0 && gap < 1.0 / (16.0 + 8.0) + 1e-12);
    }

    #[test]
    fn predicted_cost_linear_in_feature_size() {
        let a = predict_cost(16, 24, 4, 128, 2, &KMaxPolicy::NMinus1);
        let b = predict_cost(16, 24, 4, 256, 2, &KMaxPolicy::NMinus1);
        assert_eq!(b.two_level, 2.0 * a.two_level);
        assert_eq!(b.three_level, 2.0 * a.three_level);
    }

    #[test]
    fn off_regime_flagged_but_computed() {
        let p = predict_cost(16, 24, 4, 512, 1, &KMaxPolicy::NMinus1);
        assert!(!p.regime_ok);
        assert!(p.two_level > 0.0);
    }

    #[test]
    fn measured_aggregation_macs_double_with_width() {
        let h2 = hierarchy_for(Levels::Two, 8, 8, 1, 2, 2);
        let h4 = hierarchy_for(Levels::Two, 8, 8, 1, 4, 2);
        let m2 = measure_cost(&h2, 3).unwrap();
        let m4 = measure_cost(&h4, 3).unwrap();
        // aggregation MACs are linear in the feature width
        let agg2 = m2.clip.aggregate + m2.video.aggregate;
        let agg4 = m4.clip.aggregate + m4.video.aggregate;
        assert_eq!(agg4, 2 * agg2);
        // conditioning linears scale with the squared width
        let lin2 = m2.clip.linear + m2.video.linear;
        let lin4 = m4.clip.linear + m4.video.linear;
        assert_eq!(lin4, 4 * lin2);
    }

    #[test]
    fn measured_cost_is_deterministic_per_seed() {
        let h = hierarchy_for(Levels::Two, 8, 8, 1, 2, 2);
        let a = measure_cost(&h, 5).unwrap();
        let b = measure_cost(&h, 5).unwrap();
        assert_eq!(a.relation_macs(), b.relation_macs());
        assert_eq!(a.clip, b.clip);
    }

    #[test]
    fn deeper_hierarchy_costs_less_when_n_exceeds_group_terms() {
        // N=24 > N/M + M = 10: both predicted and measured agree on the sign
        let p = predict_cost(16, 24, 4, 2, 2, &KMaxPolicy::NMinus1);
        assert!(p.three_level < p.two_level);
        let two = hierarchy_for(Levels::Two, 16, 24, 1, 2, 2);
        let three = hierarchy_for(Levels::Three, 16, 24, 4, 2, 2);
        let m2 = measure_cost(&two, 7).unwrap();
        let m3 = measure_cost(&three, 7).unwrap();
        assert!(m3.relation_macs() < m2.relation_macs());
    }

    #[test]
    fn scaling_report_row_count_matches_inputs() {
        let report = scaling_report(8, 4, 2, 2, &[128, 256, 512], 1).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.doubling_ratios.len(), 2);
        assert!(scaling_report(8, 4, 2, 2, &[128, 256], 1).is_err());
    }

    #[test]
    fn bench_config_parses_and_rejects_unknown_keys() {
        let config = BenchConfig::parse("d = 4\nl_values = 64, 128, 256\n").unwrap();
        assert_eq!(config.d, 4);
        assert_eq!(config.l_values, vec![64, 128, 256]);
        assert!(BenchConfig::parse("bogus = 1\n").is_err());
    }
}

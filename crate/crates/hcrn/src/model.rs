//! Hierarchical model assembly.
//!
//! Relation units are stacked per level: at each level a motion-conditioned
//! unit is followed by a question-conditioned, self-gated unit. The clip
//! level relates frames within a clip, the video level relates clip
//! summaries, and the optional group level (3-level hierarchy) relates clips
//! within a sub-video before the video level relates the sub-videos. The
//! final object array is collapsed by question-guided attention pooling.
//!
//! Ablation switches (relation order, sampling resolution, gating, motion
//! and question conditioning per level, 1-level and 1.5-level variants) are
//! part of [`HierarchyConfig`]; parameter creation and the forward pass
//! derive the unit layout from the same chain description so they cannot
//! drift apart.

use rand::Rng;

use crate::crn;
use crate::encoders;
use crate::params::{ModelError, ModelParams, TapeBinder};
use crate::sampler::{self, SubsetPlan};
use crate::seed;
use crate::tensor::{MacScope, Tape, Tensor, TensorId};

/// Maximum tuple size policy for relation units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMaxPolicy {
    /// `k_max = n - 1`, the full-relation setting.
    NMinus1,
    /// `k_max = floor(n / 2)`.
    Half,
    /// Fixed value, clamped to `n - 1`; `Fixed(1)` is the no-relations
    /// ablation (singleton subsets).
    Fixed(usize),
}

impl KMaxPolicy {
    pub fn effective(&self, n: usize) -> usize {
        match *self {
            KMaxPolicy::NMinus1 => n.saturating_sub(1).max(1),
            KMaxPolicy::Half => (n / 2).max(1),
            KMaxPolicy::Fixed(k) => k.min(n.saturating_sub(1)).max(1),
        }
    }
}

/// Hierarchy depth variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Levels {
    /// Single video-level stack over clip key frames.
    One,
    /// Clip-level stacks, mean-pooled across clips (no video relations).
    OneAndHalf,
    Two,
    Three,
}

#[derive(Debug, Clone)]
pub struct HierarchyConfig {
    pub levels: Levels,
    /// N: clips per video.
    pub n_clips: usize,
    /// T: frames per clip.
    pub frames_per_clip: usize,
    /// M: sub-video groups (3-level only; N = M * Q).
    pub m_groups: usize,
    pub d: usize,
    pub d_in: usize,
    pub embed_dim: usize,
    /// t: subsets sampled per tuple size.
    pub t: usize,
    pub k_max: KMaxPolicy,
    pub gate_question: bool,
    pub gate_motion: bool,
    pub use_short_motion: bool,
    pub use_long_motion: bool,
    pub question_at_clip: bool,
    pub question_at_video: bool,
}

impl HierarchyConfig {
    pub fn defaults(n_clips: usize, frames_per_clip: usize, d: usize, d_in: usize) -> Self {
        HierarchyConfig {
            levels: Levels::Two,
            n_clips,
            frames_per_clip,
            m_groups: 1,
            d,
            d_in,
            embed_dim: (d / 2).max(2),
            t: 2,
            k_max: KMaxPolicy::NMinus1,
            gate_question: true,
            gate_motion: false,
            use_short_motion: true,
            use_long_motion: true,
            question_at_clip: true,
            question_at_video: true,
        }
    }

    pub fn groups_q(&self) -> usize {
        self.n_clips / self.m_groups
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadInput(msg));
        if self.d == 0 || self.d % 2 != 0 {
            return bad(format!("d must be a positive even number, got {}", self.d));
        }
        if self.t == 0 {
            return bad("t must be at least 1".into());
        }
        let (n, t_frames) = (self.n_clips, self.frames_per_clip);
        match self.levels {
            Levels::One => {
                if n < 4 {
                    return bad(format!("1-level hierarchy needs at least 4 clips, got {n}"));
                }
            }
            Levels::OneAndHalf | Levels::Two => {
                if t_frames < 5 {
                    return bad(format!(
                        "clip-level stacks need at least 5 frames per clip, got {t_frames}"
                    ));
                }
                if self.levels == Levels::Two && n < 5 {
                    return bad(format!("2-level hierarchy needs at least 5 clips, got {n}"));
                }
            }
            Levels::Three => {
                if t_frames < 5 {
                    return bad(format!(
                        "clip-level stacks need at least 5 frames per clip, got {t_frames}"
                    ));
                }
                if self.m_groups < 4 {
                    return bad(format!(
                        "3-level hierarchy needs at least 4 sub-videos, got {}",
                        self.m_groups
                    ));
                }
                if self.n_clips % self.m_groups != 0 {
                    return bad(format!(
                        "clip count {} not divisible into {} sub-videos",
                        self.n_clips, self.m_groups
                    ));
                }
                if self.groups_q() < 4 {
                    return bad(format!(
                        "3-level hierarchy needs at least 4 clips per sub-video, got {}",
                        self.groups_q()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One relation unit in a level's stack.
#[derive(Debug, Clone)]
pub struct UnitDesc {
    pub prefix: String,
    pub gated: bool,
    /// Number of input objects the unit sees.
    pub n_in: usize,
    pub tuple_sizes: Vec<usize>,
    /// Stable tag for plan-seed derivation.
    pub tag: u64,
}

impl UnitDesc {
    pub fn n_out(&self) -> usize {
        self.tuple_sizes.len()
    }
}

fn push_unit(
    chain: &mut Vec<UnitDesc>,
    prefix: String,
    gated: bool,
    n: &mut usize,
    k_max: &KMaxPolicy,
    tag: u64,
) -> Result<(), ModelError> {
    let sizes = sampler::tuple_sizes(*n, k_max.effective(*n))?;
    let desc = UnitDesc {
        prefix,
        gated,
        n_in: *n,
        tuple_sizes: sizes,
        tag,
    };
    *n = desc.n_out();
    chain.push(desc);
    Ok(())
}

/// The chain of units at one level given the ablation flags; returns the
/// chain and the output array length.
pub fn unit_chain(
    level: &str,
    n_in: usize,
    with_motion: bool,
    with_question: bool,
    config: &HierarchyConfig,
    tag_base: u64,
) -> Result<(Vec<UnitDesc>, usize), ModelError> {
    let mut chain = Vec::new();
    let mut n = n_in;
    if with_motion {
        push_unit(
            &mut chain,
            format!("{level}.motion"),
            config.gate_motion,
            &mut n,
            &config.k_max,
            tag_base,
        )?;
    }
    if with_question {
        push_unit(
            &mut chain,
            format!("{level}.question"),
            config.gate_question,
            &mut n,
            &config.k_max,
            tag_base + 1,
        )?;
    }
    Ok((chain, n))
}

/// All unit chains of the configured hierarchy.
#[derive(Debug, Clone, Default)]
pub struct UnitLayout {
    pub clip: Vec<UnitDesc>,
    pub clip_out: usize,
    pub group: Vec<UnitDesc>,
    pub group_out: usize,
    pub video: Vec<UnitDesc>,
    pub video_out: usize,
}

pub fn unit_layout(config: &HierarchyConfig) -> Result<UnitLayout, ModelError> {
    config.validate()?;
    let mut layout = UnitLayout::default();
    let has_clip_stack = matches!(
        config.levels,
        Levels::OneAndHalf | Levels::Two | Levels::Three
    );
    if has_clip_stack {
        let (chain, out) = unit_chain(
            "clip",
            config.frames_per_clip,
            config.use_short_motion,
            config.question_at_clip,
            config,
            10,
        )?;
        layout.clip = chain;
        layout.clip_out = out;
    }
    if config.levels == Levels::Three {
        let (chain, out) = unit_chain(
            "group",
            config.groups_q(),
            config.use_long_motion,
            config.question_at_video,
            config,
            20,
        )?;
        layout.group = chain;
        layout.group_out = out;
    }
    let video_n = match config.levels {
        Levels::One | Levels::Two => config.n_clips,
        Levels::Three => config.m_groups,
        Levels::OneAndHalf => 0,
    };
    if video_n > 0 {
        let (chain, out) = unit_chain(
            "video",
            video_n,
            config.use_long_motion,
            config.question_at_video,
            config,
            30,
        )?;
        layout.video = chain;
        layout.video_out = out;
    }
    Ok(layout)
}

/// Rows per clip summary (`H` in the pooled-output bookkeeping).
pub fn clip_summary_rows(config: &HierarchyConfig) -> Result<usize, ModelError> {
    let layout = unit_layout(config)?;
    Ok(if layout.clip.is_empty() {
        config.frames_per_clip
    } else {
        layout.clip_out
    })
}

/// Deterministic per-forward subset plans.
pub struct PlanSource {
    pub t: usize,
    pub k_max: KMaxPolicy,
    pub seed: u64,
}

impl PlanSource {
    pub fn plan_for(&self, unit: &UnitDesc) -> Result<SubsetPlan, ModelError> {
        Ok(sampler::build_plan(
            unit.n_in,
            self.k_max.effective(unit.n_in),
            self.t,
            seed::derive(self.seed, &[unit.tag, unit.n_in as u64]),
        )?)
    }
}

/// Question-guided attention pooling over the final object array.
///
/// Objects are vectorized into rows, scored against the question projection
/// and combined convexly; returns the pooled vector and the attention
/// weights (which sum to 1).
pub fn attention_pool(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    objects: &[TensorId],
    question: TensorId,
) -> Result<(TensorId, TensorId), ModelError> {
    if objects.is_empty() {
        return Err(ModelError::BadInput("attention pool needs objects".into()));
    }
    tape.set_scope(MacScope::Pool);
    let d = *tape.shape(objects[0]).last().unwrap();
    let mut rows = Vec::with_capacity(objects.len());
    for &obj in objects {
        let shape = tape.shape(obj).to_vec();
        let r: usize = shape[..shape.len() - 1].iter().product();
        rows.push(tape.reshape(obj, vec![r.max(1), d])?);
    }
    let flat = tape.concat(&rows, 0)?;
    let h_rows = tape.shape(flat)[0];

    let w_o = binder.bind(tape, "pool.w_o")?;
    let projected = tape.linear(flat, w_o, None)?;
    let w_q = binder.bind(tape, "pool.w_q")?;
    let q_proj = tape.linear(question, w_q, None)?;
    let q_rows = tape.broadcast_rows(q_proj, h_rows);
    let modulated = tape.hadamard(projected, q_rows)?;
    let joint = tape.concat(&[projected, modulated], 1)?;
    let w_i = binder.bind(tape, "pool.w_i")?;
    let b_i = binder.bind(tape, "pool.b_i")?;
    let hidden_pre = tape.linear(joint, w_i, Some(b_i))?;
    let hidden = tape.elu(hidden_pre);
    let w_s = binder.bind(tape, "pool.w_s")?;
    let b_s = binder.bind(tape, "pool.b_s")?;
    let scores_col = tape.linear(hidden, w_s, Some(b_s))?;
    let scores = tape.reshape(scores_col, vec![h_rows])?;
    let gamma = tape.softmax(scores, 0)?;
    let pooled = tape.row_combine(gamma, flat)?;
    Ok((pooled, gamma))
}

/// Run one level's unit stack over an object array.
fn run_chain(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    chain: &[UnitDesc],
    inputs: Vec<TensorId>,
    conds: &[TensorId],
    plans: &PlanSource,
) -> Result<Vec<TensorId>, ModelError> {
    let mut objects = inputs;
    for (unit, &cond) in chain.iter().zip(conds) {
        let plan = plans.plan_for(unit)?;
        objects = crn::forward(tape, binder, &unit.prefix, &objects, cond, &plan, unit.gated)?;
    }
    Ok(objects)
}

/// Everything the decoders need from one pass.
pub struct ForwardOutput {
    /// Pooled visual representation.
    pub pooled: TensorId,
    /// Encoded language cue (the question, or a candidate answer).
    pub cue: TensorId,
    /// Attention weights over the final object rows.
    pub gamma: TensorId,
}

/// Full forward pass: encode inputs, stack relation units per the hierarchy,
/// pool with attention. `cue_tokens` is the question for question-conditioned
/// passes or an answer candidate for multi-choice candidate passes.
pub fn forward(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    config: &HierarchyConfig,
    appearance: &Tensor,
    clip_motion: &Tensor,
    cue_tokens: &[usize],
    plan_seed: u64,
) -> Result<ForwardOutput, ModelError> {
    let layout = unit_layout(config)?;
    let (n, t_frames, d_in, d) = (
        config.n_clips,
        config.frames_per_clip,
        config.d_in,
        config.d,
    );
    if appearance.shape != [n, t_frames, d_in] {
        return Err(ModelError::BadInput(format!(
            "appearance features have shape {:?}, expected {:?}",
            appearance.shape,
            [n, t_frames, d_in]
        )));
    }
    if clip_motion.shape != [n, d_in] {
        return Err(ModelError::BadInput(format!(
            "clip motion features have shape {:?}, expected {:?}",
            clip_motion.shape,
            [n, d_in]
        )));
    }
    let plans = PlanSource {
        t: config.t,
        k_max: config.k_max,
        seed: plan_seed,
    };
    let needs_motion = config.use_short_motion || config.use_long_motion;

    // encode: project frames and clip motion, encode the language cue
    tape.set_scope(MacScope::Encoder);
    let mut frames: Vec<Vec<TensorId>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut clip_frames = Vec::with_capacity(t_frames);
        for j in 0..t_frames {
            let start = (i * t_frames + j) * d_in;
            let raw = tape.value(Tensor::vector(
                appearance.data[start..start + d_in].to_vec(),
            ));
            clip_frames.push(encoders::project(tape, binder, "enc.app_proj", raw)?);
        }
        frames.push(clip_frames);
    }
    let mut motion: Vec<TensorId> = Vec::new();
    if needs_motion {
        for i in 0..n {
            let raw = tape.value(Tensor::vector(
                clip_motion.data[i * d_in..(i + 1) * d_in].to_vec(),
            ));
            motion.push(encoders::project(tape, binder, "enc.mot_proj", raw)?);
        }
    }
    let question = encoders::encode_question(tape, binder, "enc", cue_tokens, d)?;

    // clip level
    let clip_summaries: Vec<TensorId> = if layout.clip.is_empty() {
        frames
            .iter()
            .map(|f| tape.stack_rows(f))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut conds = Vec::new();
            for unit in &layout.clip {
                conds.push(if unit.prefix.ends_with(".motion") {
                    motion[i]
                } else {
                    question
                });
            }
            tape.set_scope(MacScope::ClipRelation);
            let objects = run_chain(tape, binder, &layout.clip, frames[i].clone(), &conds, &plans)?;
            out.push(tape.stack_rows(&objects)?);
        }
        out
    };

    // video-level motion context
    let video_motion = if config.use_long_motion && !layout.video.is_empty() {
        tape.set_scope(MacScope::Encoder);
        Some(encoders::summarize_motion(tape, binder, "enc", &motion, d)?)
    } else {
        None
    };

    let final_objects: Vec<TensorId> = match config.levels {
        Levels::OneAndHalf => {
            tape.set_scope(MacScope::VideoRelation);
            vec![tape.mean_list(&clip_summaries)?]
        }
        Levels::One => {
            // key frame: the middle frame of each clip
            let key: Vec<TensorId> = frames.iter().map(|f| f[t_frames / 2]).collect();
            let conds = video_conds(&layout.video, video_motion, question)?;
            tape.set_scope(MacScope::VideoRelation);
            run_chain(tape, binder, &layout.video, key, &conds, &plans)?
        }
        Levels::Two => {
            let conds = video_conds(&layout.video, video_motion, question)?;
            tape.set_scope(MacScope::VideoRelation);
            run_chain(tape, binder, &layout.video, clip_summaries, &conds, &plans)?
        }
        Levels::Three => {
            let q_clips = config.groups_q();
            let mut group_objects = Vec::with_capacity(config.m_groups);
            for g in 0..config.m_groups {
                let members = clip_summaries[g * q_clips..(g + 1) * q_clips].to_vec();
                let mut conds = Vec::new();
                for unit in &layout.group {
                    if unit.prefix.ends_with(".motion") {
                        tape.set_scope(MacScope::Encoder);
                        let group_motion = encoders::summarize_motion(
                            tape,
                            binder,
                            "enc",
                            &motion[g * q_clips..(g + 1) * q_clips],
                            d,
                        )?;
                        conds.push(group_motion);
                    } else {
                        conds.push(question);
                    }
                }
                tape.set_scope(MacScope::GroupRelation);
                let out = run_chain(tape, binder, &layout.group, members, &conds, &plans)?;
                // vectorize the group's output array into one positional object
                group_objects.push(tape.concat(&out, 0)?);
            }
            let conds = video_conds(&layout.video, video_motion, question)?;
            tape.set_scope(MacScope::VideoRelation);
            run_chain(tape, binder, &layout.video, group_objects, &conds, &plans)?
        }
    };

    let (pooled, gamma) = attention_pool(tape, binder, &final_objects, question)?;
    tape.set_scope(MacScope::Other);
    Ok(ForwardOutput {
        pooled,
        cue: question,
        gamma,
    })
}

fn video_conds(
    chain: &[UnitDesc],
    video_motion: Option<TensorId>,
    question: TensorId,
) -> Result<Vec<TensorId>, ModelError> {
    chain
        .iter()
        .map(|unit| {
            if unit.prefix.ends_with(".motion") {
                video_motion.ok_or_else(|| {
                    ModelError::BadInput("motion-conditioned unit without motion context".into())
                })
            } else {
                Ok(question)
            }
        })
        .collect()
}

/// Create every parameter the configured hierarchy uses (encoders, relation
/// units, attention pool). Decoder heads are created separately.
pub fn init_model_params<R: Rng>(
    params: &mut ModelParams,
    config: &HierarchyConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<(), ModelError> {
    let layout = unit_layout(config)?;
    let d = config.d;
    let needs_motion = config.use_short_motion || config.use_long_motion;

    params.init_linear("enc.app_proj.w", config.d_in, d, rng);
    params.init_zeros("enc.app_proj.b", vec![d]);
    if needs_motion {
        params.init_linear("enc.mot_proj.w", config.d_in, d, rng);
        params.init_zeros("enc.mot_proj.b", vec![d]);
    }
    params.init_uniform("enc.embed", vec![vocab_size, config.embed_dim], 0.08, rng);
    encoders::init_lstm(params, "enc.q_fwd", config.embed_dim, d / 2, rng);
    encoders::init_lstm(params, "enc.q_bwd", config.embed_dim, d / 2, rng);
    let needs_lstm =
        config.use_long_motion && !(layout.video.is_empty() && layout.group.is_empty());
    if needs_lstm {
        encoders::init_lstm(params, "enc.motion_lstm", d, d, rng);
    }

    for unit in layout.clip.iter().chain(&layout.group).chain(&layout.video) {
        crn::init_unit(params, &unit.prefix, &unit.tuple_sizes, d, d, unit.gated, rng);
    }

    params.init_linear("pool.w_o", d, d, rng);
    params.init_linear("pool.w_q", d, d, rng);
    params.init_linear("pool.w_i", 2 * d, d, rng);
    params.init_zeros("pool.b_i", vec![d]);
    params.init_linear("pool.w_s", d, 1, rng);
    params.init_zeros("pool.b_s", vec![1]);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn tiny_inputs(config: &HierarchyConfig, seed_v: u64) -> (Tensor, Tensor, Vec<usize>) {
        let mut rng = seed::rng(seed_v);
        let (n, t, d_in) = (config.n_clips, config.frames_per_clip, config.d_in);
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
        (appearance, motion, vec![0, 1])
    }

    fn build(config: &HierarchyConfig, seed_v: u64) -> ModelParams {
        let mut params = ModelParams::new();
        let mut rng = seed::rng(seed_v);
        init_model_params(&mut params, config, 4, &mut rng).unwrap();
        params
    }

    fn run(config: &HierarchyConfig, params: &ModelParams, seed_v: u64) -> (Vec<f64>, Vec<f64>) {
        let (appearance, motion, tokens) = tiny_inputs(config, seed_v);
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(params);
        let out = forward(
            &mut tape,
            &mut binder,
            config,
            &appearance,
            &motion,
            &tokens,
            7,
        )
        .unwrap();
        (
            tape.data(out.pooled).to_vec(),
            tape.data(out.gamma).to_vec(),
        )
    }

    #[test]
    fn shape_laws_hold_on_grid() {
        // |R| = max(n-2, 1) per unit; clip summaries (T-4) x d; video array
        // N-4 objects; gamma has (N-4)(T-4) entries
        for &n in &[5usize, 6, 8] {
            for &t in &[5usize, 6, 8] {
                let config = HierarchyConfig::defaults(n, t, 4, 3);
                let layout = unit_layout(&config).unwrap();
                assert_eq!(layout.clip_out, t - 4, "N={n} T={t}");
                assert_eq!(layout.video_out, n - 4, "N={n} T={t}");
                let params = build(&config, 1);
                let (pooled, gamma) = run(&config, &params, 2);
                assert_eq!(pooled.len(), config.d);
                assert_eq!(gamma.len(), (n - 4).max(1) * (t - 4).max(1));
                let s: f64 = gamma.iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn three_level_group_summary_shapes() {
        // N=24, M=4, Q=6, T=16 gives sub-video summaries of (Q-4)(T-4) rows
        let mut config = HierarchyConfig::defaults(24, 16, 4, 3);
        config.levels = Levels::Three;
        config.m_groups = 4;
        let layout = unit_layout(&config).unwrap();
        assert_eq!(layout.clip_out, 12);
        assert_eq!(layout.group_out, 2);
        assert_eq!(layout.video_out, 1); // 4 -> 2 -> 1 via the n=2 pair
    }

    #[test]
    fn three_level_minimal_video_array() {
        let mut config = HierarchyConfig::defaults(25, 5, 4, 3);
        config.levels = Levels::Three;
        config.m_groups = 5;
        let layout = unit_layout(&config).unwrap();
        assert_eq!(layout.video_out, 1); // M=5 -> 3 -> 1
        let params = build(&config, 3);
        let (pooled, gamma) = run(&config, &params, 4);
        assert_eq!(pooled.len(), config.d);
        // one video object of (Q-4)(T-4) = 1 rows
        assert_eq!(gamma.len(), 1);
    }

    #[test]
    fn pool_of_single_row_is_identity_weight() {
        // H' = 1: gamma = [1] and pooled equals the row itself
        let config = HierarchyConfig::defaults(5, 5, 4, 3);
        let params = build(&config, 5);
        let (appearance, motion, tokens) = tiny_inputs(&config, 6);
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&params);
        let out = forward(
            &mut tape,
            &mut binder,
            &config,
            &appearance,
            &motion,
            &tokens,
            1,
        )
        .unwrap();
        assert_eq!(tape.data(out.gamma), &[1.0]);
    }

    #[test]
    fn closed_question_gates_zero_the_pooled_output() {
        let config = HierarchyConfig::defaults(5, 5, 4, 3);
        let mut params = build(&config, 7);
        for name in params.names().map(str::to_string).collect::<Vec<_>>() {
            if name.contains(".question.") && name.ends_with(".b2") {
                let len = params.get(&name).unwrap().data.len();
                params.insert(&name, Tensor::vector(vec![-80.0; len]));
            }
            if name.contains(".question.") && name.ends_with(".w2") {
                params.get_mut(&name).unwrap().data.fill(0.0);
            }
        }
        let (pooled, _) = run(&config, &params, 8);
        for v in pooled {
            assert!(
                v.abs() < 1e-12,
                "closed gates must zero the output, got {v}"
            );
        }
    }

    #[test]
    fn question_enters_only_through_pool_when_linguistic_units_removed() {
        let mut config = HierarchyConfig::defaults(5, 5, 4, 3);
        config.question_at_clip = false;
        config.question_at_video = false;
        let mut params = build(&config, 9);
        let (appearance, motion, _) = tiny_inputs(&config, 10);
        let run_tokens = |params: &ModelParams, tokens: &[usize]| {
            let mut tape = Tape::new();
            let mut binder = TapeBinder::new(params);
            let out = forward(
                &mut tape,
                &mut binder,
                &config,
                &appearance,
                &motion,
                tokens,
                3,
            )
            .unwrap();
            tape.data(out.pooled).to_vec()
        };
        let a = run_tokens(&params, &[0, 1]);
        let b = run_tokens(&params, &[2, 3]);
        // question still reaches the pool through its projection
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-12));

        // zeroing the pool's question projection removes the dependence
        params.get_mut("pool.w_q").unwrap().data.fill(0.0);
        let a0 = run_tokens(&params, &[0, 1]);
        let b0 = run_tokens(&params, &[2, 3]);
        for (x, y) in a0.iter().zip(&b0) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn clip_permutation_changes_output() {
        let config = HierarchyConfig::defaults(5, 5, 4, 3);
        let params = build(&config, 11);
        let (appearance, motion, tokens) = tiny_inputs(&config, 12);
        let mut permuted_app = appearance.clone();
        let mut permuted_mot = motion.clone();
        let stride = config.frames_per_clip * config.d_in;
        let (a, b) = (0usize, 1usize);
        for j in 0..stride {
            permuted_app.data.swap(a * stride + j, b * stride + j);
        }
        for j in 0..config.d_in {
            permuted_mot
                .data
                .swap(a * config.d_in + j, b * config.d_in + j);
        }
        let run_with = |app: &Tensor, mot: &Tensor| {
            let mut tape = Tape::new();
            let mut binder = TapeBinder::new(&params);
            let out = forward(&mut tape, &mut binder, &config, app, mot, &tokens, 5).unwrap();
            tape.data(out.pooled).to_vec()
        };
        let orig = run_with(&appearance, &motion);
        let perm = run_with(&permuted_app, &permuted_mot);
        assert!(orig.iter().zip(&perm).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn ablation_variants_run_and_create_matching_params() {
        let base = HierarchyConfig::defaults(6, 6, 4, 3);
        let variants: Vec<HierarchyConfig> = vec![
            {
                let mut c = base.clone();
                c.levels = Levels::One;
                c
            },
            {
                let mut c = base.clone();
                c.levels = Levels::OneAndHalf;
                c
            },
            {
                let mut c = base.clone();
                c.use_short_motion = false;
                c.use_long_motion = false;
                c
            },
            {
                let mut c = base.clone();
                c.k_max = KMaxPolicy::Fixed(1);
                c
            },
            {
                let mut c = base.clone();
                c.k_max = KMaxPolicy::Half;
                c.gate_motion = true;
                c
            },
        ];
        for (i, config) in variants.iter().enumerate() {
            let params = build(config, 20 + i as u64);
            let (pooled, gamma) = run(config, &params, 30 + i as u64);
            assert_eq!(pooled.len(), config.d, "variant {i}");
            let s: f64 = gamma.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "variant {i}");
        }
    }

    #[test]
    fn no_motion_variant_has_no_motion_params() {
        let mut config = HierarchyConfig::defaults(5, 5, 4, 3);
        config.use_short_motion = false;
        config.use_long_motion = false;
        let params = build(&config, 40);
        assert!(params.get("enc.mot_proj.w").is_none());
        assert!(params.get("enc.motion_lstm.w").is_none());
        assert!(params.names().all(|n| !n.contains(".motion.")));
    }

    #[test]
    fn forward_is_deterministic_given_seed() {
        let config = HierarchyConfig::defaults(5, 5, 4, 3);
        let params = build(&config, 50);
        let a = run(&config, &params, 60);
        let b = run(&config, &params, 60);
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_rejected() {
        let c = HierarchyConfig::defaults(5, 4, 4, 3);
        assert!(c.validate().is_err()); // T < 5
        let c = HierarchyConfig::defaults(4, 5, 4, 3);
        assert!(c.validate().is_err()); // N < 5 for 2-level
        let mut c = HierarchyConfig::defaults(24, 16, 4, 3);
        c.levels = Levels::Three;
        c.m_groups = 5; // 24 % 5 != 0
        assert!(c.validate().is_err());
        c.m_groups = 12; // Q = 2 < 4
        assert!(c.validate().is_err());
        let mut odd = HierarchyConfig::defaults(5, 5, 6, 3);
        odd.d = 5;
        assert!(odd.validate().is_err());
    }
}

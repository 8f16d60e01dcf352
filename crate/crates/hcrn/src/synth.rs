//! Procedural video-QA task generator with a solvability oracle.
//!
//! A latent program is a sequence of segments `(action, duration,
//! attribute)` covering `L = N*T` frames, with adjacent segments always
//! differing in action. Frame appearance features are the sum of the active
//! action and attribute prototype vectors plus Gaussian noise; clip motion
//! features mix the mean active-action prototype with a boundary-count
//! component, so motion carries the transition signal.
//!
//! Four question kinds mirror counting, repeated-action identification,
//! transition order and single-frame attribute lookup. Answers are computed
//! from the program by construction, and the rule-based oracle re-derives
//! them from the noisy features alone via nearest-prototype decoding: its
//! accuracy bounds what any model can be blamed for.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::decoders::AnswerSpace;
use crate::io::{Entry, IoError, TensorData};
use crate::seed::{self, tag};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Count,
    Action,
    Transition,
    FrameQa,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Count => "count",
            TaskKind::Action => "action",
            TaskKind::Transition => "transition",
            TaskKind::FrameQa => "frameqa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "count" => Some(TaskKind::Count),
            "action" => Some(TaskKind::Action),
            "transition" => Some(TaskKind::Transition),
            "frameqa" => Some(TaskKind::FrameQa),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("question unsatisfiable for this program; regenerate")]
    Unsatisfiable,
    #[error("dataset spec invalid: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub action: usize,
    pub duration: usize,
    pub attribute: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentProgram {
    pub segments: Vec<Segment>,
}

impl LatentProgram {
    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Per-frame `(action, attribute)` labels.
    pub fn frame_labels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.total_frames());
        for s in &self.segments {
            for _ in 0..s.duration {
                out.push((s.action, s.attribute));
            }
        }
        out
    }

    pub fn occurrences(&self, action: usize) -> usize {
        self.segments.iter().filter(|s| s.action == action).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Label(usize),
    Count(i64),
    Choice(usize),
}

impl Answer {
    pub fn as_i64(&self) -> i64 {
        match *self {
            Answer::Label(v) => v as i64,
            Answer::Count(v) => v,
            Answer::Choice(v) => v as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `[N, T, d_in]` frame appearance features.
    pub appearance: Tensor,
    /// `[N, d_in]` clip motion features.
    pub clip_motion: Tensor,
    pub question: Vec<usize>,
    pub answer: Answer,
    /// Candidate token sequences for multi-choice variants; empty otherwise.
    pub candidates: Vec<Vec<usize>>,
    pub program: LatentProgram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub task: TaskKind,
    pub multichoice: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub sigma: f64,
    pub n_clips: usize,
    pub frames_per_clip: usize,
    pub d_in: usize,
    pub n_actions: usize,
    pub n_attributes: usize,
    pub max_reps: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn defaults(task: TaskKind) -> Self {
        DatasetSpec {
            task,
            multichoice: false,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            sigma: 0.1,
            n_clips: 8,
            frames_per_clip: 16,
            d_in: 32,
            n_actions: 4,
            n_attributes: 4,
            max_reps: 4,
            seed: 1,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.n_clips * self.frames_per_clip
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_actions < 3 {
            return Err(SynthError::BadSpec(
                "need at least 3 actions for transition questions".into(),
            ));
        }
        if self.n_attributes < 2 {
            return Err(SynthError::BadSpec("need at least 2 attributes".into()));
        }
        if self.max_reps < 2 {
            return Err(SynthError::BadSpec("max_reps must be at least 2".into()));
        }
        let min_frames = (2 * self.max_reps + 1) * MIN_SEGMENT_FRAMES;
        if self.total_frames() < min_frames {
            return Err(SynthError::BadSpec(format!(
                "video too short: {} frames cannot hold {} segments of at least {} frames",
                self.total_frames(),
                2 * self.max_reps + 1,
                MIN_SEGMENT_FRAMES
            )));
        }
        Ok(())
    }

    /// The answer space the task's decoder head needs.
    pub fn answer_space(&self) -> AnswerSpace {
        if self.multichoice {
            return AnswerSpace::MultiChoice;
        }
        match self.task {
            TaskKind::Count => AnswerSpace::Count {
                lo: 0,
                hi: self.max_reps as i64,
            },
            TaskKind::Action | TaskKind::Transition => AnswerSpace::OpenEnded {
                labels: self.n_actions,
            },
            TaskKind::FrameQa => AnswerSpace::OpenEnded {
                labels: self.n_attributes,
            },
        }
    }

    pub fn label_count(&self) -> usize {
        match self.task {
            TaskKind::Count => self.max_reps + 1,
            TaskKind::Action | TaskKind::Transition => self.n_actions,
            TaskKind::FrameQa => self.n_attributes,
        }
    }
}

/// Position buckets used by frame-attribute questions.
pub const POSITION_BUCKETS: usize = 4;
const MIN_SEGMENT_FRAMES: usize = 3;

/// Question-token vocabulary: question-kind markers, then actions,
/// attributes, position buckets, and count values.
#[derive(Debug, Clone)]
pub struct Vocab {
    pub tokens: Vec<String>,
    n_actions: usize,
    n_attributes: usize,
}

impl Vocab {
    pub fn build(n_actions: usize, n_attributes: usize, max_reps: usize) -> Self {
        let mut tokens = vec![
            "<count>".to_string(),
            "<repeats>".to_string(),
            "<after>".to_string(),
            "<before>".to_string(),
            "<attr>".to_string(),
        ];
        for a in 0..n_actions {
            tokens.push(format!("act{a}"));
        }
        for p in 0..n_attributes {
            tokens.push(format!("attr{p}"));
        }
        for b in 0..POSITION_BUCKETS {
            tokens.push(format!("pos{b}"));
        }
        for r in 1..=max_reps {
            tokens.push(format!("cnt{r}"));
        }
        Vocab {
            tokens,
            n_actions,
            n_attributes,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub const COUNT: usize = 0;
    pub const REPEATS: usize = 1;
    pub const AFTER: usize = 2;
    pub const BEFORE: usize = 3;
    pub const ATTR: usize = 4;

    pub fn action(&self, a: usize) -> usize {
        5 + a
    }

    pub fn attribute(&self, p: usize) -> usize {
        5 + self.n_actions + p
    }

    pub fn bucket(&self, b: usize) -> usize {
        5 + self.n_actions + self.n_attributes + b
    }

    pub fn count_value(&self, r: usize) -> usize {
        5 + self.n_actions + self.n_attributes + POSITION_BUCKETS + (r - 1)
    }
}

/// Fixed random prototype vectors for actions, attributes and the
/// transition indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub actions: Vec<Vec<f64>>,
    pub attributes: Vec<Vec<f64>>,
    pub transition: Vec<f64>,
    pub d_in: usize,
}

impl Prototypes {
    pub fn generate(spec: &DatasetSpec) -> Self {
        let mut rng = seed::rng(seed::derive(spec.seed, &[tag::DATA, 0x77]));
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, d: usize| -> Vec<f64> {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        Prototypes {
            actions: (0..spec.n_actions).map(|_| draw(&mut rng, spec.d_in)).collect(),
            attributes: (0..spec.n_attributes)
                .map(|_| draw(&mut rng, spec.d_in))
                .collect(),
            transition: draw(&mut rng, spec.d_in),
            d_in: spec.d_in,
        }
    }
}

/// Generate video features from a program.
///
/// Frame appearance: attribute prototype + action prototype + noise.
/// Clip motion: mean active-action prototype + (boundary count) * transition
/// prototype + noise. Deterministic given the RNG state.
pub fn gen_video<R: Rng>(
    program: &LatentProgram,
    proto: &Prototypes,
    sigma: f64,
    n_clips: usize,
    frames_per_clip: usize,
    rng: &mut R,
) -> Result<(Tensor, Tensor), SynthError> {
    let l = n_clips * frames_per_clip;
    if program.total_frames() != l {
        return Err(SynthError::BadSpec(format!(
            "program covers {} frames, video needs {l}",
            program.total_frames()
        )));
    }
    let d_in = proto.d_in;
    let labels = program.frame_labels();
    let mut appearance = Vec::with_capacity(l * d_in);
    for &(action, attribute) in &labels {
        for j in 0..d_in {
            let noise: f64 = StandardNormal.sample(rng);
            appearance
                .push(proto.actions[action][j] + proto.attributes[attribute][j] + sigma * noise);
        }
    }
    let mut motion = Vec::with_capacity(n_clips * d_in);
    for clip in 0..n_clips {
        let start = clip * frames_per_clip;
        let end = start + frames_per_clip;
        let mut active: Vec<usize> = Vec::new();
        let mut boundaries = 0usize;
        for f in start..end {
            let a = labels[f].0;
            if !active.contains(&a) {
                active.push(a);
            }
            if f > start && labels[f].0 != labels[f - 1].0 {
                boundaries += 1;
            }
        }
        for j in 0..d_in {
            let mean: f64 =
                active.iter().map(|&a| proto.actions[a][j]).sum::<f64>() / active.len() as f64;
            let noise: f64 = StandardNormal.sample(rng);
            motion.push(mean + boundaries as f64 * proto.transition[j] + sigma * noise);
        }
    }
    Ok((
        Tensor {
            shape: vec![n_clips, frames_per_clip, d_in],
            data: appearance,
        },
        Tensor {
            shape: vec![n_clips, d_in],
            data: motion,
        },
    ))
}

/// Majority attribute among the frames of one position bucket; ties go to
/// the lower attribute id.
fn bucket_majority(labels: &[(usize, usize)], n_attributes: usize, bucket: usize) -> usize {
    let l = labels.len();
    let start = bucket * l / POSITION_BUCKETS;
    let end = ((bucket + 1) * l / POSITION_BUCKETS).min(l);
    let mut counts = vec![0usize; n_attributes];
    for &(_, p) in &labels[start..end] {
        counts[p] += 1;
    }
    let mut best = 0;
    for (p, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = p;
        }
    }
    best
}

/// Derive a templated question and its answer from a program.
///
/// Count: `[<count>, act_x]` with the occurrence count of `x` (zero counts
/// allowed). Action: `[<repeats>, cnt_R]` asking which action occurs exactly
/// `R` times; requires a unique such action. Transition: `[<after>|<before>,
/// act_x]` with the neighbouring action; requires `x` to occur exactly once
/// away from the queried edge. FrameQA: `[<attr>, pos_b]` with the majority
/// attribute of the bucket. Returns [`SynthError::Unsatisfiable`] when the
/// program admits no valid question of the requested kind.
pub fn gen_question<R: Rng>(
    program: &LatentProgram,
    task: TaskKind,
    vocab: &Vocab,
    n_actions: usize,
    n_attributes: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Answer), SynthError> {
    match task {
        TaskKind::Count => {
            let x = rng.random_range(0..n_actions);
            let count = program.occurrences(x) as i64;
            Ok((vec![Vocab::COUNT, vocab.action(x)], Answer::Count(count)))
        }
        TaskKind::Action => {
            // actions with a unique occurrence count >= 2
            let mut candidates = Vec::new();
            for a in 0..n_actions {
                let r = program.occurrences(a);
                if r >= 2 && (0..n_actions).filter(|&b| program.occurrences(b) == r).count() == 1 {
                    candidates.push((a, r));
                }
            }
            if candidates.is_empty() {
                return Err(SynthError::Unsatisfiable);
            }
            let (a, r) = candidates[rng.random_range(0..candidates.len())];
            Ok((
                vec![Vocab::REPEATS, vocab.count_value(r)],
                Answer::Label(a),
            ))
        }
        TaskKind::Transition => {
            let after = rng.random_bool(0.5);
            let segs = &program.segments;
            let mut candidates = Vec::new();
            for (i, s) in segs.iter().enumerate() {
                if program.occurrences(s.action) != 1 {
                    continue;
                }
                if after && i + 1 < segs.len() {
                    candidates.push((s.action, segs[i + 1].action));
                }
                if !after && i > 0 {
                    candidates.push((s.action, segs[i - 1].action));
                }
            }
            if candidates.is_empty() {
                return Err(SynthError::Unsatisfiable);
            }
            let (x, answer) = candidates[rng.random_range(0..candidates.len())];
            let marker = if after { Vocab::AFTER } else { Vocab::BEFORE };
            Ok((vec![marker, vocab.action(x)], Answer::Label(answer)))
        }
        TaskKind::FrameQa => {
            let b = rng.random_range(0..POSITION_BUCKETS);
            let labels = program.frame_labels();
            let p = bucket_majority(&labels, n_attributes, b);
            Ok((vec![Vocab::ATTR, vocab.bucket(b)], Answer::Label(p)))
        }
    }
}

/// Random program: segment count, durations (composition of `L` with a
/// minimum), actions with distinct neighbours, attributes uniform.
///
/// Counting and repeated-action questions need room for up to `max_reps`
/// occurrences; transition and frame questions use fewer, longer segments.
fn gen_program<R: Rng>(spec: &DatasetSpec, rng: &mut R) -> LatentProgram {
    let l = spec.total_frames();
    let task_cap = match spec.task {
        TaskKind::Count | TaskKind::Action => 2 * spec.max_reps + 1,
        TaskKind::Transition | TaskKind::FrameQa => 5,
    };
    let max_segments = (l / MIN_SEGMENT_FRAMES).min(task_cap);
    let n_seg = rng.random_range(3..=max_segments.max(3));
    let mut segments = Vec::with_capacity(n_seg);
    let mut prev_action = usize::MAX;
    for _ in 0..n_seg {
        let mut action = rng.random_range(0..spec.n_actions);
        while action == prev_action {
            action = rng.random_range(0..spec.n_actions);
        }
        prev_action = action;
        segments.push(Segment {
            action,
            duration: 0,
            attribute: rng.random_range(0..spec.n_attributes),
        });
    }
    distribute_durations(&mut segments, l, rng);
    LatentProgram { segments }
}

fn distribute_durations<R: Rng>(segments: &mut [Segment], total: usize, rng: &mut R) {
    let n = segments.len();
    let spare = total - n * MIN_SEGMENT_FRAMES;
    // random composition of the spare frames over the segments
    let mut cuts: Vec<usize> = (0..n - 1).map(|_| rng.random_range(0..=spare)).collect();
    cuts.sort_unstable();
    let mut last = 0;
    for (i, seg) in segments.iter_mut().enumerate() {
        let next = if i + 1 < n { cuts[i] } else { spare };
        seg.duration = MIN_SEGMENT_FRAMES + next - last;
        last = next;
    }
}

/// Build one sample whose answer matches `target_label` when possible; the
/// generator retries fresh programs a bounded number of times and then
/// accepts the last draw, so label balance stays near uniform.
fn gen_sample_for_label(
    spec: &DatasetSpec,
    proto: &Prototypes,
    vocab: &Vocab,
    sample_seed: u64,
    target_label: usize,
) -> SyntheticSample {
    let mut rng = seed::rng(sample_seed);
    let mut fallback: Option<(LatentProgram, Vec<usize>, Answer)> = None;
    for _attempt in 0..400 {
        let program = gen_program(spec, &mut rng);
        let q = gen_question(
            &program,
            spec.task,
            vocab,
            spec.n_actions,
            spec.n_attributes,
            &mut rng,
        );
        if let Ok((question, answer)) = q {
            let label = match answer {
                Answer::Count(v) => v as usize,
                Answer::Label(v) => v,
                Answer::Choice(v) => v,
            };
            if label == target_label {
                fallback = Some((program, question, answer));
                break;
            }
            if fallback.is_none() {
                fallback = Some((program, question, answer));
            }
        }
    }
    let (program, question, answer) =
        fallback.expect("program generation must eventually satisfy some question");
    let (appearance, clip_motion) = gen_video(
        &program,
        proto,
        spec.sigma,
        spec.n_clips,
        spec.frames_per_clip,
        &mut rng,
    )
    .expect("constructed program covers the video");

    // multi-choice variant: candidates are the label set as 1-token answers
    let (candidates, answer) = if spec.multichoice {
        let labels = spec.label_count();
        let correct = match answer {
            Answer::Label(v) => v,
            Answer::Count(v) => v as usize,
            Answer::Choice(v) => v,
        };
        let cands: Vec<Vec<usize>> = (0..labels)
            .map(|l| match spec.task {
                TaskKind::FrameQa => vec![vocab.attribute(l)],
                _ => vec![vocab.action(l)],
            })
            .collect();
        (cands, Answer::Choice(correct))
    } else {
        (Vec::new(), answer)
    };

    SyntheticSample {
        appearance,
        clip_motion,
        question,
        answer,
        candidates,
        program,
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub prototypes: Prototypes,
    pub vocab: Vocab,
    pub train: Vec<SyntheticSample>,
    pub val: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

/// Split tags keep train/validation/test seed streams disjoint.
const SPLIT_TAGS: [(u64, &str); 3] = [(1, "train"), (2, "val"), (3, "test")];

pub fn generate(spec: &DatasetSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let proto = Prototypes::generate(spec);
    let vocab = Vocab::build(spec.n_actions, spec.n_attributes, spec.max_reps);
    let labels = spec.label_count();
    let mut splits: Vec<Vec<SyntheticSample>> = Vec::with_capacity(3);
    for (split_tag, _) in SPLIT_TAGS {
        let count = match split_tag {
            1 => spec.n_train,
            2 => spec.n_val,
            _ => spec.n_test,
        };
        let samples: Vec<SyntheticSample> = (0..count)
            .map(|i| {
                let sample_seed = seed::derive(spec.seed, &[tag::DATA, split_tag, i as u64]);
                gen_sample_for_label(spec, &proto, &vocab, sample_seed, i % labels)
            })
            .collect();
        splits.push(samples);
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        spec: spec.clone(),
        prototypes: proto,
        vocab,
        train,
        val,
        test,
    })
}

// ── solvability oracle ──────────────────────────────────────────────────

/// Decode per-frame `(action, attribute)` labels by nearest joint prototype.
fn decode_frames(appearance: &Tensor, proto: &Prototypes) -> Vec<(usize, usize)> {
    let d_in = proto.d_in;
    let frames = appearance.numel() / d_in;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let x = &appearance.data[f * d_in..(f + 1) * d_in];
        let mut best = (0usize, 0usize);
        let mut best_dist = f64::INFINITY;
        for (a, pa) in proto.actions.iter().enumerate() {
            for (p, pp) in proto.attributes.iter().enumerate() {
                let mut dist = 0.0;
                for j in 0..d_in {
                    let diff = x[j] - pa[j] - pp[j];
                    dist += diff * diff;
                }
                if dist < best_dist {
                    best_dist = dist;
                    best = (a, p);
                }
            }
        }
        out.push(best);
    }
    out
}

/// Maximal runs of equal decoded action.
fn decoded_runs(labels: &[(usize, usize)]) -> Vec<usize> {
    let mut runs = Vec::new();
    for &(a, _) in labels {
        if runs.last() != Some(&a) {
            runs.push(a);
        }
    }
    runs
}

/// Answer a question from decoded features only (prototypes are known, the
/// latent program is not).
pub fn oracle_answer(
    sample: &SyntheticSample,
    proto: &Prototypes,
    vocab: &Vocab,
    n_actions: usize,
    n_attributes: usize,
) -> Answer {
    let labels = decode_frames(&sample.appearance, proto);
    let runs = decoded_runs(&labels);
    let q = &sample.question;
    match q[0] {
        Vocab::COUNT => {
            let x = q[1] - vocab.action(0);
            Answer::Count(runs.iter().filter(|&&a| a == x).count() as i64)
        }
        Vocab::REPEATS => {
            let r = q[1] - vocab.count_value(1) + 1;
            let mut answer = 0;
            for a in 0..n_actions {
                if runs.iter().filter(|&&x| x == a).count() == r {
                    answer = a;
                    break;
                }
            }
            Answer::Label(answer)
        }
        Vocab::AFTER | Vocab::BEFORE => {
            let x = q[1] - vocab.action(0);
            let positions: Vec<usize> = runs
                .iter()
                .enumerate()
                .filter(|(_, &a)| a == x)
                .map(|(i, _)| i)
                .collect();
            let answer = positions.first().map_or(0, |&i| {
                if q[0] == Vocab::AFTER {
                    runs.get(i + 1).copied().unwrap_or(0)
                } else if i > 0 {
                    runs[i - 1]
                } else {
                    0
                }
            });
            Answer::Label(answer)
        }
        _ => {
            let b = q[1] - vocab.bucket(0);
            Answer::Label(bucket_majority(&labels, n_attributes, b))
        }
    }
}

/// Fraction of samples the rule-based nearest-prototype solver answers
/// correctly; model failures below this ceiling are the model's fault, not
/// the data's.
pub fn oracle_solvability(dataset: &Dataset, samples: &[SyntheticSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| {
            let got = oracle_answer(
                s,
                &dataset.prototypes,
                &dataset.vocab,
                dataset.spec.n_actions,
                dataset.spec.n_attributes,
            );
            got.as_i64() == s.answer.as_i64()
        })
        .count();
    correct as f64 / samples.len() as f64
}

// ── persistence ─────────────────────────────────────────────────────────

fn sample_entries(prefix: &str, sample: &SyntheticSample) -> Vec<Entry> {
    let mut entries = vec![
        Entry {
            name: format!("{prefix}/appearance"),
            shape: sample.appearance.shape.clone(),
            data: TensorData::F64(sample.appearance.data.clone()),
        },
        Entry {
            name: format!("{prefix}/motion"),
            shape: sample.clip_motion.shape.clone(),
            data: TensorData::F64(sample.clip_motion.data.clone()),
        },
        Entry {
            name: format!("{prefix}/question"),
            shape: vec![sample.question.len()],
            data: TensorData::I64(sample.question.iter().map(|&t| t as i64).collect()),
        },
        Entry {
            name: format!("{prefix}/answer"),
            shape: vec![1],
            data: TensorData::I64(vec![sample.answer.as_i64()]),
        },
        Entry {
            name: format!("{prefix}/segments"),
            shape: vec![sample.program.segments.len(), 3],
            data: TensorData::I64(
                sample
                    .program
                    .segments
                    .iter()
                    .flat_map(|s| [s.action as i64, s.duration as i64, s.attribute as i64])
                    .collect(),
            ),
        },
    ];
    for (ci, cand) in sample.candidates.iter().enumerate() {
        entries.push(Entry {
            name: format!("{prefix}/candidate{ci}"),
            shape: vec![cand.len()],
            data: TensorData::I64(cand.iter().map(|&t| t as i64).collect()),
        });
    }
    entries
}

/// Persist a dataset as a directory: `manifest.txt` (key=value), `vocab.txt`
/// (one token per line), `prototypes.bin` and one container per split.
pub fn save_dataset(dir: &std::path::Path, dataset: &Dataset) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(IoError::from)?;
    let spec = &dataset.spec;
    let manifest = format!(
        "task = {}\nmultichoice = {}\nn_train = {}\nn_val = {}\nn_test = {}\nsigma = {}\n\
         n_clips = {}\nframes_per_clip = {}\nd_in = {}\nn_actions = {}\nn_attributes = {}\n\
         max_reps = {}\nseed = {}\n",
        spec.task.name(),
        spec.multichoice,
        spec.n_train,
        spec.n_val,
        spec.n_test,
        spec.sigma,
        spec.n_clips,
        spec.frames_per_clip,
        spec.d_in,
        spec.n_actions,
        spec.n_attributes,
        spec.max_reps,
        spec.seed
    );
    std::fs::write(dir.join("manifest.txt"), manifest).map_err(IoError::from)?;
    std::fs::write(dir.join("vocab.txt"), dataset.vocab.tokens.join("\n") + "\n")
        .map_err(IoError::from)?;

    let mut proto_entries = vec![Entry {
        name: "transition".into(),
        shape: vec![spec.d_in],
        data: TensorData::F64(dataset.prototypes.transition.clone()),
    }];
    for (a, p) in dataset.prototypes.actions.iter().enumerate() {
        proto_entries.push(Entry {
            name: format!("action{a}"),
            shape: vec![spec.d_in],
            data: TensorData::F64(p.clone()),
        });
    }
    for (i, p) in dataset.prototypes.attributes.iter().enumerate() {
        proto_entries.push(Entry {
            name: format!("attribute{i}"),
            shape: vec![spec.d_in],
            data: TensorData::F64(p.clone()),
        });
    }
    crate::io::write_container_file(&dir.join("prototypes.bin"), &proto_entries)?;

    for (split, samples) in [
        ("train", &dataset.train),
        ("val", &dataset.val),
        ("test", &dataset.test),
    ] {
        let mut entries = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            entries.extend(sample_entries(&format!("s{i:05}"), s));
        }
        crate::io::write_container_file(&dir.join(format!("{split}.bin")), &entries)?;
    }
    Ok(())
}

impl DatasetSpec {
    /// Parse the flat `key = value` spec format (also the manifest format).
    pub fn parse(text: &str) -> Result<DatasetSpec, SynthError> {
        parse_manifest(text)
    }
}

fn parse_manifest(text: &str) -> Result<DatasetSpec, SynthError> {
    let mut spec = DatasetSpec::defaults(TaskKind::Count);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SynthError::BadSpec(format!("manifest line without '=': {line}")))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| SynthError::BadSpec(format!("bad integer for {key}: {v}")))
        };
        match key {
            "task" => {
                spec.task = TaskKind::parse(value)
                    .ok_or_else(|| SynthError::BadSpec(format!("unknown task {value}")))?
            }
            "multichoice" => spec.multichoice = value == "true",
            "n_train" => spec.n_train = parse_usize(value)?,
            "n_val" => spec.n_val = parse_usize(value)?,
            "n_test" => spec.n_test = parse_usize(value)?,
            "sigma" => {
                spec.sigma = value
                    .parse()
                    .map_err(|_| SynthError::BadSpec(format!("bad sigma: {value}")))?
            }
            "n_clips" => spec.n_clips = parse_usize(value)?,
            "frames_per_clip" => spec.frames_per_clip = parse_usize(value)?,
            "d_in" => spec.d_in = parse_usize(value)?,
            "n_actions" => spec.n_actions = parse_usize(value)?,
            "n_attributes" => spec.n_attributes = parse_usize(value)?,
            "max_reps" => spec.max_reps = parse_usize(value)?,
            "seed" => {
                spec.seed = value
                    .parse()
                    .map_err(|_| SynthError::BadSpec(format!("bad seed: {value}")))?
            }
            other => return Err(SynthError::BadSpec(format!("unknown manifest key {other}"))),
        }
    }
    Ok(spec)
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &std::path::Path) -> Result<Dataset, SynthError> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).map_err(IoError::from)?;
    let spec = parse_manifest(&manifest)?;
    // regeneration from the manifest is byte-identical to the saved data
    generate(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(task: TaskKind) -> DatasetSpec {
        DatasetSpec {
            n_train: 40,
            n_val: 20,
            n_test: 20,
            n_clips: 6,
            frames_per_clip: 8,
            d_in: 16,
            ..DatasetSpec::defaults(task)
        }
    }

    #[test]
    fn noiseless_frames_constant_within_segments() {
        let spec = DatasetSpec {
            sigma: 0.0,
            ..small_spec(TaskKind::Count)
        };
        let proto = Prototypes::generate(&spec);
        let program = LatentProgram {
            segments: vec![
                Segment { action: 0, duration: 20, attribute: 1 },
                Segment { action: 1, duration: 28, attribute: 2 },
            ],
        };
        let mut rng = seed::rng(1);
        let (appearance, _) = gen_video(&program, &proto, 0.0, 6, 8, &mut rng).unwrap();
        let d_in = spec.d_in;
        let first = appearance.data[..d_in].to_vec();
        for f in 1..20 {
            assert_eq!(&appearance.data[f * d_in..(f + 1) * d_in], &first[..]);
        }
    }

    #[test]
    fn single_action_video_has_equal_motion_vectors() {
        let spec = small_spec(TaskKind::Count);
        let proto = Prototypes::generate(&spec);
        let program = LatentProgram {
            segments: vec![Segment { action: 2, duration: 48, attribute: 0 }],
        };
        let mut rng = seed::rng(2);
        let (_, motion) = gen_video(&program, &proto, 0.0, 6, 8, &mut rng).unwrap();
        let d_in = spec.d_in;
        let first = motion.data[..d_in].to_vec();
        for c in 1..6 {
            assert_eq!(&motion.data[c * d_in..(c + 1) * d_in], &first[..]);
        }
    }

    #[test]
    fn noiseless_prototype_recovery_is_exact() {
        let spec = DatasetSpec {
            sigma: 0.0,
            ..small_spec(TaskKind::FrameQa)
        };
        let dataset = generate(&spec).unwrap();
        for sample in dataset.train.iter().take(5) {
            let decoded = decode_frames(&sample.appearance, &dataset.prototypes);
            let truth = sample.program.frame_labels();
            assert_eq!(decoded, truth);
        }
    }

    #[test]
    fn question_answers_match_program_by_construction() {
        let spec = small_spec(TaskKind::Transition);
        let vocab = Vocab::build(spec.n_actions, spec.n_attributes, spec.max_reps);
        let program = LatentProgram {
            segments: vec![
                Segment { action: 0, duration: 12, attribute: 0 },
                Segment { action: 1, duration: 12, attribute: 1 },
                Segment { action: 2, duration: 12, attribute: 0 },
                Segment { action: 0, duration: 12, attribute: 3 },
            ],
        };
        // action 1 and 2 occur once each; after 1 comes 2, before 1 comes 0
        let mut rng = seed::rng(3);
        for _ in 0..20 {
            let (q, a) = gen_question(
                &program,
                TaskKind::Transition,
                &vocab,
                spec.n_actions,
                spec.n_attributes,
                &mut rng,
            )
            .unwrap();
            let x = q[1] - vocab.action(0);
            match (q[0], x) {
                (Vocab::AFTER, 1) => assert_eq!(a, Answer::Label(2)),
                (Vocab::AFTER, 2) => assert_eq!(a, Answer::Label(0)),
                (Vocab::BEFORE, 1) => assert_eq!(a, Answer::Label(0)),
                (Vocab::BEFORE, 2) => assert_eq!(a, Answer::Label(1)),
                other => panic!("unexpected question {other:?}"),
            }
        }
    }

    #[test]
    fn count_question_counts_occurrences() {
        let spec = small_spec(TaskKind::Count);
        let vocab = Vocab::build(spec.n_actions, spec.n_attributes, spec.max_reps);
        let program = LatentProgram {
            segments: vec![
                Segment { action: 3, duration: 16, attribute: 0 },
                Segment { action: 1, duration: 16, attribute: 1 },
                Segment { action: 3, duration: 16, attribute: 2 },
            ],
        };
        let mut rng = seed::rng(4);
        let mut seen_three = false;
        for _ in 0..40 {
            let (q, a) = gen_question(
                &program,
                TaskKind::Count,
                &vocab,
                spec.n_actions,
                spec.n_attributes,
                &mut rng,
            )
            .unwrap();
            let x = q[1] - vocab.action(0);
            let expect = match x {
                3 => 2,
                1 => 1,
                _ => 0,
            };
            assert_eq!(a, Answer::Count(expect));
            seen_three |= x == 3;
        }
        assert!(seen_three);
    }

    #[test]
    fn unsatisfiable_action_question_signals_regeneration() {
        let spec = small_spec(TaskKind::Action);
        let vocab = Vocab::build(spec.n_actions, spec.n_attributes, spec.max_reps);
        // no action repeats: every occurrence count is 1
        let program = LatentProgram {
            segments: vec![
                Segment { action: 0, duration: 24, attribute: 0 },
                Segment { action: 1, duration: 24, attribute: 1 },
            ],
        };
        let mut rng = seed::rng(5);
        assert!(matches!(
            gen_question(&program, TaskKind::Action, &vocab, 4, 4, &mut rng),
            Err(SynthError::Unsatisfiable)
        ));
    }

    #[test]
    fn generation_is_reproducible_and_splits_disjoint() {
        let spec = small_spec(TaskKind::Transition);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        // different splits come from different seed streams
        assert_ne!(a.train[0], a.test[0]);
    }

    #[test]
    fn class_balance_within_twenty_percent_of_uniform() {
        for task in [TaskKind::Transition, TaskKind::Action, TaskKind::FrameQa] {
            let spec = DatasetSpec {
                n_train: 200,
                ..small_spec(task)
            };
            let dataset = generate(&spec).unwrap();
            let labels = spec.label_count();
            let mut counts = vec![0usize; labels];
            for s in &dataset.train {
                counts[s.answer.as_i64() as usize] += 1;
            }
            let uniform = spec.n_train as f64 / labels as f64;
            for (l, &c) in counts.iter().enumerate() {
                assert!(
                    (c as f64 - uniform).abs() <= 0.2 * uniform,
                    "task {:?} label {l}: {c} vs uniform {uniform}",
                    task
                );
            }
        }
    }

    #[test]
    fn oracle_perfect_at_zero_noise() {
        let spec = DatasetSpec {
            sigma: 0.0,
            n_train: 60,
            ..small_spec(TaskKind::Transition)
        };
        let dataset = generate(&spec).unwrap();
        assert_eq!(oracle_solvability(&dataset, &dataset.train), 1.0);
    }

    #[test]
    fn oracle_strong_at_low_noise_destroyed_at_high_noise() {
        for task in [TaskKind::Count, TaskKind::Transition, TaskKind::FrameQa] {
            let spec = DatasetSpec {
                sigma: 0.1,
                n_train: 150,
                ..small_spec(task)
            };
            let dataset = generate(&spec).unwrap();
            let acc = oracle_solvability(&dataset, &dataset.train);
            assert!(acc >= 0.98, "task {task:?} oracle accuracy {acc}");
        }
        let noisy = DatasetSpec {
            sigma: 10.0,
            n_train: 200,
            ..small_spec(TaskKind::Transition)
        };
        let dataset = generate(&noisy).unwrap();
        let acc = oracle_solvability(&dataset, &dataset.train);
        assert!(acc < 0.6, "high noise should destroy the task, got {acc}");
    }

    #[test]
    fn dataset_roundtrip_through_directory() {
        let spec = DatasetSpec {
            n_train: 10,
            n_val: 5,
            n_test: 5,
            ..small_spec(TaskKind::Count)
        };
        let dataset = generate(&spec).unwrap();
        let dir = std::env::temp_dir().join("hcrn_synth_roundtrip");
        save_dataset(&dir, &dataset).unwrap();
        let back = load_dataset(&dir).unwrap();
        assert_eq!(dataset.spec, back.spec);
        assert_eq!(dataset.train, back.train);
        // vocab file: one token per line, id = line number
        let vocab_text = std::fs::read_to_string(dir.join("vocab.txt")).unwrap();
        let lines: Vec<&str> = vocab_text.lines().collect();
        assert_eq!(lines.len(), dataset.vocab.len());
        assert_eq!(lines[0], "<count>");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn multichoice_variant_carries_candidates() {
        let spec = DatasetSpec {
            multichoice: true,
            n_train: 12,
            n_val: 4,
            n_test: 4,
            ..small_spec(TaskKind::Transition)
        };
        let dataset = generate(&spec).unwrap();
        for s in &dataset.train {
            assert_eq!(s.candidates.len(), spec.n_actions);
            assert!(matches!(s.answer, Answer::Choice(_)));
        }
    }
}

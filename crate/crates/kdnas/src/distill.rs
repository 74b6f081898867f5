//! Distillation objectives and training loops.
//!
//! Two objectives are supported:
//!
//! - hidden-state transfer: every mapped student hidden state, projected to
//!   teacher width through a learnable matrix, predicts the corresponding
//!   teacher hidden state under MSE, summed over all mapped pairs;
//! - attention-relation transfer: the Q-Q, K-K and V-V self-attention
//!   relations of one student layer match one teacher layer under row
//!   cross-entropy, averaged over relation heads. Relations are `|x|×|x|`,
//!   so teacher and student widths may differ freely.
//!
//! The hidden-state MSE is a mean over batch, sequence and teacher width,
//! keeping losses on a comparable scale across architectures; the search
//! reward depends on that stability.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchState;
use crate::corpus::BatchStream;
use crate::error::{Error, Result};
use crate::mapping::{build_mapping, LayerMapping, MappingStrategy};
use crate::model::{Model, ModelOutputs, Qkv};
use crate::optim::{Optimizer, OptimizerKind, Schedule};
use crate::seeds;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default relation-head count at desk scale (the production setting of 48
/// does not divide desk widths; both remain configurable).
pub const DESK_RELATION_HEADS: usize = 4;
/// Relation-head count used at production scale.
pub const PAPER_RELATION_HEADS: usize = 48;

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// One trainable projection matrix `d_S × d_T` per mapped layer pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    mats: BTreeMap<(usize, usize), Tensor>,
}

impl ProjectionSet {
    /// Uniform init in `±sqrt(6/(d_S + d_T))`, keyed exactly by the mapped
    /// pairs.
    pub fn init(mapping: &LayerMapping, d_student: usize, d_teacher: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::salt("proj")]));
        let bound = (6.0 / (d_student + d_teacher) as f64).sqrt();
        let mats = mapping
            .flat_pairs()
            .into_iter()
            .map(|key| {
                (
                    key,
                    Tensor::uniform(vec![d_student, d_teacher], -bound, bound, &mut rng),
                )
            })
            .collect();
        Self { mats }
    }

    /// Identity projections; requires equal student and teacher width.
    pub fn identity(mapping: &LayerMapping, width: usize) -> Self {
        let mut eye = Tensor::zeros(vec![width, width]);
        for i in 0..width {
            eye.data_mut()[i * width + i] = 1.0;
        }
        let mats = mapping
            .flat_pairs()
            .into_iter()
            .map(|key| (key, eye.clone()))
            .collect();
        Self { mats }
    }

    pub fn get(&self, student: usize, teacher: usize) -> Option<&Tensor> {
        self.mats.get(&(student, teacher))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Tensor)> {
        self.mats.iter()
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> BTreeMap<(usize, usize), Var> {
        self.mats
            .iter()
            .map(|(&k, t)| (k, tape.leaf(t.clone(), trainable)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.mats.values_mut().collect()
    }
}

// ---------------------------------------------------------------------------
// Loss graphs
// ---------------------------------------------------------------------------

/// Hidden-state transfer loss on an existing tape:
/// `Σ_i Σ_{j∈g(i)} MSE(H^S_i · W_i^j, H^T_j)`.
///
/// The projected operand is the *student* hidden state of layer `i`, carried
/// to teacher width by `W_i^j` and compared against teacher layer `j`.
pub fn hs_loss_graph(
    tape: &mut Tape,
    mapping: &LayerMapping,
    student_hidden: &[Var],
    teacher_hidden: &BTreeMap<usize, Var>,
    projections: &BTreeMap<(usize, usize), Var>,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (i, j) in mapping.flat_pairs() {
        let student = *student_hidden.get(i - 1).ok_or_else(|| {
            Error::Contract(format!("hs_loss: student layer {i} missing from outputs"))
        })?;
        let teacher = *teacher_hidden.get(&j).ok_or_else(|| {
            Error::Contract(format!("hs_loss: teacher layer {j} missing from outputs"))
        })?;
        let w = *projections.get(&(i, j)).ok_or_else(|| {
            Error::Contract(format!("hs_loss: no projection for mapped pair ({i}, {j})"))
        })?;
        let projected = tape.matmul(student, w)?;
        let term = tape.mse(projected, teacher)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Contract("hs_loss: empty layer mapping".into()))
}

/// Hidden-state transfer loss between two forward outputs.
pub fn hs_loss(
    student_out: &ModelOutputs,
    teacher_out: &ModelOutputs,
    mapping: &LayerMapping,
    projections: &ProjectionSet,
) -> Result<f64> {
    let mut tape = Tape::new();
    let student: Vec<Var> = student_out
        .hidden_states
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let teacher: BTreeMap<usize, Var> = teacher_out
        .hidden_states
        .iter()
        .enumerate()
        .map(|(idx, t)| (idx + 1, tape.constant(t.clone())))
        .collect();
    let proj = projections.bind(&mut tape, false);
    let loss = hs_loss_graph(&mut tape, mapping, &student, &teacher, &proj)?;
    tape.value(loss).item()
}

/// Attention-relation loss on an existing tape.
///
/// The concatenated Q (likewise K, V) of a layer is split into
/// `relation_heads` slices; each slice `A` forms the row-stochastic relation
/// `softmax(A·Aᵀ/√d_r)` of shape `|x|×|x|`, and the student relation matches
/// the teacher relation under row cross-entropy. The result is the mean over
/// `{Q, K, V} ×` relation heads (rows are averaged inside the
/// cross-entropy).
pub fn minilm_loss_graph(
    tape: &mut Tape,
    student_qkv: &Qkv<Var>,
    teacher_qkv: &Qkv<Var>,
    relation_heads: usize,
) -> Result<Var> {
    if relation_heads == 0 {
        return Err(Error::Config("relation_heads must be positive".into()));
    }
    let d_s = tape.value(student_qkv.q).cols();
    let d_t = tape.value(teacher_qkv.q).cols();
    for (d, who) in [(d_s, "student"), (d_t, "teacher")] {
        if d % relation_heads != 0 {
            return Err(Error::Config(format!(
                "{who} hidden size {d} not divisible by {relation_heads} relation heads"
            )));
        }
    }
    let dr_s = d_s / relation_heads;
    let dr_t = d_t / relation_heads;

    let mut total: Option<Var> = None;
    for (s_mat, t_mat) in [
        (student_qkv.q, teacher_qkv.q),
        (student_qkv.k, teacher_qkv.k),
        (student_qkv.v, teacher_qkv.v),
    ] {
        for r in 0..relation_heads {
            let rel_s = relation(tape, s_mat, r * dr_s, dr_s)?;
            let rel_t = relation(tape, t_mat, r * dr_t, dr_t)?;
            let term = tape.row_cross_entropy(rel_t, rel_s)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
    }
    let sum = total.expect("at least one relation term");
    Ok(tape.scale(sum, 1.0 / (3 * relation_heads) as f64))
}

/// `softmax(A·Aᵀ/√d_r)` for one relation-head slice.
fn relation(tape: &mut Tape, mat: Var, start: usize, width: usize) -> Result<Var> {
    let slice = tape.slice_cols(mat, start, width)?;
    let t = tape.transpose(slice)?;
    let scores = tape.matmul(slice, t)?;
    let scaled = tape.scale(scores, 1.0 / (width as f64).sqrt());
    tape.softmax_rows(scaled)
}

/// Attention-relation loss between two forward outputs with captured Q/K/V.
pub fn minilm_loss(
    student_out: &ModelOutputs,
    teacher_out: &ModelOutputs,
    teacher_layer: usize,
    student_layer: usize,
    relation_heads: usize,
) -> Result<f64> {
    let s = student_out.qkv.get(&student_layer).ok_or_else(|| {
        Error::Contract(format!("minilm_loss: student layer {student_layer} Q/K/V not captured"))
    })?;
    let t = teacher_out.qkv.get(&teacher_layer).ok_or_else(|| {
        Error::Contract(format!("minilm_loss: teacher layer {teacher_layer} Q/K/V not captured"))
    })?;
    let mut tape = Tape::new();
    let bind = |tape: &mut Tape, qkv: &Qkv<Tensor>| Qkv {
        q: tape.constant(qkv.q.clone()),
        k: tape.constant(qkv.k.clone()),
        v: tape.constant(qkv.v.clone()),
    };
    let s_vars = bind(&mut tape, s);
    let t_vars = bind(&mut tape, t);
    let loss = minilm_loss_graph(&mut tape, &s_vars, &t_vars, relation_heads)?;
    tape.value(loss).item()
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Which objective a distillation run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KdObjective {
    /// Hidden-state transfer with a layer-mapping strategy.
    Hs { strategy: MappingStrategy },
    /// Attention-relation transfer between one teacher and one student
    /// layer. `None` selects the second-to-last teacher layer and the last
    /// student layer.
    Minilm {
        teacher_layer: Option<usize>,
        student_layer: Option<usize>,
        relation_heads: usize,
    },
}

impl Default for KdObjective {
    fn default() -> Self {
        KdObjective::Hs {
            strategy: MappingStrategy::UniformLast,
        }
    }
}

/// Run length: explicit optimizer steps or full passes over the stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunDuration {
    Steps(usize),
    Epochs(usize),
}

/// Kind of learning-rate schedule; the concrete [`Schedule`] is derived from
/// the run length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    LinearWarmup,
}

/// Hyperparameters of one distillation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdRunConfig {
    pub objective: KdObjective,
    pub optimizer: OptimizerKind,
    pub peak_lr: f64,
    pub schedule: ScheduleKind,
    /// Warmup steps for the linear schedule; `None` uses 5% of the run.
    pub warmup_steps: Option<usize>,
    pub batch_size: usize,
    pub duration: RunDuration,
    pub seed: u64,
}

impl Default for KdRunConfig {
    fn default() -> Self {
        Self {
            objective: KdObjective::default(),
            optimizer: OptimizerKind::adamw_default(),
            peak_lr: 8e-4,
            schedule: ScheduleKind::LinearWarmup,
            warmup_steps: None,
            batch_size: 32,
            duration: RunDuration::Epochs(1),
            seed: 0,
        }
    }
}

impl KdRunConfig {
    fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config(format!(
                "peak learning rate must be positive, got {}",
                self.peak_lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub entries: Vec<(usize, f64)>,
}

impl LossHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, l)| *l).collect()
    }

    /// Mean loss over a window of steps ending at `end` (exclusive).
    pub fn smoothed(&self, end: usize, window: usize) -> Option<f64> {
        if end > self.entries.len() || end == 0 {
            return None;
        }
        let start = end.saturating_sub(window);
        let slice = &self.entries[start..end];
        Some(slice.iter().map(|(_, l)| l).sum::<f64>() / slice.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.entries {
            out.push_str(&format!("{step},{loss}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// Teacher activations needed by an objective, cached per sequence since the
/// teacher is frozen.
struct TeacherArtifacts {
    hidden: BTreeMap<usize, Tensor>,
    qkv: Option<Qkv<Tensor>>,
}

struct ObjectivePlan {
    mapping: Option<LayerMapping>,
    teacher_layer: usize,
    student_layer: usize,
    relation_heads: usize,
    teacher_capture: BTreeSet<usize>,
    student_capture: BTreeSet<usize>,
    teacher_hidden_needed: BTreeSet<usize>,
}

fn plan_objective(
    objective: &KdObjective,
    teacher_arch: &ArchState,
    student_arch: &ArchState,
) -> Result<ObjectivePlan> {
    match objective {
        KdObjective::Hs { strategy } => {
            let mapping = build_mapping(
                *strategy,
                teacher_arch.hidden_layers,
                student_arch.hidden_layers,
            )?;
            let needed: BTreeSet<usize> = mapping.flat_pairs().iter().map(|&(_, j)| j).collect();
            Ok(ObjectivePlan {
                mapping: Some(mapping),
                teacher_layer: 0,
                student_layer: 0,
                relation_heads: 0,
                teacher_capture: BTreeSet::new(),
                student_capture: BTreeSet::new(),
                teacher_hidden_needed: needed,
            })
        }
        KdObjective::Minilm {
            teacher_layer,
            student_layer,
            relation_heads,
        } => {
            let tl = teacher_layer.unwrap_or(teacher_arch.hidden_layers.saturating_sub(1).max(1));
            let sl = student_layer.unwrap_or(student_arch.hidden_layers);
            if tl == 0 || tl > teacher_arch.hidden_layers {
                return Err(Error::Config(format!(
                    "teacher relation layer {tl} outside 1..={}",
                    teacher_arch.hidden_layers
                )));
            }
            if sl == 0 || sl > student_arch.hidden_layers {
                return Err(Error::Config(format!(
                    "student relation layer {sl} outside 1..={}",
                    student_arch.hidden_layers
                )));
            }
            for (d, who) in [
                (teacher_arch.hidden_size, "teacher"),
                (student_arch.hidden_size, "student"),
            ] {
                if *relation_heads == 0 || d % relation_heads != 0 {
                    return Err(Error::Config(format!(
                        "{who} hidden size {d} not divisible by {relation_heads} relation heads"
                    )));
                }
            }
            Ok(ObjectivePlan {
                mapping: None,
                teacher_layer: tl,
                student_layer: sl,
                relation_heads: *relation_heads,
                teacher_capture: BTreeSet::from([tl]),
                student_capture: BTreeSet::from([sl]),
                teacher_hidden_needed: BTreeSet::new(),
            })
        }
    }
}

fn teacher_artifacts(
    teacher: &Model,
    plan: &ObjectivePlan,
    tokens: &[u32],
) -> Result<TeacherArtifacts> {
    let out = teacher.forward(tokens, &plan.teacher_capture)?;
    let hidden = plan
        .teacher_hidden_needed
        .iter()
        .map(|&j| (j, out.hidden_states[j - 1].clone()))
        .collect();
    let qkv = out.qkv.get(&plan.teacher_layer).cloned();
    Ok(TeacherArtifacts { hidden, qkv })
}

/// One sequence's objective loss on the live tape.
#[allow(clippy::too_many_arguments)]
fn sequence_loss(
    tape: &mut Tape,
    student: &Model,
    bound: &crate::model::BoundModel,
    proj_vars: &BTreeMap<(usize, usize), Var>,
    plan: &ObjectivePlan,
    artifacts: &TeacherArtifacts,
    tokens: &[u32],
) -> Result<Var> {
    let out = student.forward_bound(tape, bound, tokens, &plan.student_capture)?;
    match &plan.mapping {
        Some(mapping) => {
            let teacher_vars: BTreeMap<usize, Var> = artifacts
                .hidden
                .iter()
                .map(|(&j, t)| (j, tape.constant(t.clone())))
                .collect();
            hs_loss_graph(tape, mapping, &out.hidden_states, &teacher_vars, proj_vars)
        }
        None => {
            let t = artifacts
                .qkv
                .as_ref()
                .ok_or_else(|| Error::Contract("relation objective without teacher Q/K/V".into()))?;
            let t_vars = Qkv {
                q: tape.constant(t.q.clone()),
                k: tape.constant(t.k.clone()),
                v: tape.constant(t.v.clone()),
            };
            let s_vars = out
                .qkv
                .get(&plan.student_layer)
                .cloned()
                .ok_or_else(|| Error::Contract("relation objective without student Q/K/V".into()))?;
            minilm_loss_graph(tape, &s_vars, &t_vars, plan.relation_heads)
        }
    }
}

fn total_steps(duration: RunDuration, corpus: &BatchStream, batch_size: usize) -> usize {
    match duration {
        RunDuration::Steps(n) => n,
        RunDuration::Epochs(e) => e * corpus.num_sequences().div_ceil(batch_size.max(1)),
    }
}

/// Full distillation loop returning the trained student, the trained
/// projections (hidden-state objective only) and the loss history.
pub(crate) fn run_kd_inner(
    teacher: &Model,
    student_arch: &ArchState,
    corpus: &BatchStream,
    cfg: &KdRunConfig,
) -> Result<(Model, Option<ProjectionSet>, LossHistory)> {
    cfg.validate()?;
    student_arch.validate()?;
    if teacher.vocab_size() != corpus.vocab_size() {
        return Err(Error::Contract(format!(
            "teacher vocab {} does not match corpus vocab {}",
            teacher.vocab_size(),
            corpus.vocab_size()
        )));
    }
    if corpus.seq_len() > teacher.max_seq() {
        return Err(Error::Contract(format!(
            "corpus sequence length {} exceeds teacher max_seq {}",
            corpus.seq_len(),
            teacher.max_seq()
        )));
    }
    let plan = plan_objective(&cfg.objective, teacher.arch(), student_arch)?;
    let mut student = Model::new(
        *student_arch,
        corpus.vocab_size(),
        teacher.max_seq(),
        seeds::derive(cfg.seed, &[seeds::salt("student")]),
    )?;
    let mut projections = plan.mapping.as_ref().map(|m| {
        ProjectionSet::init(
            m,
            student_arch.hidden_size,
            teacher.arch().hidden_size,
            seeds::derive(cfg.seed, &[seeds::salt("projections")]),
        )
    });

    let total = total_steps(cfg.duration, corpus, cfg.batch_size);
    let mut history = LossHistory::default();
    if total == 0 {
        return Ok((student, projections, history));
    }
    let schedule = match cfg.schedule {
        ScheduleKind::Constant => Schedule::Constant,
        ScheduleKind::LinearWarmup => Schedule::LinearWarmup {
            warmup: cfg.warmup_steps.unwrap_or((total / 20).max(1)),
            total,
        },
    };
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut cache: HashMap<Vec<u32>, TeacherArtifacts> = HashMap::new();
    let mut step = 0usize;

    'epochs: for epoch in 0u64.. {
        for batch in corpus.batches_with(epoch, cfg.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let mut tape = Tape::new();
            let bound = student.bind(&mut tape, true);
            let proj_vars = projections
                .as_ref()
                .map(|p| p.bind(&mut tape, true))
                .unwrap_or_default();

            let mut batch_loss: Option<Var> = None;
            for seq in &batch {
                if !cache.contains_key(*seq) {
                    cache.insert(seq.to_vec(), teacher_artifacts(teacher, &plan, seq)?);
                }
                let artifacts = &cache[*seq];
                let term =
                    sequence_loss(&mut tape, &student, &bound, &proj_vars, &plan, artifacts, seq)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            let loss = tape.scale(batch_loss.expect("non-empty batch"), 1.0 / batch.len() as f64);
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(Error::Diverged { step });
            }
            tape.backward(loss)?;

            let mut grads: Vec<Vec<f64>> = Vec::new();
            for (_, var) in bound.named_vars() {
                grads.push(tape.grad(var).expect("tracked student param").to_vec());
            }
            for var in proj_vars.values() {
                grads.push(tape.grad(*var).expect("tracked projection").to_vec());
            }
            let mut params: Vec<&mut Tensor> = student
                .named_params_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            if let Some(p) = projections.as_mut() {
                params.extend(p.tensors_mut());
            }
            optimizer.step(&mut params, &grads, schedule.lr(cfg.peak_lr, step))?;

            history.entries.push((step, loss_val));
            step += 1;
        }
        if corpus.num_sequences() == 0 {
            break;
        }
    }
    Ok((student, projections, history))
}

/// Distil a student of the given architecture from a frozen teacher.
///
/// Deterministic per `(config seed, corpus seed)`; the trained projections
/// are internal to the run and dropped from the result.
pub fn run_kd(
    teacher: &Model,
    student_arch: &ArchState,
    corpus: &BatchStream,
    cfg: &KdRunConfig,
) -> Result<(Model, LossHistory)> {
    let (student, _proj, history) = run_kd_inner(teacher, student_arch, corpus, cfg)?;
    Ok((student, history))
}

/// Mean objective loss of a trained student over an evaluation stream, using
/// the projections trained alongside it.
fn evaluate_loss(
    teacher: &Model,
    student: &Model,
    projections: Option<&ProjectionSet>,
    plan: &ObjectivePlan,
    eval: &BatchStream,
) -> Result<f64> {
    let mut total = 0.0;
    for seq in eval.sequences() {
        let artifacts = teacher_artifacts(teacher, plan, seq)?;
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, false);
        let proj_vars = projections
            .map(|p| p.bind(&mut tape, false))
            .unwrap_or_default();
        let loss = sequence_loss(&mut tape, student, &bound, &proj_vars, plan, &artifacts, seq)?;
        total += tape.value(loss).item()?;
    }
    Ok(total / eval.num_sequences() as f64)
}

/// Reduced distillation: train on a deterministic proxy subset for a few
/// epochs, then report the mean objective loss on the held-out evaluation
/// slice.
pub fn mini_kd(
    teacher: &Model,
    state: &ArchState,
    corpus: &BatchStream,
    base: &KdRunConfig,
    proxy_fraction: f64,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let (train, heldout) = corpus.proxy_split(proxy_fraction, seed)?;
    let cfg = KdRunConfig {
        duration: RunDuration::Epochs(epochs),
        seed: seeds::derive(seed, &[seeds::salt("mini_kd")]),
        ..*base
    };
    let (student, projections, _history) = run_kd_inner(teacher, state, &train, &cfg)?;
    let plan = plan_objective(&cfg.objective, teacher.arch(), state)?;
    evaluate_loss(teacher, &student, projections.as_ref(), &plan, &heldout)
}

// ---------------------------------------------------------------------------
// Proxy calibration
// ---------------------------------------------------------------------------

/// A proxy evaluation budget: corpus fraction and epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxySetting {
    pub fraction: f64,
    pub epochs: usize,
}

impl ProxySetting {
    /// Relative training cost (sequences visited).
    pub fn cost(&self) -> f64 {
        self.fraction * self.epochs as f64
    }
}

impl fmt::Display for ProxySetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.0}%x{}", self.fraction * 100.0, self.epochs)
    }
}

/// One candidate's calibration outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub setting: ProxySetting,
    pub spearman: f64,
    pub cost: f64,
    pub accepted: bool,
}

/// Full correlation table produced by proxy calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub reference: ProxySetting,
    pub probes: Vec<ArchState>,
    pub reference_losses: Vec<f64>,
    pub rows: Vec<CalibrationRow>,
}

impl fmt::Display for CalibrationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "reference {} over {} probes", self.reference, self.probes.len())?;
        writeln!(f, "candidate,cost,spearman,accepted")?;
        for row in &self.rows {
            writeln!(
                f,
                "{},{},{},{}",
                row.setting, row.cost, row.spearman, row.accepted
            )?;
        }
        Ok(())
    }
}

/// Spearman rank correlation with tie-averaged ranks; NaN when either side
/// has zero rank variance.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut pos = 0;
    while pos < idx.len() {
        let mut end = pos;
        while end + 1 < idx.len() && values[idx[end + 1]] == values[idx[pos]] {
            end += 1;
        }
        let mean_rank = (pos + end) as f64 / 2.0 + 1.0;
        for &i in &idx[pos..=end] {
            ranks[i] = mean_rank;
        }
        pos = end + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Pick the cheapest proxy setting whose loss ranking over probe states
/// agrees with the reference setting (Spearman ≥ threshold).
///
/// `eval(probe_index, state, setting)` must be deterministic in its
/// arguments so reference and candidates see identical conditions.
pub fn calibrate_proxy_with<F>(
    mut eval: F,
    probes: &[ArchState],
    candidates: &[ProxySetting],
    reference: ProxySetting,
    min_rank_correlation: f64,
) -> Result<(ProxySetting, CalibrationTable)>
where
    F: FnMut(usize, &ArchState, ProxySetting) -> Result<f64>,
{
    if probes.len() < 4 {
        return Err(Error::Input(format!(
            "proxy calibration needs at least 4 probe states, got {}",
            probes.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Input("no candidate proxy settings".into()));
    }
    for c in candidates {
        // The reference must be at least as large in both dimensions;
        // equality degenerates to correlation 1 and is accepted.
        if c.fraction > reference.fraction || c.epochs > reference.epochs {
            return Err(Error::Config(format!(
                "candidate {c} exceeds reference {reference}"
            )));
        }
    }

    let mut reference_losses = Vec::with_capacity(probes.len());
    for (i, state) in probes.iter().enumerate() {
        reference_losses.push(eval(i, state, reference)?);
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &setting in candidates {
        let mut losses = Vec::with_capacity(probes.len());
        for (i, state) in probes.iter().enumerate() {
            losses.push(eval(i, state, setting)?);
        }
        let rho = spearman(&losses, &reference_losses);
        rows.push(CalibrationRow {
            setting,
            spearman: rho,
            cost: setting.cost(),
            accepted: rho >= min_rank_correlation,
        });
    }
    let table = CalibrationTable {
        reference,
        probes: probes.to_vec(),
        reference_losses,
        rows,
    };
    let chosen = table
        .rows
        .iter()
        .filter(|r| r.accepted)
        .min_by(|a, b| {
            a.cost
                .total_cmp(&b.cost)
                .then(a.setting.fraction.total_cmp(&b.setting.fraction))
                .then(a.setting.epochs.cmp(&b.setting.epochs))
        })
        .map(|r| r.setting);
    match chosen {
        Some(setting) => Ok((setting, table)),
        None => Err(Error::CalibrationFailed {
            threshold: min_rank_correlation,
            table: table.to_string(),
        }),
    }
}

/// [`calibrate_proxy_with`] evaluated by real reduced distillation runs.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_proxy(
    teacher: &Model,
    corpus: &BatchStream,
    base: &KdRunConfig,
    probes: &[ArchState],
    candidates: &[ProxySetting],
    reference: ProxySetting,
    min_rank_correlation: f64,
    seed: u64,
) -> Result<(ProxySetting, CalibrationTable)> {
    calibrate_proxy_with(
        |i, state, setting| {
            // Same per-probe seed for every setting, so rows differ only in
            // the proxy budget.
            let probe_seed = seeds::derive(seed, &[seeds::salt("probe"), i as u64]);
            mini_kd(
                teacher,
                state,
                corpus,
                base,
                setting.fraction,
                setting.epochs,
                probe_seed,
            )
        },
        probes,
        candidates,
        reference,
        min_rank_correlation,
    )
}

// ---------------------------------------------------------------------------
// Teacher warmup
// ---------------------------------------------------------------------------

/// Optional short masked-token prediction run to give a fresh desk teacher
/// non-degenerate representations. A temporary decoder head is trained along
/// with the encoder and dropped afterwards.
pub fn warm_teacher(
    teacher: &mut Model,
    corpus: &BatchStream,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<LossHistory> {
    let vocab = teacher.vocab_size();
    let d = teacher.arch().hidden_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::salt("warmup")]));
    let bound_w = (6.0 / (d + vocab) as f64).sqrt();
    let mut w_dec = Tensor::uniform(vec![d, vocab], -bound_w, bound_w, &mut rng);
    let mut b_dec = Tensor::zeros(vec![vocab]);
    let mut optimizer = Optimizer::new(OptimizerKind::adamw_default());
    let mut history = LossHistory::default();

    let mut step = 0usize;
    'outer: for epoch in 0u64.. {
        for batch in corpus.batches(epoch) {
            if step >= steps {
                break 'outer;
            }
            let mut tape = Tape::new();
            let bound = teacher.bind(&mut tape, true);
            let wv = tape.leaf(w_dec.clone(), true);
            let bv = tape.leaf(b_dec.clone(), true);
            let mut batch_loss: Option<Var> = None;
            for (si, seq) in batch.iter().enumerate() {
                let (corrupted, _mask) = BatchStream::corrupt_masked(
                    seq,
                    seeds::derive(seed, &[step as u64, si as u64]),
                );
                let out = teacher.forward_bound(&mut tape, &bound, &corrupted, &BTreeSet::new())?;
                let last = *out.hidden_states.last().expect("at least one layer");
                let logits_lin = tape.matmul(last, wv)?;
                let logits = tape.add_row(logits_lin, bv)?;
                let pred = tape.softmax_rows(logits)?;
                let mut onehot = Tensor::zeros(vec![seq.len(), vocab]);
                for (r, &tok) in seq.iter().enumerate() {
                    onehot.data_mut()[r * vocab + tok as usize] = 1.0;
                }
                let target = tape.constant(onehot);
                let term = tape.row_cross_entropy(target, pred)?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            let loss = tape.scale(batch_loss.expect("non-empty batch"), 1.0 / batch.len() as f64);
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(Error::Diverged { step });
            }
            tape.backward(loss)?;
            let mut grads: Vec<Vec<f64>> = Vec::new();
            for (_, var) in bound.named_vars() {
                grads.push(tape.grad(var).expect("tracked teacher param").to_vec());
            }
            grads.push(tape.grad(wv).unwrap().to_vec());
            grads.push(tape.grad(bv).unwrap().to_vec());
            let mut params: Vec<&mut Tensor> = teacher
                .named_params_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            params.push(&mut w_dec);
            params.push(&mut b_dec);
            optimizer.step(&mut params, &grads, lr)?;
            history.entries.push((step, loss_val));
            step += 1;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, CorpusSource};
    use crate::gradcheck::grad_check;
    use crate::space;

    fn small_corpus(n: usize, vocab: usize, seq_len: usize, seed: u64) -> BatchStream {
        load_corpus(
            &CorpusSource::Synthetic { num_sequences: n },
            vocab,
            seq_len,
            8,
            seed,
        )
        .unwrap()
    }

    fn toy_teacher() -> Model {
        let arch = ArchState::new(4, 2, 12, 16, crate::arch::Activation::Gelu).unwrap();
        Model::new(arch, 32, 8, 100).unwrap()
    }

    #[test]
    fn identity_distillation_is_zero_loss() {
        let teacher = toy_teacher();
        let student = teacher.clone();
        let mapping = build_mapping(MappingStrategy::Last, 4, 4).unwrap();
        let projections = ProjectionSet::identity(&mapping, 12);
        let tokens = [1u32, 5, 9];
        let t_out = teacher.forward(&tokens, &BTreeSet::new()).unwrap();
        let s_out = student.forward(&tokens, &BTreeSet::new()).unwrap();
        let loss = hs_loss(&s_out, &t_out, &mapping, &projections).unwrap();
        assert!(loss < 1e-12, "identity loss {loss}");
    }

    #[test]
    fn hs_loss_nonnegative_and_needs_projections() {
        let teacher = toy_teacher();
        let student_arch = ArchState::new(2, 2, 8, 12, crate::arch::Activation::Relu).unwrap();
        let student = Model::new(student_arch, 32, 8, 3).unwrap();
        let mapping = build_mapping(MappingStrategy::UniformLast, 4, 2).unwrap();
        let projections = ProjectionSet::init(&mapping, 8, 12, 17);
        let tokens = [2u32, 3, 4];
        let t_out = teacher.forward(&tokens, &BTreeSet::new()).unwrap();
        let s_out = student.forward(&tokens, &BTreeSet::new()).unwrap();
        let loss = hs_loss(&s_out, &t_out, &mapping, &projections).unwrap();
        assert!(loss > 0.0);

        let missing = ProjectionSet {
            mats: projections
                .mats
                .iter()
                .take(1)
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        };
        assert!(matches!(
            hs_loss(&s_out, &t_out, &mapping, &missing),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn hs_loss_gradients_match_finite_differences() {
        // Loss as a function of student hidden states and projections.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mapping = build_mapping(MappingStrategy::UniformLast, 4, 2).unwrap();
        let seq = 3;
        let d_s = 4;
        let d_t = 6;
        let teacher_hidden: Vec<Tensor> = (0..4)
            .map(|_| Tensor::uniform(vec![seq, d_t], -1.0, 1.0, &mut rng))
            .collect();
        let student_hidden: Vec<Tensor> = (0..2)
            .map(|_| Tensor::uniform(vec![seq, d_s], -1.0, 1.0, &mut rng))
            .collect();
        let pairs = mapping.flat_pairs();
        let proj: Vec<Tensor> = pairs
            .iter()
            .map(|_| Tensor::uniform(vec![d_s, d_t], -0.5, 0.5, &mut rng))
            .collect();

        let mut point = student_hidden.clone();
        point.extend(proj.clone());
        let teacher_clone = teacher_hidden.clone();
        let mapping_clone = mapping.clone();
        let report = grad_check(
            move |tape, vars| {
                let student: Vec<Var> = vars[..2].to_vec();
                let teacher: BTreeMap<usize, Var> = teacher_clone
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (i + 1, tape.constant(t.clone())))
                    .collect();
                let projections: BTreeMap<(usize, usize), Var> = pairs
                    .iter()
                    .enumerate()
                    .map(|(idx, &key)| (key, vars[2 + idx]))
                    .collect();
                hs_loss_graph(tape, &mapping_clone, &student, &teacher, &projections)
            },
            &point,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn minilm_self_loss_is_entropy_with_zero_gradient() {
        let teacher = toy_teacher();
        let tokens = [3u32, 7, 2, 9];
        let capture: BTreeSet<usize> = [3].into();
        let out = teacher.forward(&tokens, &capture).unwrap();
        let loss = minilm_loss(&out, &out, 3, 3, 2).unwrap();

        // Mean relation entropy computed independently.
        let qkv = &out.qkv[&3];
        let mut entropy_sum = 0.0;
        let mut terms = 0;
        for mat in [&qkv.q, &qkv.k, &qkv.v] {
            for r in 0..2 {
                let width = 6;
                let mut tape = Tape::new();
                let m = tape.constant(mat.clone());
                let rel = relation(&mut tape, m, r * width, width).unwrap();
                let rel_v = tape.value(rel);
                let rows = rel_v.rows();
                let mut h = 0.0;
                for i in 0..rows {
                    for j in 0..rel_v.cols() {
                        let p = rel_v.at(i, j);
                        h -= p * (p + crate::tape::CROSS_ENTROPY_FLOOR).ln();
                    }
                }
                entropy_sum += h / rows as f64;
                terms += 1;
            }
        }
        let expected = entropy_sum / terms as f64;
        assert!(
            (loss - expected).abs() < 1e-9,
            "loss {loss} vs entropy {expected}"
        );

        // Gradient w.r.t. student Q/K/V vanishes at equality.
        let mut tape = Tape::new();
        let t_vars = Qkv {
            q: tape.constant(qkv.q.clone()),
            k: tape.constant(qkv.k.clone()),
            v: tape.constant(qkv.v.clone()),
        };
        let s_vars = Qkv {
            q: tape.leaf(qkv.q.clone(), true),
            k: tape.leaf(qkv.k.clone(), true),
            v: tape.leaf(qkv.v.clone(), true),
        };
        let l = minilm_loss_graph(&mut tape, &s_vars, &t_vars, 2).unwrap();
        tape.backward(l).unwrap();
        for var in [s_vars.q, s_vars.k, s_vars.v] {
            let max = tape
                .grad(var)
                .unwrap()
                .iter()
                .fold(0.0f64, |m, g| m.max(g.abs()));
            assert!(max < 1e-9, "gradient at equality {max}");
        }
    }

    #[test]
    fn minilm_relations_are_sequence_sized() {
        // Different widths, same |x|: relation matrices stay |x|×|x|.
        let teacher = toy_teacher();
        let student_arch = ArchState::new(2, 2, 8, 12, crate::arch::Activation::Silu).unwrap();
        let student = Model::new(student_arch, 32, 8, 3).unwrap();
        let tokens = [1u32, 2, 3, 4, 5];
        let t_out = teacher.forward(&tokens, &[3].into()).unwrap();
        let s_out = student.forward(&tokens, &[2].into()).unwrap();
        let loss = minilm_loss(&s_out, &t_out, 3, 2, 2).unwrap();
        assert!(loss.is_finite() && loss > 0.0);

        // Incompatible relation head count is a configuration error.
        assert!(matches!(
            minilm_loss(&s_out, &t_out, 3, 2, 5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn minilm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let seq = 4;
        let d_s = 4;
        let d_t = 6;
        let point: Vec<Tensor> = (0..6)
            .map(|i| {
                let d = if i < 3 { d_s } else { d_t };
                Tensor::uniform(vec![seq, d], -1.0, 1.0, &mut rng)
            })
            .collect();
        let report = grad_check(
            |tape, vars| {
                let s = Qkv {
                    q: vars[0],
                    k: vars[1],
                    v: vars[2],
                };
                let t = Qkv {
                    q: vars[3],
                    k: vars[4],
                    v: vars[5],
                };
                minilm_loss_graph(tape, &s, &t, 2)
            },
            &point,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn minilm_invariant_to_relation_head_order() {
        // The loss is a symmetric sum over head slices; computing the heads
        // in any order gives the same value up to float summation noise.
        let teacher = toy_teacher();
        let tokens = [4u32, 1, 6];
        let out = teacher.forward(&tokens, &[2].into()).unwrap();
        let qkv = &out.qkv[&2];
        let heads = 3;
        let width = 4;
        let full = minilm_loss(&out, &out, 2, 2, heads).unwrap();

        let mut permuted_sum = 0.0;
        for r in [2usize, 0, 1] {
            for mat in [&qkv.q, &qkv.k, &qkv.v] {
                let mut tape = Tape::new();
                let m = tape.constant(mat.clone());
                let rel = relation(&mut tape, m, r * width, width).unwrap();
                let rel2 = relation(&mut tape, m, r * width, width).unwrap();
                let ce = tape.row_cross_entropy(rel, rel2).unwrap();
                permuted_sum += tape.value(ce).item().unwrap();
            }
        }
        let permuted = permuted_sum / (3 * heads) as f64;
        assert!((full - permuted).abs() < 1e-12);
    }

    #[test]
    fn run_kd_zero_steps_returns_initialization() {
        let teacher = toy_teacher();
        let corpus = small_corpus(16, 32, 8, 1);
        let arch = ArchState::new(2, 2, 8, 12, crate::arch::Activation::Gelu).unwrap();
        let cfg = KdRunConfig {
            duration: RunDuration::Steps(0),
            batch_size: 4,
            seed: 9,
            ..KdRunConfig::default()
        };
        let (student, history) = run_kd(&teacher, &arch, &corpus, &cfg).unwrap();
        let fresh = Model::new(arch, 32, 8, seeds::derive(9, &[seeds::salt("student")])).unwrap();
        for ((n, a), (_, b)) in student.named_params().iter().zip(fresh.named_params()) {
            assert_eq!(a.data(), b.data(), "{n} changed in a zero-step run");
        }
        assert!(history.entries.is_empty());
    }

    #[test]
    fn run_kd_is_deterministic_and_freezes_teacher() {
        let teacher = toy_teacher();
        let before: Vec<Vec<f64>> = teacher
            .named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        let corpus = small_corpus(24, 32, 8, 4);
        let arch = ArchState::new(2, 2, 8, 12, crate::arch::Activation::Gelu).unwrap();
        let cfg = KdRunConfig {
            duration: RunDuration::Steps(6),
            batch_size: 8,
            seed: 5,
            ..KdRunConfig::default()
        };
        let (_, h1) = run_kd(&teacher, &arch, &corpus, &cfg).unwrap();
        let (_, h2) = run_kd(&teacher, &arch, &corpus, &cfg).unwrap();
        assert_eq!(h1, h2);
        let after: Vec<Vec<f64>> = teacher
            .named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        assert_eq!(before, after, "teacher parameters mutated");
    }

    #[test]
    fn kd_descends_on_toy_setup() {
        let teacher = toy_teacher();
        let corpus = small_corpus(32, 32, 8, 2);
        let arch = ArchState::new(2, 2, 8, 12, crate::arch::Activation::Gelu).unwrap();
        let cfg = KdRunConfig {
            duration: RunDuration::Steps(50),
            batch_size: 8,
            peak_lr: 2e-3,
            seed: 3,
            ..KdRunConfig::default()
        };
        let (_, history) = run_kd(&teacher, &arch, &corpus, &cfg).unwrap();
        let early = history.smoothed(5, 5).unwrap();
        let late = history.smoothed(50, 5).unwrap();
        assert!(late < early, "loss did not descend: {early} -> {late}");
    }

    #[test]
    fn minilm_objective_trains() {
        let teacher = toy_teacher();
        let corpus = small_corpus(16, 32, 8, 6);
        let arch = ArchState::new(2, 2, 8, 12, crate::arch::Activation::Gelu).unwrap();
        let cfg = KdRunConfig {
            objective: KdObjective::Minilm {
                teacher_layer: None,
                student_layer: None,
                relation_heads: 2,
            },
            duration: RunDuration::Steps(10),
            batch_size: 8,
            peak_lr: 1e-3,
            seed: 8,
            ..KdRunConfig::default()
        };
        let (_, history) = run_kd(&teacher, &arch, &corpus, &cfg).unwrap();
        assert_eq!(history.entries.len(), 10);
        assert!(history.losses().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn mini_kd_deterministic_and_degenerate_fraction_decomposes() {
        let teacher = toy_teacher();
        let corpus = small_corpus(20, 32, 8, 12);
        let arch = ArchState::new(2, 2, 8, 12, crate::arch::Activation::Gelu).unwrap();
        let base = KdRunConfig {
            batch_size: 4,
            peak_lr: 1e-3,
            ..KdRunConfig::default()
        };
        let a = mini_kd(&teacher, &arch, &corpus, &base, 0.3, 2, 77).unwrap();
        let b = mini_kd(&teacher, &arch, &corpus, &base, 0.3, 2, 77).unwrap();
        assert_eq!(a, b);

        // fraction 1.0 equals running the full pipeline by hand.
        let got = mini_kd(&teacher, &arch, &corpus, &base, 1.0, 1, 7).unwrap();
        let (train, heldout) = corpus.proxy_split(1.0, 7).unwrap();
        let cfg = KdRunConfig {
            duration: RunDuration::Epochs(1),
            seed: seeds::derive(7, &[seeds::salt("mini_kd")]),
            ..base
        };
        let (student, proj, _) = run_kd_inner(&teacher, &arch, &train, &cfg).unwrap();
        let plan = plan_objective(&cfg.objective, teacher.arch(), &arch).unwrap();
        let manual = evaluate_loss(&teacher, &student, proj.as_ref(), &plan, &heldout).unwrap();
        assert_eq!(got, manual);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 1.0, -2.0]), -1.0);
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_nan());
        // Tie handling: average ranks.
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.5, 2.5, 4.0]);
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_picks_cheapest_faithful_proxy() {
        let probes: Vec<ArchState> = space::desk_space().enumerate().into_iter().take(6).collect();
        // True quality is monotone in hidden size + layers.
        let quality =
            |s: &ArchState| s.hidden_size as f64 + 10.0 * s.hidden_layers as f64;
        let reference = ProxySetting {
            fraction: 1.0,
            epochs: 8,
        };
        let faithful_small = ProxySetting {
            fraction: 0.2,
            epochs: 2,
        };
        let scrambler = ProxySetting {
            fraction: 0.1,
            epochs: 1,
        };
        let (chosen, table) = calibrate_proxy_with(
            |i, state, setting| {
                if setting == scrambler {
                    // Cheapest but rank-scrambling.
                    Ok(((i * 7919) % 13) as f64)
                } else {
                    Ok(1000.0 - quality(state) * setting.cost().max(0.1))
                }
            },
            &probes,
            &[scrambler, faithful_small, reference],
            reference,
            0.8,
        )
        .unwrap();
        assert_eq!(chosen, faithful_small);
        assert_eq!(table.rows.len(), 3);
        let scrambler_row = table.rows.iter().find(|r| r.setting == scrambler).unwrap();
        assert!(!scrambler_row.accepted);
        // candidate == reference trivially correlates perfectly
        let ref_row = table.rows.iter().find(|r| r.setting == reference).unwrap();
        assert_eq!(ref_row.spearman, 1.0);
    }

    #[test]
    fn calibration_failure_and_preconditions() {
        let probes: Vec<ArchState> = space::desk_space().enumerate().into_iter().take(4).collect();
        let reference = ProxySetting {
            fraction: 1.0,
            epochs: 4,
        };
        let cand = ProxySetting {
            fraction: 0.5,
            epochs: 2,
        };
        // Impossible threshold: even a perfect proxy fails.
        let err = calibrate_proxy_with(
            |_, state, _| Ok(state.hidden_size as f64),
            &probes,
            &[cand],
            reference,
            1.01,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CalibrationFailed { .. }));

        // Too few probes.
        assert!(matches!(
            calibrate_proxy_with(
                |_, _, _| Ok(0.0),
                &probes[..3],
                &[cand],
                reference,
                0.8
            ),
            Err(Error::Input(_))
        ));

        // Candidate exceeding the reference.
        let too_big = ProxySetting {
            fraction: 1.0,
            epochs: 5,
        };
        assert!(matches!(
            calibrate_proxy_with(
                |_, _, _| Ok(0.0),
                &probes,
                &[too_big],
                reference,
                0.8
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn teacher_warmup_reduces_masked_prediction_loss() {
        let mut teacher = toy_teacher();
        let corpus = small_corpus(16, 32, 8, 15);
        let history = warm_teacher(&mut teacher, &corpus, 12, 2e-3, 3).unwrap();
        assert_eq!(history.entries.len(), 12);
        let first = history.entries.first().unwrap().1;
        let last = history.entries.last().unwrap().1;
        assert!(last < first, "warmup did not descend: {first} -> {last}");
    }
}

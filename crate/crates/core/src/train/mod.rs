//! Two-phase optimization of a [`GaussianScene`] and the overlap field: a
//! reconstruction-only warm-up with density control, then the full weighted
//! objective with the clustering and event-consistency terms.

pub mod adam;
pub mod densify;
pub mod eval;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{EventStream, FrameSequence};
use crate::disentangle::{clustering_loss, sample_pairs, ClusteringState, SceneDecomposition};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json};
use crate::render::{recon_loss, render, render_backward, Overlap, OverlapField, RenderConfig};
use crate::scene::gaussian::G3_LEN;
use crate::scene::{
    build_targets, consistency_loss, init_scene, ConsistencyConfig, ConsistencyTarget, GaussianScene, InitConfig, SceneGrad,
};
use crate::track::Trajectory;

pub use adam::Adam;
pub use densify::{densify_prune, DensifyConfig, DensifyOutcome, GradStats};
pub use eval::{evaluate, EvalMetrics};

/// Which parts of the pipeline take part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// One static Gaussian set, no objects, no fusion.
    Unified,
    /// Background and object layers blended with a fixed overlap probability.
    Disentangle,
    /// Both layers plus the learned overlap field.
    Full,
}

/// Per-class step sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    /// Position rate reached at the last iteration (exponential decay).
    pub position_final: f64,
    /// World-units multiplier of the position rates.
    pub position_scale: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    /// Knot offsets and log temporal scales.
    pub deform: f64,
    /// Temporal centers, seconds per step.
    pub temporal_center: f64,
    pub depth: f64,
    pub overlap: f64,
    pub feature_map: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            position_scale: 5.0,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            deform: 1e-3,
            temporal_center: 1e-3,
            depth: 1e-3,
            overlap: 1e-3,
            feature_map: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub seed: u64,
    /// Every n-th frame (offset n/2) is held out; 0 keeps all frames.
    pub holdout_every: usize,
    pub mode: TrainMode,
    /// Overlap probability used in [`TrainMode::Disentangle`].
    pub fixed_rho: f64,
    pub render: RenderConfig,
    pub consistency: ConsistencyConfig,
    pub init: InitConfig,
    /// Number of event-consistency sample times.
    pub consistency_samples: usize,
    pub clustering_margin: f64,
    pub clustering_pairs: usize,
    pub log_every: usize,
    /// Held-out evaluation cadence; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Checkpoint cadence; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.1,
            phase1_iters: 1500,
            phase2_iters: 500,
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            seed: 0,
            holdout_every: 10,
            mode: TrainMode::Full,
            fixed_rho: 0.5,
            render: RenderConfig::default(),
            consistency: ConsistencyConfig::default(),
            init: InitConfig::default(),
            consistency_samples: 16,
            clustering_margin: 1.0,
            clustering_pairs: 1024,
            log_every: 10,
            eval_every: 0,
            checkpoint_every: 0,
            divergence_factor: 10.0,
            divergence_patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3]
            .iter()
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.fixed_rho) {
            return Err(Error::invalid("fixed_rho must lie in [0, 1]"));
        }
        if self.densify.split_factor <= 1.0 {
            return Err(Error::invalid("densify.split_factor must exceed 1"));
        }
        Ok(())
    }

    pub fn total_iters(&self) -> usize {
        self.phase1_iters + self.phase2_iters
    }
}

/// Weighted objective. Any non-finite component is an error naming it.
pub fn total_loss(recon: f64, clu: f64, consis: f64, cfg: &TrainConfig) -> Result<f64> {
    for (name, v) in [("reconstruction", recon), ("clustering", clu), ("consistency", consis)] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("{name} loss is {v}")));
        }
    }
    Ok(cfg.lambda1 * recon + cfg.lambda2 * clu + cfg.lambda3 * consis)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub phase: u8,
    pub frame: usize,
    pub recon: f64,
    pub l1: f64,
    pub ssim: f64,
    pub clu: f64,
    pub consis: f64,
    pub total: f64,
    pub gaussians: usize,
    pub object_gaussians: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensifyRecord {
    pub iter: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub gaussians: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterRecord>,
    pub evals: Vec<EvalRecord>,
    pub densify: Vec<DensifyRecord>,
    pub warnings: Vec<String>,
    pub wall_clock_s: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Iter(&'a IterRecord),
    Eval(&'a EvalRecord),
    Densify(&'a DensifyRecord),
    Summary {
        iterations: usize,
        warnings: &'a [String],
        wall_clock_s: f64,
    },
}

impl TrainReport {
    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty() && self.evals.is_empty() && self.densify.is_empty()
    }

    /// Mean loss over consecutive windows of logged iterations.
    pub fn smoothed_loss(&self, window: usize, phase: u8) -> Vec<f64> {
        let v: Vec<f64> = self.iterations.iter().filter(|r| r.phase == phase).map(|r| r.recon).collect();
        v.chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// One JSON object per line, tagged by `kind`, ending with a summary.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let mut push = |l: ReportLine| {
            out.push_str(&serde_json::to_string(&l).expect("report records serialize"));
            out.push('\n');
        };
        self.iterations.iter().for_each(|r| push(ReportLine::Iter(r)));
        self.densify.iter().for_each(|r| push(ReportLine::Densify(r)));
        self.evals.iter().for_each(|r| push(ReportLine::Eval(r)));
        push(ReportLine::Summary {
            iterations: self.iterations.len(),
            warnings: &self.warnings,
            wall_clock_s: self.wall_clock_s,
        });
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json_lines().as_bytes())
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub scene: GaussianScene,
    pub overlap: OverlapField,
    pub report: TrainReport,
    /// Clustering state after the clustering-term updates, when one was given.
    pub clustering: Option<ClusteringState>,
    pub train_indices: Vec<usize>,
    pub heldout_indices: Vec<usize>,
}

pub const OVERLAP_FILE: &str = "overlap.json";
pub const REPORT_FILE: &str = "report.jsonl";

impl TrainOutput {
    /// Scene checkpoint, overlap field, report and clustering state.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_checkpoint(dir, &self.scene, &self.overlap)?;
        if let Some(c) = &self.clustering {
            write_json(&dir.join("clustering.json"), c)?;
        }
        self.report.write(&dir.join(REPORT_FILE))
    }

    pub fn overlap_mode<'a>(&'a self, cfg: &TrainConfig) -> Overlap<'a> {
        overlap_for(cfg, &self.overlap)
    }
}

pub fn write_checkpoint(dir: &Path, scene: &GaussianScene, overlap: &OverlapField) -> Result<()> {
    scene.write_checkpoint(dir)?;
    write_json(&dir.join(OVERLAP_FILE), overlap)
}

pub fn overlap_for<'a>(cfg: &TrainConfig, field: &'a OverlapField) -> Overlap<'a> {
    match cfg.mode {
        TrainMode::Unified => Overlap::Constant(0.0),
        TrainMode::Disentangle => Overlap::Constant(cfg.fixed_rho),
        TrainMode::Full => Overlap::Field(field),
    }
}

/// Training and held-out frame indices.
pub fn split_frames(n: usize, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
    if holdout_every < 2 || n < 2 {
        return ((0..n).collect(), Vec::new());
    }
    let off = holdout_every / 2;
    (0..n).partition(|i| i % holdout_every != off)
}

fn restrict(decomp: &SceneDecomposition, idx: &[usize]) -> SceneDecomposition {
    let mut d = decomp.clone();
    d.timestamps = idx.iter().map(|&i| decomp.timestamps[i]).collect();
    d.masks = idx.iter().map(|&i| decomp.masks[i].clone()).collect();
    d.bboxes = idx.iter().map(|&i| decomp.bboxes[i].clone()).collect();
    d.assignments = idx
        .iter()
        .map(|&i| decomp.assignments.get(i).cloned().unwrap_or_default())
        .collect();
    d
}

/// Parameter class of each entry of [`GaussianScene::params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
    TemporalCenter,
    Deform,
    Depth,
}

fn classes(scene: &GaussianScene) -> Vec<Class> {
    let g3 = |v: &mut Vec<Class>| {
        v.extend([Class::Position; 3]);
        v.extend([Class::Rotation; 4]);
        v.extend([Class::Scale; 3]);
        v.push(Class::Opacity);
        v.extend([Class::Color; 3]);
    };
    let mut v = Vec::new();
    scene.background.iter().for_each(|_| g3(&mut v));
    for o in scene.objects.values() {
        v.push(Class::Depth);
        for g in &o.gaussians {
            g3(&mut v);
            v.push(Class::TemporalCenter);
            v.push(Class::Deform);
            v.extend(std::iter::repeat_n(Class::Deform, 3 * g.knots.len()));
        }
    }
    v
}

fn rates(classes: &[Class], lr: &LearningRates, position: f64) -> Vec<f64> {
    classes
        .iter()
        .map(|c| match c {
            Class::Position => position,
            Class::Rotation => lr.rotation,
            Class::Scale => lr.scale,
            Class::Opacity => lr.opacity,
            Class::Color => lr.color,
            Class::TemporalCenter => lr.temporal_center * 1e6,
            Class::Deform => lr.deform,
            Class::Depth => lr.depth,
        })
        .collect()
}

fn position_rate(lr: &LearningRates, it: usize, total: usize) -> f64 {
    let a = if total > 1 { it as f64 / (total - 1) as f64 } else { 0.0 };
    let (l0, l1) = (lr.position.max(1e-300).ln(), lr.position_final.max(1e-300).ln());
    (l0 + (l1 - l0) * a).exp() * lr.position_scale
}

/// Flat-vector index of every Gaussian's first parameter, in params order,
/// with a depth slot per object.
fn param_sources(old: &GaussianScene, out: &DensifyOutcome) -> Vec<Option<usize>> {
    let mut bg_start = Vec::new();
    let mut o = 0;
    for _ in &old.background {
        bg_start.push(o);
        o += G3_LEN;
    }
    let mut obj_start = std::collections::BTreeMap::new();
    for (id, ob) in &old.objects {
        let depth = o;
        o += 1;
        let mut starts = Vec::new();
        for g in &ob.gaussians {
            starts.push(o);
            o += g.len_params();
        }
        obj_start.insert(*id, (depth, starts));
    }
    let mut src = Vec::new();
    for s in &out.background_sources {
        src.extend((0..G3_LEN).map(|k| s.map(|i| bg_start[i] + k)));
    }
    for (id, ob) in &out.scene.objects {
        let (depth, starts) = &obj_start[id];
        src.push(Some(*depth));
        for (g, s) in ob.gaussians.iter().zip(&out.object_sources[id]) {
            src.extend((0..g.len_params()).map(|k| s.map(|i| starts[i] + k)));
        }
    }
    src
}

fn hygiene(scene: &mut GaussianScene) -> Result<()> {
    for g in &mut scene.background {
        g.normalize_rotation();
        g.c = g.c.map(|c| c.clamp(0.0, 1.0));
    }
    for o in scene.objects.values_mut() {
        for g in &mut o.gaussians {
            g.g.normalize_rotation();
            g.g.c = g.g.c.map(|c| c.clamp(0.0, 1.0));
        }
    }
    if !scene.is_finite() {
        return Err(Error::Numerical("scene parameters became non-finite".into()));
    }
    Ok(())
}

/// Event-consistency sample times: midpoints between consecutive training
/// frames inside some object's trajectory span, thinned to `n` evenly spaced.
fn consistency_times(scene: &GaussianScene, frames: &FrameSequence, n: usize) -> Vec<u64> {
    let ts = frames.timestamps();
    let inside = |t: u64| {
        scene
            .objects
            .values()
            .any(|o| o.trajectory.span().is_some_and(|(a, b)| t >= a && t <= b))
    };
    let mids: Vec<u64> = ts.windows(2).map(|w| (w[0] + w[1]) / 2).filter(|&t| inside(t)).collect();
    if n == 0 || mids.len() <= n {
        return mids;
    }
    (0..n).map(|k| mids[k * (mids.len() - 1) / (n - 1).max(1)]).collect()
}

/// Clustering-term state carried through phase 2.
struct ClusterTerm {
    state: ClusteringState,
    adam: Adam,
}

/// Runs both phases. With `out_dir`, intermediate checkpoints go to
/// `out_dir/checkpoints/iter_NNNNNN`.
pub fn train(
    frames: &FrameSequence,
    stream: &EventStream,
    decomp: &SceneDecomposition,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    frames.validate()?;
    if decomp.masks.len() != frames.len() {
        return Err(Error::invalid(format!(
            "decomposition has {} masks for {} frames",
            decomp.masks.len(),
            frames.len()
        )));
    }
    let start = Instant::now();
    let (train_idx, heldout_idx) = split_frames(frames.len(), cfg.holdout_every);
    let train_frames = frames.subset(&train_idx);
    let heldout = frames.subset(&heldout_idx);
    let train_decomp = match cfg.mode {
        TrainMode::Unified => SceneDecomposition::from_masks(
            frames.width,
            frames.height,
            train_frames.timestamps(),
            vec![vec![0; frames.width * frames.height]; train_idx.len()],
        )?,
        _ => restrict(decomp, &train_idx),
    };
    let mut init_cfg = cfg.init.clone();
    init_cfg.seed = init_cfg.seed.wrapping_add(cfg.seed);
    let mut scene = init_scene(&train_decomp, &train_frames, trajectories, &init_cfg)?;
    let (t0, t1) = frames.span();
    let mut field = OverlapField::new(frames.width, frames.height, (t0 as f64, t1 as f64), cfg.seed ^ 0x5eed);
    let mut clustering = match cfg.mode {
        TrainMode::Unified => None,
        _ => decomp.clustering.clone(),
    };

    let mut report = TrainReport::default();
    let total = cfg.total_iters();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scene_adam = Adam::new(scene.params().len());
    let mut field_adam = Adam::new(OverlapField::num_params());
    let mut class_of = classes(&scene);
    let mut stats = GradStats::new(&scene);
    let mut cluster_term: Option<ClusterTerm> = None;
    let mut targets: Vec<ConsistencyTarget> = Vec::new();
    let learn_field = cfg.mode == TrainMode::Full;

    let mut order: Vec<usize> = Vec::new();
    let mut initial_loss: Option<f64> = None;
    let mut above = 0usize;

    for it in 0..total {
        let phase: u8 = if it < cfg.phase1_iters { 1 } else { 2 };
        if it == cfg.phase1_iters && phase == 2 {
            if cfg.lambda3 > 0.0 && !scene.objects.is_empty() {
                let times = consistency_times(&scene, &train_frames, cfg.consistency_samples);
                targets = build_targets(&scene, &train_frames, stream, &train_decomp, &times, &cfg.consistency)?;
            }
            if cfg.lambda2 > 0.0 {
                if let Some(state) = clustering.take() {
                    let n = state.model.map.num_params();
                    cluster_term = Some(ClusterTerm { state, adam: Adam::new(n) });
                }
            }
        }
        if order.is_empty() {
            order = (0..train_frames.len()).collect();
            order.shuffle(&mut rng);
        }
        let fi = order.pop().expect("non-empty order");
        let frame = &train_frames.frames[fi];
        let overlap = overlap_for(cfg, &field);
        let out = render(
            &scene,
            &frame.camera,
            frames.width,
            frames.height,
            frame.timestamp_us as f64,
            overlap,
            &cfg.render,
        );
        let rl = recon_loss(&out.raw, &frame.image)?;
        let d_raw: Vec<f64> = rl.grad.iter().map(|g| g * cfg.lambda1).collect();
        let (mut grad, field_grad) = render_backward(&scene, &out, overlap, &d_raw, &cfg.render);
        stats.accumulate(&grad);

        // Phase-2 terms; both stay exactly zero during phase 1.
        let mut clu = 0.0;
        let mut consis = 0.0;
        let mut consis_grad: Option<SceneGrad> = None;
        if phase == 2 {
            if let Some(ct) = cluster_term.as_mut() {
                let pairs = sample_pairs(ct.state.features.len(), cfg.clustering_pairs, &mut rng);
                let m = &ct.state.model;
                let cl = clustering_loss(&m.map, &ct.state.features, &m.labels, m.k, cfg.clustering_margin, &pairs)?;
                let norm = (ct.state.features.len() + pairs.len()).max(1) as f64;
                clu = cl.loss / norm;
                let g: Vec<f64> = cl.grad.iter().map(|v| cfg.lambda2 * v / norm).collect();
                let mut p = ct.state.model.map.params();
                ct.adam.update(&mut p, &g, &[cfg.lr.feature_map]);
                ct.state.model.map.set_params(&p);
            }
            if !targets.is_empty() {
                let tgt = std::slice::from_ref(&targets[it % targets.len()]);
                let co = consistency_loss(&scene, tgt, &cfg.consistency, &cfg.render)?;
                let norm = (co.color_terms + co.flow_terms).max(1) as f64;
                consis = co.loss / norm;
                let mut g = co.grad;
                g.scale(cfg.lambda3 / norm);
                consis_grad = Some(g);
            }
        } else {
            assert!(
                clu == 0.0 && consis == 0.0 && consis_grad.is_none(),
                "phase-2 terms active in phase 1"
            );
        }
        if let Some(g) = &consis_grad {
            grad.add_scaled(g, 1.0);
        }

        let total_value = total_loss(rl.loss, clu, consis, cfg)?;
        let init = *initial_loss.get_or_insert(total_value);
        if total_value > cfg.divergence_factor * init {
            above += 1;
            if above >= cfg.divergence_patience {
                return Err(Error::Numerical(format!(
                    "loss diverged: {total_value:.4e} > {}x initial {init:.4e} for {above} consecutive iterations",
                    cfg.divergence_factor
                )));
            }
        } else {
            above = 0;
        }

        let flat = grad.to_vec();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite scene gradient at iteration {it}")));
        }
        let mut params = scene.params();
        let lr = rates(&class_of, &cfg.lr, position_rate(&cfg.lr, it, total));
        scene_adam.update(&mut params, &flat, &lr);
        scene.set_params(&params);
        hygiene(&mut scene)?;
        if learn_field {
            if let Some(fg) = field_grad {
                let mut p = field.params();
                field_adam.update(&mut p, &fg.to_vec(), &[cfg.lr.overlap]);
                field.set_params(&p);
            }
        }

        if cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == total) {
            report.iterations.push(IterRecord {
                iter: it,
                phase,
                frame: train_idx[fi],
                recon: rl.loss,
                l1: rl.l1,
                ssim: rl.ssim,
                clu,
                consis,
                total: total_value,
                gaussians: scene.num_gaussians(),
                object_gaussians: scene.num_object_gaussians(),
            });
        }

        let d = &cfg.densify;
        if phase == 1 && d.interval > 0 && it + 1 >= d.start_iter && (it + 1) % d.interval == 0 && it + 1 < cfg.phase1_iters {
            let outcome = densify_prune(&scene, &stats, d, &mut rng);
            if outcome.cloned + outcome.split + outcome.pruned > 0 {
                let src = param_sources(&scene, &outcome);
                scene_adam.remap(&src);
                scene = outcome.scene;
                class_of = classes(&scene);
            }
            report.densify.push(DensifyRecord {
                iter: it,
                cloned: outcome.cloned,
                split: outcome.split,
                pruned: outcome.pruned,
                gaussians: scene.num_gaussians(),
            });
            stats = GradStats::new(&scene);
        }

        if cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 && it + 1 < total && !heldout.is_empty() {
            let m = evaluate(&scene, overlap_for(cfg, &field), &heldout, &cfg.render)?;
            report.evals.push(EvalRecord {
                iter: it,
                psnr: m.psnr,
                ssim: m.ssim,
            });
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < total {
                write_checkpoint(&dir.join("checkpoints").join(format!("iter_{:06}", it + 1)), &scene, &field)?;
            }
        }
    }
    if total > 0 && !heldout.is_empty() {
        let m = evaluate(&scene, overlap_for(cfg, &field), &heldout, &cfg.render)?;
        report.evals.push(EvalRecord {
            iter: total,
            psnr: m.psnr,
            ssim: m.ssim,
        });
    }
    if let Some(ct) = cluster_term {
        let mut state = ct.state;
        state.model.update_centers(&state.features);
        clustering = Some(state);
    }
    for t in &targets {
        if t.flow.num_valid() == 0 {
            let w = format!("no valid event flow at t = {}", t.t_us);
            if !report.warnings.contains(&w) {
                report.warnings.push(w);
            }
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(TrainOutput {
        scene,
        overlap: field,
        report,
        clustering,
        train_indices: train_idx,
        heldout_indices: heldout_idx,
    })
}

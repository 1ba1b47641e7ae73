use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{EventStream, FrameSequence};
use crate::disentangle::cluster::{refine, ClusterModel, FeatureMap, RefineConfig};
use crate::disentangle::features::{build_features, FeatureVector};
use crate::disentangle::kmeans::kmeans;
use crate::disentangle::slic::{slic_superpixels, SuperpixelMap};
use crate::disentangle::voxel::{voxelize_events, EventVoxelGrid};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisentangleConfig {
    pub superpixels: usize,
    pub compactness: f64,
    pub bins: usize,
    pub clusters: usize,
    pub steps: usize,
    pub step_size: f64,
    pub margin: f64,
    pub max_pairs: usize,
    /// Scale applied to the normalized motion part before clustering.
    pub motion_weight: f64,
    /// Standard deviation of the noise added to the identity-initialized map.
    pub map_init_noise: f64,
    pub seed: u64,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        DisentangleConfig {
            superpixels: 200,
            compactness: 10.0,
            bins: 8,
            clusters: 2,
            steps: 200,
            step_size: 0.1,
            margin: 1.0,
            max_pairs: 4096,
            motion_weight: 1.0,
            map_init_noise: 0.01,
            seed: 7,
        }
    }
}

/// Inclusive pixel box `[x0, y0, x1, y1]`.
pub type BBox = [usize; 4];

/// Features and the trained clustering model, kept for the clustering term
/// during joint optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringState {
    pub features: Vec<Vec<f64>>,
    pub model: ClusterModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDecomposition {
    pub width: usize,
    pub height: usize,
    pub timestamps: Vec<u64>,
    /// Per frame, per pixel: 0 for background, otherwise the object id.
    pub masks: Vec<Vec<u32>>,
    pub object_ids: Vec<u32>,
    pub bboxes: Vec<BTreeMap<u32, BBox>>,
    /// Per frame, per superpixel cluster index.
    pub assignments: Vec<Vec<usize>>,
    pub cluster_centers: Vec<Vec<f64>>,
    /// Mean raw event density of each cluster's members.
    pub cluster_density: Vec<f64>,
    pub background_cluster: Option<usize>,
    pub warnings: Vec<String>,
    pub clustering: Option<ClusteringState>,
}

impl SceneDecomposition {
    /// Decomposition built directly from per-frame id masks.
    pub fn from_masks(width: usize, height: usize, timestamps: Vec<u64>, masks: Vec<Vec<u32>>) -> Result<Self> {
        if masks.len() != timestamps.len() || masks.iter().any(|m| m.len() != width * height) {
            return Err(Error::invalid("one full-size mask per timestamp required"));
        }
        let mut ids: Vec<u32> = masks.iter().flatten().copied().filter(|&m| m != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(SceneDecomposition {
            width,
            height,
            bboxes: masks.iter().map(|m| bboxes_of(m, width)).collect(),
            assignments: vec![Vec::new(); masks.len()],
            timestamps,
            masks,
            object_ids: ids,
            cluster_centers: Vec::new(),
            cluster_density: Vec::new(),
            background_cluster: None,
            warnings: Vec::new(),
            clustering: None,
        })
    }

    pub fn num_objects(&self) -> usize {
        self.object_ids.len()
    }

    pub fn num_frames(&self) -> usize {
        self.masks.len()
    }

    pub fn mask(&self, frame: usize, id: u32) -> Vec<bool> {
        self.masks[frame].iter().map(|&m| m == id).collect()
    }

    pub fn pixel_count(&self, frame: usize, id: u32) -> usize {
        self.masks[frame].iter().filter(|&&m| m == id).count()
    }

    /// Mean pixel coordinate of the object's mask in `frame`.
    pub fn centroid(&self, frame: usize, id: u32) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (i, &m) in self.masks[frame].iter().enumerate() {
            if m == id {
                sx += (i % self.width) as f64;
                sy += (i / self.width) as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn first_frame_with(&self, id: u32) -> Option<usize> {
        (0..self.num_frames()).find(|&f| self.pixel_count(f, id) > 0)
    }

    fn summary(&self) -> DecompositionSummary {
        DecompositionSummary {
            width: self.width,
            height: self.height,
            num_objects: self.num_objects(),
            object_ids: self.object_ids.clone(),
            per_frame: (0..self.num_frames())
                .map(|f| FrameSummary {
                    mask_path: format!("mask_{f:04}.png"),
                    timestamp_us: self.timestamps[f],
                    object_bboxes: self.bboxes[f].iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                    assignments: self.assignments[f].clone(),
                })
                .collect(),
            cluster_centers: self.cluster_centers.clone(),
            cluster_density: self.cluster_density.clone(),
            background_cluster: self.background_cluster,
            warnings: self.warnings.clone(),
        }
    }

    /// Writes `mask_NNNN.png` label maps, `decomposition.json` and, when
    /// present, `clustering.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        if self.object_ids.iter().any(|&id| id > 255) {
            return Err(Error::invalid("object ids above 255 cannot be stored in 8-bit masks"));
        }
        let summary = self.summary();
        for (mask, fs) in self.masks.iter().zip(&summary.per_frame) {
            let data = mask.iter().map(|&m| f64::from(m) / 255.0).collect();
            Image::from_data(self.width, self.height, 1, data).write_png(&dir.join(&fs.mask_path))?;
        }
        write_json(&dir.join("decomposition.json"), &summary)?;
        if let Some(c) = &self.clustering {
            write_json(&dir.join("clustering.json"), c)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("decomposition.json");
        let s: DecompositionSummary = read_json(&path)?;
        let mut masks = Vec::with_capacity(s.per_frame.len());
        for fs in &s.per_frame {
            let p = dir.join(&fs.mask_path);
            let img = Image::read_png(&p)?;
            if img.channels != 1 || img.width != s.width || img.height != s.height {
                return Err(Error::data(
                    &p,
                    None,
                    "mask must be a grayscale image matching the decomposition size",
                ));
            }
            masks.push(img.data.iter().map(|v| (v * 255.0).round() as u32).collect());
        }
        let mut bboxes = Vec::new();
        for fs in &s.per_frame {
            let mut m = BTreeMap::new();
            for (k, v) in &fs.object_bboxes {
                let id = k.parse().map_err(|_| Error::data(&path, None, format!("bad object id '{k}'")))?;
                m.insert(id, *v);
            }
            bboxes.push(m);
        }
        let cpath = dir.join("clustering.json");
        let clustering = if cpath.exists() { Some(read_json(&cpath)?) } else { None };
        Ok(SceneDecomposition {
            width: s.width,
            height: s.height,
            timestamps: s.per_frame.iter().map(|f| f.timestamp_us).collect(),
            masks,
            object_ids: s.object_ids,
            bboxes,
            assignments: s.per_frame.into_iter().map(|f| f.assignments).collect(),
            cluster_centers: s.cluster_centers,
            cluster_density: s.cluster_density,
            background_cluster: s.background_cluster,
            warnings: s.warnings,
            clustering,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FrameSummary {
    mask_path: String,
    timestamp_us: u64,
    object_bboxes: BTreeMap<String, BBox>,
    assignments: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DecompositionSummary {
    width: usize,
    height: usize,
    num_objects: usize,
    object_ids: Vec<u32>,
    per_frame: Vec<FrameSummary>,
    cluster_centers: Vec<Vec<f64>>,
    cluster_density: Vec<f64>,
    background_cluster: Option<usize>,
    warnings: Vec<String>,
}

/// Intersection over union of two boolean masks; 1 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Event window centered on each frame, one frame interval wide.
pub fn frame_windows(frames: &FrameSequence) -> Vec<(u64, u64)> {
    let ts = frames.timestamps();
    let dt = if ts.len() > 1 {
        ((ts[ts.len() - 1] - ts[0]) / (ts.len() as u64 - 1)).max(2)
    } else {
        33_334
    };
    ts.iter()
        .map(|&t| {
            let lo = t.saturating_sub(dt / 2).max(ts[0]);
            let hi = (t + dt / 2).min(ts[ts.len() - 1] + 1).max(lo + 1);
            (lo, hi)
        })
        .collect()
}

fn bboxes_of(mask: &[u32], w: usize) -> BTreeMap<u32, BBox> {
    let mut out: BTreeMap<u32, BBox> = BTreeMap::new();
    for (i, &m) in mask.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let b = out.entry(m).or_insert([x, y, x, y]);
        b[0] = b[0].min(x);
        b[1] = b[1].min(y);
        b[2] = b[2].max(x);
        b[3] = b[3].max(y);
    }
    out
}

fn all_background(frames: &FrameSequence, sps: &[SuperpixelMap], warning: String) -> SceneDecomposition {
    let n = frames.width * frames.height;
    SceneDecomposition {
        width: frames.width,
        height: frames.height,
        timestamps: frames.timestamps(),
        masks: vec![vec![0; n]; frames.len()],
        object_ids: Vec::new(),
        bboxes: vec![BTreeMap::new(); frames.len()],
        assignments: sps.iter().map(|s| vec![0; s.len()]).collect(),
        cluster_centers: Vec::new(),
        cluster_density: Vec::new(),
        background_cluster: Some(0),
        warnings: vec![warning],
        clustering: None,
    }
}

/// Superpixels, event voxel grids, features, k-means pseudo-labels, feature
/// map refinement and final nearest-center labels. The cluster with the
/// lowest mean event density is background; every other non-empty cluster
/// becomes an object with ids assigned in cluster order from 1.
pub fn disentangle_scene(frames: &FrameSequence, stream: &EventStream, cfg: &DisentangleConfig) -> Result<SceneDecomposition> {
    frames.validate()?;
    if stream.width != frames.width || stream.height != frames.height {
        return Err(Error::invalid("event sensor and frame sizes differ"));
    }
    if cfg.clusters < 2 {
        return Err(Error::invalid(
            "at least two clusters are needed to separate background from objects",
        ));
    }
    let k_sp = cfg.superpixels.min(frames.width * frames.height);
    let sps: Vec<SuperpixelMap> = frames
        .frames
        .par_iter()
        .map(|f| slic_superpixels(&f.image, k_sp, cfg.compactness))
        .collect::<Result<_>>()?;
    let grids: Vec<EventVoxelGrid> = frame_windows(frames)
        .into_iter()
        .map(|w| voxelize_events(stream, w, cfg.bins))
        .collect::<Result<_>>()?;
    if grids.iter().all(|g| g.total_count() == 0) {
        return Ok(all_background(
            frames,
            &sps,
            "no events in any frame window; scene treated as background".into(),
        ));
    }

    let feats: Vec<FeatureVector> = build_features(&frames.frames, &sps, &grids)?;
    let xs: Vec<Vec<f64>> = feats
        .iter()
        .map(|f| {
            let mut v = f.appearance.clone();
            v.extend(f.motion.iter().map(|m| m * cfg.motion_weight));
            v
        })
        .collect();
    let km = kmeans(&xs, cfg.clusters, cfg.seed)?;
    let map = FeatureMap::near_identity(xs[0].len(), cfg.map_init_noise, cfg.seed);
    let mut model = ClusterModel::new(cfg.clusters, km.labels, map)?;
    let rcfg = RefineConfig {
        steps: cfg.steps,
        step_size: cfg.step_size,
        margin: cfg.margin,
        max_pairs: cfg.max_pairs,
        seed: cfg.seed,
    };
    let (_, mut warnings) = refine(&mut model, &xs, &rcfg)?;
    model.relabel(&xs);

    let k = cfg.clusters;
    let mut dens = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (f, &l) in feats.iter().zip(&model.labels) {
        dens[l] += f.event_density;
        counts[l] += 1;
    }
    for (d, &c) in dens.iter_mut().zip(&counts) {
        if c > 0 {
            *d /= c as f64;
        }
    }
    let populated: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if populated.iter().all(|&c| dens[c] == 0.0) {
        return Ok(all_background(
            frames,
            &sps,
            "all clusters are empty of events; scene treated as background".into(),
        ));
    }
    let background = populated
        .iter()
        .copied()
        .min_by(|&a, &b| dens[a].total_cmp(&dens[b]))
        .expect("at least one populated cluster");
    let mut cluster_to_id = vec![0u32; k];
    let mut object_ids = Vec::new();
    for &c in &populated {
        if c != background {
            let id = object_ids.len() as u32 + 1;
            cluster_to_id[c] = id;
            object_ids.push(id);
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            warnings.push(format!("cluster {c} has no members after refinement"));
        }
    }

    let mut assignments: Vec<Vec<usize>> = sps.iter().map(|s| vec![0; s.len()]).collect();
    for (f, &l) in feats.iter().zip(&model.labels) {
        assignments[f.frame][f.superpixel] = l;
    }
    let masks: Vec<Vec<u32>> = sps
        .iter()
        .zip(&assignments)
        .map(|(sp, a)| sp.labels.iter().map(|&s| cluster_to_id[a[s as usize]]).collect())
        .collect();
    let bboxes = masks.iter().map(|m| bboxes_of(m, frames.width)).collect();

    Ok(SceneDecomposition {
        width: frames.width,
        height: frames.height,
        timestamps: frames.timestamps(),
        masks,
        object_ids,
        bboxes,
        assignments,
        cluster_centers: model.centers.clone(),
        cluster_density: dens,
        background_cluster: Some(background),
        warnings,
        clustering: Some(ClusteringState { features: xs, model }),
    })
}

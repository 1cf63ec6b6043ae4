//! End-to-end reconstruction: per-state part graphs, cross-state alignment,
//! correspondence filtering, initialization and training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corr::{lift_pixel_matches, locality_filter, MatchPair, PixelMatch};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::grid::LabelMap;
use crate::loss::{bind_matches, SceneModel};
use crate::seg::{align_states, build_part_graph, SegConfig, StateAlignment};
use crate::train::{init_model, select_canonical, train, Source, TrainConfig, TrainData, TrainLog};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Full run configuration, read from a TOML file with optional `[seg]` and
/// `[train]` tables of flat `key = value` entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seg: SegConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Observations of one object in two states. Frame labels are view-local
/// mask ids; match view indices refer to positions in `frames`.
#[derive(Clone, Debug)]
pub struct SceneInputs {
    pub frames: [Vec<Frame>; 2],
    pub matches: Vec<PixelMatch>,
}

/// Segmentation and correspondence results feeding the trainer.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Part count (state-0 global labels; label `l` is part `l − 1`).
    pub n_parts: usize,
    pub canonical: u8,
    /// Frames of each state with labels in the shared label space.
    pub frames: [Vec<Frame>; 2],
    pub alignment: StateAlignment,
    /// Lifted matches in state 0 → state 1 orientation, with filter flags.
    pub matches: Vec<MatchPair>,
    /// Rows whose endpoints had no valid depth.
    pub dropped: usize,
    pub warnings: Vec<String>,
}

impl Prepared {
    /// Matches oriented canonical → other state.
    pub fn oriented_matches(&self) -> Vec<MatchPair> {
        if self.canonical == 0 {
            return self.matches.clone();
        }
        self.matches
            .iter()
            .map(|m| MatchPair {
                view0: m.view1,
                view1: m.view0,
                pix0: m.pix1,
                pix1: m.pix0,
                p3d0: m.p3d1,
                p3d1: m.p3d0,
                ..*m
            })
            .collect()
    }

    pub fn canonical_frames(&self) -> &[Frame] {
        &self.frames[self.canonical as usize]
    }

    pub fn other_frames(&self) -> &[Frame] {
        &self.frames[1 - self.canonical as usize]
    }
}

fn with_labels(frames: &[Frame], labels: Vec<LabelMap>) -> Vec<Frame> {
    frames
        .iter()
        .zip(labels)
        .map(|(f, labels)| Frame { labels, ..f.clone() })
        .collect()
}

/// Builds per-state part graphs, lifts and filters matches, aligns state 1
/// labels to state 0 and picks the canonical state.
pub fn prepare(inputs: &SceneInputs, cfg: &Config) -> Result<Prepared> {
    for s in 0..2 {
        if inputs.frames[s].is_empty() {
            return Err(Error::InvalidInput(format!("no frames for state {s}")));
        }
    }
    let mut warnings = Vec::new();
    let graphs = [0, 1].map(|s| build_part_graph(&inputs.frames[s], &cfg.seg));
    let mut global: [Vec<LabelMap>; 2] = Default::default();
    for s in 0..2 {
        let g = &graphs[s];
        for w in &g.warnings {
            warnings.push(format!("state {s}: {w:?}"));
        }
        global[s] = inputs.frames[s]
            .iter()
            .enumerate()
            .map(|(i, f)| g.relabel(i, &f.labels))
            .collect();
    }
    let n_parts = graphs[0].n_parts;
    if n_parts == 0 {
        return Err(Error::InvalidInput("segmentation found no parts in state 0".into()));
    }
    let lifted = lift_pixel_matches(&inputs.matches, &inputs.frames[0], &inputs.frames[1])?;
    let mut matches = lifted.matches;
    locality_filter(&mut matches, cfg.train.locality_r, cfg.train.locality_r_prime);
    let alignment = align_states(&global[0], n_parts, &global[1], graphs[1].n_parts, &matches);
    if !alignment.unmapped.is_empty() {
        warnings.push(format!("state-1 labels without a state-0 partner: {:?}", alignment.unmapped));
    }
    if !alignment.collisions.is_empty() {
        warnings.push(format!("state-0 labels claimed twice: {:?}", alignment.collisions));
    }
    let aligned1: Vec<LabelMap> = global[1].iter().map(|l| alignment.apply(l)).collect();
    let canonical = select_canonical(&global[0], &aligned1);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Prepared {
        n_parts,
        canonical,
        frames: [with_labels(&inputs.frames[0], global[0].clone()), with_labels(&inputs.frames[1], aligned1)],
        alignment,
        matches,
        dropped: lifted.dropped,
        warnings,
    })
}

/// A trained model with everything needed to evaluate or resume it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: Config,
    pub config_hash: String,
    pub canonical_state: u8,
    pub model: SceneModel,
    pub sources: Vec<Source>,
    pub locked: Vec<usize>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))?;
        let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(v).map_err(|e| Error::format(path, e))?;
        ck.model.field.validate()?;
        Ok(ck)
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub checkpoint: Checkpoint,
    pub prepared: Prepared,
    pub log: TrainLog,
}

/// Runs preparation, initialization and the three training stages.
pub fn reconstruct(inputs: &SceneInputs, cfg: &Config) -> Result<Reconstruction> {
    reconstruct_with(inputs, cfg, |_| {})
}

/// [`reconstruct`] with a hook that may alter the model between
/// initialization and training.
pub fn reconstruct_with(
    inputs: &SceneInputs,
    cfg: &Config,
    after_init: impl FnOnce(&mut SceneModel),
) -> Result<Reconstruction> {
    cfg.train.validate()?;
    let prepared = prepare(inputs, cfg)?;
    let canon = prepared.canonical_frames();
    let labels: Vec<LabelMap> = canon.iter().map(|f| f.labels.clone()).collect();
    let (mut model, sources) = init_model(canon, &labels, prepared.n_parts, &cfg.train)?;
    after_init(&mut model);
    let oriented = prepared.oriented_matches();
    let bound = bind_matches(&model, &oriented);
    let data = TrainData {
        canonical: canon,
        other: prepared.other_frames(),
        matches: &bound,
    };
    let log = train(&mut model, &data, &cfg.train)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        canonical_state: prepared.canonical,
        model,
        sources,
        locked: log.locked.clone(),
    };
    Ok(Reconstruction {
        checkpoint,
        prepared,
        log,
    })
}

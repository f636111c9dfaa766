//! Scene files: JSON with Gaussian parameters inline and deformation weights
//! as base64 little-endian float64.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{DeformationField, Gaussian2D, GaussianScene, Mlp};
use crate::error::SplatError;

pub const SCENE_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema: u32,
    pub height: usize,
    pub width: usize,
    pub background: [f64; 3],
    pub gaussians: Vec<Gaussian2D>,
    pub deformation: DeformationFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationFile {
    pub time_freqs: usize,
    pub pos_freqs: usize,
    pub dtype: String,
    pub position: NetworkFile,
    pub rotation: NetworkFile,
    pub scale: NetworkFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub sizes: Vec<usize>,
    pub weights: String,
}

fn encode(net: &Mlp) -> NetworkFile {
    let bytes: Vec<u8> = net.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    NetworkFile { sizes: net.sizes(), weights: STANDARD.encode(bytes) }
}

fn decode(name: &str, f: &NetworkFile) -> Result<Mlp, SplatError> {
    let bytes = STANDARD.decode(&f.weights).map_err(|e| SplatError::Scene(format!("{name}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(SplatError::Scene(format!("{name}: truncated weights")));
    }
    let p: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Mlp::from_params(&f.sizes, &p).ok_or_else(|| SplatError::Scene(format!("{name}: weights do not match sizes")))
}

impl SceneFile {
    pub fn from_scene(scene: &GaussianScene) -> Self {
        let d = &scene.deformation;
        Self {
            schema: SCENE_SCHEMA,
            height: scene.height,
            width: scene.width,
            background: scene.background,
            gaussians: scene.gaussians.clone(),
            deformation: DeformationFile {
                time_freqs: d.time_freqs,
                pos_freqs: d.pos_freqs,
                dtype: "float64".into(),
                position: encode(&d.position),
                rotation: encode(&d.rotation),
                scale: encode(&d.scale),
            },
        }
    }

    pub fn into_scene(self) -> Result<GaussianScene, SplatError> {
        if self.schema != SCENE_SCHEMA {
            return Err(SplatError::Scene(format!("unsupported schema {}", self.schema)));
        }
        let d = &self.deformation;
        if d.dtype != "float64" {
            return Err(SplatError::Scene(format!("unsupported dtype {}", d.dtype)));
        }
        let deformation = DeformationField {
            time_freqs: d.time_freqs,
            pos_freqs: d.pos_freqs,
            position: decode("position", &d.position)?,
            rotation: decode("rotation", &d.rotation)?,
            scale: decode("scale", &d.scale)?,
        };
        let scene = GaussianScene {
            height: self.height,
            width: self.width,
            gaussians: self.gaussians,
            deformation,
            background: self.background,
        };
        scene.validate().map_err(|e| SplatError::Scene(e.to_string()))?;
        Ok(scene)
    }
}

pub fn save_scene(scene: &GaussianScene, path: &Path) -> Result<(), crate::Error> {
    let text = serde_json::to_string_pretty(&SceneFile::from_scene(scene))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<GaussianScene, crate::Error> {
    let text = std::fs::read_to_string(path)?;
    let file: SceneFile = serde_json::from_str(&text)?;
    Ok(file.into_scene()?)
}

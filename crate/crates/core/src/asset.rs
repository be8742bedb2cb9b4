//! The relightable unit: fitted SDF field, all photometric views, and the
//! optional roughness field, bundled as one directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SdfField;
use crate::materialopt::RoughnessField;
use crate::photometric::{load_ps_views, save_ps_views, PsView};

#[derive(Debug, Clone)]
pub struct NeuralAsset {
    pub field: SdfField,
    pub ps_views: Vec<PsView>,
    pub roughness: Option<RoughnessField>,
    pub l0: f64,
    pub bounding_radius: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AssetMeta {
    l0: f64,
    bounding_radius: f64,
    has_roughness: bool,
}

impl NeuralAsset {
    /// Layout: `asset.json`, `field.{json,bin}`, `ps/…`, and optionally
    /// `roughness.{json,bin}`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = AssetMeta {
            l0: self.l0,
            bounding_radius: self.bounding_radius,
            has_roughness: self.roughness.is_some(),
        };
        std::fs::write(dir.join("asset.json"), serde_json::to_string_pretty(&meta)?)?;
        self.field.save(&dir.join("field"))?;
        save_ps_views(&dir.join("ps"), &self.ps_views)?;
        if let Some(r) = &self.roughness {
            r.save(&dir.join("roughness"))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<NeuralAsset> {
        let meta_path = dir.join("asset.json");
        if !meta_path.is_file() {
            return Err(Error::invalid(format!(
                "no asset found at {}",
                dir.display()
            )));
        }
        let meta: AssetMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
        Ok(NeuralAsset {
            field: SdfField::load(&dir.join("field"))?,
            ps_views: load_ps_views(&dir.join("ps"))?,
            roughness: if meta.has_roughness {
                Some(RoughnessField::load(&dir.join("roughness"))?)
            } else {
                None
            },
            l0: meta.l0,
            bounding_radius: meta.bounding_radius,
        })
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join("asset.json").is_file()
    }
}

//! Perception backends for the toolbox: live HTTP services wrapping external
//! segmentation and point-map models, plus loading of synthetic fixtures.
//!
//! Live wire format (JSON over POST):
//! - `{endpoint}/segment`: `{"image_png", "queries"}` → `{"masks": [null | {"mask_png", "confidence"}]}`
//! - `{endpoint}/pts3d`: `{"image_png"}` → `{"width", "height", "points", "valid"}` with
//!   `points` base64 little-endian f32 xyz triples and `valid` base64 bytes
//! - `{endpoint}/intrinsics`: `{"image_png"}` → `{"fx", "fy", "cx", "cy"}`
//!
//! Images and masks travel as base64 PNG.

use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};
use worldprog_core::toolbox::synthetic::{Legend, SyntheticBackend, SyntheticFixture};
use worldprog_core::toolbox::{
    CameraIntrinsics, GeometryBackend, PointMap, RansacParams, SegmentBackend, SegmentMask,
};
use worldprog_core::{Mask, RgbImage};

use crate::config::{BackendSelection, PerceptionBackendKind, ToolboxConfig};
use crate::imageio::{decode_png, encode_png, read_png};
use crate::vlm::count_network_call;
use crate::{Error, Result};

pub const FIXTURE_LABELS: &str = "labels.png";
pub const FIXTURE_LEGEND: &str = "legend.json";

/// Everything a running program can reach through `self.api`.
#[derive(Clone)]
pub struct Toolbox {
    pub segment: Arc<dyn SegmentBackend>,
    pub geometry: Arc<dyn GeometryBackend>,
    pub ransac: RansacParams,
}

impl Toolbox {
    pub fn synthetic(fixture: Option<SyntheticFixture>) -> Self {
        let b = Arc::new(SyntheticBackend { fixture });
        Self { segment: b.clone(), geometry: b, ransac: RansacParams::default() }
    }

    /// Backends per config. A fixture found in `scene_dir` takes precedence
    /// over the configured one for synthetic backends.
    pub fn from_config(cfg: &ToolboxConfig, scene_dir: Option<&Path>, seed: u64) -> Result<Self> {
        let scene_fixture = match scene_dir {
            Some(d) if d.join(FIXTURE_LEGEND).is_file() => Some(load_fixture(d)?),
            _ => None,
        };
        let synthetic = |sel: &BackendSelection| -> Result<Arc<SyntheticBackend>> {
            let fixture = match (&scene_fixture, &sel.fixture) {
                (Some(f), _) => Some(f.clone()),
                (None, Some(dir)) => Some(load_fixture(dir)?),
                (None, None) => None,
            };
            Ok(Arc::new(SyntheticBackend { fixture }))
        };
        let endpoint = |sel: &BackendSelection, key: &str| {
            sel.endpoint.clone().ok_or_else(|| Error::Config(format!("toolbox.{key}.endpoint is required for the live backend")))
        };
        let segment: Arc<dyn SegmentBackend> = match cfg.segment.backend {
            PerceptionBackendKind::Synthetic => synthetic(&cfg.segment)?,
            PerceptionBackendKind::Live => Arc::new(LivePerception::new(endpoint(&cfg.segment, "segment")?)),
        };
        let geometry: Arc<dyn GeometryBackend> = match cfg.pts3d.backend {
            PerceptionBackendKind::Synthetic => synthetic(&cfg.pts3d)?,
            PerceptionBackendKind::Live => Arc::new(LivePerception::new(endpoint(&cfg.pts3d, "pts3d")?)),
        };
        Ok(Self { segment, geometry, ransac: cfg.ransac(seed) })
    }
}

/// Reads `labels.png` and `legend.json` from a fixture directory.
pub fn load_fixture(dir: impl AsRef<Path>) -> Result<SyntheticFixture> {
    let dir = dir.as_ref();
    let legend: Legend = serde_json::from_str(&std::fs::read_to_string(dir.join(FIXTURE_LEGEND))?)?;
    let labels = read_png(dir.join(FIXTURE_LABELS))?;
    Ok(SyntheticFixture::new(labels, legend)?)
}

pub fn save_fixture(dir: impl AsRef<Path>, fixture: &SyntheticFixture) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    crate::imageio::write_png(dir.join(FIXTURE_LABELS), &fixture.label_map)?;
    std::fs::write(dir.join(FIXTURE_LEGEND), serde_json::to_string_pretty(&fixture.legend)?)?;
    Ok(())
}

/// One agent (and connection pool) for all live perception calls.
fn shared_agent() -> &'static ureq::Agent {
    static AGENT: OnceLock<ureq::Agent> = OnceLock::new();
    AGENT.get_or_init(|| {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into()
    })
}

#[derive(Debug, Clone)]
pub struct LivePerception {
    endpoint: String,
}

impl LivePerception {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into().trim_end_matches('/').to_string() }
    }

    fn post(&self, op: &str, body: Value) -> Result<Value> {
        let unavailable = |reason: String| Error::Core(worldprog_core::Error::BackendUnavailable { backend: format!("live {op}"), reason });
        count_network_call();
        let mut resp = shared_agent()
            .post(&format!("{}/{op}", self.endpoint))
            .send_json(&body)
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(512 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| unavailable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(unavailable(format!("HTTP {status}")));
        }
        serde_json::from_str(&text).map_err(|e| unavailable(format!("bad JSON: {e}")))
    }
}

fn image_body(image: &RgbImage) -> Result<Value> {
    Ok(json!({ "image_png": B64.encode(encode_png(image)?) }))
}

fn core_err(e: Error) -> worldprog_core::Error {
    match e {
        Error::Core(c) => c,
        other => worldprog_core::Error::BackendUnavailable { backend: "live".into(), reason: other.to_string() },
    }
}

fn bad(field: &str) -> worldprog_core::Error {
    worldprog_core::Error::BackendUnavailable { backend: "live".into(), reason: format!("response field {field} missing or malformed") }
}

impl SegmentBackend for LivePerception {
    fn name(&self) -> &str {
        "live"
    }

    fn segment(&self, image: &RgbImage, queries: &[String]) -> worldprog_core::Result<Vec<Option<SegmentMask>>> {
        let mut body = image_body(image).map_err(core_err)?;
        body["queries"] = json!(queries);
        let v = self.post("segment", body).map_err(core_err)?;
        let masks = v["masks"].as_array().ok_or_else(|| bad("masks"))?;
        if masks.len() != queries.len() {
            return Err(bad("masks (length)"));
        }
        masks
            .iter()
            .zip(queries)
            .map(|(m, q)| {
                if m.is_null() {
                    return Ok(None);
                }
                let png = B64.decode(m["mask_png"].as_str().ok_or_else(|| bad("mask_png"))?).map_err(|_| bad("mask_png"))?;
                let raster = decode_png(&png).map_err(core_err)?;
                let mask = Mask::from_fn(raster.width, raster.height, |x, y| raster.get(x, y)[0] >= 128);
                Ok(SegmentMask::from_mask(q, mask, m["confidence"].as_f64().unwrap_or(1.0)))
            })
            .collect()
    }
}

impl GeometryBackend for LivePerception {
    fn name(&self) -> &str {
        "live"
    }

    fn pts3d(&self, image: &RgbImage) -> worldprog_core::Result<PointMap> {
        let v = self.post("pts3d", image_body(image).map_err(core_err)?).map_err(core_err)?;
        let width = v["width"].as_u64().ok_or_else(|| bad("width"))? as usize;
        let height = v["height"].as_u64().ok_or_else(|| bad("height"))? as usize;
        let raw = B64.decode(v["points"].as_str().ok_or_else(|| bad("points"))?).map_err(|_| bad("points"))?;
        let valid = B64.decode(v["valid"].as_str().ok_or_else(|| bad("valid"))?).map_err(|_| bad("valid"))?;
        if raw.len() != width * height * 12 || valid.len() != width * height {
            return Err(bad("points (size)"));
        }
        let points = raw
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]) as f64;
                [f(0), f(4), f(8)]
            })
            .collect();
        Ok(PointMap { width, height, points, valid: valid.into_iter().map(|b| b != 0).collect() })
    }

    fn intrinsics(&self, image: &RgbImage) -> worldprog_core::Result<CameraIntrinsics> {
        let v = self.post("intrinsics", image_body(image).map_err(core_err)?).map_err(core_err)?;
        let f = |k: &str| v[k].as_f64().ok_or_else(|| bad(k));
        Ok(CameraIntrinsics { fx: f("fx")?, fy: f("fy")?, cx: f("cx")?, cy: f("cy")? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_round_trip_and_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let fx = SyntheticFixture::ball_on_ground(64, 48);
        save_fixture(dir.path(), &fx).unwrap();
        assert_eq!(load_fixture(dir.path()).unwrap(), fx);

        let tb = Toolbox::from_config(&ToolboxConfig::default(), Some(dir.path()), 3).unwrap();
        let found = tb.segment.segment(&RgbImage::new(64, 48), &["ball".into()]).unwrap();
        assert!(found[0].is_some());
        assert_eq!(tb.ransac.seed, 3);

        let empty = Toolbox::from_config(&ToolboxConfig::default(), None, 0).unwrap();
        assert!(empty.segment.segment(&RgbImage::new(64, 48), &["ball".into()]).unwrap()[0].is_none());
    }

    #[test]
    fn live_backend_needs_endpoint() {
        let mut cfg = ToolboxConfig::default();
        cfg.segment.backend = PerceptionBackendKind::Live;
        assert!(matches!(Toolbox::from_config(&cfg, None, 0), Err(Error::Config(_))));
    }
}

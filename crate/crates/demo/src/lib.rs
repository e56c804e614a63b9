//! WebAssembly bindings for the browser demo.

pub mod ops;

use wasm_bindgen::prelude::*;

fn js_err(e: worldprog_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Game of Life board under an edited rule, tracked against B3/S23.
#[wasm_bindgen]
pub struct LifeDemo {
    inner: ops::RuleEdit,
    cell_px: usize,
}

#[wasm_bindgen]
impl LifeDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, density: f64, seed: u32, birth: &str, survive: &str) -> Result<LifeDemo, JsError> {
        let inner = ops::RuleEdit::new(rows, cols, density, seed as u64, birth, survive).map_err(js_err)?;
        Ok(Self { inner, cell_px: 12 })
    }

    pub fn step(&mut self) {
        self.inner.advance();
    }

    pub fn generation(&self) -> usize {
        self.inner.generation
    }

    pub fn f1(&self) -> Result<f64, JsError> {
        self.inner.f1_vs_standard().map_err(js_err)
    }

    pub fn width(&self) -> usize {
        self.inner.edited.cols() * self.cell_px
    }

    pub fn height(&self) -> usize {
        self.inner.edited.rows() * self.cell_px
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.inner.render(self.cell_px).to_rgba()
    }
}

/// RGBA pixels of the spatiotemporal map of a ball crossing the canvas.
#[wasm_bindgen]
pub fn crossing_map_rgba(width: usize, height: usize, frames: usize, radius: f64) -> Result<Vec<u8>, JsError> {
    Ok(ops::crossing_map(width, height, frames, radius).map_err(js_err)?.to_rgba())
}

/// `[truth xyz, fitted normal xyz, angle error in degrees, inlier ratio]`.
#[wasm_bindgen]
pub fn plane_fit(seed: u32, n_points: usize, outlier_fraction: f64, threshold: f64) -> Result<Vec<f64>, JsError> {
    let r = ops::plane_fit(seed as u64, n_points, outlier_fraction, threshold).map_err(js_err)?;
    let mut out = r.truth.to_vec();
    out.extend_from_slice(&r.normal);
    out.extend_from_slice(&[r.angle_deg, r.inlier_ratio]);
    Ok(out)
}

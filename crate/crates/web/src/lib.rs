//! WebAssembly bindings for the demo page in `www/`.

pub mod demo;

use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(value: &T) -> Result<JsValue, JsError> {
    // NaN and infinities pass through as JS numbers
    Ok(value.serialize(&serde_wasm_bindgen::Serializer::new().serialize_maps_as_objects(true))?)
}

fn js_err(e: selfjudge_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Accept/reject one drafted token; `p` and `q` are unnormalized weights.
#[wasm_bindgen(js_name = rejectionStep)]
pub fn rejection_step(p: Vec<f64>, q: Vec<f64>, token: usize, u: f64) -> Result<JsValue, JsError> {
    to_js(&demo::rejection_step(&p, &q, token, u).map_err(js_err)?)
}

#[wasm_bindgen]
pub struct Playground {
    inner: demo::Playground,
}

#[wasm_bindgen]
impl Playground {
    /// Trains models and the verifier on the reference chain.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Playground, JsError> {
        Ok(Self { inner: demo::Playground::new(seed as u64).map_err(js_err)? })
    }

    pub fn summary(&self) -> Result<JsValue, JsError> {
        to_js(self.inner.summary())
    }

    /// `policy` is `rejection`, `greedy`, `topk:K` or `judge:<theta>`.
    pub fn decode(&self, prompt: usize, policy: &str, gamma: usize, temperature: f64, seed: u32) -> Result<JsValue, JsError> {
        to_js(&self.inner.decode(prompt, policy, gamma, temperature, seed as u64).map_err(js_err)?)
    }

    #[wasm_bindgen(js_name = thetaSweep)]
    pub fn theta_sweep(&self, thetas: Vec<f64>, gamma: usize) -> Result<JsValue, JsError> {
        to_js(&self.inner.theta_sweep(&thetas, gamma).map_err(js_err)?)
    }

    #[wasm_bindgen(js_name = mismatchCount)]
    pub fn mismatch_count(&self, prompt: usize) -> Result<usize, JsError> {
        Ok(self.inner.mismatches(prompt).map_err(js_err)?.len())
    }

    #[wasm_bindgen(js_name = scoreCurve)]
    pub fn score_curve(&self, prompt: usize, which: usize) -> Result<JsValue, JsError> {
        to_js(&self.inner.score_curve(prompt, which).map_err(js_err)?)
    }
}

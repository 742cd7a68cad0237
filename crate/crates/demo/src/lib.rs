//! Browser demo bindings: committee sampling curves, the complexity table
//! and a payment trace.

use wasm_bindgen::prelude::*;

use pcn_core::analysis::sampling::{bft_sizes, curve, curve_csv};
use pcn_core::analysis::{complexity, measure, ComplexityReport};
use pcn_core::broadcast::CostModel;
use pcn_core::scenario::{self, Protocol};

const MAX_N: usize = 13;
const MAX_K: usize = 6;

fn protocol(name: &str) -> Result<Protocol, String> {
    match name {
        "syncpcn" => Ok(Protocol::Syncpcn),
        "psyncpcn" => Ok(Protocol::Psyncpcn),
        "psyncpcn-full" => Ok(Protocol::PsyncpcnFull),
        other => Err(format!("unknown protocol {other:?}")),
    }
}

fn cost_model(name: &str) -> Result<CostModel, String> {
    match name {
        "pbft-like" => Ok(CostModel::PbftLike),
        "hotstuff-like" => Ok(CostModel::HotstuffLike),
        other => Err(format!("unknown cost model {other:?}")),
    }
}

fn bounds(n: usize, k: usize) -> Result<(), String> {
    if !(1..=MAX_N).contains(&n) || !(1..=MAX_K).contains(&k) {
        return Err(format!("need 1 ≤ n ≤ {MAX_N} and 1 ≤ k ≤ {MAX_K}"));
    }
    Ok(())
}

/// CSV of `N,F,n,p_correct` for committee sizes `3f+1` up to `max_size`.
pub fn sampling_curves(global: u64, faulty: &[u64], max_size: u64) -> Result<String, String> {
    let sizes: Vec<u64> = bft_sizes(max_size.saturating_sub(1) / 3)
        .into_iter()
        .filter(|&s| s <= global)
        .collect();
    let mut points = Vec::new();
    for &f in faulty {
        points.extend(curve(global, f, &sizes).map_err(|e| e.to_string())?);
    }
    if points.is_empty() {
        return Err("empty grid".into());
    }
    Ok(curve_csv(&points))
}

/// Measured and expected complexity of one fault-free payment, as JSON.
pub fn complexity_row(protocol_name: &str, model: &str, n: usize, k: usize) -> Result<ComplexityReport, String> {
    bounds(n, k)?;
    measure(protocol(protocol_name)?, cost_model(model)?, n, k, 1).map_err(|e| e.to_string())
}

/// The trace of one fault-free payment over `k` hops, as NDJSON.
pub fn payment_trace(protocol_name: &str, n: usize, k: usize) -> Result<String, String> {
    bounds(n, k)?;
    let cfg = complexity::happy_path(protocol(protocol_name)?, CostModel::PbftLike, n, k, 1);
    let report = scenario::run(&cfg).map_err(|e| e.to_string())?;
    Ok(report.trace.to_ndjson())
}

#[wasm_bindgen(js_name = samplingCurves)]
pub fn sampling_curves_js(global: u64, faulty: Vec<u64>, max_size: u64) -> Result<String, JsValue> {
    sampling_curves(global, &faulty, max_size).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = complexityRow)]
pub fn complexity_row_js(protocol: &str, model: &str, n: usize, k: usize) -> Result<String, JsValue> {
    let r = complexity_row(protocol, model, n, k).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&r).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = paymentTrace)]
pub fn payment_trace_js(protocol: &str, n: usize, k: usize) -> Result<String, JsValue> {
    payment_trace(protocol, n, k).map_err(|e| JsValue::from_str(&e))
}

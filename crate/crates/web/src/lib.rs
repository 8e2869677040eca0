//! Browser bindings: mixing weights under a mask, memory of the DARTS
//! supernet as a function of the keep probability and channel divisor, and
//! survival of a top set under random masking.

use wasm_bindgen::prelude::*;
use zosnas::accounting::{estimate_memory, expected_memory_random};
use zosnas::oracle::{enumerate_space, survival_monte_carlo, survival_probability};
use zosnas::supernet::{mix_weights, SupernetConfig};
use zosnas::SearchSpace;

/// Softmax over the entries of `alpha` whose `mask` byte is nonzero.
pub fn masked_weights(alpha: &[f64], mask: &[u8]) -> Result<Vec<f64>, String> {
    let mask: Vec<bool> = mask.iter().map(|&m| m != 0).collect();
    mix_weights(alpha, &mask).map_err(|e| e.to_string())
}

/// `[total ratio, activation ratio, expected total elements, plain total
/// elements]` of random masking at `xi` with divisor `k`, relative to the
/// plain supernet at batch `batch`.
pub fn memory_profile(xi: f64, k: usize, batch: usize) -> Result<Vec<f64>, String> {
    let space = SearchSpace::darts();
    let plain = estimate_memory(&space, &SupernetConfig::darts(), batch).map_err(|e| e.to_string())?;
    let cfg = SupernetConfig::darts().with_divisor(k);
    let (total, act) = if xi >= 1.0 {
        let r = estimate_memory(&space, &cfg, batch).map_err(|e| e.to_string())?;
        (r.total_elements as f64, r.retained_activation_elements as f64)
    } else {
        let r = expected_memory_random(&space, &cfg, batch, xi).map_err(|e| e.to_string())?;
        (r.total_elements, r.retained_activation_elements)
    };
    Ok(vec![
        total / plain.total_elements as f64,
        act / plain.retained_activation_elements as f64,
        total,
        plain.total_elements as f64,
    ])
}

/// `[closed form, Monte Carlo]` probability that at least one of `top`
/// evenly spaced architectures of an `edges x ops` space survives random
/// masking at `xi`.
pub fn survival_pair(
    edges: usize,
    ops: usize,
    top: usize,
    xi: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if edges == 0 || ops == 0 || top == 0 {
        return Err("edges, ops and top must be positive".into());
    }
    let space = SearchSpace::toy(edges, ops);
    let archs = enumerate_space(&space, 1 << 16).map_err(|e| e.to_string())?;
    let step = (archs.len() / top.min(archs.len())).max(1);
    let chosen: Vec<Vec<usize>> = archs.into_iter().step_by(step).take(top).collect();
    let closed = survival_probability(&space, &chosen, xi).map_err(|e| e.to_string())?;
    let mc = survival_monte_carlo(&space, &chosen, xi, draws, seed).map_err(|e| e.to_string())?;
    Ok(vec![closed, mc])
}

#[wasm_bindgen]
pub fn mix(alpha: &[f64], mask: &[u8]) -> Result<Vec<f64>, JsValue> {
    masked_weights(alpha, mask).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = memoryProfile)]
pub fn memory_profile_js(xi: f64, k: usize, batch: usize) -> Result<Vec<f64>, JsValue> {
    memory_profile(xi, k, batch).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn survival(edges: usize, ops: usize, top: usize, xi: f64, draws: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    survival_pair(edges, ops, top, xi, draws, seed).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_entries_get_zero() {
        let w = masked_weights(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        assert_eq!(w[1], 0.0);
        assert!((w[0] + w[2] - 1.0).abs() < 1e-15);
        assert!(masked_weights(&[1.0], &[0]).is_err());
    }

    #[test]
    fn memory_ratios_shrink() {
        let full = memory_profile(1.0, 1, 64).unwrap();
        assert_eq!(full[0], 1.0);
        let half = memory_profile(0.5, 4, 64).unwrap();
        assert!(half[0] < 0.25 && half[1] < half[0] * 2.0);
    }

    #[test]
    fn survival_estimates_agree() {
        let s = survival_pair(3, 4, 3, 0.5, 20_000, 1).unwrap();
        assert!((s[0] - s[1]).abs() < 0.02, "{s:?}");
    }
}

//! Small shared helpers for uniform time grids.

/// Uniform grid of `steps + 1` times from 0 to `t_end`.
pub fn linspace(t_end: f64, steps: usize) -> Vec<f64> {
    let dt = t_end / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    // Pin the endpoint so curves built from the same (t_end, steps) share
    // bit-identical grids.
    *times.last_mut().unwrap() = t_end;
    times
}

/// Index of the latest grid time <= t (piecewise-constant left lookup).
/// Times before the grid start map to index 0.
pub fn floor_index(times: &[f64], t: f64) -> usize {
    let scale = times.last().map(|v| v.abs()).unwrap_or(1.0).max(1.0);
    times
        .iter()
        .rposition(|&s| s <= t + 1e-12 * scale)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints_are_exact() {
        let ts = linspace(1.0, 200);
        assert_eq!(ts.len(), 201);
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 1.0);
    }

    #[test]
    fn floor_index_is_left_continuous() {
        let ts = linspace(1.0, 4);
        assert_eq!(floor_index(&ts, 0.0), 0);
        assert_eq!(floor_index(&ts, 0.24), 0);
        assert_eq!(floor_index(&ts, 0.25), 1);
        assert_eq!(floor_index(&ts, 0.9999999999999), 4);
        assert_eq!(floor_index(&ts, -1.0), 0);
    }
}

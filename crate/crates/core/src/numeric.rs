// Count rounding shared by the masking stages. Products such as 0.3 * 10 land a hair
// above the integer in binary floating point; snap those before rounding.

const SNAP: f64 = 1e-9;

fn snapped(x: f64) -> Option<f64> {
    let r = libm::round(x);
    if (x - r).abs() < SNAP {
        Some(r)
    } else {
        None
    }
}

/// `ceil(ratio * n)`, clamped to `n`.
pub(crate) fn ceil_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let c = snapped(x).unwrap_or_else(|| libm::ceil(x));
    (c.max(0.0) as usize).min(n)
}

/// Round-half-up of `ratio * n`, clamped to `n`.
pub(crate) fn round_half_up_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let c = snapped(x).unwrap_or_else(|| libm::floor(x + 0.5));
    (c.max(0.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rules() {
        assert_eq!(ceil_count(0.3, 10), 3);
        assert_eq!(ceil_count(0.5, 3), 2);
        assert_eq!(ceil_count(0.0, 5), 0);
        assert_eq!(ceil_count(1.0, 5), 5);
        assert_eq!(round_half_up_count(0.5, 10), 5);
        assert_eq!(round_half_up_count(0.25, 2), 1);
        assert_eq!(round_half_up_count(0.15, 20), 3);
        assert_eq!(round_half_up_count(0.1, 4), 0);
    }
}

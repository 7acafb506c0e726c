//! Number formatting for text outputs.

/// Shortest decimal form that parses back to the identical `f64`.
pub fn exact(x: f64) -> String {
    format!("{x}")
}

/// Twelve significant digits, `%g` style: fixed notation for moderate
/// exponents, scientific otherwise, trailing zeros trimmed.
pub fn g12(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(g12(0.0), "0");
        assert_eq!(g12(1.0), "1");
        assert_eq!(g12(-2.5), "-2.5");
        assert_eq!(g12(1.0 / 3.0), "0.333333333333");
        assert_eq!(g12(123_456_789.123_456_78), "123456789.123");
        assert_eq!(g12(1.5e-7), "1.5e-7");
        assert_eq!(g12(2.0e15), "2e15");
        assert_eq!(g12(0.53), "0.53");
    }

    #[test]
    fn exact_round_trips() {
        for &v in &[0.1, 1.0 / 3.0, -1e-300, 6.02214076e23] {
            assert_eq!(exact(v).parse::<f64>().unwrap(), v);
        }
    }
}

//! Number formatting shared by reports and CSV output.

/// C-style `%.{digits}g`: `digits` significant digits, trailing zeros
/// trimmed, exponent form outside `[1e-4, 10^digits)`.
pub fn g_digits(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `%g` with six significant digits.
pub fn g(x: f64) -> String {
    g_digits(x, 6)
}

/// Full precision (17 significant digits); parsing the text gives back `x`.
pub fn full(x: f64) -> String {
    g_digits(x, 17)
}

/// Comma-separated full-precision vector.
pub fn csv_full(v: &[f64]) -> String {
    v.iter().map(|x| full(*x)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_printf() {
        assert_eq!(g(0.0), "0");
        assert_eq!(g(1.0), "1");
        assert_eq!(g(-0.019_512_345), "-0.0195123");
        assert_eq!(g(1279.345_678), "1279.35");
        assert_eq!(g(1.5e-7), "1.5e-07");
        assert_eq!(g(2.5e12), "2.5e+12");
        assert_eq!(g(123456.0), "123456");
        assert_eq!(g(1234567.0), "1.23457e+06");
        assert_eq!(full(0.1), "0.10000000000000001");
    }

    proptest! {
        #[test]
        fn full_round_trips(x in proptest::num::f64::NORMAL) {
            prop_assert_eq!(full(x).parse::<f64>().unwrap(), x);
        }
    }
}

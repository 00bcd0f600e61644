//! Number formatting for result tables.

/// Six significant digits, trailing zeros trimmed; scientific notation outside `[1e-5, 1e6)`.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

fn trim(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::fmt6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.8032123456), "0.803212");
        assert_eq!(fmt6(33.333333333), "33.3333");
        assert_eq!(fmt6(2.0), "2");
        assert_eq!(fmt6(-1234567.0), "-1.23457e6");
        assert_eq!(fmt6(1.5e-7), "1.5e-7");
        assert_eq!(fmt6(999999.6), "1e6");
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(f64::NAN), "NaN");
    }
}

//! Stable number formatting for CSV and key=value output.

/// Significant digits written for every real number.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// `%.9g`-style formatting: fixed notation for exponents in `[-5, 9)`,
/// scientific otherwise, trailing zeros trimmed.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// `a,b,c` with [`fmt_g`] entries.
pub fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_g(*v))
        .collect::<Vec<_>>()
        .join(",")
}

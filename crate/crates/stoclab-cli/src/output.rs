//! `results.csv` and run metadata.

use std::io::Write;

use stoclab::analytics::ExperimentResult;

pub const CSV_HEADER: [&str; 14] = [
    "experiment",
    "setting",
    "method",
    "gamma",
    "sigma_in",
    "sigma_sp",
    "d_in",
    "d_sp",
    "k",
    "kappa",
    "seed",
    "acc_closed",
    "acc_mc",
    "extra",
];

/// `x` with 10 significant digits, `%g` style: fixed notation for
/// exponents in [−5, 10), scientific otherwise, trailing zeros trimmed.
pub fn g10(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.9e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim(mant))
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rows first, then one record per failed cell (its key and error).
pub fn write_results<W: Write>(w: W, experiment: &str, rows: &[ExperimentResult], failures: &[(String, String)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        let p = &r.params;
        out.write_record([
            experiment.to_string(),
            r.setting.to_string(),
            r.method.to_string(),
            g10(p.gamma),
            g10(p.sigma_in),
            g10(p.sigma_sp),
            p.d_in.to_string(),
            p.d_sp.to_string(),
            p.k.to_string(),
            r.kappa.map(g10).unwrap_or_default(),
            p.seed.to_string(),
            g10(r.target_acc),
            r.acc_mc.map(g10).unwrap_or_default(),
            r.extra.clone(),
        ])?;
    }
    // failed cells: key in the method column, the error in extra
    for (key, err) in failures {
        let mut rec = vec![experiment.to_string(), String::new(), format!("cell {key}")];
        rec.extend(std::iter::repeat(String::new()).take(10));
        rec.push(format!("error: {err}"));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(g10(0.5), "0.5");
        assert_eq!(g10(1.0), "1");
        assert_eq!(g10(20.0), "20");
        assert_eq!(g10(0.2236067977499790), "0.2236067977");
        assert_eq!(g10(1.0 / 3.0), "0.3333333333");
        assert_eq!(g10(123456.789012345), "123456.789");
        assert_eq!(g10(1.5e-9), "1.5e-9");
        assert_eq!(g10(-2.0e12), "-2e12");
        assert_eq!(g10(0.99999999999), "1");
    }
}

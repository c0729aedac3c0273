//! Minimal standalone SVG plots.

use std::fmt::Write;

use super::Bin;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = write!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Training and validation loss on a log10 axis against epoch.
pub fn loss_curves_svg(title: &str, train: &[f64], val: &[f64]) -> String {
    let logs = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x.max(1e-300).log10()).collect() };
    let (lt, lv) = (logs(train), logs(val));
    let all = lt.iter().chain(&lv).copied();
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = train.len().max(val.len()).max(2) as f64 - 1.0;
    let mut s = header(title);
    for (series, color) in [(&lt, "steelblue"), (&lv, "darkorange")] {
        if series.is_empty() {
            continue;
        }
        let pts: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(e, &y)| {
                let px = PAD + (W - 2.0 * PAD) * e as f64 / n;
                let py = H - PAD - (H - 2.0 * PAD) * (y - lo) / span;
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = write!(s, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, pts.join(" "));
    }
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">1e{hi:.1}</text><text x="{}" y="{}" text-anchor="end">1e{lo:.1}</text>"#,
        PAD - 4.0,
        PAD + 4.0,
        PAD - 4.0,
        H - PAD
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" fill="steelblue">train</text><text x="{}" y="{}" fill="darkorange">val</text><text x="{}" y="{}" text-anchor="end">epoch {}</text></svg>"#,
        W - PAD - 80.0,
        PAD,
        W - PAD - 80.0,
        PAD + 16.0,
        W - PAD,
        H - PAD + 20.0,
        n as usize
    );
    s
}

pub fn histogram_svg(title: &str, bins: &[Bin]) -> String {
    let mut s = header(title);
    let max = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let bw = (W - 2.0 * PAD) / bins.len().max(1) as f64;
    for (i, b) in bins.iter().enumerate() {
        let h = (H - 2.0 * PAD) * b.count as f64 / max;
        let _ = write!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="steelblue" stroke="white"/>"#,
            PAD + i as f64 * bw,
            H - PAD - h,
            bw
        );
    }
    if let (Some(first), Some(last)) = (bins.first(), bins.last()) {
        let _ = write!(
            s,
            r#"<text x="{PAD}" y="{}">{:.3e}</text><text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#,
            H - PAD + 16.0,
            first.lo,
            W - PAD,
            H - PAD + 16.0,
            last.hi
        );
    }
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text></svg>"#, PAD - 4.0, PAD + 4.0, max as usize);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_closed() {
        let l = loss_curves_svg("a<b", &[1.0, 0.5, 0.25], &[1.0, 0.6, 0.3]);
        assert!(l.starts_with("<svg") && l.ends_with("</svg>"));
        assert!(l.contains("a&lt;b"));
        assert_eq!(l.matches("<polyline").count(), 2);
        let h = histogram_svg("h", &[Bin { lo: 0.0, hi: 1.0, count: 3 }, Bin { lo: 1.0, hi: 2.0, count: 1 }]);
        assert_eq!(h.matches("<rect").count(), 3);
    }
}

//! Minimal SVG writers for the two figure types. No timestamps or random ids,
//! so output is a pure function of the input rows.

use std::fmt::Write;

use visdep_core::TokenClass;

pub const CLASS_COLORS: [(TokenClass, &str); 3] = [
    (TokenClass::ImagePositive, "#d95f02"),
    (TokenClass::ImageInvariant, "#7570b3"),
    (TokenClass::ImageNegative, "#1b9e77"),
];

fn color(class: TokenClass) -> &'static str {
    CLASS_COLORS[class.index()].1
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub struct TokenBar<'a> {
    pub surface: &'a str,
    pub p_clean: f64,
    pub p_noisy: f64,
    pub class: TokenClass,
}

const PLOT_H: f64 = 200.0;
const TOP: f64 = 40.0;
const LEFT: f64 = 40.0;
const BAR_W: f64 = 10.0;
const SLOT_W: f64 = 28.0;

/// Paired bars per token: solid for the clean condition, translucent for the
/// noised one, both coloured by the token's class.
pub fn token_bars(title: &str, tokens: &[TokenBar]) -> String {
    let width = LEFT + SLOT_W * tokens.len() as f64 + 20.0;
    let height = TOP + PLOT_H + 80.0;
    let base = TOP + PLOT_H;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="16" font-family="sans-serif" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="#333"/>"##,
        width - 10.0
    );
    for (i, t) in tokens.iter().enumerate() {
        let x = LEFT + SLOT_W * i as f64 + 3.0;
        for (k, (p, opacity)) in [(t.p_clean, 1.0), (t.p_noisy, 0.4)].into_iter().enumerate() {
            let h = PLOT_H * p.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect class="bar" x="{}" y="{}" width="{BAR_W}" height="{h}" fill="{}" fill-opacity="{opacity}"/>"#,
                x + BAR_W * k as f64,
                base - h,
                color(t.class)
            );
        }
        let tx = x + BAR_W;
        let ty = base + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{tx}" y="{ty}" font-family="sans-serif" font-size="10" text-anchor="end" transform="rotate(-60 {tx} {ty})">{}</text>"#,
            escape(t.surface)
        );
    }
    legend(&mut s, LEFT, 24.0);
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, x0: f64, y: f64) {
    for (i, (class, c)) in CLASS_COLORS.iter().enumerate() {
        let x = x0 + 110.0 * i as f64;
        let _ = writeln!(s, r#"<rect class="legend" x="{x}" y="{}" width="10" height="10" fill="{c}"/>"#, y - 9.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="10">{}</text>"#,
            x + 14.0,
            class.as_str()
        );
    }
}

/// Equal-width bins spanning `[min, max]` of `values`. The maximum lands in
/// the last bin, so every value is counted exactly once.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo { bins.max(1) } else { 1 };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[k.min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            let a = lo + width * k as f64;
            let b = if k + 1 == bins { hi } else { lo + width * (k + 1) as f64 };
            (a, b, n)
        })
        .collect()
}

pub fn histogram_svg(title: &str, bins: &[(f64, f64, usize)]) -> String {
    let slot = 16.0;
    let width = LEFT + slot * bins.len() as f64 + 20.0;
    let height = TOP + PLOT_H + 40.0;
    let base = TOP + PLOT_H;
    let peak = bins.iter().map(|b| b.2).max().unwrap_or(0).max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="16" font-family="sans-serif" font-size="12">{}</text>"#, escape(title));
    for (i, &(_, _, n)) in bins.iter().enumerate() {
        let h = PLOT_H * n as f64 / peak;
        let _ = writeln!(
            s,
            r##"<rect class="bin" x="{}" y="{}" width="{}" height="{h}" fill="#4477aa"/>"##,
            LEFT + slot * i as f64,
            base - h,
            slot - 1.0
        );
    }
    if let (Some(first), Some(last)) = (bins.first(), bins.last()) {
        for (x, v, anchor) in [(LEFT, first.0, "start"), (LEFT + slot * bins.len() as f64, last.1, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{v:.3}</text>"#,
                base + 14.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

//! Standalone SVG charts: deviation curves with an interquartile band, and
//! RMSE box plots against training-set size.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Roughly five round tick values covering `[lo, hi]`.
pub fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{x:.0e}")
    } else {
        let s = format!("{x:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    out: String,
    y_lo: f64,
    y_hi: f64,
    log: bool,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64, log: bool) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ =
            writeln!(out, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + (W - LEFT - RIGHT) / 2.0, escape(title));
        let _ =
            writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + (W - LEFT - RIGHT) / 2.0, H - 15.0, escape(x_label));
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + (H - TOP - BOTTOM) / 2.0,
            TOP + (H - TOP - BOTTOM) / 2.0,
            escape(y_label)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        let mut f = Frame { out, y_lo, y_hi, log };
        let ticks: Vec<f64> = if log {
            (y_lo.floor() as i64..=y_hi.ceil() as i64).map(|k| k as f64).filter(|k| *k >= y_lo && *k <= y_hi).collect()
        } else {
            linear_ticks(y_lo, y_hi)
        };
        for t in ticks {
            let y = f.y(if log { 10f64.powf(t) } else { t });
            let label = if log { tick_label(10f64.powf(t)) } else { tick_label(t) };
            let _ = writeln!(f.out, r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#444"/>"##, LEFT - 5.0);
            let _ = writeln!(f.out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, W - RIGHT);
            let _ = writeln!(f.out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 8.0, y + 4.0);
        }
        f
    }

    fn y(&self, v: f64) -> f64 {
        let v = if self.log { v.max(f64::MIN_POSITIVE).log10() } else { v };
        let frac = ((v - self.y_lo) / (self.y_hi - self.y_lo)).clamp(-0.05, 1.05);
        H - BOTTOM - frac * (H - TOP - BOTTOM)
    }

    fn x_tick(&mut self, x: f64, label: &str) {
        let _ = writeln!(self.out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/>"##, H - BOTTOM, H - BOTTOM + 5.0);
        let _ = writeln!(self.out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, H - BOTTOM + 18.0, escape(label));
    }

    fn legend(&mut self, i: usize, label: &str) {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(self.out, r#"<rect x="{x:.2}" y="{:.2}" width="14" height="10" fill="{}"/>"#, y - 8.0, color(i));
        let _ = writeln!(self.out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 20.0, y + 1.0, escape(label));
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// One deviation curve: per step `[q25, q50, q75]`.
pub struct BandSeries {
    pub label: String,
    pub quartiles: Vec<[f64; 3]>,
}

/// Median line with shaded interquartile band per series. Non-finite
/// values are dropped from the axis range and clamped to the frame.
pub fn deviation_chart(title: &str, series: &[BandSeries]) -> String {
    let finite = series.iter().flat_map(|s| s.quartiles.iter().flatten()).copied().filter(|v| v.is_finite());
    let y_hi = finite.fold(0.0_f64, f64::max);
    let y_hi = if y_hi > 0.0 { y_hi * 1.05 } else { 1.0 };
    let steps = series.iter().map(|s| s.quartiles.len()).max().unwrap_or(1).max(2) - 1;
    let x = |t: usize| LEFT + t as f64 / steps as f64 * (W - LEFT - RIGHT);
    let mut f = Frame::new(title, "step", "state deviation", 0.0, y_hi, false);
    for t in linear_ticks(0.0, steps as f64) {
        f.x_tick(x(t as usize), &tick_label(t));
    }
    for (i, s) in series.iter().enumerate() {
        let pts = |k: usize| -> Vec<String> {
            s.quartiles.iter().enumerate().map(|(t, q)| format!("{:.2},{:.2}", x(t), f.y(if q[k].is_finite() { q[k] } else { y_hi }))).collect()
        };
        let (upper, mut lower, median) = (pts(2), pts(0), pts(1));
        lower.reverse();
        let _ =
            writeln!(f.out, r#"<polygon points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "), color(i));
        let _ = writeln!(f.out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, median.join(" "), color(i));
        f.legend(i, &s.label);
    }
    f.finish()
}

/// Values at one training-set size for one group.
pub struct BoxGroup {
    pub label: String,
    /// `(size, values)`, sizes ascending.
    pub by_size: Vec<(usize, Vec<f64>)>,
}

/// Tukey box: quartiles, whiskers at the most extreme values within 1.5 IQR.
pub fn box_stats(values: &[f64]) -> Option<[f64; 5]> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q = |p| collocate_core::eval::quantile_sorted(&v, p);
    let (q1, q2, q3) = (q(0.25), q(0.5), q(0.75));
    let iqr = q3 - q1;
    let lo = v.iter().copied().find(|x| *x >= q1 - 1.5 * iqr).unwrap_or(q1);
    let hi = v.iter().rev().copied().find(|x| *x <= q3 + 1.5 * iqr).unwrap_or(q3);
    Some([lo, q1, q2, q3, hi])
}

/// RMSE boxes on a log axis, grouped by training-set size.
pub fn rmse_box_chart(title: &str, groups: &[BoxGroup]) -> String {
    let mut sizes: Vec<usize> = groups.iter().flat_map(|g| g.by_size.iter().map(|(s, _)| *s)).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let positive = groups.iter().flat_map(|g| g.by_size.iter().flat_map(|(_, v)| v.iter())).copied().filter(|v| v.is_finite() && *v > 0.0);
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y_lo, y_hi) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0)) } else { (-3.0, 0.0) };
    let mut f = Frame::new(title, "training trajectories", "validation rollout RMSE (rad)", y_lo, y_hi, true);
    let slot = (W - LEFT - RIGHT) / sizes.len().max(1) as f64;
    let width = slot * 0.8 / groups.len().max(1) as f64;
    for (k, s) in sizes.iter().enumerate() {
        f.x_tick(LEFT + slot * (k as f64 + 0.5), &s.to_string());
    }
    for (i, g) in groups.iter().enumerate() {
        for (size, values) in &g.by_size {
            let k = sizes.iter().position(|s| s == size).expect("collected above");
            let cx = LEFT + slot * k as f64 + slot * 0.1 + width * (i as f64 + 0.5);
            let diverged = values.iter().filter(|v| !v.is_finite()).count();
            if let Some([wl, q1, q2, q3, wh]) = box_stats(values) {
                let (x0, x1) = (cx - width * 0.4, cx + width * 0.4);
                let c = color(i);
                let _ = writeln!(f.out, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#, f.y(wl), f.y(q1));
                let _ = writeln!(f.out, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#, f.y(q3), f.y(wh));
                let _ = writeln!(
                    f.out,
                    r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.3" stroke="{c}"/>"#,
                    f.y(q3),
                    x1 - x0,
                    (f.y(q1) - f.y(q3)).max(0.5)
                );
                let _ = writeln!(f.out, r#"<line x1="{x0:.2}" y1="{:.2}" x2="{x1:.2}" y2="{:.2}" stroke="{c}" stroke-width="2"/>"#, f.y(q2), f.y(q2));
            }
            if diverged > 0 {
                let _ = writeln!(
                    f.out,
                    r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="10" fill="{}">{diverged}×∞</text>"#,
                    TOP + 12.0,
                    color(i)
                );
            }
        }
        f.legend(i, &g.label);
    }
    f.finish()
}

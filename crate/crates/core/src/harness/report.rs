use std::fmt::Write;

use super::ablation::MarginalReport;

/// Fixed-width table, one row per channel.
pub fn render_text(report: &MarginalReport) -> String {
    let lrs: Vec<String> = report.lrs.iter().map(|l| l.to_string()).collect();
    let mut s = format!("marginal contribution (learning rates {})\n", lrs.join(", "));
    let _ = writeln!(s, "{:<16} {:>14} {:>6}", "channel", "mean decrease", "pairs");
    for c in &report.channels {
        let _ = writeln!(s, "{:<16} {:>14.6} {:>6}", c.channel, c.mean_decrease, c.pairs);
    }
    s
}

/// Bar chart with a zero baseline; positive bars mean adding the channel
/// lowered the validation loss.
pub fn render_svg(report: &MarginalReport) -> String {
    let (bar, gap, left, top, plot_h) = (48.0, 16.0, 60.0, 20.0, 240.0);
    let n = report.channels.len().max(1) as f64;
    let width = left + n * (bar + gap) + gap;
    let height = top + plot_h + 70.0;
    let hi = report.channels.iter().map(|c| c.mean_decrease).fold(0.0f64, f64::max);
    let lo = report.channels.iter().map(|c| c.mean_decrease).fold(0.0f64, f64::min);
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let y = |v: f64| top + (hi - v) / span * plot_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let zero = y(0.0);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="black"/>"#,
        width - gap
    );
    let _ = writeln!(s, r#"<text x="4" y="{:.2}">{hi:.3}</text>"#, y(hi) + 4.0);
    let _ = writeln!(s, r#"<text x="4" y="{:.2}">{lo:.3}</text>"#, y(lo) + 4.0);
    for (i, c) in report.channels.iter().enumerate() {
        let x = left + gap + i as f64 * (bar + gap);
        let (y0, y1) = (y(c.mean_decrease.max(0.0)), y(c.mean_decrease.min(0.0)));
        let fill = if c.channel.ends_with("std") { "#d95f02" } else { "#1b9e77" };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y0:.2}" width="{bar}" height="{:.2}" fill="{fill}"><title>{}: {:.6}</title></rect>"#,
            (y1 - y0).max(0.5),
            c.channel,
            c.mean_decrease
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" transform="rotate(-40 {:.2} {:.2})">{}</text>"#,
            x + bar / 2.0,
            top + plot_h + 16.0,
            x + bar / 2.0,
            top + plot_h + 16.0,
            c.channel
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ablation::ChannelMarginal;

    fn report() -> MarginalReport {
        MarginalReport {
            channels: vec![
                ChannelMarginal { channel: "axial-mean".into(), mean_decrease: -0.5, pairs: 64 },
                ChannelMarginal { channel: "axial-std".into(), mean_decrease: 2.0, pairs: 64 },
            ],
            lrs: vec![0.003, 0.001],
        }
    }

    #[test]
    fn text_lists_every_channel() {
        let t = render_text(&report());
        assert!(t.contains("axial-mean") && t.contains("axial-std"));
        assert_eq!(t.lines().count(), 4);
    }

    #[test]
    fn svg_has_one_bar_per_channel() {
        let s = render_svg(&report());
        assert!(s.starts_with("<svg"));
        assert_eq!(s.matches("<rect x=").count(), 2);
    }
}

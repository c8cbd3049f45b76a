//! Score histograms with the drift threshold marked, as CSV and SVG.

use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count_train: usize,
    pub count_test: usize,
    pub count_ood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<Bin>,
}

/// Threshold line and MAD summary written next to the histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdMeta {
    pub threshold: f64,
    pub median: f64,
    pub mad: f64,
    pub k: f64,
    pub bins: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
}

/// Bins `train`, `test` and `ood` over the pooled `[min, max]` with
/// `n_bins` equal-width bins. The last bin is closed on the right. A
/// zero-width range is widened to one unit centered on the value.
pub fn histogram(train: &[f64], test: &[f64], ood: &[f64], n_bins: usize) -> Option<Histogram> {
    if n_bins == 0 {
        return None;
    }
    let pooled = train.iter().chain(test).chain(ood).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo > hi {
        return None;
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|i| Bin {
            lo: lo + i as f64 * width,
            hi: if i + 1 == n_bins { hi } else { lo + (i + 1) as f64 * width },
            count_train: 0,
            count_test: 0,
            count_ood: 0,
        })
        .collect();
    let slot = |v: f64| -> usize { (((v - lo) / width) as usize).min(n_bins - 1) };
    for &v in train.iter().filter(|v| v.is_finite()) {
        bins[slot(v)].count_train += 1;
    }
    for &v in test.iter().filter(|v| v.is_finite()) {
        bins[slot(v)].count_test += 1;
    }
    for &v in ood.iter().filter(|v| v.is_finite()) {
        bins[slot(v)].count_ood += 1;
    }
    Some(Histogram { lo, hi, bins })
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_train,count_test,count_ood\n");
        for b in &self.bins {
            let _ = writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.count_train, b.count_test, b.count_ood);
        }
        out
    }

    /// Overlaid step outlines of the three densities (normalized per
    /// series) with a dashed threshold line.
    pub fn to_svg(&self, threshold: f64) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const PAD: f64 = 40.0;
        let plot_w = W - 2.0 * PAD;
        let plot_h = H - 2.0 * PAD;
        let x_of = |v: f64| PAD + (v - self.lo) / (self.hi - self.lo) * plot_w;

        let series: [(&str, &str, Vec<usize>); 3] = [
            ("train", "#1f77b4", self.bins.iter().map(|b| b.count_train).collect()),
            ("test", "#2ca02c", self.bins.iter().map(|b| b.count_test).collect()),
            ("ood", "#ff7f0e", self.bins.iter().map(|b| b.count_ood).collect()),
        ];
        let peak = series
            .iter()
            .filter_map(|(_, _, c)| {
                let total: usize = c.iter().sum();
                (total > 0).then(|| c.iter().map(|&n| n as f64 / total as f64).fold(0.0, f64::max))
            })
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<line x1="{PAD}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
            y = H - PAD,
            x2 = W - PAD
        );
        for (li, (name, color, counts)) in series.iter().enumerate() {
            let total: usize = counts.iter().sum();
            if total == 0 {
                continue;
            }
            let mut d = format!("M {:.2} {:.2}", x_of(self.lo), H - PAD);
            for (b, &n) in self.bins.iter().zip(counts) {
                let y = H - PAD - (n as f64 / total as f64) / peak * plot_h;
                let _ = write!(d, " L {:.2} {:.2} L {:.2} {:.2}", x_of(b.lo), y, x_of(b.hi), y);
            }
            let _ = write!(d, " L {:.2} {:.2}", x_of(self.hi), H - PAD);
            let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{y}" font-size="12" fill="{color}">{name}</text>"#,
                x = W - PAD - 60.0,
                y = PAD + 14.0 * li as f64
            );
        }
        if threshold >= self.lo && threshold <= self.hi {
            let x = x_of(threshold);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{PAD}" x2="{x:.2}" y2="{y2}" stroke="red" stroke-dasharray="6,4"/>"#,
                y2 = H - PAD
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{PAD}" y="{y}" font-size="11">{lo:.4}</text><text x="{x}" y="{y}" font-size="11" text-anchor="end">{hi:.4}</text>"#,
            y = H - PAD + 16.0,
            x = W - PAD,
            lo = self.lo,
            hi = self.hi
        );
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bins_hand_binned() {
        let h = histogram(&[0.4, 0.6], &[], &[], 2).unwrap();
        assert_eq!(h.bins.len(), 2);
        assert_eq!(h.bins[0].count_train, 1);
        assert_eq!(h.bins[1].count_train, 1);
        assert_eq!((h.bins[0].lo, h.bins[1].hi), (0.4, 0.6));
        assert!(h.bins.iter().all(|b| b.count_ood == 0 && b.count_test == 0));
        let csv = h.to_csv();
        assert!(csv.starts_with("bin_lo,bin_hi,count_train,count_test,count_ood\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn pooled_range_and_conservation() {
        let train = [0.41, 0.43, 0.45, 0.47];
        let test = [0.42, 0.44];
        let ood = [0.55, 0.61, 0.7];
        let h = histogram(&train, &test, &ood, 7).unwrap();
        assert_eq!((h.lo, h.hi), (0.41, 0.7));
        assert_eq!(h.bins.iter().map(|b| b.count_train).sum::<usize>(), 4);
        assert_eq!(h.bins.iter().map(|b| b.count_test).sum::<usize>(), 2);
        assert_eq!(h.bins.iter().map(|b| b.count_ood).sum::<usize>(), 3);
        assert_eq!(h.bins[6].count_ood, 1);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(histogram(&[], &[], &[], 5).is_none());
        assert!(histogram(&[0.5], &[], &[], 0).is_none());
        let h = histogram(&[0.5, 0.5], &[], &[], 4).unwrap();
        assert_eq!((h.lo, h.hi), (0.0, 1.0));
        assert_eq!(h.bins[2].count_train, 2);
    }

    #[test]
    fn svg_marks_threshold() {
        let h = histogram(&[0.4, 0.45, 0.5], &[0.44], &[0.6], 5).unwrap();
        let svg = h.to_svg(0.48);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!h.to_svg(0.9).contains("stroke-dasharray"));
    }
}

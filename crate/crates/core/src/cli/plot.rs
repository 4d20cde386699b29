use std::fmt::Write;

use crate::metrics::DistributionFit;
use crate::run::RunManifest;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const CURVE_POINTS: usize = 200;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

/// Histogram (as a density) with the fitted Gaussian and Laplace curves.
pub fn distfit_svg(fit: &DistributionFit, n: usize, run: &RunManifest) -> String {
    let h = &fit.histogram;
    let (lo, hi) = (h.edges[0], h.edges[h.edges.len() - 1]);
    let width = h.bin_width();
    let densities: Vec<f64> = h.counts.iter().map(|&c| c as f64 / (n as f64 * width)).collect();
    let curve = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> {
        (0..=CURVE_POINTS)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / CURVE_POINTS as f64;
                (x, f(x))
            })
            .collect()
    };
    let gauss = curve(&|x| fit.gaussian.pdf(x));
    let laplace = curve(&|x| fit.laplace.pdf(x));
    let ymax = densities
        .iter()
        .chain(gauss.iter().map(|p| &p.1))
        .chain(laplace.iter().map(|p| &p.1))
        .copied()
        .fold(0.0, f64::max)
        * 1.05;
    let sx = |x: f64| MARGIN + (x - lo) / (hi - lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - y / ymax * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, "<!-- {} -->", escape(&run.header_line()));
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, &d) in densities.iter().enumerate() {
        let (x0, x1) = (sx(h.edges[i]), sx(h.edges[i + 1]));
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#b0c4de" stroke="#708090"/>"##,
            sy(d),
            x1 - x0,
            sy(0.0) - sy(d)
        );
    }
    for (points, color, label) in [(&gauss, "#c0392b", "Gaussian"), (&laplace, "#27ae60", "Laplace")] {
        let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{label}</title></polyline>"#,
            path.join(" ")
        );
    }
    let axis_y = sy(0.0);
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">FVC (mL)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    for x in [lo, hi] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{x:.0}</text>"#,
            sx(x),
            axis_y + 15.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="30" font-size="12" fill="#c0392b">Gaussian mean {:.1}, sd {:.1}</text>"##,
        WIDTH - 260.0,
        fit.gaussian.mean,
        fit.gaussian.sd
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="46" font-size="12" fill="#27ae60">Laplace mu {:.1}, b {:.1}</text>"##,
        WIDTH - 260.0,
        fit.laplace.mu,
        fit.laplace.b
    );
    svg.push_str("</svg>\n");
    svg
}

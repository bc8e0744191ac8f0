//! Minimal SVG line plots for trimap and validation-dice curves. Plots are
//! optional artifacts gated by flags; nothing depends on them for exit 0.

/// Renders one or more named series as an SVG polyline chart.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if (x1 - x0).abs() < 1e-12 {
        x1 = x0 + 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>
"#,
        tx = w / 2.0,
    );
    // axes
    svg.push_str(&format!(
        r#"<line x1="{ml}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{yb}" stroke="black"/>
"#,
        yb = mt + ph,
        xr = ml + pw,
    ));
    // ticks
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.push_str(&format!(
            r#"<text x="{x}" y="{ybt}" text-anchor="middle" font-family="sans-serif" font-size="11">{fx:.2}</text>
<text x="{xlt}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="11">{fy:.3}</text>
"#,
            x = sx(fx),
            ybt = mt + ph + 18.0,
            xlt = ml - 6.0,
            y = sy(fy) + 4.0,
        ));
    }
    svg.push_str(&format!(
        r#"<text x="{tx}" y="{ty}" text-anchor="middle" font-family="sans-serif" font-size="13">{x_label}</text>
<text x="16" y="{my}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {my})">{y_label}</text>
"#,
        tx = ml + pw / 2.0,
        ty = h - 10.0,
        my = mt + ph / 2.0,
    ));
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let path: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>
"#,
            path.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!(
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>
"#,
                sx(x),
                sy(y)
            ));
        }
        svg.push_str(&format!(
            r#"<text x="{lx}" y="{ly}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>
"#,
            lx = ml + pw - 150.0,
            ly = mt + 16.0 + 16.0 * si as f64,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

//! Trajectory SVG: arena, obstacles and the sampled position curve.

use std::fmt::Write as _;

use splinesep::bench::{EnvironmentSpec, SCHEMA_VERSION};
use splinesep::bernstein::BernsteinPoly;
use splinesep::planner::PlanResult;

const SCALE: f64 = 50.0;
const PAD: f64 = 20.0;
const SAMPLES: usize = 24;

pub fn trajectory_svg(result: &PlanResult, env: &EnvironmentSpec) -> String {
    let [w, h] = env.arena;
    let (pw, ph) = (w * SCALE + 2.0 * PAD, h * SCALE + 2.0 * PAD);
    // y axis points up in world coordinates
    let tx = |x: f64| PAD + x * SCALE;
    let ty = |y: f64| PAD + (h - y) * SCALE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{pw}" height="{ph}" viewBox="0 0 {pw} {ph}" data-schema-version="{SCHEMA_VERSION}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="white" stroke="black"/>"#,
        w * SCALE,
        h * SCALE
    );
    for (o, obs) in env.obstacles.iter().enumerate() {
        let pts: Vec<String> = obs
            .vertices()
            .iter()
            .map(|v| format!("{:.2},{:.2}", tx(v.x), ty(v.y)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polygon class="obstacle" data-index="{o}" points="{}" fill="#999" stroke="black"/>"##,
            pts.join(" ")
        );
    }
    let mut path = Vec::new();
    for cp in &result.position_bernstein {
        let flat = cp.iter().flatten().copied().collect();
        let Ok(poly) = BernsteinPoly::from_flat(3, 2, flat) else {
            continue;
        };
        for i in 0..=SAMPLES {
            if let Ok(p) = poly.eval(i as f64 / SAMPLES as f64) {
                path.push(format!("{:.2},{:.2}", tx(p[0]), ty(p[1])));
            }
        }
    }
    let color = if result.success() { "#1f77b4" } else { "#d62728" };
    let _ = writeln!(
        s,
        r#"<polyline class="trajectory" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        path.join(" ")
    );
    let r = env.robot.radius * SCALE;
    for st in &result.states {
        let _ = writeln!(
            s,
            r#"<circle class="knot" cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="none" stroke="{color}" stroke-opacity="0.4"/>"#,
            tx(st.x),
            ty(st.y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{:.1}" font-size="12">{} T = {:.3} s, {:?}</text>"#,
        PAD - 6.0,
        result.variant.name(),
        result.t_final,
        result.status
    );
    s.push_str("</svg>\n");
    s
}

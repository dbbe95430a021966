//! Top-down SVG preview of a placed scene.

use std::fmt::Write;

use super::{InstanceRole, SceneSpec};

const PX_PER_M: f64 = 80.0;
const PAD_PX: f64 = 20.0;

/// Footprints of every instance seen from above, workspace outlined, y up.
pub fn render_topdown(scene: &SceneSpec) -> String {
    let mut lo = scene.workspace.min;
    let mut hi = scene.workspace.max;
    for i in &scene.instances {
        let b = i.aabb();
        lo.x = lo.x.min(b.min.x);
        lo.y = lo.y.min(b.min.y);
        hi.x = hi.x.max(b.max.x);
        hi.y = hi.y.max(b.max.y);
    }
    let w = (hi.x - lo.x) * PX_PER_M + 2.0 * PAD_PX;
    let h = (hi.y - lo.y) * PX_PER_M + 2.0 * PAD_PX;
    let px = |x: f64| (x - lo.x) * PX_PER_M + PAD_PX;
    let py = |y: f64| (hi.y - y) * PX_PER_M + PAD_PX;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let ws = scene.workspace;
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444444" stroke-dasharray="6 4"/>"##,
        px(ws.min.x),
        py(ws.max.y),
        (ws.max.x - ws.min.x) * PX_PER_M,
        (ws.max.y - ws.min.y) * PX_PER_M
    );
    // larger boxes first so contents stay visible
    let mut order: Vec<_> = scene.instances.iter().collect();
    order.sort_by(|a, b| b.size().total_cmp(&a.size()).then(a.instance_id.cmp(&b.instance_id)));
    for i in order {
        let b = i.aabb();
        let fill = match i.role {
            InstanceRole::Target => "#e07a5f",
            InstanceRole::Auxiliary => "#a8b5c2",
        };
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="0.7" stroke="#222222"/>"##,
            px(b.min.x),
            py(b.max.y),
            i.size() * PX_PER_M,
            i.size() * PX_PER_M
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            px(i.position.x),
            py(i.position.y),
            escape(&i.instance_id)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

//! SVG rendering of Stixel labelings: one rectangle per Stixel, colored by
//! instance, background gray.

use std::fmt::Write;

use crate::types::{InstanceId, InstanceLabeling, StixelFrame};

pub const BACKGROUND_COLOR: &str = "#808080";

/// Color derived from a hash of the instance id, stable across runs.
pub fn instance_color(id: &InstanceId) -> String {
    let InstanceId::Object { class, counter } = *id else {
        return BACKGROUND_COLOR.to_string();
    };
    // FNV-1a over (class, counter).
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in (class as u64).to_le_bytes().into_iter().chain(u64::from(counter).to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let hue = (h % 360) as f64;
    let sat = 0.55 + ((h >> 16) % 40) as f64 / 100.0;
    let light = 0.45 + ((h >> 32) % 20) as f64 / 100.0;
    let (r, g, b) = hsl_to_rgb(hue, sat, light);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to(r), to(g), to(b))
}

pub fn render_svg(frame: &StixelFrame, labeling: &InstanceLabeling) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = frame.width,
        h = frame.height
    );
    let _ = writeln!(s, r#"<rect width="{}" height="{}" fill="black"/>"#, frame.width, frame.height);
    for st in &frame.stixels {
        let id = labeling.get(st.stixel_id);
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="black" stroke-width="0.5"><title>{} {}</title></rect>"#,
            st.u_tl,
            st.v_tl,
            st.u_br - st.u_tl,
            st.v_br - st.v_tl,
            instance_color(&id),
            st.stixel_id,
            id
        );
    }
    s.push_str("</svg>\n");
    s
}

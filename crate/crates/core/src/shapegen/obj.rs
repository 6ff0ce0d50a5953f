use std::fmt::Write as _;

use super::Shape;

/// ASCII OBJ with one group per existing part; faces are the template quads.
pub fn write_obj(shape: &Shape, part_names: &[&str]) -> String {
    let mut out = String::new();
    let mut base = 1;
    for (k, part) in shape.parts.iter().enumerate() {
        let Some(part) = part else { continue };
        let _ = writeln!(out, "g {}", part_names.get(k).copied().unwrap_or("part"));
        for v in &part.vertices {
            let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        }
        for q in part.template.quads() {
            let _ = writeln!(out, "f {} {} {} {}", q[0] + base, q[1] + base, q[2] + base, q[3] + base);
        }
        base += part.vertices.len();
    }
    out
}

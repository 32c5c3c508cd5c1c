//! Symbolic image editor: interprets the prompt grammar against the base
//! canvas registry and re-renders every object as a filled rectangle.

use crate::domain::{palette, BBox, Canvas, CanvasObject, ObjectRegistry};
use crate::gateway::embed::{fnv1a, splitmix64};
use crate::gateway::{GatewayError, ImageRequest};
use crate::scene::{parse_prompt, PromptOp, SceneObject};

pub const CANVAS_SIZE: u32 = 192;
const CELL: i64 = 32;
const GRID: i64 = CANVAS_SIZE as i64 / CELL;
const INSET: i64 = 2;
const STRIPE: i64 = 2;

fn slot_box(slot: i64) -> BBox {
    let (r, c) = (slot / GRID, slot % GRID);
    BBox::new(r * CELL + INSET, c * CELL + INSET, (r + 1) * CELL - INSET, (c + 1) * CELL - INSET)
}

fn free_slot(objects: &[CanvasObject]) -> Option<BBox> {
    (0..GRID * GRID).map(slot_box).find(|b| objects.iter().all(|o| o.bbox != *b))
}

/// Deterministic fill colour per object name, components in 60..=200.
pub fn fill_color(name: &str) -> [u8; 3] {
    let h = splitmix64(fnv1a(name.as_bytes()));
    let c = |shift: u32| 60 + ((h >> shift) % 141) as u8;
    [c(0), c(16), c(32)]
}

fn unit_hash(seed: u64, key: &str, variant: u32, name: &str) -> f64 {
    let h = splitmix64(seed)
        ^ fnv1a(key.as_bytes())
        ^ splitmix64(variant as u64 + 1)
        ^ fnv1a(name.as_bytes()).rotate_left(17);
    (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64
}

fn canvas_object(obj: &SceneObject, bbox: BBox) -> CanvasObject {
    CanvasObject { name: obj.name.clone(), outline: obj.outline, bbox, attributes: obj.attributes.clone() }
}

fn place(objects: &mut Vec<CanvasObject>, obj: &SceneObject, bbox: Option<BBox>) -> Result<(), GatewayError> {
    let bbox = match bbox {
        Some(b) => b,
        None => free_slot(objects).ok_or_else(|| GatewayError::MockGrammar("canvas has no free slot".into()))?,
    };
    objects.push(canvas_object(obj, bbox));
    Ok(())
}

/// Draws the registry onto a fresh white canvas.
pub fn render(registry: ObjectRegistry) -> Canvas {
    let mut canvas = Canvas::blank(CANVAS_SIZE, CANVAS_SIZE);
    let w = CANVAS_SIZE as i64;
    for o in &registry.objects {
        let fill = fill_color(&o.name);
        let stripe = o.outline.rgb();
        let b = o.bbox;
        for y in b.ymin.max(0)..b.ymax.min(w) {
            for x in b.xmin.max(0)..b.xmax.min(w) {
                let edge = y < b.ymin + STRIPE || y >= b.ymax - STRIPE || x < b.xmin + STRIPE || x >= b.xmax - STRIPE;
                canvas.pixels[(y * w + x) as usize] = if edge { stripe } else { fill };
            }
        }
    }
    canvas.registry = registry;
    canvas
}

/// Applies one prompt. Objects written by this prompt are dropped with
/// probability `dropout`, seeded by `(seed, key, variant, name)`.
pub fn edit(request: &ImageRequest, seed: u64, dropout: f64) -> Result<Canvas, GatewayError> {
    if request.prompt.trim().is_empty() {
        return Err(GatewayError::EmptyInput);
    }
    let ops = parse_prompt(&request.prompt).map_err(|e| GatewayError::MockGrammar(e.to_string()))?;
    let mut registry = request.base.as_ref().map(|c| c.registry.clone()).unwrap_or_default();
    let mut written: Vec<String> = Vec::new();
    for op in &ops {
        if let PromptOp::Keep(names) = op {
            for n in names {
                if !registry.objects.iter().any(|o| &o.name == n) {
                    return Err(GatewayError::MockKeepViolation(n.clone()));
                }
            }
        }
    }
    for op in ops {
        let objects = &mut registry.objects;
        match op {
            PromptOp::Create { scene, objects: new } => {
                registry.scene = scene;
                registry.objects.clear();
                for o in &new {
                    registry.objects.retain(|x| x.name != o.name);
                    place(&mut registry.objects, o, None)?;
                    written.push(o.name.clone());
                }
            }
            PromptOp::Add(o) => {
                let existing = objects.iter().position(|x| x.name == o.name);
                let bbox = existing.map(|i| objects.remove(i).bbox);
                place(objects, &o, bbox)?;
                written.push(o.name);
            }
            PromptOp::Remove(name) => objects.retain(|x| x.name != name),
            PromptOp::Replace { target, with } => {
                let bbox = objects.iter().position(|x| x.name == target).map(|i| objects.remove(i).bbox);
                if let Some(i) = objects.iter().position(|x| x.name == with.name) {
                    objects.remove(i);
                }
                place(objects, &with, bbox)?;
                written.push(with.name);
            }
            PromptOp::Move { target, with } => {
                let old = objects.iter().position(|x| x.name == target).map(|i| objects.remove(i).bbox);
                let bbox = (0..GRID * GRID)
                    .map(slot_box)
                    .find(|b| Some(*b) != old && objects.iter().all(|o| o.bbox != *b))
                    .or(old);
                objects.retain(|x| x.name != with.name);
                place(objects, &with, bbox)?;
                written.push(with.name);
            }
            PromptOp::Keep(_) => {}
        }
    }
    if dropout > 0.0 {
        registry.objects.retain(|o| {
            !written.contains(&o.name) || unit_hash(seed, &request.key, request.variant, &o.name) >= dropout
        });
    }
    Ok(render(registry))
}

/// Whether every pixel is one of the canonical colours or an object fill.
pub fn is_symbolic(canvas: &Canvas) -> bool {
    canvas
        .pixels
        .iter()
        .all(|p| palette::CANONICAL.contains(p) || canvas.registry.objects.iter().any(|o| fill_color(&o.name) == *p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str, base: Option<Canvas>) -> ImageRequest {
        ImageRequest { prompt: prompt.into(), base, key: "B_3".into(), variant: 0 }
    }

    const OFFICE: &str = "A clean, minimalist, iconic scene. In a home office, a desk (in blue outline). \
                          Solid white background, no shadows.";

    #[test]
    fn creation_places_objects_on_the_grid() {
        let c = edit(&request(OFFICE, None), 0, 0.0).unwrap();
        assert_eq!(c.registry.scene.as_deref(), Some("home office"));
        assert_eq!(c.registry.objects.len(), 1);
        let desk = &c.registry.objects[0];
        assert_eq!((desk.name.as_str(), desk.outline), ("desk", crate::domain::Outline::Blue));
        assert_eq!(desk.bbox, BBox::new(2, 2, 30, 30));
        assert_eq!(c.pixel(2, 2), palette::BLUE);
        assert_eq!(c.pixel(10, 10), fill_color("desk"));
        assert_eq!(c.pixel(100, 100), palette::WHITE);
        c.validate().unwrap();
        assert!(is_symbolic(&c));
    }

    #[test]
    fn edit_keeps_named_objects_identical() {
        let base = edit(&request(OFFICE, None), 0, 0.0).unwrap();
        let c =
            edit(&request("Add a drum set (in black outline). Keep the desk unchanged.", Some(base.clone())), 0, 0.0)
                .unwrap();
        assert_eq!(c.object("desk"), base.object("desk"));
        assert_eq!(c.object("drum set").unwrap().bbox, slot_box(1));
    }

    #[test]
    fn keep_of_absent_object_is_rejected() {
        let base = edit(&request(OFFICE, None), 0, 0.0).unwrap();
        let err = edit(&request("Keep the piano unchanged.", Some(base)), 0, 0.0).unwrap_err();
        assert_eq!(err, GatewayError::MockKeepViolation("piano".into()));
    }

    #[test]
    fn move_changes_slot_and_replace_keeps_it() {
        let base = edit(&request(OFFICE, None), 0, 0.0).unwrap();
        let moved = edit(
            &request(
                "DELETE the desk (in blue outline) $$$ ADD a desk (in black outline) by the window.",
                Some(base.clone()),
            ),
            0,
            0.0,
        )
        .unwrap();
        assert_ne!(moved.object("desk").unwrap().bbox, base.object("desk").unwrap().bbox);
        let replaced = edit(
            &request("Replace the desk (in blue outline) with a brown desk (in black outline).", Some(base.clone())),
            0,
            0.0,
        )
        .unwrap();
        let d = replaced.object("desk").unwrap();
        assert_eq!(d.bbox, base.object("desk").unwrap().bbox);
        assert_eq!(d.attributes, vec!["brown".to_string()]);
    }

    #[test]
    fn dropout_depends_on_variant_only_through_the_seed_hash() {
        let prompt = "A clean, minimalist, iconic scene. In a kitchen, a fridge (in black outline), a stove (in black \
                      outline), and a sink (in black outline). Solid white background, no shadows.";
        let mut seen = std::collections::BTreeSet::new();
        for variant in 0..16 {
            let mut r = request(prompt, None);
            r.variant = variant;
            let a = edit(&r, 5, 0.25).unwrap();
            let b = edit(&r, 5, 0.25).unwrap();
            assert_eq!(a, b);
            seen.insert(a.registry.objects.len());
        }
        assert!(seen.len() > 1, "dropout never varied the registry");
        assert_eq!(edit(&request(prompt, None), 5, 1.0).unwrap().registry.objects.len(), 0);
    }
}

//! Renders a stored recommendation path for people (text) or graph tools (DOT).

use upgpr::env::Path;
use upgpr::kg::{EntityRef, KnowledgeGraph, Relation, RelationKind};

pub fn gloss(rel: Relation) -> &'static str {
    use RelationKind::*;
    match rel {
        Relation::Forward(Enrolled) => "enrolled in",
        Relation::Inverse(Enrolled) => "also taken by",
        Relation::Forward(Teaches) => "teaches",
        Relation::Inverse(Teaches) => "taught by",
        Relation::Forward(HasConcept) => "covers",
        Relation::Inverse(HasConcept) => "covered by",
        Relation::Forward(BelongsTo) => "belongs to",
        Relation::Inverse(BelongsTo) => "includes",
        Relation::Forward(Provides) => "provides",
        Relation::Inverse(Provides) => "provided by",
        Relation::SelfLoop => "stays at",
    }
}

fn label(kg: &KnowledgeGraph, e: EntityRef) -> String {
    kg.id_of(e).unwrap_or("?").to_string()
}

/// `u7 —enrolled in→ c1 —taught by→ t0 —teaches→ c4`; self loops are skipped.
pub fn render_text(kg: &KnowledgeGraph, path: &Path) -> String {
    let mut out = label(kg, path.start);
    for &(rel, e) in path.hops.iter().filter(|(r, _)| !r.is_self_loop()) {
        out.push_str(&format!(" —{}→ {}", gloss(rel), label(kg, e)));
    }
    out
}

fn node_id(kg: &KnowledgeGraph, e: EntityRef) -> String {
    format!("{}:{}", e.kind, label(kg, e))
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn render_dot(kg: &KnowledgeGraph, path: &Path) -> String {
    let stripped = path.stripped();
    let mut nodes = vec![stripped.start];
    nodes.extend(stripped.hops.iter().map(|&(_, e)| e));
    let mut out = String::from("digraph explanation {\n  rankdir=LR;\n");
    let mut seen = Vec::new();
    for &e in &nodes {
        if seen.contains(&e) {
            continue;
        }
        seen.push(e);
        out.push_str(&format!(
            "  {} [label={}, shape=box];\n",
            quote(&node_id(kg, e)),
            quote(&format!("{} ({})", label(kg, e), e.kind))
        ));
    }
    for (pair, &(rel, _)) in nodes.windows(2).zip(&stripped.hops) {
        out.push_str(&format!(
            "  {} -> {} [label={}];\n",
            quote(&node_id(kg, pair[0])),
            quote(&node_id(kg, pair[1])),
            quote(gloss(rel))
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use upgpr::kg::{EntityType, KgBuilder};

    #[test]
    fn text_and_dot() {
        let mut b = KgBuilder::new();
        b.add(RelationKind::Enrolled, "u7", "Course A");
        b.add(RelationKind::Teaches, "Teacher T", "Course A");
        b.add(RelationKind::Teaches, "Teacher T", "Course B");
        let kg = b.build();
        let e = |k, id| kg.entity(k, id).unwrap();
        let mut path = Path::new(e(EntityType::Learner, "u7"));
        path.hops = vec![
            (Relation::Forward(RelationKind::Enrolled), e(EntityType::Course, "Course A")),
            (Relation::SelfLoop, e(EntityType::Course, "Course A")),
            (Relation::Inverse(RelationKind::Teaches), e(EntityType::Teacher, "Teacher T")),
            (Relation::Forward(RelationKind::Teaches), e(EntityType::Course, "Course B")),
        ];
        assert_eq!(
            render_text(&kg, &path),
            "u7 —enrolled in→ Course A —taught by→ Teacher T —teaches→ Course B"
        );
        let dot = render_dot(&kg, &path);
        assert!(dot.starts_with("digraph explanation {"));
        assert!(dot.contains("\"course:Course A\" -> \"teacher:Teacher T\" [label=\"taught by\"];"));
        assert_eq!(dot.matches(" -> ").count(), 3);
        assert!(dot.trim_end().ends_with('}'));
    }
}

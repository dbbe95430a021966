//! Versioned prompt templates. The first line of every system template is a
//! stage tag such as `[anomalab:detect v1]`.

pub const BRAINSTORM: &str = include_str!("../prompts/brainstorm.txt");
pub const BRAINSTORM_ROUND: &str = include_str!("../prompts/brainstorm_round.txt");
pub const AUXILIARY: &str = include_str!("../prompts/auxiliary.txt");
pub const SIZING: &str = include_str!("../prompts/sizing.txt");
pub const DETECT: &str = include_str!("../prompts/detect.txt");
pub const DECOMPOSE: &str = include_str!("../prompts/decompose.txt");
pub const METHOD: &str = include_str!("../prompts/method.txt");
pub const JUDGE: &str = include_str!("../prompts/judge.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Brainstorm,
    Auxiliary,
    Sizing,
    Detect,
    Decompose,
    Method,
    Judge,
}

/// Stage named by the tag on the first line of a system prompt.
pub fn stage_of(system_prompt: &str) -> Option<Stage> {
    let first = system_prompt.lines().next()?.trim();
    let tag = first.strip_prefix("[anomalab:")?.split_whitespace().next()?;
    Some(match tag {
        "brainstorm" => Stage::Brainstorm,
        "auxiliary" => Stage::Auxiliary,
        "sizing" => Stage::Sizing,
        "detect" => Stage::Detect,
        "decompose" => Stage::Decompose,
        "method" => Stage::Method,
        "judge" => Stage::Judge,
        _ => return None,
    })
}

/// Substitutes `{key}` placeholders.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Value of a `Label: value` line, matched case-insensitively on the label.
pub fn labeled<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|l| strip_label(l, label))
}

pub fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let line = line.trim().trim_start_matches(['-', '*']).trim_start();
    let (head, rest) = line.split_once(':')?;
    head.trim().eq_ignore_ascii_case(label).then(|| rest.trim())
}

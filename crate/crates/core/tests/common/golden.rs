use std::path::PathBuf;

use rationale_icl::backend::{Backend, GenerationParams, ModelProfile, ToyModel, ToyModelSpec};
use rationale_icl::corpus::{LabelStyle, TaskItem};
use rationale_icl::prompt::{assemble_icl_prompt, build_preprompt, render_chat, ChatPrompt, PrepromptKind, Shot, ShotFormat};
use rationale_icl::rationale::{
    ph_cot_rationale, random_topk_rationale, rationale_from_topk, self_topk_rationale, Rationale, RationaleKind,
};

use super::ScriptedBackend;

pub const SIZES: [usize; 3] = [1, 6, 8];
pub const KINDS: [RationaleKind; 4] =
    [RationaleKind::AttrTopk, RationaleKind::SelfTopk, RationaleKind::PhCot, RationaleKind::RandomTopk];
pub const K: usize = 6;
pub const P: usize = 3;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn item(id: &str, question: &str, choices: [&str; 4], gold: &str) -> TaskItem {
    let choices = ["A", "B", "C", "D"].iter().zip(choices).map(|(l, t)| (l.to_string(), t.to_string())).collect();
    TaskItem::new(id, question, choices, gold).unwrap()
}

pub fn shot_items() -> Vec<TaskItem> {
    vec![
        item("s1", "Which gas do plants absorb from the air?", ["oxygen", "carbon dioxide", "helium", "neon"], "B"),
        item("s2", "What melts ice fastest on a cold road?", ["sand", "salt", "gravel", "paper"], "B"),
        item("s3", "Where would you keep milk cold?", ["oven", "cupboard", "refrigerator", "garden"], "C"),
        item("s4", "Which planet is closest to the sun?", ["Mercury", "Venus", "Earth", "Mars"], "A"),
        item("s5", "What do bees collect from flowers?", ["pollen and nectar", "stones", "leaves", "water"], "A"),
        item("s6", "A thermometer measures what quantity?", ["mass", "length", "time", "temperature"], "D"),
        item("s7", "Which tool drives a nail into wood?", ["saw", "hammer", "ruler", "brush"], "B"),
        item("s8", "What happens to water at zero degrees Celsius?", ["boils", "evaporates", "freezes", "glows"], "C"),
    ]
}

pub fn query_item() -> TaskItem {
    item("q1", "Which material conducts electricity best?", ["wood", "rubber", "copper", "glass"], "C")
}

fn attr_keywords(item: &TaskItem) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for w in item.render_input().split_whitespace() {
        let w = w.trim_end_matches('?').to_string();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words.into_iter().rev().take(K).collect()
}

pub fn rationale(kind: RationaleKind, item: &TaskItem, index: usize) -> Rationale {
    let y = item.gold.as_str();
    match kind {
        RationaleKind::AttrTopk => rationale_from_topk(&attr_keywords(item), y, K).unwrap(),
        RationaleKind::SelfTopk => {
            let reply = format!(
                "\"{}\", \u{201c}{}\u{201d}, \"{}\", \"{}\", \"{}\" and \"{}\".",
                "air", "cold", "heat", "sun", "flowers", item.id
            );
            self_topk_rationale(&ScriptedBackend::replying(&reply), item, y, K, &GenerationParams::default()).unwrap()
        }
        RationaleKind::PhCot => {
            let reply = format!("The question asks about {}. The correct option matches it. Others do not.</s>", item.id);
            ph_cot_rationale(&ScriptedBackend::replying(&reply), item, y, P, &GenerationParams::default()).unwrap()
        }
        RationaleKind::RandomTopk => {
            let texts: Vec<String> = shot_items().iter().chain([&query_item()]).map(TaskItem::render_input).collect();
            let model = ToyModel::for_texts(ToyModelSpec { vocab_size: 512, ..Default::default() }, &texts).unwrap();
            let encoded = model.encode(&ChatPrompt::io_query(item)).unwrap();
            random_topk_rationale(&encoded, y, K, 100 + index as u64).unwrap()
        }
    }
}

pub fn kind_name(kind: RationaleKind) -> &'static str {
    match kind {
        RationaleKind::AttrTopk => "attr_topk",
        RationaleKind::SelfTopk => "self_topk",
        RationaleKind::PhCot => "ph_cot",
        RationaleKind::RandomTopk => "random_topk",
    }
}

pub fn file_name(kind: RationaleKind, n: usize) -> String {
    format!("{}_n{n}.txt", kind_name(kind))
}

pub fn preprompt(kind: RationaleKind) -> String {
    match kind {
        RationaleKind::PhCot => build_preprompt(PrepromptKind::Steps, P, LabelStyle::Letters),
        _ => build_preprompt(PrepromptKind::Topk, K, LabelStyle::Letters),
    }
}

/// The rendered prompt for one fixture.
pub fn render_fixture(kind: RationaleKind, n: usize) -> String {
    let preprompt = preprompt(kind);
    let shots: Vec<Shot> = shot_items()
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, it)| {
            let r = rationale(kind, &it, i);
            Shot::new(it, r).unwrap()
        })
        .collect();
    let prompt = assemble_icl_prompt(&preprompt, &shots, &query_item(), ShotFormat::WithRationale, None).unwrap();
    render_chat(&prompt, &ModelProfile::mistral())
}

/// Compares every fixture with its frozen file; `UPDATE_GOLDENS=1` rewrites them.
pub fn check_all() -> Result<usize, String> {
    let bless = std::env::var_os("UPDATE_GOLDENS").is_some();
    let mut checked = 0;
    for kind in KINDS {
        for n in SIZES {
            let rendered = render_fixture(kind, n);
            let path = golden_dir().join(file_name(kind, n));
            if bless {
                std::fs::write(&path, &rendered).map_err(|e| e.to_string())?;
            }
            let frozen = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            if frozen != rendered {
                return Err(format!("{} differs from its golden", path.display()));
            }
            let tail = match kind {
                RationaleKind::PhCot => "therefore the answer is",
                _ => "are important to predict that",
            };
            if rendered.matches(tail).count() != n + preprompt(kind).matches(tail).count() {
                return Err(format!("{}: expected {n} rationales containing {tail:?}", path.display()));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

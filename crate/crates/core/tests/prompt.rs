mod common;

use proptest::prelude::*;

use rationale_icl::backend::{GenerationParams, ModelProfile, ToyModel, ToyTokenizer};
use rationale_icl::corpus::{extract_answer, scan_answer, LabelSpace, TaskItem};
use rationale_icl::prompt::{
    assemble_icl_prompt, render_chat, render_chat_with_span, ChatPrompt, Message, PromptError, Role, Shot, ShotFormat,
};
use rationale_icl::rationale::{
    parse_quoted_keywords, ph_cot_from_text, rationale_from_topk, self_topk_rationale, RationaleError,
};

use common::golden::{self, shot_items, query_item};
use common::{small_spec, ScriptedBackend};

fn ab() -> LabelSpace {
    LabelSpace::new(vec!["A".into(), "B".into(), "C".into(), "D".into()])
}

/// Splits a rendered conversation back into messages.
fn parse_rendered(text: &str, profile: &ModelProfile) -> (Vec<Message>, String) {
    let user = format!("{}\n", profile.user_token);
    let assistant = format!("{}\n", profile.assistant_token);
    let closing = format!("\n{}\n", profile.stop_token);
    let mut rest = text;
    let mut messages = Vec::new();
    loop {
        if let Some(body) = rest.strip_prefix(&user) {
            let end = body.find(&format!("\n{assistant}")).or_else(|| body.find(&format!("\n{user}"))).unwrap();
            messages.push(Message::user(&body[..end]));
            rest = &body[end + 1..];
        } else if let Some(body) = rest.strip_prefix(&assistant) {
            match body.find(&closing) {
                Some(end) if messages.last().is_some_and(|m: &Message| m.role == Role::User) && body[end + closing.len()..].starts_with(&user) => {
                    messages.push(Message::assistant(&body[..end]));
                    rest = &body[end + closing.len()..];
                }
                _ => return (messages, body.to_string()),
            }
        } else {
            panic!("unparseable rendering at {rest:?}");
        }
    }
}

#[test]
fn rendered_prompts_match_goldens() {
    golden::check_all().unwrap();
}

#[test]
fn every_shot_keeps_its_gold_at_the_end() {
    for kind in golden::KINDS {
        for (i, item) in shot_items().into_iter().enumerate() {
            let r = golden::rationale(kind, &item, i);
            assert!(r.text.ends_with(&format!("({})", item.gold)), "{}", r.text);
            assert_eq!(r.text.matches(&format!("({})", item.gold)).count(), 1, "{}", r.text);
        }
    }
}

#[test]
fn io_baseline_uses_answer_lines_only() {
    let shots: Vec<Shot> =
        shot_items().into_iter().take(3).enumerate().map(|(i, it)| Shot::new(it.clone(), golden::rationale(golden::KINDS[0], &it, i)).unwrap()).collect();
    let prompt = assemble_icl_prompt("", &shots, &query_item(), ShotFormat::AnswerOnly, None).unwrap();
    let replies: Vec<&str> = prompt.assistant_turns().map(|m| m.content.as_str()).collect();
    assert_eq!(replies, ["The answer is (B)", "The answer is (B)", "The answer is (C)"]);
    assert_eq!(prompt.input_text().unwrap(), query_item().render_input());
}

#[test]
fn assembly_rejects_bad_shot_sets() {
    let item = shot_items().remove(0);
    let r = rationale_from_topk(&["air".into()], &item.gold, 1).unwrap();
    let shot = Shot::new(item.clone(), r.clone()).unwrap();
    assert!(matches!(assemble_icl_prompt("", &[], &query_item(), ShotFormat::WithRationale, None), Err(PromptError::NoShots)));
    assert!(matches!(
        assemble_icl_prompt("", &[shot], &item, ShotFormat::WithRationale, None),
        Err(PromptError::QueryInShots(_))
    ));
    let wrong = TaskItem { gold: "A".into(), ..item };
    assert!(matches!(Shot::new(wrong, r), Err(PromptError::InvalidShot { .. })));
}

#[test]
fn oversized_prompts_are_caught_before_generation() {
    let texts: Vec<String> = shot_items().iter().map(TaskItem::render_input).collect();
    let model = ToyModel::for_texts(rationale_icl::backend::ToyModelSpec { context_len: 40, ..small_spec(0, Default::default()) }, &texts).unwrap();
    let shots: Vec<Shot> =
        shot_items().into_iter().enumerate().map(|(i, it)| Shot::new(it.clone(), golden::rationale(golden::KINDS[0], &it, i)).unwrap()).collect();
    let err = assemble_icl_prompt("", &shots, &query_item(), ShotFormat::WithRationale, Some(&model)).unwrap_err();
    assert!(matches!(err, PromptError::ContextOverflow { limit: 40, .. }));
}

#[test]
fn keyword_rationales_follow_the_template() {
    let r = rationale_from_topk(&["\"rain\"".into(), "(B)".into(), "cloud".into()], "B", 3).unwrap();
    assert_eq!(r.text, "The 3 keywords \"rain\", \"B\", and \"cloud\" are important to predict that the answer is (B)");
    let one = rationale_from_topk(&["rain".into()], "A", 1).unwrap();
    assert_eq!(one.text, "The 1 keywords \"rain\" are important to predict that the answer is (A)");
    assert!(matches!(rationale_from_topk(&["a".into()], "A", 2), Err(RationaleError::KeywordCount { expected: 2, found: 1 })));
    assert!(matches!(rationale_from_topk(&["\"\"".into()], "A", 1), Err(RationaleError::EmptyKeyword(0))));
}

#[test]
fn step_rationales_drop_the_stop_marker() {
    let r = ph_cot_from_text(" Water freezes at zero. Ice floats.</s>", "C", 2, "</s>").unwrap();
    assert_eq!(r.text, "2-step rationale: Water freezes at zero. Ice floats., therefore the answer is (C)");
    assert!(matches!(ph_cot_from_text("</s>", "C", 2, "</s>"), Err(RationaleError::EmptyExplanation)));
}

#[test]
fn quoted_keywords_are_parsed_in_order() {
    let reply = " \u{201c}rain\u{201d}, \"cloud.\", \"rain\" and \"wet\"";
    assert_eq!(parse_quoted_keywords(reply, 3).unwrap(), ["rain", "cloud", "wet"]);
    assert_eq!(parse_quoted_keywords(reply, 4), None);
}

#[test]
fn unparseable_self_topk_reply_is_reported() {
    let backend = ScriptedBackend::replying("no quotes here");
    let err = self_topk_rationale(&backend, &query_item(), "C", 3, &GenerationParams::default()).unwrap_err();
    assert!(matches!(err, RationaleError::UnparseableReply { expected: 3, .. }));
}

#[test]
fn answers_are_extracted_from_free_text() {
    assert_eq!(scan_answer("so the answer is (b).", &ab()).as_deref(), Some("B"));
    assert_eq!(scan_answer("The answer is C", &ab()).as_deref(), Some("C"));
    assert_eq!(scan_answer("(A) looks wrong; the answer is (D)", &ab()).as_deref(), Some("D"));
    assert_eq!(scan_answer("nothing useful", &ab()), None);
    let fallback = ScriptedBackend::replying("It selects (A).");
    assert_eq!(extract_answer("nothing useful", &ab(), Some(&fallback)).unwrap().as_deref(), Some("A"));
    let scorer = ScriptedBackend { scores: Some(vec![("B".into(), -0.1)]), ..ScriptedBackend::replying("unclear") };
    assert_eq!(extract_answer("nothing useful", &ab(), Some(&scorer)).unwrap().as_deref(), Some("B"));
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.?()\\n]{1,40}".prop_filter("nonblank", |s| !s.trim().is_empty())
}

proptest! {
    #[test]
    fn rendering_is_invertible(
        turns in prop::collection::vec((text(), text()), 0..4),
        last in text(),
        prefix in prop::option::of(text()),
        preset in prop::sample::select(vec!["mistral", "zephyr", "gemma-2b", "gemma-7b", "toy"]),
    ) {
        let profile = if preset == "toy" { ToyTokenizer::profile() } else { ModelProfile::preset(preset).unwrap() };
        let mut messages = Vec::new();
        for (u, a) in &turns {
            messages.push(Message::user(u));
            messages.push(Message::assistant(a));
        }
        messages.push(Message::user(&last));
        let mut prompt = ChatPrompt::new(messages.clone(), Some(0..last.len())).unwrap();
        if let Some(p) = &prefix {
            prompt = prompt.with_assistant_prefix(p);
        }
        let rendered = render_chat_with_span(&prompt, &profile);
        prop_assert_eq!(&rendered.text[rendered.input_span.clone().unwrap()], last.as_str());
        let (parsed, tail) = parse_rendered(&rendered.text, &profile);
        prop_assert_eq!(parsed, messages);
        prop_assert_eq!(tail, prefix.unwrap_or_default());
        prop_assert_eq!(render_chat(&prompt, &profile), rendered.text);
    }
}

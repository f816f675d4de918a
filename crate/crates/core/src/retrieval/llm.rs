use std::sync::LazyLock;

use regex::Regex;

use super::RetrievalError;
use crate::providers::{ChatProvider, ChatRequest, GenParams, Message};
use crate::registry::Evidence;
use crate::templates::{fill, PromptTemplates};
use crate::tokens::{quantize_score, RelevanceScore};

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d+(?:\.\d+)?\b").expect("valid regex"));

pub fn relevance_request(
    context: &str,
    evidence: &Evidence,
    templates: &PromptTemplates,
    params: GenParams,
) -> ChatRequest {
    let prompt = fill(&templates.relevance, &[("context", context), ("evidence", &evidence.text)]);
    ChatRequest { messages: vec![Message::user(prompt)], params }
}

/// First number in `reply` that lies in `[0, 1]`.
pub fn parse_relevance(reply: &str) -> Option<f64> {
    NUMBER
        .find_iter(reply)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .find(|x| (0.0..=1.0).contains(x))
}

/// Asks the chat model to rate one evidence against the context.
pub fn llm_relevance(
    context: &str,
    evidence: &Evidence,
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    params: GenParams,
) -> Result<RelevanceScore, RetrievalError> {
    let req = relevance_request(context, evidence, templates, params);
    let reply = chat.chat(&req).map_err(|source| RetrievalError::Provider { evidence_id: evidence.id.clone(), source })?;
    let x = parse_relevance(&reply).ok_or_else(|| RetrievalError::UnparseableScore {
        evidence_id: evidence.id.clone(),
        reply: reply.clone(),
    })?;
    Ok(quantize_score(x).expect("value checked in range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ScriptedChat;
    use crate::registry::SourceId;

    fn score_with(reply: &str) -> Result<RelevanceScore, RetrievalError> {
        let t = PromptTemplates::default();
        let e = Evidence::new("p1", SourceId::new("PERSONA").unwrap(), "I like tea.");
        let req = relevance_request("User: tea?", &e, &t, GenParams::default());
        let chat = ScriptedChat::new().with_request(&req, reply);
        llm_relevance("User: tea?", &e, &chat, &t, GenParams::default())
    }

    #[test]
    fn examples() {
        assert_eq!(score_with("0.7").unwrap().token(), "0.7");
        assert_eq!(score_with("relevance: 0.73").unwrap().token(), "0.7");
        let err = score_with("high").unwrap_err();
        assert!(matches!(err, RetrievalError::UnparseableScore { ref reply, .. } if reply == "high"));
    }

    #[test]
    fn skips_out_of_range_and_embedded_digits() {
        assert_eq!(parse_relevance("e1 scores 7 out of 10, i.e. 0.7"), Some(0.7));
        assert_eq!(parse_relevance("1"), Some(1.0));
        assert_eq!(parse_relevance("8/10"), None);
    }

    #[test]
    fn prompt_contains_context_and_evidence() {
        let t = PromptTemplates::default();
        let e = Evidence::new("p1", SourceId::new("PERSONA").unwrap(), "I like tea.");
        let req = relevance_request("User: tea?", &e, &t, GenParams::default());
        assert!(req.last_user().contains("User: tea?"));
        assert!(req.last_user().contains("I like tea."));
    }
}

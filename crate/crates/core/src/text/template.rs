//! Chat templates. Rendering is a pure function of (system_prompt, user_text)
//! and ends exactly where the assistant's next token would be predicted.

use serde::{Deserialize, Serialize};

/// System prompt used for all main experiments.
pub const DEFAULT_SYSTEM_PROMPT: &str =
    "You are a concise assistant. Respond in one or two sentences.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Llama3Instruct,
    Chatml,
    Raw,
}

impl std::str::FromStr for TemplateId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llama3_instruct" => Ok(TemplateId::Llama3Instruct),
            "chatml" => Ok(TemplateId::Chatml),
            "raw" => Ok(TemplateId::Raw),
            other => Err(format!("unknown chat template `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatTemplate {
    pub template_id: TemplateId,
    pub system_prompt: String,
}

impl ChatTemplate {
    pub fn new(template_id: TemplateId, system_prompt: impl Into<String>) -> Self {
        ChatTemplate { template_id, system_prompt: system_prompt.into() }
    }

    pub fn raw() -> Self {
        ChatTemplate::new(TemplateId::Raw, "")
    }

    /// Render the full prompt text up to (and including) the assistant
    /// header, so the next predicted token is the assistant's first token.
    /// The raw template passes the user text through untouched and ignores
    /// the system prompt.
    pub fn render(&self, user_text: &str) -> String {
        match self.template_id {
            TemplateId::Raw => user_text.to_string(),
            TemplateId::Chatml => format!(
                "<|im_start|>system\n{}<|im_end|>\n<|im_start|>user\n{}<|im_end|>\n<|im_start|>assistant\n",
                self.system_prompt, user_text
            ),
            TemplateId::Llama3Instruct => format!(
                "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n\n{}<|eot_id|><|start_header_id|>user<|end_header_id|>\n\n{}<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n\n",
                self.system_prompt, user_text
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_passes_user_text_through() {
        let t = ChatTemplate::raw();
        assert_eq!(t.render("ab"), "ab");
    }

    #[test]
    fn rendering_is_pure() {
        let t = ChatTemplate::new(TemplateId::Chatml, "sys");
        assert_eq!(t.render("hi"), t.render("hi"));
    }

    #[test]
    fn chatml_ends_at_assistant_header() {
        let t = ChatTemplate::new(TemplateId::Chatml, "s");
        let rendered = t.render("u");
        assert!(rendered.ends_with("<|im_start|>assistant\n"));
        assert!(rendered.starts_with("<|im_start|>system\ns<|im_end|>\n"));
    }

    #[test]
    fn llama3_ends_at_assistant_header() {
        let t = ChatTemplate::new(TemplateId::Llama3Instruct, "s");
        assert!(t.render("u").ends_with("<|start_header_id|>assistant<|end_header_id|>\n\n"));
    }
}

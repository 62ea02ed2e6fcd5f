//! Prompt wrappers for a generative extractor and for solving with
//! experience. Substitution is literal; nothing else in the text changes.

const MATH_EXTRACTION_HEAD: &str = "You are an AI language model that continuously refines its internal experience.

Here is the latest interaction (including the user's question and your answer):
";

const MATH_EXTRACTION_TAIL: &str = "

Your task:
Based on the latest interaction and the previous experience, generate an additional experience for future learning.

Rules:
- The experience you generate MUST be formatted strictly as a markdown list where each item starts with \"- EXPERIENCE ITEM:\", one per line:
- EXPERIENCE ITEM: ...
- EXPERIENCE ITEM: ...
- EXPERIENCE ITEM: ...
- The experience you generate will be directly appended to the previous experience.
- The change should introduce a general, high-level, widely applicable insight, not a detail from the specific interaction. The updated experience must remain concise, structured, and meaningful.
- If the new insight conflicts with any previous experience item, you are can describe the conflict and provide a resolution in the new item.

After careful reasoning step by step, output the final result in exactly this format:

Additional Experience:
# Experience
- EXPERIENCE ITEM: ...
- EXPERIENCE ITEM: ...
- EXPERIENCE ITEM: ...";

const GAME_EXTRACTION_HEAD: &str = "You are an AI language model that continuously refines its internal experience.
Here is the interaction history (the game environment (input) and your response and action (output)):
";

const GAME_EXTRACTION_TAIL: &str = "

Your task:
Based on the multi-round interaction history, generate experience for future learning. You should conduct a deep, comparative analysis to infer the game rules and the fundamental principles behind winning and losing. Using the interaction history and environment feedback, hypothesize the game rules and effective winning strategies, and organize these insights into 1-2 concise, high-level, and widely applicable experience items that help the player succeed in the game.

Rules:
- The experience you generate MUST be formatted strictly as a markdown item which starts with \"- EXPERIENCE ITEM:\":
- EXPERIENCE ITEM: ...
- EXPERIENCE ITEM: ...
- The experience you generate will be directly appended to the previous experience. Do not repeat the previous experience. Make sure the newly generated experience is different from the previous experience.
- Your generated experience should be possible rules, instructions or winning strategies for the game. The experience should be generally useful rather than only applicable for the current map (board).

After careful reasoning step by step, output the final result in exactly this format:

Additional Experience (Rules or Strategies):
# Experience
- EXPERIENCE ITEM: ...";

const SOLVE_HEAD: &str = "Given previous learned experience:
# Experience
";

const SOLVE_MIDDLE: &str = "

Solve the new problem and explain what part of experience you use and how you use it in the reasoning process:
";

use serde::{Deserialize, Serialize};

use super::items::ExperienceContext;

/// Which extraction wrapper (and which default token budget) applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Math,
    Game,
}

impl Flavor {
    /// Maximum experience length in tokens.
    pub fn default_budget(self) -> usize {
        match self {
            Flavor::Math => 16384,
            Flavor::Game => 8192,
        }
    }

    /// Default validation size for filtered selection.
    pub fn default_validation_size(self) -> usize {
        match self {
            Flavor::Math => 1000,
            Flavor::Game => 128,
        }
    }
}

/// Extraction prompt with `trace` in place of the latest-experience slot.
pub fn format_extraction_prompt(trace: &str, flavor: Flavor) -> String {
    let (head, tail) = match flavor {
        Flavor::Math => (MATH_EXTRACTION_HEAD, MATH_EXTRACTION_TAIL),
        Flavor::Game => (GAME_EXTRACTION_HEAD, GAME_EXTRACTION_TAIL),
    };
    [head, trace, tail].concat()
}

/// Solve prompt with the rendered items and the problem substituted.
pub fn format_solve_prompt(context: &ExperienceContext, problem: &str) -> String {
    [SOLVE_HEAD, &context.render(), SOLVE_MIDDLE, problem].concat()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_substitution_keeps_skeleton() {
        let p = format_extraction_prompt("", Flavor::Math);
        assert!(p.contains("answer):\n\n\nYour task:"));
        assert!(format_solve_prompt(&ExperienceContext::empty(10), "").starts_with("Given previous learned experience:\n# Experience\n\n\n"));
    }
}

//! Prompt templates, one per task type. Deterministic: the same sample
//! always yields the same bytes. The version string participates in cache
//! keys, so editing a template here must come with a version bump.

use crate::manifest::{label_for, SampleRecord, TaskType};

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

pub fn build_prompt(sample: &SampleRecord, task: TaskType) -> String {
    match task {
        TaskType::Mcq => {
            let mut prompt = sample.question.clone();
            prompt.push('\n');
            for (i, option) in sample.options.iter().enumerate() {
                prompt.push_str(&format!("{}. {}\n", label_for(i), option));
            }
            prompt.push_str("Answer with the option letter only.");
            prompt
        }
        TaskType::YesNo => format!("{}\nAnswer yes or no.", sample.question),
        TaskType::OpenEnded => {
            format!(
                "{}\nAnswer with a single word or short phrase.",
                sample.question
            )
        }
    }
}

//! Task and aspect kinds, and the fixed tables that hang off them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The conditional image-synthesis task an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TextGuidedGeneration,
    MaskGuidedEditing,
    TextGuidedEditing,
    SubjectDrivenGeneration,
    SubjectDrivenEditing,
    MultiConceptComposition,
    ControlGuidedGeneration,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::TextGuidedGeneration,
        TaskKind::MaskGuidedEditing,
        TaskKind::TextGuidedEditing,
        TaskKind::SubjectDrivenGeneration,
        TaskKind::SubjectDrivenEditing,
        TaskKind::MultiConceptComposition,
        TaskKind::ControlGuidedGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::TextGuidedGeneration => "text_guided_generation",
            TaskKind::MaskGuidedEditing => "mask_guided_editing",
            TaskKind::TextGuidedEditing => "text_guided_editing",
            TaskKind::SubjectDrivenGeneration => "subject_driven_generation",
            TaskKind::SubjectDrivenEditing => "subject_driven_editing",
            TaskKind::MultiConceptComposition => "multi_concept_composition",
            TaskKind::ControlGuidedGeneration => "control_guided_generation",
        }
    }

    /// Short alias, also accepted by `FromStr`.
    pub fn short_name(self) -> &'static str {
        match self {
            TaskKind::TextGuidedGeneration => "t2i",
            TaskKind::MaskGuidedEditing => "mie",
            TaskKind::TextGuidedEditing => "tie",
            TaskKind::SubjectDrivenGeneration => "sdig",
            TaskKind::SubjectDrivenEditing => "sdie",
            TaskKind::MultiConceptComposition => "mcic",
            TaskKind::ControlGuidedGeneration => "cig",
        }
    }

    /// Number of SC sub-scores the task's rating prompt asks for.
    pub fn sc_arity(self) -> usize {
        match self {
            TaskKind::TextGuidedGeneration => 1,
            TaskKind::MultiConceptComposition => 3,
            _ => 2,
        }
    }

    /// Number of condition images shown ahead of the synthetic image in the SC request.
    pub fn condition_image_count(self) -> usize {
        match self {
            TaskKind::TextGuidedGeneration => 0,
            TaskKind::SubjectDrivenEditing | TaskKind::MultiConceptComposition => 2,
            _ => 1,
        }
    }

    /// The single placeholder the task's SC template declares.
    pub fn sc_placeholder(self) -> Placeholder {
        match self {
            TaskKind::MaskGuidedEditing | TaskKind::TextGuidedEditing => Placeholder::Instruction,
            TaskKind::SubjectDrivenEditing => Placeholder::Subject,
            _ => Placeholder::Prompt,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown task kind `{0}`")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let task = TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == lower || t.short_name() == lower)
            .ok_or_else(|| UnknownTask(s.to_string()))?;
        Ok(task)
    }
}

/// Which half of the rating a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AspectKind {
    /// Semantic consistency with the conditions.
    #[serde(rename = "SC")]
    Sc,
    /// Perceptual quality: naturalness and artifacts.
    #[serde(rename = "PQ")]
    Pq,
}

impl AspectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AspectKind::Sc => "SC",
            AspectKind::Pq => "PQ",
        }
    }
}

impl fmt::Display for AspectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// PQ always splits into naturalness and artifacts.
pub const PQ_ARITY: usize = 2;

/// Expected number of sub-scores for a (task, aspect) pair.
pub fn expected_arity(task: TaskKind, aspect: AspectKind) -> usize {
    match aspect {
        AspectKind::Sc => task.sc_arity(),
        AspectKind::Pq => PQ_ARITY,
    }
}

/// Template placeholder tokens. Matched literally as `<prompt>`, `<instruction>`, `<subject>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    Prompt,
    Instruction,
    Subject,
}

impl Placeholder {
    pub const ALL: [Placeholder; 3] = [Placeholder::Prompt, Placeholder::Instruction, Placeholder::Subject];

    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Prompt => "<prompt>",
            Placeholder::Instruction => "<instruction>",
            Placeholder::Subject => "<subject>",
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sc_arities_sum_to_fourteen() {
        let total: usize = TaskKind::ALL.iter().map(|t| expected_arity(*t, AspectKind::Sc)).sum();
        assert_eq!(total, 14);
    }

    #[test]
    fn pq_arity_is_two_everywhere() {
        for t in TaskKind::ALL {
            assert_eq!(expected_arity(t, AspectKind::Pq), 2);
        }
    }

    #[test]
    fn condition_image_counts() {
        assert_eq!(TaskKind::TextGuidedGeneration.condition_image_count(), 0);
        assert_eq!(TaskKind::TextGuidedEditing.condition_image_count(), 1);
        assert_eq!(TaskKind::MaskGuidedEditing.condition_image_count(), 1);
        assert_eq!(TaskKind::ControlGuidedGeneration.condition_image_count(), 1);
        assert_eq!(TaskKind::SubjectDrivenGeneration.condition_image_count(), 1);
        assert_eq!(TaskKind::SubjectDrivenEditing.condition_image_count(), 2);
        assert_eq!(TaskKind::MultiConceptComposition.condition_image_count(), 2);
    }

    #[test]
    fn parse_aliases_and_names() {
        for t in TaskKind::ALL {
            assert_eq!(t.as_str().parse::<TaskKind>().unwrap(), t);
        }
        assert_eq!("MCIC".parse::<TaskKind>().unwrap(), TaskKind::MultiConceptComposition);
        assert!("painting".parse::<TaskKind>().is_err());
    }

    #[test]
    fn serde_names_match_display() {
        for t in TaskKind::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t));
        }
        assert_eq!(serde_json::to_string(&AspectKind::Pq).unwrap(), "\"PQ\"");
    }
}

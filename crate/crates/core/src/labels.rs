//! Closed vocabularies: languages, post sources, task labels and ordered label spaces.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Validation(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

pub(crate) use string_enum;

string_enum!(
    Language {
        En => "en",
        Es => "es",
    }
);

impl Language {
    pub fn other(self) -> Language {
        match self {
            Language::En => Language::Es,
            Language::Es => Language::En,
        }
    }
}

string_enum!(
    Source {
        Twitter => "twitter",
        Gab => "gab",
    }
);

string_enum!(
    /// Binary sexism identification label.
    Task1Label {
        NonSexist => "non-sexist",
        Sexist => "sexist",
    }
);

string_enum!(
    /// Sexism category. `NonSexist` only appears for posts that are not sexist.
    Task2Label {
        NonSexist => "non-sexist",
        IdeologicalInequality => "ideological-inequality",
        StereotypingDominance => "stereotyping-dominance",
        Objectification => "objectification",
        SexualViolence => "sexual-violence",
        MisogynyNonSexualViolence => "misogyny-non-sexual-violence",
    }
);

impl Task2Label {
    pub const CATEGORIES: &'static [Task2Label] = &[
        Task2Label::IdeologicalInequality,
        Task2Label::StereotypingDominance,
        Task2Label::Objectification,
        Task2Label::SexualViolence,
        Task2Label::MisogynyNonSexualViolence,
    ];

    pub fn is_sexist(self) -> bool {
        self != Task2Label::NonSexist
    }
}

string_enum!(
    Task {
        Task1 => "task1",
        Task2 => "task2",
    }
);

pub const NON_SEXIST: &str = "non-sexist";
pub const SEXIST: &str = "sexist";

/// Ordered set of class labels. Declaration order is the tie-break order
/// everywhere a deterministic choice between labels is needed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Argument("label space must not be empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.contains(['\t', '\n', ',']) {
                return Err(Error::Argument(format!("invalid label {l:?}")));
            }
            if labels[..i].contains(l) {
                return Err(Error::Argument(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// `non-sexist`, `sexist`.
    pub fn task1() -> Self {
        Self::from_static(Task1Label::ALL.iter().map(|l| l.as_str()))
    }

    /// The five sexist categories, used to train and score categorizers on gated data.
    pub fn task2_categories() -> Self {
        Self::from_static(Task2Label::CATEGORIES.iter().map(|l| l.as_str()))
    }

    /// Six classes (non-sexist plus the five categories) for end-to-end scoring.
    pub fn task2_end_to_end() -> Self {
        Self::from_static(Task2Label::ALL.iter().map(|l| l.as_str()))
    }

    /// Label space a model is trained on for the given task.
    pub fn for_training(task: Task) -> Self {
        match task {
            Task::Task1 => Self::task1(),
            Task::Task2 => Self::task2_categories(),
        }
    }

    fn from_static<'a>(labels: impl Iterator<Item = &'a str>) -> Self {
        Self {
            labels: labels.map(str::to_string).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn require_index(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| {
            Error::Validation(format!(
                "label {label:?} is not in label space [{}]",
                self.labels.join(", ")
            ))
        })
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

impl fmt::Display for LabelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels.join(","))
    }
}

impl FromStr for LabelSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelSpace::new(s.split(',').map(str::trim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enums_round_trip_through_text() {
        for l in Task2Label::ALL {
            assert_eq!(l.as_str().parse::<Task2Label>().unwrap(), *l);
        }
        assert!("fr".parse::<Language>().is_err());
        assert_eq!(Language::En.other(), Language::Es);
    }

    #[test]
    fn label_spaces() {
        assert_eq!(LabelSpace::task1().labels(), ["non-sexist", "sexist"]);
        assert_eq!(LabelSpace::task2_categories().len(), 5);
        assert!(!LabelSpace::task2_categories().contains(NON_SEXIST));
        assert_eq!(LabelSpace::task2_end_to_end().len(), 6);
        assert!(LabelSpace::new(["a", "a"]).is_err());
        let s: LabelSpace = "a, b,c".parse().unwrap();
        assert_eq!(s.to_string(), "a,b,c");
    }
}

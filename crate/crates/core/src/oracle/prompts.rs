use std::str::FromStr;

use super::{OracleError, Taxonomy};

/// Prompt text for every oracle operation.
///
/// Placeholders: `{WHERE_CLAUSE}`, `{ROW}`, `{ABSTRACT_ATTRIBUTE}`,
/// `{CATEGORY_COUNT}`, `{CATEGORY_LIST}`, `{INDEX}`, `{ATTRIBUTE_COUNT}`,
/// `{ATTRIBUTE_LIST}`. Substitution is single-pass, so substituted text is
/// never rescanned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub judge_system: String,
    pub judge_user: String,
    pub taxonomy_system: String,
    pub taxonomy_user: String,
    /// Repeated once per sampled row after `taxonomy_user`.
    pub taxonomy_row: String,
    pub classify_system: String,
    pub classify_user: String,
    pub extract_system: String,
    pub extract_user: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplatePreset {
    Imdb,
    Abcd,
    AirDialog,
    Generic,
}

impl FromStr for TemplatePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "imdb" => Ok(TemplatePreset::Imdb),
            "abcd" => Ok(TemplatePreset::Abcd),
            "airdialog" => Ok(TemplatePreset::AirDialog),
            "generic" => Ok(TemplatePreset::Generic),
            other => Err(format!("unknown prompt preset `{other}` (imdb, abcd, airdialog, generic)")),
        }
    }
}

const TAXONOMY_TAIL: &str = "Your task is to analyze all the dialogs, and summarize \"{ABSTRACT_ATTRIBUTE}\" into groups. Please output the table of your analysis, in the format of pairs of (\"{ABSTRACT_ATTRIBUTE}\", number_of_dialogs belong to that). Specifically in the format as:\ngroup 1,number_of_dialogs\ngroup 2,number_of_dialogs\n...";

const CLASSIFY_TAIL: &str = "and classify {ABSTRACT_ATTRIBUTE}, into one or several categories below. Here are the description of the {CATEGORY_COUNT} categories: \n{CATEGORY_LIST}Only reply the index of the category, separated by \",\". Here is the example format: \n[0, 3]";

fn extract_system(subject: &str) -> String {
    format!(
        "Read the following {subject}, and extract the {{ATTRIBUTE_COUNT}} attributes listed below. Reply with exactly one line per attribute, in the listed order, in the format [i]: value.\n{{ATTRIBUTE_LIST}}"
    )
}

impl PromptTemplates {
    pub fn preset(preset: TemplatePreset) -> Self {
        match preset {
            TemplatePreset::Imdb => Self {
                judge_system: "Please analyze the following movie review, and only reply <True> if {WHERE_CLAUSE}, or <False> otherwise.".into(),
                judge_user: "[Movie review]: {ROW}".into(),
                taxonomy_system: "The following are movie reviews. Reviews start with headers such as **review_1**, **review_2**, and so on.\nYour task is to analyze all the reviews, and summarize \"{ABSTRACT_ATTRIBUTE}\" into groups. Please output the table of your analysis, in the format of pairs of (\"{ABSTRACT_ATTRIBUTE}\", number_of_reviews belong to that). Specifically in the format as:\ngroup 1,number_of_reviews\ngroup 2,number_of_reviews\n...".into(),
                taxonomy_user: "Below are the reviews: \n".into(),
                taxonomy_row: "**review_{INDEX}**: \n{ROW}\n".into(),
                classify_system: format!("Read the given movie review, {CLASSIFY_TAIL}"),
                classify_user: "Here is the movie review: \n{ROW}".into(),
                extract_system: extract_system("movie review"),
                extract_user: "[Movie review]: {ROW}".into(),
            },
            TemplatePreset::Abcd => Self {
                judge_system: "Read the following customer support dialog between an agent and a customer, and only reply <True> if {WHERE_CLAUSE}, or <False> otherwise.".into(),
                judge_user: "[Dialog]: {ROW}".into(),
                taxonomy_system: format!("The following are dialogs between a customer service agent and a customer. Dialogs start with headers such as **dialog_1**, **dialog_2**, and so on.\n{TAXONOMY_TAIL}"),
                taxonomy_user: "Below are the dialogs: \n".into(),
                taxonomy_row: "**dialog_{INDEX}**: \n{ROW}\n".into(),
                classify_system: format!("Read the given airline ticketing dialog between an agent and a customer, {CLASSIFY_TAIL}"),
                classify_user: "Here is the customer support dialog: \n{ROW}".into(),
                extract_system: extract_system("customer support dialog between an agent and a customer"),
                extract_user: "[Dialog]: {ROW}".into(),
            },
            TemplatePreset::AirDialog => Self {
                judge_system: "Read the following airline ticketing dialog between the customer and the agent, and only reply <True> if {WHERE_CLAUSE}, or <False> otherwise.".into(),
                judge_user: "[Dialog]: {ROW}".into(),
                taxonomy_system: format!("The following are dialogs between a airline ticketing agent and a customer. Dialogs start with headers such as **dialog_1**, **dialog_2**, and so on.\n{TAXONOMY_TAIL}"),
                taxonomy_user: "Below are the dialogs: \n".into(),
                taxonomy_row: "**dialog_{INDEX}**: \n{ROW}\n".into(),
                classify_system: format!("Read the given airline ticketing dialog between the customer and the agent, {CLASSIFY_TAIL}"),
                classify_user: "Here is the airline ticketing dialog: {ROW}".into(),
                extract_system: extract_system("airline ticketing dialog between the customer and the agent"),
                extract_user: "[Dialog]: {ROW}".into(),
            },
            TemplatePreset::Generic => Self {
                judge_system: "Read the following record, and only reply <True> if {WHERE_CLAUSE}, or <False> otherwise.".into(),
                judge_user: "[Record]: {ROW}".into(),
                taxonomy_system: "The following are records. Records start with headers such as **record_1**, **record_2**, and so on.\nYour task is to analyze all the records, and summarize \"{ABSTRACT_ATTRIBUTE}\" into groups. Please output the table of your analysis, in the format of pairs of (\"{ABSTRACT_ATTRIBUTE}\", number_of_records belong to that). Specifically in the format as:\ngroup 1,number_of_records\ngroup 2,number_of_records\n...".into(),
                taxonomy_user: "Below are the records: \n".into(),
                taxonomy_row: "**record_{INDEX}**: \n{ROW}\n".into(),
                classify_system: format!("Read the given record, {CLASSIFY_TAIL}"),
                classify_user: "Here is the record: \n{ROW}".into(),
                extract_system: extract_system("record"),
                extract_user: "[Record]: {ROW}".into(),
            },
        }
    }
}

/// A system and user message pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.system.len() + self.user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Replace `{NAME}` placeholders in one pass. Unknown placeholders are kept.
pub(crate) fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = tail.find('}').and_then(|close| {
            let name = &tail[1..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub(crate) fn category_list(taxonomy: &Taxonomy) -> String {
    taxonomy
        .categories()
        .iter()
        .map(|c| match &c.description {
            Some(d) => format!("[{}]: {}: {}", c.index, c.label, d),
            None => format!("[{}]: {}", c.index, c.label),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl PromptTemplates {
    pub fn judge(&self, condition: &str, row: &str) -> Prompt {
        Prompt {
            system: fill(&self.judge_system, &[("WHERE_CLAUSE", condition)]),
            user: fill(&self.judge_user, &[("ROW", row)]),
        }
    }

    pub fn taxonomy(&self, attribute: &str, rows: &[String]) -> Prompt {
        let mut user = self.taxonomy_user.clone();
        for (i, row) in rows.iter().enumerate() {
            let index = i.to_string();
            user.push_str(&fill(&self.taxonomy_row, &[("INDEX", &index), ("ROW", row)]));
        }
        Prompt {
            system: fill(&self.taxonomy_system, &[("ABSTRACT_ATTRIBUTE", attribute)]),
            user,
        }
    }

    pub fn classify(&self, taxonomy: &Taxonomy, row: &str) -> Prompt {
        let count = taxonomy.len().to_string();
        let list = category_list(taxonomy);
        Prompt {
            system: fill(
                &self.classify_system,
                &[
                    ("ABSTRACT_ATTRIBUTE", taxonomy.attribute()),
                    ("CATEGORY_COUNT", &count),
                    ("CATEGORY_LIST", &list),
                ],
            ),
            user: fill(&self.classify_user, &[("ROW", row)]),
        }
    }

    pub fn extract(&self, attributes: &[String], row: &str) -> Prompt {
        let count = attributes.len().to_string();
        let list = attribute_list(attributes);
        Prompt {
            system: fill(
                &self.extract_system,
                &[("ATTRIBUTE_COUNT", &count), ("ATTRIBUTE_LIST", &list)],
            ),
            user: fill(&self.extract_user, &[("ROW", row)]),
        }
    }
}

fn attribute_list(attributes: &[String]) -> String {
    attributes
        .iter()
        .enumerate()
        .map(|(i, a)| format!("[{i}]: {a}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One part of a fused request.
pub(crate) enum Task<'a> {
    Judge(&'a str),
    Classify(&'a Taxonomy),
    Extract(&'a [String]),
}

/// Several tasks about the same row in one prompt. The reply carries one
/// line per answer, each prefixed `Task k:`; an extraction task answers
/// with one such line per attribute.
pub(crate) fn fused(templates: &PromptTemplates, tasks: &[Task<'_>], row: &str) -> Prompt {
    let mut system = String::from(
        "Answer every task below about the same input. Reply with one line per answer, in task order, each line starting with \"Task k:\" where k is the task number.\n",
    );
    for (k, task) in tasks.iter().enumerate() {
        let body = match task {
            Task::Judge(cond) => format!("only reply <True> if {cond}, or <False> otherwise."),
            Task::Classify(t) => format!(
                "classify {}, into one or several categories below. Here are the description of the {} categories: \n{}\nOnly reply the index of the category, separated by \",\". Here is the example format: \n[0, 3]",
                t.attribute(),
                t.len(),
                category_list(t)
            ),
            Task::Extract(attrs) => format!(
                "extract the {} attributes listed below, one line per attribute in the listed order.\n{}",
                attrs.len(),
                attribute_list(attrs)
            ),
        };
        system.push_str(&format!("Task {}: {}\n", k + 1, body));
    }
    Prompt {
        system: system.trim_end().to_string(),
        user: fill(&templates.judge_user, &[("ROW", row)]),
    }
}

// ---- reply parsing ----

pub(crate) fn parse_verdict(reply: &str) -> Result<bool, OracleError> {
    match reply.trim() {
        "<True>" => Ok(true),
        "<False>" => Ok(false),
        other => Err(OracleError::Protocol(format!(
            "expected <True> or <False>, got `{other}`"
        ))),
    }
}

/// A bracketed or bare comma-separated index list, each index below `n`.
pub(crate) fn parse_indices(reply: &str, n: usize) -> Result<Vec<usize>, OracleError> {
    let text = reply.trim();
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .unwrap_or(text);
    let mut out = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        let i: usize = part.parse().map_err(|_| {
            OracleError::Protocol(format!("`{part}` is not a category index in `{text}`"))
        })?;
        if i >= n {
            return Err(OracleError::Protocol(format!(
                "category index {i} out of range for {n} categories"
            )));
        }
        out.push(i);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// `label,count` lines; the label may itself contain commas.
pub(crate) fn parse_taxonomy(
    reply: &str,
    attribute: &str,
    max_groups: usize,
) -> Result<Taxonomy, OracleError> {
    let mut groups: Vec<(String, u64)> = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty() && *l != "...") {
        let (label, count) = line
            .rsplit_once(',')
            .ok_or_else(|| OracleError::Protocol(format!("taxonomy line `{line}` lacks a count")))?;
        let count: u64 = count.trim().parse().map_err(|_| {
            OracleError::Protocol(format!("taxonomy line `{line}` has a non-integer count"))
        })?;
        let label = label.trim().trim_matches(|c| c == '"' || c == '(' || c == ')').trim();
        if label.is_empty() {
            return Err(OracleError::Protocol(format!("taxonomy line `{line}` has no label")));
        }
        if !groups.iter().any(|(l, _)| l == label) {
            groups.push((label.to_string(), count));
        }
    }
    if groups.len() > max_groups.max(1) {
        // stable sort keeps reply order among equal counts
        groups.sort_by_key(|g| std::cmp::Reverse(g.1));
        groups.truncate(max_groups.max(1));
    }
    if groups.is_empty() {
        return Err(OracleError::Protocol("taxonomy reply has no groups".into()));
    }
    Taxonomy::new(attribute, groups.into_iter().map(|g| g.0).collect())
}

fn strip_index_prefix(line: &str) -> &str {
    if let Some(rest) = line.strip_prefix('[') {
        if let Some((idx, tail)) = rest.split_once("]:") {
            if idx.trim().parse::<usize>().is_ok() {
                return tail.trim();
            }
        }
    }
    line
}

pub(crate) fn parse_extracted(reply: &str, expected: usize) -> Result<Vec<String>, OracleError> {
    let lines: Vec<String> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| strip_index_prefix(l).to_string())
        .collect();
    if lines.len() != expected {
        return Err(OracleError::Protocol(format!(
            "expected {expected} extracted lines, got {}",
            lines.len()
        )));
    }
    Ok(lines)
}

/// Split a fused reply into per-task answer lines.
pub(crate) fn split_tasks(reply: &str, tasks: usize) -> Result<Vec<Vec<String>>, OracleError> {
    let mut out = vec![Vec::new(); tasks];
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let rest = line
            .strip_prefix("Task ")
            .ok_or_else(|| OracleError::Protocol(format!("line `{line}` lacks a task prefix")))?;
        let (k, answer) = rest
            .split_once(':')
            .ok_or_else(|| OracleError::Protocol(format!("line `{line}` lacks a task prefix")))?;
        let k: usize = k
            .trim()
            .parse()
            .ok()
            .filter(|k| (1..=tasks).contains(k))
            .ok_or_else(|| OracleError::Protocol(format!("bad task number in `{line}`")))?;
        out[k - 1].push(answer.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {ROW} b", &[("ROW", "{ROW}")]), "a {ROW} b");
        assert_eq!(fill("{X} {Y}", &[("X", "1")]), "1 {Y}");
        assert_eq!(fill("{ unbalanced", &[]), "{ unbalanced");
    }

    #[test]
    fn verdicts_are_strict() {
        assert_eq!(parse_verdict(" <True>\n"), Ok(true));
        assert_eq!(parse_verdict("<False>"), Ok(false));
        assert!(parse_verdict("maybe").is_err());
        assert!(parse_verdict("<true>").is_err());
    }

    #[test]
    fn index_lists() {
        assert_eq!(parse_indices("[0, 3]", 4), Ok(vec![0, 3]));
        assert_eq!(parse_indices("1", 2), Ok(vec![1]));
        assert!(parse_indices("[0, 3]", 2).is_err());
        assert!(parse_indices("[]", 2).is_err());
        assert!(parse_indices("[a]", 2).is_err());
    }

    #[test]
    fn taxonomy_lines() {
        let t = parse_taxonomy("Forgot Password,457\nForgot Username,406\n...\n", "issue", 16).unwrap();
        assert_eq!(t.label(0), "Forgot Password");
        assert_eq!(t.len(), 2);
        let t = parse_taxonomy("a, b,3\nc,9", "x", 1).unwrap();
        assert_eq!(t.label(0), "c");
        assert!(parse_taxonomy("no count here", "x", 4).is_err());
    }

    #[test]
    fn extracted_lines() {
        assert_eq!(
            parse_extracted("[0]: positive\n[1]: the acting", 2).unwrap(),
            vec!["positive", "the acting"]
        );
        assert!(parse_extracted("one", 2).is_err());
    }
}

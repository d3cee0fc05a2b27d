use crate::grammar::{quote, rules, Action};

/// Number and quoted-string literals of a question, in order, as SQL text.
pub fn question_literals(question: &str) -> Vec<String> {
    let chars: Vec<char> = question.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let boundary = i == 0 || !chars[i - 1].is_alphanumeric();
        if (c == '"' || c == '\'') && boundary {
            if let Some(len) = chars[i + 1..].iter().position(|&q| q == c) {
                let content: String = chars[i + 1..i + 1 + len].iter().collect();
                if !content.is_empty() {
                    out.push(quote(&content));
                    i += len + 2;
                    continue;
                }
            }
        }
        let negative = c == '-' && boundary && chars.get(i + 1).is_some_and(char::is_ascii_digit);
        if (c.is_ascii_digit() || negative) && boundary {
            let start = i;
            i += 1;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || (chars[i] == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)))
            {
                i += 1;
            }
            if i == chars.len() || !chars[i].is_alphabetic() {
                out.push(chars[start..i].iter().collect());
            }
            continue;
        }
        i += 1;
    }
    out
}

/// Fills empty literal slots with `literals` in order. `LIMIT` falls back to
/// 1 and other slots to the string `"value"` once the candidates run out.
pub fn fill_literals(actions: &[Action], literals: &[String]) -> Vec<Action> {
    let mut next = literals.iter();
    let mut out = Vec::with_capacity(actions.len());
    for (i, a) in actions.iter().enumerate() {
        match a {
            Action::EmitLiteral(v) if v.is_empty() => {
                let is_limit = i > 0 && actions[i - 1] == Action::ApplyRule(rules::LIMIT_SOME);
                let value = match next.next() {
                    Some(v) => v.clone(),
                    None if is_limit => "1".to_string(),
                    None => quote("value"),
                };
                out.push(Action::EmitLiteral(value));
            }
            other => out.push(other.clone()),
        }
    }
    out
}

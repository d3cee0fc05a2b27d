/// Schema name normalisation: lower-case, underscores to spaces, whitespace split.
pub fn normalize_name(name: &str) -> Vec<String> {
    name.to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Question tokenisation: lower-case words and numbers; every other
/// non-space character becomes its own token. Underscores separate words.
pub fn tokenize_question(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    for (i, &ch) in chars.iter().enumerate() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if ch == '.'
            && !cur.is_empty()
            && cur.chars().all(|c| c.is_ascii_digit())
            && chars.get(i + 1).is_some_and(char::is_ascii_digit)
        {
            cur.push(ch);
        } else {
            flush(&mut cur, &mut tokens);
            if !ch.is_whitespace() && ch != '_' {
                tokens.push(ch.to_string());
            }
        }
    }
    flush(&mut cur, &mut tokens);
    tokens
}

use super::GrammarError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    /// Keyword or identifier, as written.
    Word(String),
    Number(String),
    /// String literal content without quotes.
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    Semi,
}

impl Tok {
    /// Case-insensitive keyword test.
    pub fn is_word(&self, kw: &str) -> bool {
        matches!(self, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }
}

pub fn lex(sql: &str) -> Result<Vec<Tok>, GrammarError> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(Tok::Number(chars[start..i].iter().collect()));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
            continue;
        }
        if c == '\'' || c == '"' || c == '`' {
            let mut content = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => {
                        return Err(GrammarError::Syntax(format!("unterminated quote {c} in {sql:?}")));
                    }
                    Some(&q) if q == c => {
                        // A doubled quote is an escaped quote character.
                        if chars.get(i + 1) == Some(&c) {
                            content.push(c);
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(&ch) => {
                        content.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(if c == '`' { Tok::Word(content) } else { Tok::Str(content) });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, len) = match two.as_str() {
            "!=" | "<>" => (Tok::Ne, 2),
            "<=" => (Tok::Le, 2),
            ">=" => (Tok::Ge, 2),
            "==" => (Tok::Eq, 2),
            _ => match c {
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                ',' => (Tok::Comma, 1),
                '.' => (Tok::Dot, 1),
                '*' => (Tok::Star, 1),
                '+' => (Tok::Plus, 1),
                '-' => (Tok::Minus, 1),
                '/' => (Tok::Slash, 1),
                '=' => (Tok::Eq, 1),
                '<' => (Tok::Lt, 1),
                '>' => (Tok::Gt, 1),
                ';' => (Tok::Semi, 1),
                other => return Err(GrammarError::Syntax(format!("unexpected character {other:?}"))),
            },
        };
        out.push(tok);
        i += len;
    }
    Ok(out)
}

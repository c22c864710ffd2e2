//! Reference parser for the InfluxDB line protocol, used as a test oracle.

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Float(f64),
    Integer(i64),
    Unsigned(u64),
    Boolean(bool),
    String(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub measurement: String,
    pub tags: Vec<(String, String)>,
    pub fields: Vec<(String, FieldValue)>,
    pub timestamp: Option<i64>,
}

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        self.pos += 1;
        c
    }

    fn err(&self, msg: &str) -> String {
        format!("{msg} at column {} in {:?}", self.pos, self.src)
    }

    /// Reads an identifier up to an unescaped stop character. Backslash
    /// escapes only the characters in `escapable`; elsewhere it is literal.
    fn ident(&mut self, stops: &[char], escapable: &[char]) -> Result<String, String> {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if stops.contains(&c) {
                break;
            }
            self.pos += 1;
            if c == '\\' {
                match self.peek() {
                    Some(n) if escapable.contains(&n) => {
                        self.pos += 1;
                        out.push(n);
                    }
                    _ => out.push('\\'),
                }
            } else if c == '\n' {
                return Err(self.err("newline inside line"));
            } else {
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err(self.err("empty identifier"));
        }
        Ok(out)
    }

    fn field_value(&mut self) -> Result<FieldValue, String> {
        if self.peek() == Some('"') {
            self.pos += 1;
            let mut s = String::new();
            loop {
                match self.bump() {
                    None => return Err(self.err("unterminated string")),
                    Some('"') => return Ok(FieldValue::String(s)),
                    Some('\\') => match self.peek() {
                        Some(n @ ('"' | '\\')) => {
                            self.pos += 1;
                            s.push(n);
                        }
                        _ => s.push('\\'),
                    },
                    Some(c) => s.push(c),
                }
            }
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == ',' || c == ' ' {
                break;
            }
            self.pos += 1;
        }
        let raw: String = self.chars[start..self.pos].iter().collect();
        match raw.as_str() {
            "t" | "T" | "true" | "True" | "TRUE" => return Ok(FieldValue::Boolean(true)),
            "f" | "F" | "false" | "False" | "FALSE" => return Ok(FieldValue::Boolean(false)),
            _ => {}
        }
        if let Some(n) = raw.strip_suffix('i') {
            return n.parse().map(FieldValue::Integer).map_err(|_| self.err("bad integer"));
        }
        if let Some(n) = raw.strip_suffix('u') {
            return n.parse().map(FieldValue::Unsigned).map_err(|_| self.err("bad unsigned"));
        }
        let valid = !raw.is_empty()
            && raw
                .chars()
                .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
        if !valid {
            return Err(self.err("bad float"));
        }
        raw.parse::<f64>()
            .ok()
            .filter(|f| f.is_finite())
            .map(FieldValue::Float)
            .ok_or_else(|| self.err("bad float"))
    }
}

pub fn parse_line(src: &str) -> Result<Line, String> {
    let mut c = Cursor {
        chars: src.chars().collect(),
        pos: 0,
        src,
    };
    let measurement = c.ident(&[',', ' '], &[',', ' ', '\\'])?;
    let mut tags = Vec::new();
    while c.peek() == Some(',') {
        c.pos += 1;
        let k = c.ident(&['=', ',', ' '], &[',', '=', ' ', '\\'])?;
        if c.bump() != Some('=') {
            return Err(c.err("tag without value"));
        }
        let v = c.ident(&[',', ' '], &[',', '=', ' ', '\\'])?;
        tags.push((k, v));
    }
    if c.bump() != Some(' ') {
        return Err(c.err("missing field set"));
    }
    let mut fields = Vec::new();
    loop {
        let k = c.ident(&['=', ',', ' '], &[',', '=', ' ', '\\'])?;
        if c.bump() != Some('=') {
            return Err(c.err("field without value"));
        }
        fields.push((k, c.field_value()?));
        match c.peek() {
            Some(',') => c.pos += 1,
            _ => break,
        }
    }
    let timestamp = match c.bump() {
        None => None,
        Some(' ') => {
            let rest: String = c.chars[c.pos..].iter().collect();
            c.pos = c.chars.len();
            Some(rest.parse::<i64>().map_err(|_| c.err("bad timestamp"))?)
        }
        Some(_) => return Err(c.err("trailing characters")),
    };
    Ok(Line {
        measurement,
        tags,
        fields,
        timestamp,
    })
}

/// Parses a newline-separated batch. Blank lines and `#` comments are skipped.
pub fn parse_batch(src: &str) -> Result<Vec<Line>, String> {
    src.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(parse_line)
        .collect()
}

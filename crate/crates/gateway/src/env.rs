//! `${NAME}` substitution in configuration text.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingVar {
    pub name: String,
    pub line: usize,
}

/// Replaces every `${NAME}` with `lookup(NAME)`. `$${` yields a literal
/// `${`. Full-line comments are left untouched. Unresolvable names are
/// replaced by the empty string and reported, so parsing can continue and
/// report other problems too.
pub fn substitute(src: &str, lookup: impl Fn(&str) -> Option<String>) -> (String, Vec<MissingVar>) {
    let mut out = String::with_capacity(src.len());
    let mut missing = Vec::new();
    for (i, line) in src.split_inclusive('\n').enumerate() {
        if line.trim_start().starts_with('#') {
            out.push_str(line);
            continue;
        }
        let mut rest = line;
        while let Some(pos) = rest.find('$') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix("$${") {
                out.push_str("${");
                rest = after;
            } else if let Some(after) = tail.strip_prefix("${") {
                match after.find('}') {
                    Some(end) if valid_name(&after[..end]) => {
                        let name = &after[..end];
                        match lookup(name) {
                            Some(v) => out.push_str(&v),
                            None => missing.push(MissingVar { name: name.to_string(), line: i + 1 }),
                        }
                        rest = &after[end + 1..];
                    }
                    _ => {
                        out.push_str("${");
                        rest = after;
                    }
                }
            } else {
                out.push('$');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
    }
    (out, missing)
}

fn valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

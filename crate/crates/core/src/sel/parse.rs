//! Recovering recursive-descent parser for the structure language.
//!
//! Tokens are lexed on demand from a byte cursor so that panic-mode
//! recovery can resynchronize on raw source positions. A malformed entry
//! is dropped and parsing resumes after a later `;` from which a
//! well-formed entry follows; `;` never occurs legitimately inside an entry
//! outside a string literal.

use super::model::{
    Entry, HyperPair, IssueKind, Pair, ParseIssue, Role, Severity, Span, StructuredOutput, Tier,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    LBrace,
    RBrace,
    Colon,
    Semi,
    Comma,
    DotDot,
    Str { value: String, terminated: bool },
    Text(String),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::DotDot => "`..`".into(),
            Tok::Str { .. } => "a quoted string".into(),
            Tok::Text(t) => format!("text `{}`", truncate(t, 24)),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn truncate(s: &str, max_chars: usize) -> String {
    if s.chars().count() <= max_chars {
        s.to_string()
    } else {
        let mut out: String = s.chars().take(max_chars).collect();
        out.push('…');
        out
    }
}

#[derive(Debug, Clone)]
struct Lexed {
    tok: Tok,
    start: usize,
    end: usize,
}

fn is_delim(c: char) -> bool {
    matches!(c, '(' | ')' | '{' | '}' | ':' | ';' | ',' | '"')
}

/// Lexes one token starting at or after `pos`.
fn lex_at(src: &str, pos: usize) -> Lexed {
    let rest = &src[pos..];
    let trimmed = rest.trim_start();
    let start = pos + (rest.len() - trimmed.len());
    let mut chars = trimmed.char_indices();
    let Some((_, c)) = chars.next() else {
        return Lexed {
            tok: Tok::Eof,
            start: src.len(),
            end: src.len(),
        };
    };
    let single = |tok| Lexed {
        tok,
        start,
        end: start + 1,
    };
    match c {
        '(' => single(Tok::LParen),
        ')' => single(Tok::RParen),
        '{' => single(Tok::LBrace),
        '}' => single(Tok::RBrace),
        ':' => single(Tok::Colon),
        ';' => single(Tok::Semi),
        ',' => single(Tok::Comma),
        '.' if trimmed.starts_with("..") => Lexed {
            tok: Tok::DotDot,
            start,
            end: start + 2,
        },
        '"' => lex_string(src, start),
        _ => {
            let mut end = trimmed.len();
            for (i, ch) in trimmed.char_indices() {
                if is_delim(ch) || trimmed[i..].starts_with("..") {
                    end = i;
                    break;
                }
            }
            let text = trimmed[..end].trim_end();
            Lexed {
                tok: Tok::Text(text.to_string()),
                start,
                end: start + end,
            }
        }
    }
}

fn lex_string(src: &str, start: usize) -> Lexed {
    let mut value = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => {
                return Lexed {
                    tok: Tok::Str {
                        value,
                        terminated: true,
                    },
                    start,
                    end: start + 1 + i + 1,
                }
            }
            '\\' => match chars.clone().next() {
                Some((_, esc @ ('"' | '\\'))) => {
                    chars.next();
                    value.push(esc);
                }
                _ => value.push('\\'),
            },
            other => value.push(other),
        }
    }
    Lexed {
        tok: Tok::Str {
            value,
            terminated: false,
        },
        start,
        end: src.len(),
    }
}

struct Failure {
    offset: usize,
    message: String,
    kind: IssueKind,
}

type PResult<T> = Result<T, Failure>;

/// Parser behavior switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Accept unquoted text in fragment position, as used by format skeletons.
    pub allow_bare_fragments: bool,
}

/// Bound on trial parses per recovery, keeping recovery linear.
const MAX_RESYNC_TRIALS: usize = 64;

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    opts: ParseOptions,
    /// Set when an entry was completed by closing groups at end of input.
    auto_closed: bool,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Lexed {
        lex_at(self.src, self.pos)
    }

    fn bump(&mut self) -> Lexed {
        let lexed = self.peek();
        self.pos = lexed.end;
        lexed
    }

    fn fail<T>(&self, at: &Lexed, expected: &str) -> PResult<T> {
        let kind = match &at.tok {
            Tok::Str {
                terminated: false, ..
            } => IssueKind::UnterminatedString,
            _ => IssueKind::MalformedEntry,
        };
        let message = match kind {
            IssueKind::UnterminatedString => "unterminated string".to_string(),
            _ => format!("expected {expected}, found {}", at.tok.describe()),
        };
        Err(Failure {
            offset: at.start,
            message,
            kind,
        })
    }

    fn expect(&mut self, want: Tok, expected: &str) -> PResult<()> {
        let lexed = self.peek();
        if lexed.tok == want {
            self.pos = lexed.end;
            Ok(())
        } else {
            self.fail(&lexed, expected)
        }
    }

    /// Consumes a closing delimiter, or closes the group implicitly at end of input.
    fn close(&mut self, want: Tok, expected: &str) -> PResult<()> {
        let lexed = self.peek();
        if lexed.tok == want {
            self.pos = lexed.end;
            Ok(())
        } else if lexed.tok == Tok::Eof {
            self.auto_closed = true;
            Ok(())
        } else {
            self.fail(&lexed, expected)
        }
    }

    fn label(&mut self, what: &str) -> PResult<String> {
        let lexed = self.peek();
        match lexed.tok {
            Tok::Text(t) if !t.is_empty() => {
                self.pos = lexed.end;
                Ok(t)
            }
            _ => self.fail(&lexed, what),
        }
    }

    fn fragment(&mut self) -> PResult<String> {
        let lexed = self.peek();
        match &lexed.tok {
            Tok::Str {
                value,
                terminated: true,
            } if !value.is_empty() => {
                self.pos = lexed.end;
                Ok(value.clone())
            }
            Tok::Str {
                terminated: true, ..
            } => Err(Failure {
                offset: lexed.start,
                message: "empty fragment".into(),
                kind: IssueKind::MalformedEntry,
            }),
            Tok::Text(t) if self.opts.allow_bare_fragments && !t.is_empty() => {
                self.pos = lexed.end;
                Ok(t.clone())
            }
            _ => self.fail(&lexed, "a quoted fragment"),
        }
    }

    fn span(&mut self) -> PResult<Span> {
        self.expect(Tok::LParen, "`(` opening a span")?;
        let label = self.label("a span label")?;
        self.expect(Tok::Colon, "`:` after the span label")?;
        let mut fragments = vec![self.fragment()?];
        while self.peek().tok == Tok::DotDot {
            self.bump();
            fragments.push(self.fragment()?);
        }
        self.close(Tok::RParen, "`)` closing the span")?;
        Ok(Span { label, fragments })
    }

    fn pair(&mut self) -> PResult<Pair> {
        self.expect(Tok::LParen, "`(` opening a pair")?;
        let relation = self.label("a relation label")?;
        self.expect(Tok::Colon, "`:` after the relation label")?;
        let head = self.span()?;
        if self.auto_closed {
            return self.fail(&self.peek(), "`,` and a tail span");
        }
        self.expect(Tok::Comma, "`,` between head and tail")?;
        let tail = self.span()?;
        self.close(Tok::RParen, "`)` closing the pair")?;
        Ok(Pair {
            relation,
            head,
            tail,
        })
    }

    fn hyper_pair(&mut self) -> PResult<HyperPair> {
        let predicate = self.span()?;
        if self.auto_closed {
            return self.fail(&self.peek(), "`{` opening the role block");
        }
        self.expect(Tok::LBrace, "`{` opening the role block")?;
        let mut roles = Vec::new();
        if self.peek().tok == Tok::RBrace {
            self.bump();
            return Ok(HyperPair { predicate, roles });
        }
        loop {
            let role = self.label("a role label")?;
            self.expect(Tok::Colon, "`:` after the role label")?;
            let argument = self.span()?;
            roles.push(Role { role, argument });
            if self.auto_closed {
                break;
            }
            let lexed = self.peek();
            match lexed.tok {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Eof => {
                    self.auto_closed = true;
                    break;
                }
                _ => return self.fail(&lexed, "`,` or `}` in the role block"),
            }
        }
        Ok(HyperPair { predicate, roles })
    }

    fn entry(&mut self, tier: Tier) -> PResult<Entry> {
        self.auto_closed = false;
        match tier {
            Tier::Span => self.span().map(Entry::Span),
            Tier::Pair => self.pair().map(Entry::Pair),
            Tier::HyperPair => self.hyper_pair().map(Entry::HyperPair),
        }
    }

    /// Where to resume after an entry that failed to parse: just past the
    /// first raw `;` at or after `from` that is followed by a well-formed
    /// entry. A damaged quote can flip which `;` lie inside strings, so
    /// candidates are tried in order rather than trusting the lexer. Falls
    /// back to the first `;`, or end of input.
    fn resync(&self, from: usize, tier: Tier) -> usize {
        let mut candidates = self.src[from..]
            .match_indices(';')
            .map(|(i, _)| from + i + 1);
        let Some(first) = candidates.next() else {
            return self.src.len();
        };
        for at in std::iter::once(first).chain(candidates).take(MAX_RESYNC_TRIALS) {
            let mut trial = Parser {
                src: self.src,
                pos: at,
                opts: self.opts,
                auto_closed: false,
            };
            if trial.peek().tok == Tok::LParen && trial.entry(tier).is_ok() {
                return at;
            }
        }
        first
    }

    /// Skips tokens up to the next `(` or end of input. Returns whether a
    /// string literal was among the skipped tokens.
    fn skip_to_open(&mut self) -> bool {
        let mut saw_string = false;
        loop {
            let lexed = self.peek();
            match lexed.tok {
                Tok::LParen | Tok::Eof => return saw_string,
                Tok::Str { terminated, .. } => {
                    saw_string = true;
                    if !terminated {
                        // resume scanning raw text just past the opening quote
                        let from = lexed.start + 1;
                        self.pos = self.src[from..]
                            .find('(')
                            .map_or(self.src.len(), |i| from + i);
                        return saw_string;
                    }
                    self.pos = lexed.end;
                }
                _ => self.pos = lexed.end,
            }
        }
    }
}

fn issue(offset: usize, message: impl Into<String>, kind: IssueKind) -> ParseIssue {
    ParseIssue {
        offset,
        message: message.into(),
        severity: Severity::Recovered,
        kind,
    }
}

/// Parses LLM output at the given tier. Never fails: problems become issues.
pub fn parse(text: &str, tier: Tier) -> StructuredOutput {
    parse_with(text, tier, ParseOptions::default())
}

pub fn parse_with(text: &str, tier: Tier, opts: ParseOptions) -> StructuredOutput {
    let mut p = Parser {
        src: text,
        pos: 0,
        opts,
        auto_closed: false,
    };
    let mut entries = Vec::new();
    let mut issues = Vec::new();
    let mut need_separator = false;

    loop {
        let lexed = p.peek();
        match lexed.tok {
            Tok::Eof => break,
            Tok::Semi => {
                p.bump();
                if need_separator {
                    need_separator = false;
                } else {
                    issues.push(issue(lexed.start, "empty entry", IssueKind::SkippedText));
                }
            }
            Tok::LParen => {
                if need_separator {
                    issues.push(issue(
                        lexed.start,
                        "missing `;` between entries",
                        IssueKind::MissingSeparator,
                    ));
                }
                let entry_start = lexed.start;
                match p.entry(tier) {
                    Ok(entry) => {
                        if p.auto_closed {
                            issues.push(issue(
                                text.len(),
                                "unclosed group at end of input",
                                IssueKind::UnclosedGroup,
                            ));
                        }
                        entries.push(entry);
                        need_separator = true;
                    }
                    Err(f) => {
                        issues.push(issue(f.offset, f.message, f.kind));
                        need_separator = false;
                        p.pos = p.resync(entry_start + 1, tier);
                    }
                }
            }
            Tok::RParen | Tok::RBrace => {
                p.bump();
                issues.push(issue(
                    lexed.start,
                    format!("unbalanced {}", lexed.tok.describe()),
                    IssueKind::StrayClose,
                ));
            }
            _ => {
                let saw_string = p.skip_to_open();
                let (kind, message) = if saw_string {
                    (
                        IssueKind::SkippedStructure,
                        "skipped text containing quoted fragments outside any entry",
                    )
                } else {
                    (IssueKind::SkippedText, "skipped text outside any entry")
                };
                issues.push(issue(lexed.start, message, kind));
            }
        }
    }

    if entries.is_empty() && !issues.is_empty() {
        issues.push(ParseIssue {
            offset: text.len(),
            message: "no structure entries found".into(),
            severity: Severity::Fatal,
            kind: IssueKind::NoStructure,
        });
    }

    StructuredOutput {
        tier,
        entries,
        issues,
    }
}

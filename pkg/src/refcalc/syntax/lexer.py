from __future__ import annotations

import re
from dataclasses import dataclass


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.msg, self.line, self.col = msg, line, col


class AmbiguousMixError(ParseError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str       # 'num', 'ident', 'sym', 'eof'
    text: str
    line: int
    col: int
    pos: int


SYMBOLS = [
    "<=>", "=>>", "|~|", "|->", "(+)",
    "=>", "|-", "\\/", "/\\", "++", "!=", "<=", ":=", "..", "->",
    "[", "]", "{", "}", "(", ")", ",", "|", ".", ":", "=", "<", ">",
    "+", "-", "#", "~", ";",
]

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\n]+|--[^\n]*)"
    r"|(?P<num>\d+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)"
    r"|(?P<sym>" + "|".join(re.escape(s) for s in SYMBOLS) + ")"
)


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            out.append(Token(kind, chunk, line, pos - line_start + 1, pos))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1, pos))
    return out

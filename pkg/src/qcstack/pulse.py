"""A small line-oriented pulse language.

Grammar (statements end with ``;``, ``//`` and ``#`` start comments)::

    program := {decl | stmt}
    decl    := "frame" NAME "ch=" INT "freq=" FLOAT "phase=" FLOAT ";"
             | "waveform" NAME KIND "len=" INT {NAME "=" FLOAT} ";"
    stmt    := "play" NAME NAME ["amp=" FLOAT] ";"
             | "delay" INT [NAME] ";"
             | "set_frequency" NAME FLOAT ";"
             | "shift_phase" NAME FLOAT ";"
             | "barrier" "{" NAME {"," NAME} "}" ";"
             | "capture" NAME "len=" INT ";"
             | "reset" NAME ";"
    KIND    := "rect" | "gaussian" | "blackman"

``delay`` without a frame advances every frame.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from .siggen import ENVELOPE_KINDS


class PulseLangError(Exception):
    pass


class PulseSyntaxError(PulseLangError):
    def __init__(self, message: str, line: int, col: int, expected: str | None = None):
        self.line = line
        self.col = col
        self.expected = expected
        text = f"line {line}, column {col}: {message}"
        if expected:
            text += f" (expected {expected})"
        super().__init__(text)


class PulseSemanticError(PulseLangError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        prefix = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(prefix + message)


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class FrameDecl:
    name: str
    channel: int
    frequency: float
    phase: float = 0.0


@dataclass(frozen=True)
class WaveformDecl:
    name: str
    kind: str
    length: int
    params: tuple[tuple[str, float], ...] = ()

    @property
    def sigma(self) -> float | None:
        return dict(self.params).get("sigma")


@dataclass(frozen=True)
class Play:
    frame: str
    waveform: str
    amp: float | None = None


@dataclass(frozen=True)
class Delay:
    duration: int
    frame: str | None = None


@dataclass(frozen=True)
class SetFrequency:
    frame: str
    frequency: float


@dataclass(frozen=True)
class ShiftPhase:
    frame: str
    angle: float


@dataclass(frozen=True)
class Barrier:
    frames: tuple[str, ...]


@dataclass(frozen=True)
class Capture:
    frame: str
    length: int


@dataclass(frozen=True)
class Reset:
    frame: str


Statement = Union[Play, Delay, SetFrequency, ShiftPhase, Barrier, Capture, Reset]

WAVEFORM_PARAMS = {"gaussian": {"sigma"}, "rect": set(), "blackman": set()}


@dataclass
class PulseProgram:
    frames: list[FrameDecl] = field(default_factory=list)
    waveforms: list[WaveformDecl] = field(default_factory=list)
    body: list[Statement] = field(default_factory=list)

    def frame(self, name: str) -> FrameDecl:
        for f in self.frames:
            if f.name == name:
                return f
        raise KeyError(name)

    def waveform_index(self, name: str) -> int:
        for i, w in enumerate(self.waveforms):
            if w.name == name:
                return i
        raise KeyError(name)

    def validate(self) -> None:
        """Check the structural invariants; raise PulseSemanticError."""
        names: set[str] = set()
        channels: dict[int, str] = {}
        for f in self.frames:
            if f.name in names:
                raise PulseSemanticError(f"duplicate declaration {f.name}")
            names.add(f.name)
            if f.channel < 0:
                raise PulseSemanticError(f"frame {f.name}: negative channel")
            if f.channel in channels:
                raise PulseSemanticError(
                    f"frame {f.name}: channel {f.channel} already bound to frame {channels[f.channel]}"
                )
            channels[f.channel] = f.name
        frames = {f.name for f in self.frames}
        for w in self.waveforms:
            if w.name in names:
                raise PulseSemanticError(f"duplicate declaration {w.name}")
            names.add(w.name)
            if w.kind not in ENVELOPE_KINDS:
                raise PulseSemanticError(f"waveform {w.name}: unknown kind {w.kind}")
            if w.length < 1:
                raise PulseSemanticError(f"waveform {w.name}: length must be >= 1")
            for key, value in w.params:
                if key not in WAVEFORM_PARAMS[w.kind]:
                    raise PulseSemanticError(f"waveform {w.name}: unknown parameter {key}")
                if value <= 0:
                    raise PulseSemanticError(f"waveform {w.name}: {key} must be positive")
        waves = {w.name for w in self.waveforms}
        for stmt in self.body:
            for name in _frame_refs(stmt):
                if name not in frames:
                    raise PulseSemanticError(f"undeclared frame {name}")
            if isinstance(stmt, Play) and stmt.waveform not in waves:
                raise PulseSemanticError(f"undeclared waveform {stmt.waveform}")
            if isinstance(stmt, Delay) and stmt.duration < 0:
                raise PulseSemanticError("negative duration")
            if isinstance(stmt, Capture) and stmt.length < 1:
                raise PulseSemanticError("capture length must be >= 1")


def _frame_refs(stmt) -> tuple[str, ...]:
    if isinstance(stmt, Barrier):
        return stmt.frames
    if isinstance(stmt, Delay):
        return () if stmt.frame is None else (stmt.frame,)
    return (stmt.frame,)


# ---------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>(?://|\#)[^\n]*)
  | (?P<nl>\n)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[=;{},])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # name | number | punct | eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PulseSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok: Token, expected: str):
        got = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise PulseSyntaxError(f"unexpected {got}", tok.line, tok.col, expected)

    def expect_punct(self, ch: str) -> Token:
        tok = self.next()
        if tok.kind != "punct" or tok.text != ch:
            self.fail(tok, repr(ch))
        return tok

    def name(self, what: str = "name") -> Token:
        tok = self.next()
        if tok.kind != "name":
            self.fail(tok, what)
        return tok

    def keyword(self, kw: str) -> None:
        tok = self.next()
        if tok.kind != "name" or tok.text != kw:
            self.fail(tok, repr(kw))

    def integer(self) -> int:
        tok = self.next()
        if tok.kind != "number" or not re.fullmatch(r"[+-]?\d+", tok.text):
            self.fail(tok, "integer")
        return int(tok.text)

    def number(self) -> float:
        tok = self.next()
        if tok.kind != "number":
            self.fail(tok, "number")
        return float(tok.text)

    def keyed(self, key: str, conv):
        self.keyword(key)
        self.expect_punct("=")
        return conv()

    def parse(self) -> PulseProgram:
        prog = PulseProgram()
        declared: dict[str, str] = {}
        while self.peek().kind != "eof":
            start = self.peek()
            item = self.statement()
            self._check(prog, item, declared, start)
            if isinstance(item, FrameDecl):
                prog.frames.append(item)
            elif isinstance(item, WaveformDecl):
                prog.waveforms.append(item)
            else:
                prog.body.append(item)
        return prog

    def _check(self, prog, item, declared, tok: Token) -> None:
        # Names must be declared before use; report the statement position.
        def err(msg):
            raise PulseSemanticError(msg, tok.line, tok.col)

        if isinstance(item, (FrameDecl, WaveformDecl)):
            if item.name in declared:
                err(f"duplicate declaration {item.name}")
            declared[item.name] = "frame" if isinstance(item, FrameDecl) else "waveform"
            tmp = PulseProgram(
                prog.frames + ([item] if isinstance(item, FrameDecl) else []),
                prog.waveforms + ([item] if isinstance(item, WaveformDecl) else []),
            )
            try:
                tmp.validate()
            except PulseSemanticError as exc:
                err(str(exc))
            return
        for name in _frame_refs(item):
            if declared.get(name) != "frame":
                err(f"undeclared frame {name}")
        if isinstance(item, Play) and declared.get(item.waveform) != "waveform":
            err(f"undeclared waveform {item.waveform}")
        if isinstance(item, Delay) and item.duration < 0:
            err("negative duration")
        if isinstance(item, Capture) and item.length < 1:
            err("capture length must be >= 1")

    def statement(self):
        tok = self.name("statement keyword")
        kw = tok.text
        if kw == "frame":
            name = self.name().text
            ch = self.keyed("ch", self.integer)
            freq = self.keyed("freq", self.number)
            phase = self.keyed("phase", self.number)
            item = FrameDecl(name, ch, freq, phase)
        elif kw == "waveform":
            name = self.name().text
            kind_tok = self.name("waveform kind")
            if kind_tok.text not in ENVELOPE_KINDS:
                self.fail(kind_tok, " | ".join(ENVELOPE_KINDS))
            length = self.keyed("len", self.integer)
            params = []
            while self.peek().kind == "name":
                key = self.next().text
                self.expect_punct("=")
                params.append((key, self.number()))
            item = WaveformDecl(name, kind_tok.text, length, tuple(params))
        elif kw == "play":
            frame = self.name("frame name").text
            wave = self.name("waveform name").text
            amp = None
            if self.peek().kind == "name":
                amp = self.keyed("amp", self.number)
            item = Play(frame, wave, amp)
        elif kw == "delay":
            duration = self.integer()
            frame = self.next().text if self.peek().kind == "name" else None
            item = Delay(duration, frame)
        elif kw == "set_frequency":
            item = SetFrequency(self.name("frame name").text, self.number())
        elif kw == "shift_phase":
            item = ShiftPhase(self.name("frame name").text, self.number())
        elif kw == "barrier":
            self.expect_punct("{")
            names = [self.name("frame name").text]
            while self.peek().kind == "punct" and self.peek().text == ",":
                self.next()
                names.append(self.name("frame name").text)
            self.expect_punct("}")
            item = Barrier(tuple(names))
        elif kw == "capture":
            frame = self.name("frame name").text
            item = Capture(frame, self.keyed("len", self.integer))
        elif kw == "reset":
            item = Reset(self.name("frame name").text)
        else:
            self.fail(tok, "statement keyword")
        self.expect_punct(";")
        return item


def parse_program(text: str) -> PulseProgram:
    """Parse source text into a validated PulseProgram.

    Raises PulseSyntaxError (with line/column and the expected token) or
    PulseSemanticError for duplicate or undeclared names and bad values.
    """
    return _Parser(text).parse()


def format_program(program: PulseProgram) -> str:
    """Canonical source text; ``parse_program`` of the result reproduces ``program``."""
    lines = []
    for f in program.frames:
        lines.append(f"frame {f.name} ch={f.channel} freq={f.frequency!r} phase={f.phase!r};")
    for w in program.waveforms:
        params = "".join(f" {k}={v!r}" for k, v in w.params)
        lines.append(f"waveform {w.name} {w.kind} len={w.length}{params};")
    for s in program.body:
        lines.append(format_statement(s))
    return "\n".join(lines) + "\n"


def format_statement(s: Statement) -> str:
    if isinstance(s, Play):
        amp = "" if s.amp is None else f" amp={s.amp!r}"
        return f"play {s.frame} {s.waveform}{amp};"
    if isinstance(s, Delay):
        return f"delay {s.duration};" if s.frame is None else f"delay {s.duration} {s.frame};"
    if isinstance(s, SetFrequency):
        return f"set_frequency {s.frame} {s.frequency!r};"
    if isinstance(s, ShiftPhase):
        return f"shift_phase {s.frame} {s.angle!r};"
    if isinstance(s, Barrier):
        return "barrier {" + ", ".join(s.frames) + "};"
    if isinstance(s, Capture):
        return f"capture {s.frame} len={s.length};"
    if isinstance(s, Reset):
        return f"reset {s.frame};"
    raise TypeError(f"not a statement: {s!r}")

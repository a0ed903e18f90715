"""BNF grammars, hash-driven derivation, and architecture extraction.

A grammar file holds one rule per ``::=``; alternatives are separated by
``|`` (a line starting with ``|`` continues the previous rule), nonterminals
are written ``<name>``, any other bare or double-quoted token is a terminal,
``#`` starts a comment and an optional ``start: <name>`` directive picks the
start symbol (otherwise the first rule's head).

Derivation maps a 512-bit integer ``H`` to a sentence by leftmost expansion:
for a rule with ``n > 1`` alternatives the working value ``m`` is reset to
``H`` whenever ``m < n``, then alternative ``m % n`` is taken and ``m``
becomes ``m // n``. Single-alternative rules leave ``m`` untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator, Mapping, Union

ACTIVATIONS = ("sigmoid", "tanh", "relu")


class GrammarError(Exception):
    pass


class GrammarSyntaxError(SyntaxError):
    def __init__(self, msg: str, lineno: int, column: int, text: str = ""):
        super().__init__(f"{msg} (line {lineno}, column {column})", ("<grammar>", lineno, column, text))
        self.column = column


class UndefinedNonterminal(GrammarError):
    pass


class DuplicateRuleHead(GrammarError):
    pass


class DerivationLimitExceeded(Exception):
    pass


class MalformedSentence(ValueError):
    pass


class InfeasibleArchitecture(Exception):
    """The derived architecture cannot be trained under the miner's limits."""


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class Terminal:
    token: str


@dataclass(frozen=True)
class Nonterminal:
    name: str


Symbol = Union[Terminal, Nonterminal]


@dataclass(frozen=True)
class Alternative:
    symbols: tuple[Symbol, ...]

    def __post_init__(self):
        if not self.symbols:
            raise GrammarError("alternatives must be non-empty")


@dataclass(frozen=True)
class Grammar:
    rules: Mapping[str, tuple[Alternative, ...]]
    start: str

    @property
    def nonterminals(self) -> frozenset[str]:
        return frozenset(self.rules)

    @property
    def terminals(self) -> frozenset[str]:
        return frozenset(
            s.token
            for alts in self.rules.values()
            for alt in alts
            for s in alt.symbols
            if isinstance(s, Terminal)
        )


@dataclass(frozen=True)
class DerivationLimits:
    max_steps: int = 10_000
    max_resets: int = 64

    def __post_init__(self):
        if self.max_steps < 1 or self.max_resets < 1:
            raise ValueError("derivation limits must be >= 1")


@dataclass(frozen=True)
class DerivationStep:
    nonterminal: str
    index: int
    m: int  # value the choice was made from (after any reset)
    reset: bool


@dataclass(frozen=True)
class DerivationTrace:
    steps: tuple[DerivationStep, ...]
    resets: int
    sentence: str


@dataclass(frozen=True)
class ConvLayerSpec:
    num_filters: int
    filter_size: int
    activation: str


@dataclass(frozen=True)
class FcLayerSpec:
    num_units: int
    activation: str


@dataclass(frozen=True)
class ArchitectureSpec:
    conv_layers: tuple[ConvLayerSpec, ...]
    fc_layers: tuple[FcLayerSpec, ...]


@dataclass(frozen=True)
class ResourceLimits:
    """What a miner can afford to train; anything larger is skipped."""

    max_parameters: int = 1_000_000
    max_sentence_tokens: int = 512


@dataclass(frozen=True)
class Feasibility:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_infeasible(self) -> None:
        if not self.ok:
            raise InfeasibleArchitecture(self.reason)


@dataclass(frozen=True)
class Defect:
    symbol: str
    problem: str  # "non-productive" | "unreachable"


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<nt><(?P<name>[A-Za-z_][\w\-]*)>)
  | (?P<bar>\|)
  | (?P<quoted>"(?P<qbody>(?:[^"\\]|\\.)*)")
  | (?P<bare>[^\s<>|"\#]+)
  | (?P<comment>\#.*)
    """,
    re.VERBOSE,
)
_HEAD = re.compile(r"\s*<(?P<name>[A-Za-z_][\w\-]*)>\s*::=")
_START = re.compile(r"\s*start\s*:\s*<(?P<name>[A-Za-z_][\w\-]*)>\s*(#.*)?$")
_BARE_OK = re.compile(r'[^\s<>|"#]+')


def _tokenize_rhs(text: str, lineno: int, offset: int) -> list[list[Symbol]]:
    alts: list[list[Symbol]] = [[]]
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise GrammarSyntaxError(f"unexpected character {text[pos]!r}", lineno, offset + pos + 1, text)
        kind = m.lastgroup
        if kind == "nt":
            alts[-1].append(Nonterminal(m.group("name")))
        elif kind == "bar":
            alts.append([])
        elif kind == "quoted":
            alts[-1].append(Terminal(bytes(m.group("qbody"), "utf-8").decode("unicode_escape")))
        elif kind == "bare":
            alts[-1].append(Terminal(m.group("bare")))
        elif kind == "comment":
            break
        pos = m.end()
    return alts


def parse_grammar(source_text: str) -> Grammar:
    rules: dict[str, list[list[Symbol]]] = {}
    where: dict[str, int] = {}
    start: str | None = None
    current: str | None = None

    for lineno, line in enumerate(source_text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _START.match(line)
        if m:
            if start is not None:
                raise GrammarSyntaxError("second start directive", lineno, 1, line)
            start = m.group("name")
            continue
        head = _HEAD.match(line)
        if head:
            name = head.group("name")
            if name in rules:
                raise DuplicateRuleHead(
                    f"<{name}> defined on line {where[name]} and again on line {lineno}; use '|'"
                )
            alts = _tokenize_rhs(line[head.end():], lineno, head.end())
            rules[name] = alts
            where[name] = lineno
            current = name
        elif stripped.startswith("|"):
            if current is None:
                raise GrammarSyntaxError("continuation before any rule", lineno, 1, line)
            col = line.index("|")
            more = _tokenize_rhs(line[col + 1:], lineno, col + 1)
            rules[current].extend(more)
        else:
            col = len(line) - len(line.lstrip()) + 1
            raise GrammarSyntaxError("expected '<name> ::=' or '|'", lineno, col, line)
        if any(not alt for alt in rules[current]):
            raise GrammarSyntaxError("empty alternative", lineno, 1, line)

    if not rules:
        raise GrammarSyntaxError("grammar has no rules", 1, 1)
    if start is None:
        start = next(iter(rules))
    if start not in rules:
        raise UndefinedNonterminal(f"start symbol <{start}> has no rule")
    for head, alts in rules.items():
        for alt in alts:
            for sym in alt:
                if isinstance(sym, Nonterminal) and sym.name not in rules:
                    raise UndefinedNonterminal(f"<{sym.name}> used in <{head}> has no rule")

    frozen = {name: tuple(Alternative(tuple(a)) for a in alts) for name, alts in rules.items()}
    return Grammar(rules=frozen, start=start)


def unparse(g: Grammar) -> str:
    """Render a grammar back to source text accepted by :func:`parse_grammar`."""

    def sym_text(s: Symbol) -> str:
        if isinstance(s, Nonterminal):
            return f"<{s.name}>"
        if _BARE_OK.fullmatch(s.token):
            return s.token
        escaped = s.token.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'

    lines = [f"start: <{g.start}>"]
    for name, alts in g.rules.items():
        rhs = " | ".join(" ".join(sym_text(s) for s in alt.symbols) for alt in alts)
        lines.append(f"<{name}> ::= {rhs}")
    return "\n".join(lines) + "\n"


def load_grammar(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())


def bundled_grammar_text(name: str = "coinai-v1.bnf") -> str:
    return resources.files("coinai").joinpath("grammars", name).read_text(encoding="utf-8")


def bundled_grammar(name: str = "coinai-v1.bnf") -> Grammar:
    return parse_grammar(bundled_grammar_text(name))


# ---------------------------------------------------------------- validation


def validate_grammar(g: Grammar) -> list[Defect]:
    """Return every non-productive or unreachable nonterminal; empty means ok."""
    productive: set[str] = set()
    changed = True
    while changed:
        changed = False
        for name, alts in g.rules.items():
            if name in productive:
                continue
            for alt in alts:
                if all(isinstance(s, Terminal) or s.name in productive for s in alt.symbols):
                    productive.add(name)
                    changed = True
                    break

    reachable = {g.start}
    frontier = [g.start]
    while frontier:
        name = frontier.pop()
        for alt in g.rules.get(name, ()):
            for s in alt.symbols:
                if isinstance(s, Nonterminal) and s.name not in reachable:
                    reachable.add(s.name)
                    frontier.append(s.name)

    defects = []
    for name in g.rules:
        if name not in productive:
            defects.append(Defect(name, "non-productive"))
        if name not in reachable:
            defects.append(Defect(name, "unreachable"))
    return defects


# ---------------------------------------------------------------- derivation


def derive(g: Grammar, H: int, limits: DerivationLimits = DerivationLimits()) -> tuple[str, DerivationTrace]:
    if H < 0:
        raise ValueError("H must be non-negative")
    stack: list[Symbol] = [Nonterminal(g.start)]
    out: list[str] = []
    steps: list[DerivationStep] = []
    resets = 0
    m = H
    while stack:
        sym = stack.pop()
        if isinstance(sym, Terminal):
            out.append(sym.token)
            continue
        if len(steps) >= limits.max_steps:
            raise DerivationLimitExceeded(f"more than {limits.max_steps} expansion steps")
        alts = g.rules[sym.name]
        n = len(alts)
        if n == 1:
            steps.append(DerivationStep(sym.name, 0, m, False))
            chosen = alts[0]
        else:
            reset = m < n
            if reset:
                resets += 1
                if resets > limits.max_resets:
                    raise DerivationLimitExceeded(f"more than {limits.max_resets} resets")
                m = H
            i = m % n
            steps.append(DerivationStep(sym.name, i, m, reset))
            m //= n
            chosen = alts[i]
        stack.extend(reversed(chosen.symbols))
    sentence = " ".join(out)
    return sentence, DerivationTrace(tuple(steps), resets, sentence)


def replay_trace(g: Grammar, trace: DerivationTrace) -> str:
    """Rebuild the sentence from the recorded choices alone."""
    stack: list[Symbol] = [Nonterminal(g.start)]
    out: list[str] = []
    choices = iter(trace.steps)
    while stack:
        sym = stack.pop()
        if isinstance(sym, Terminal):
            out.append(sym.token)
            continue
        step = next(choices)
        if step.nonterminal != sym.name:
            raise ValueError(f"trace expands <{step.nonterminal}> where <{sym.name}> is leftmost")
        stack.extend(reversed(g.rules[sym.name][step.index].symbols))
    if next(choices, None) is not None:
        raise ValueError("trace has unused steps")
    return " ".join(out)


# ---------------------------------------------------------------- sentence parsing


@dataclass
class ParseNode:
    name: str
    alternative: int
    children: list = field(default_factory=list)  # ParseNode | str

    def leaves(self) -> Iterator[str]:
        stack: list = [self]
        while stack:
            node = stack.pop()
            if isinstance(node, str):
                yield node
            else:
                stack.extend(reversed(node.children))


class _Chart:
    """Span table: ``ends[i][A]`` is the set of ``j`` with ``A =>* tokens[i:j]``.

    Alternatives are never empty, so every symbol consumes at least one
    token and a right-to-left sweep with a per-position fixpoint is exact.
    """

    def __init__(self, g: Grammar, tokens: list[str]):
        self.g = g
        self.tokens = tokens
        n = len(tokens)
        self.ends: list[dict[str, set[int]]] = [dict() for _ in range(n + 1)]
        self._fits: dict[tuple[int, int, int, int], bool] = {}
        for i in range(n - 1, -1, -1):
            table = self.ends[i]
            changed = True
            while changed:
                changed = False
                for name, alts in g.rules.items():
                    found = table.setdefault(name, set())
                    before = len(found)
                    for alt in alts:
                        frontier = {i}
                        for sym in alt.symbols:
                            frontier = {e for p in frontier for e in self.sym_ends(sym, p)}
                            if not frontier:
                                break
                        found |= frontier
                    if len(found) != before:
                        changed = True

    def sym_ends(self, sym: Symbol, i: int):
        if isinstance(sym, Terminal):
            return (i + 1,) if i < len(self.tokens) and self.tokens[i] == sym.token else ()
        return self.ends[i].get(sym.name, ())

    def fits(self, alt: Alternative, k: int, i: int, j: int) -> bool:
        """Can ``alt.symbols[k:]`` derive exactly ``tokens[i:j]``?"""
        if k == len(alt.symbols):
            return i == j
        key = (id(alt), k, i, j)
        hit = self._fits.get(key)
        if hit is None:
            hit = any(e <= j and self.fits(alt, k + 1, e, j) for e in self.sym_ends(alt.symbols[k], i))
            self._fits[key] = hit
        return hit

    def tree(self) -> ParseNode:
        """Build one parse tree, preferring leftmost-longest spans.

        At each node the first alternative (in source order) that covers the
        span wins, and each child takes the longest span that still lets its
        right siblings finish the parse.
        """
        g, tokens = self.g, self.tokens
        root = ParseNode(g.start, -1)
        work = [(root, 0, len(tokens))]
        while work:
            node, i, j = work.pop()
            for idx, alt in enumerate(g.rules[node.name]):
                if self.fits(alt, 0, i, j):
                    break
            else:  # pragma: no cover - guarded by the recognizer
                raise MalformedSentence(f"no alternative of <{node.name}> covers tokens {i}:{j}")
            node.alternative = idx
            pos = i
            for k, sym in enumerate(alt.symbols):
                end = max(e for e in self.sym_ends(sym, pos) if e <= j and self.fits(alt, k + 1, e, j))
                if isinstance(sym, Terminal):
                    node.children.append(tokens[pos])
                else:
                    child = ParseNode(sym.name, -1)
                    node.children.append(child)
                    work.append((child, pos, end))
                pos = end
        return root


def parse_sentence(sentence: str, g: Grammar, max_tokens: int | None = None) -> ParseNode:
    tokens = sentence.split(" ")
    if not sentence or any(t == "" for t in tokens):
        raise MalformedSentence("sentence must be tokens separated by single spaces")
    if max_tokens is not None and len(tokens) > max_tokens:
        raise MalformedSentence(f"sentence has {len(tokens)} tokens, limit {max_tokens}")
    chart = _Chart(g, tokens)
    if len(tokens) not in chart.ends[0].get(g.start, ()):
        raise MalformedSentence("sentence is not in the grammar's language")
    return chart.tree()


def _number(node: ParseNode) -> int:
    digits = "".join(node.leaves())
    if not digits.isdigit():
        raise MalformedSentence(f"<{node.name}> is not a digit string: {digits!r}")
    return int(digits, 10)


def _child(node: ParseNode, name: str) -> ParseNode:
    for c in node.children:
        if isinstance(c, ParseNode) and c.name == name:
            return c
    raise MalformedSentence(f"<{node.name}> has no <{name}> child")


def _activation(node: ParseNode) -> str:
    act = "".join(_child(node, "act_fn").leaves())
    if act not in ACTIVATIONS:
        raise MalformedSentence(f"unknown activation {act!r}")
    return act


def parse_architecture(sentence: str, g: Grammar, max_tokens: int | None = None) -> ArchitectureSpec:
    """Read layers out of a sentence.

    Layer nodes are the ``<conv>`` and ``<fc>`` nonterminals, taken in
    left-to-right order; their fields come from the ``<num_filters>``,
    ``<filter_size>``, ``<num_units>`` and ``<act_fn>`` children.
    """
    root = parse_sentence(sentence, g, max_tokens)
    convs: list[ConvLayerSpec] = []
    fcs: list[FcLayerSpec] = []
    stack: list = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, str):
            continue
        if node.name == "conv":
            if fcs:
                raise MalformedSentence("convolution after a fully-connected layer")
            convs.append(
                ConvLayerSpec(
                    _number(_child(node, "num_filters")),
                    _number(_child(node, "filter_size")),
                    _activation(node),
                )
            )
        elif node.name == "fc":
            fcs.append(FcLayerSpec(_number(_child(node, "num_units")), _activation(node)))
        else:
            stack.extend(reversed(node.children))
    if not convs or not fcs:
        raise MalformedSentence("architecture needs at least one conv and one fc layer")
    return ArchitectureSpec(tuple(convs), tuple(fcs))


# ---------------------------------------------------------------- feasibility


def parameter_count(spec: ArchitectureSpec, input_width: int, num_classes: int = 2) -> int:
    """Weights plus biases, including the softmax head, assuming a feasible spec."""
    total = 0
    channels, width = 1, input_width
    for c in spec.conv_layers:
        total += c.num_filters * channels * c.filter_size + c.num_filters
        channels, width = c.num_filters, width - c.filter_size + 1
    fan_in = channels * width
    for f in spec.fc_layers:
        total += f.num_units * fan_in + f.num_units
        fan_in = f.num_units
    return total + num_classes * fan_in + num_classes


def check_feasibility(
    spec: ArchitectureSpec,
    input_width: int,
    limits: ResourceLimits = ResourceLimits(),
    num_classes: int = 2,
) -> Feasibility:
    width = input_width
    for n, c in enumerate(spec.conv_layers):
        if c.num_filters < 1 or c.filter_size < 1:
            return Feasibility(False, f"zero-sized layer: conv {n}")
        if c.filter_size > width:
            return Feasibility(False, f"filter exceeds input: conv {n} size {c.filter_size} > width {width}")
        width = width - c.filter_size + 1
    for n, f in enumerate(spec.fc_layers):
        if f.num_units < 1:
            return Feasibility(False, f"zero-sized layer: fc {n}")
    count = parameter_count(spec, input_width, num_classes)
    if count > limits.max_parameters:
        return Feasibility(False, f"too many parameters: {count} > {limits.max_parameters}")
    return Feasibility(True)

"""Reader/writer for Praat TextGrid text files (long and short formats).

The tokenizer drops the long format's ``key =`` labels and ``item [n]:``
markers, so both formats reduce to the same token stream, which a small
recursive-descent parser then consumes.
"""

import re
from dataclasses import dataclass, field

_TOKEN = re.compile(r'"((?:[^"]|"")*)"|(<exists>|<absent>)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(\[[^\]]*\])|(\S)')


class TextGridError(ValueError):
    pass


@dataclass
class AlignmentIntervals:
    intervals: list = field(default_factory=list)  # (start_s, end_s, label)
    total_duration: float = 0.0

    def __post_init__(self):
        last = 0.0
        for start, end, _ in self.intervals:
            if end < start:
                raise TextGridError(f"interval end {end} precedes start {start}")
            if start < last - 1e-9:
                raise TextGridError(f"intervals overlap or are unsorted at {start}")
            if start < -1e-9 or end > self.total_duration + 1e-9:
                raise TextGridError(f"interval ({start}, {end}) outside [0, {self.total_duration}]")
            last = end

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)


@dataclass
class Tier:
    name: str
    kind: str
    xmin: float
    xmax: float
    items: list


def _tokenize(text):
    tokens = []
    for m in _TOKEN.finditer(text):
        s, flag, num, _bracket, other = m.groups()
        if s is not None:
            tokens.append(("str", s.replace('""', '"')))
        elif flag is not None:
            tokens.append(("flag", flag))
        elif num is not None:
            tokens.append(("num", float(num)))
        elif other == '"':
            raise TextGridError(f"unterminated string at offset {m.start()}")
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def _next(self, kind, what):
        if self.pos >= len(self.tokens):
            raise TextGridError(f"unexpected end of file while reading {what}")
        tk, val = self.tokens[self.pos]
        if tk != kind:
            raise TextGridError(f"expected {what}, found {val!r}")
        self.pos += 1
        return val

    def number(self, what):
        return self._next("num", what)

    def string(self, what):
        return self._next("str", what)

    def count(self, what):
        v = self.number(what)
        if v != int(v) or v < 0:
            raise TextGridError(f"{what} must be a non-negative integer, got {v}")
        return int(v)

    def textgrid(self):
        if self.string("file type") != "ooTextFile":
            raise TextGridError("not a Praat text file (missing ooTextFile header)")
        if self.string("object class") != "TextGrid":
            raise TextGridError("object class is not TextGrid")
        xmin, xmax = self.number("xmin"), self.number("xmax")
        if xmax < xmin:
            raise TextGridError("TextGrid xmax precedes xmin")
        if self._next("flag", "tiers flag") != "<exists>":
            return xmin, xmax, []
        n = self.count("tier count")
        return xmin, xmax, [self.tier() for _ in range(n)]

    def tier(self):
        kind = self.string("tier class")
        name = self.string("tier name")
        xmin, xmax = self.number("tier xmin"), self.number("tier xmax")
        n = self.count("item count")
        if kind == "IntervalTier":
            items = [self.interval() for _ in range(n)]
        elif kind == "TextTier":
            items = [(self.number("point time"), self.string("point mark")) for _ in range(n)]
        else:
            raise TextGridError(f"unknown tier class {kind!r}")
        return Tier(name, kind, xmin, xmax, items)

    def interval(self):
        start = self.number("interval xmin")
        end = self.number("interval xmax")
        text = self.string("interval text")
        if end < start:
            raise TextGridError(f"interval xmax {end} < xmin {start}")
        return (start, end, text)


def parse_tiers(text):
    parser = _Parser(_tokenize(text))
    xmin, xmax, tiers = parser.textgrid()
    return xmin, xmax, tiers


def parse_textgrid(text, tier="phones") -> AlignmentIntervals:
    """Intervals of the phone tier; a lone interval tier is used whatever its name."""
    xmin, xmax, tiers = parse_tiers(text)
    interval_tiers = [t for t in tiers if t.kind == "IntervalTier"]
    chosen = next((t for t in interval_tiers if t.name == tier), None)
    if chosen is None:
        if len(interval_tiers) == 1:
            chosen = interval_tiers[0]
        else:
            raise TextGridError(f"no interval tier named {tier!r}")
    return AlignmentIntervals(list(chosen.items), xmax)


def format_textgrid(tiers, xmax, xmin=0.0):
    """Serialise ``{name: [(start, end, label), ...]}`` as a long-format TextGrid."""
    def q(s):
        return '"' + s.replace('"', '""') + '"'

    lines = ['File type = "ooTextFile"', 'Object class = "TextGrid"', "",
             f"xmin = {xmin!r}", f"xmax = {xmax!r}", "tiers? <exists>", f"size = {len(tiers)}", "item []:"]
    for k, (name, items) in enumerate(tiers.items(), 1):
        lines += [f"    item [{k}]:", '        class = "IntervalTier"', f"        name = {q(name)}",
                  f"        xmin = {xmin!r}", f"        xmax = {xmax!r}",
                  f"        intervals: size = {len(items)}"]
        for n, (start, end, label) in enumerate(items, 1):
            lines += [f"        intervals [{n}]:", f"            xmin = {float(start)!r}",
                      f"            xmax = {float(end)!r}", f"            text = {q(label)}"]
    return "\n".join(lines) + "\n"

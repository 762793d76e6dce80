"""Flip-flop waveforms: VCD subset reader/writer and signal-activity statistics.

Time is measured in whole clock cycles. The value during cycle ``c`` is the
flip-flop output right after clock edge ``c``.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence



class VcdError(ValueError):
    pass


class UnmappedSignalWarning(UserWarning):
    """A name-map entry has no matching variable in the VCD."""


@dataclass(frozen=True)
class SignalTimeline:
    ff: str
    initial: int
    transitions: tuple   # ((cycle, new_value), ...)
    horizon: int

    def __post_init__(self):
        if self.initial not in (0, 1):
            raise ValueError(f"{self.ff}: initial value must be 0 or 1")
        if self.horizon <= 0:
            raise ValueError(f"{self.ff}: horizon must be positive")
        prev_c, prev_v = 0, self.initial
        for c, v in self.transitions:
            if not prev_c < c < self.horizon:
                raise ValueError(f"{self.ff}: transition cycle {c} out of order or beyond horizon {self.horizon}")
            if v != 1 - prev_v:
                raise ValueError(f"{self.ff}: transition at cycle {c} does not change the value")
            prev_c, prev_v = c, v

    def values(self) -> list:
        """Per-cycle value list of length ``horizon``."""
        out = []
        v = self.initial
        it = iter(self.transitions)
        nxt = next(it, None)
        for c in range(self.horizon):
            if nxt is not None and nxt[0] == c:
                v = nxt[1]
                nxt = next(it, None)
            out.append(v)
        return out


@dataclass(frozen=True)
class ActivityStats:
    ff: str
    frac_at_0: float
    frac_at_1: float
    state_changes: int


def timeline_from_values(ff: str, values: Sequence[int]) -> SignalTimeline:
    vals = [int(v) for v in values]
    if not vals:
        raise ValueError("empty value sequence")
    trans = tuple((c, vals[c]) for c in range(1, len(vals)) if vals[c] != vals[c - 1])
    return SignalTimeline(ff, vals[0], trans, len(vals))


def compute_activity(tl: SignalTimeline, window: Optional[tuple] = None) -> ActivityStats:
    """Occupancy fractions and transition count, over ``[start, end)`` if given."""
    start, end = (0, tl.horizon) if window is None else window
    if end <= start:
        raise ValueError(f"{tl.ff}: empty activity window [{start}, {end})")
    if start < 0 or end > tl.horizon:
        raise ValueError(f"{tl.ff}: window [{start}, {end}) outside horizon {tl.horizon}")
    ones = 0
    changes = 0
    v, seg = tl.initial, 0
    for c, nv in tl.transitions + ((tl.horizon, None),):
        lo, hi = max(seg, start), min(c, end)
        if v == 1 and hi > lo:
            ones += hi - lo
        if nv is not None and start < c < end:
            changes += 1
        v, seg = nv, c
    n = end - start
    return ActivityStats(tl.ff, (n - ones) / n, ones / n, changes)


# ---------------------------------------------------------------------------
# VCD

_VAR_RE = re.compile(r"^(\S+)\s*(\[\s*(-?\d+)\s*(?::\s*(-?\d+)\s*)?\])?$")
_PERIOD_RE = re.compile(r"\bclock_period\s+(\d+)\b")


def _tokens(text):
    for lineno, line in enumerate(text.splitlines(), 1):
        for tok in line.split():
            yield lineno, tok


def parse_vcd(text: str, name_map: dict, period: Optional[int] = None,
              horizon: Optional[int] = None) -> list:
    """Read a VCD and return one SignalTimeline per mapped flip-flop.

    ``name_map`` maps dotted VCD paths (``top.cnt[3]`` for a bit of vector
    ``cnt``) to flip-flop names. Timestamps are divided by the clock
    ``period`` (given, or taken from a ``$comment clock_period N $end``
    header, else 1). When several changes land in one cycle the last wins.
    Map entries missing from the file raise an ``UnmappedSignalWarning`` and
    are skipped.
    """
    toks = _tokens(text)
    scope: list = []
    # id code -> list of (path, bit position in the vector string, width)
    ids: dict = {}
    comments = []
    for lineno, tok in toks:
        if tok == "$enddefinitions":
            for _, t in toks:
                if t == "$end":
                    break
            break
        if tok == "$scope":
            body = _read_cmd(toks)
            if len(body) < 2:
                raise VcdError(f"line {lineno}: malformed $scope")
            scope.append(body[1])
        elif tok == "$upscope":
            _read_cmd(toks)
            if not scope:
                raise VcdError(f"line {lineno}: $upscope without $scope")
            scope.pop()
        elif tok == "$var":
            body = _read_cmd(toks)
            if len(body) < 4:
                raise VcdError(f"line {lineno}: malformed $var")
            vtype, width, code = body[0], body[1], body[2]
            if vtype not in ("wire", "reg"):
                raise VcdError(f"line {lineno}: unsupported variable type {vtype!r}")
            try:
                width = int(width)
            except ValueError:
                raise VcdError(f"line {lineno}: bad width {width!r}") from None
            m = _VAR_RE.match(" ".join(body[3:]))
            if not m:
                raise VcdError(f"line {lineno}: bad reference {' '.join(body[3:])!r}")
            ref, rng, hi, lo = m.group(1), m.group(2), m.group(3), m.group(4)
            base = ".".join(scope + [ref])
            entries = ids.setdefault(code, [])
            if width == 1:
                entries.append((base if rng is None else f"{base}[{int(hi)}]", 0, 1))
            else:
                msb, lsb = (width - 1, 0) if rng is None else (int(hi), int(lo if lo is not None else hi))
                step = -1 if msb >= lsb else 1
                if abs(msb - lsb) + 1 != width:
                    raise VcdError(f"line {lineno}: range of {ref} does not match width {width}")
                for pos in range(width):
                    entries.append((f"{base}[{msb + step * pos}]", pos, width))
        elif tok == "$timescale":
            _read_cmd(toks)
        elif tok == "$comment":
            comments.append(" ".join(_read_cmd(toks)))
        elif tok.startswith("$"):
            _read_cmd(toks)
        else:
            raise VcdError(f"line {lineno}: unexpected token {tok!r} in header")
    else:
        raise VcdError("missing $enddefinitions")

    if period is None:
        period = 1
        for cm in comments:
            m = _PERIOD_RE.search(cm)
            if m:
                period = int(m.group(1))
    if period <= 0:
        raise VcdError("clock period must be positive")

    path_to_ff = dict(name_map)
    wanted: dict = {}   # path -> ff
    known_paths = {p for entries in ids.values() for p, _, _ in entries}
    for path, ff in path_to_ff.items():
        if path not in known_paths:
            warnings.warn(f"VCD has no variable {path!r} (flip-flop {ff})", UnmappedSignalWarning, stacklevel=2)
            continue
        wanted[path] = ff

    # per ff: dict cycle -> value (last write in a cycle wins)
    changes: dict = {ff: {} for ff in wanted.values()}
    time = 0
    last_time = 0
    for lineno, tok in toks:
        c0 = tok[0]
        if c0 == "#":
            try:
                t = int(tok[1:])
            except ValueError:
                raise VcdError(f"line {lineno}: bad timestamp {tok!r}") from None
            if t < time:
                raise VcdError(f"line {lineno}: time goes backwards")
            time = last_time = t
        elif c0 in "01":
            _apply(ids, wanted, changes, tok[1:], tok[0], time // period, lineno)
        elif c0 in "bB":
            try:
                _, code = tok, next(toks)[1]
            except StopIteration:
                raise VcdError(f"line {lineno}: truncated vector change") from None
            bits = tok[1:]
            if not bits or set(bits) - {"0", "1"}:
                raise VcdError(f"line {lineno}: unsupported vector value {tok!r}")
            _apply(ids, wanted, changes, code, bits, time // period, lineno)
        elif c0 in "xXzZ":
            raise VcdError(f"line {lineno}: four-state value {tok!r} not supported")
        elif c0 == "$":
            continue   # $dumpvars / $end / $dumpall framing
        else:
            raise VcdError(f"line {lineno}: malformed value change {tok!r}")

    if horizon is None:
        horizon = -(-last_time // period)
        last_change = max((c for ch in changes.values() for c in ch), default=-1)
        horizon = max(horizon, last_change + 1, 1)
    out = []
    for ff in sorted(changes):
        ch = changes[ff]
        if 0 not in ch:
            raise VcdError(f"no initial value for flip-flop {ff}")
        vals = []
        v = None
        for c in range(horizon):
            v = ch.get(c, v)
            vals.append(v)
        if any(c >= horizon for c in ch):
            raise VcdError(f"changes of {ff} beyond horizon {horizon}")
        out.append(timeline_from_values(ff, vals))
    return out


def _read_cmd(toks):
    body = []
    for _, t in toks:
        if t == "$end":
            return body
        body.append(t)
    raise VcdError("unterminated command")


def _apply(ids, wanted, changes, code, value, cycle, lineno):
    if code not in ids:
        raise VcdError(f"line {lineno}: unknown identifier code {code!r}")
    for path, pos, width in ids[code]:
        ff = wanted.get(path)
        if ff is None:
            continue
        if width == 1:
            if len(value) != 1:
                raise VcdError(f"line {lineno}: vector value on scalar {path}")
            bit = value
        else:
            if len(value) > width:
                raise VcdError(f"line {lineno}: value {value!r} wider than {width} bits")
            bit = value.rjust(width, "0")[pos]
        changes[ff][cycle] = int(bit)


def write_vcd(timelines: Iterable[SignalTimeline], period: int = 1, scope: str = "top",
              buses: Optional[dict] = None) -> tuple:
    """Emit a VCD for ``timelines``; return ``(text, name_map)``.

    ``buses`` maps a bus name to ``{bit_index: ff_name}``; those flip-flops
    are written as one vector variable, the rest as scalars.
    """
    tls = {tl.ff: tl for tl in timelines}
    if not tls:
        raise ValueError("nothing to write")
    horizon = max(tl.horizon for tl in tls.values())
    buses = buses or {}
    in_bus = {ff for bits in buses.values() for ff in bits.values()}
    variables = []   # (code, width, reference, [ff per string position])
    name_map = {}
    n = 0

    def code_of(i):
        chars = "".join(chr(k) for k in range(33, 127))
        s = ""
        i += 1
        while i:
            i, r = divmod(i - 1, len(chars))
            s = chars[r] + s
        return s

    for bus in sorted(buses):
        bits = buses[bus]
        width = max(bits) + 1
        order = [bits.get(i) for i in range(width - 1, -1, -1)]
        variables.append((code_of(n), width, f"{bus} [{width - 1}:0]", order))
        for i, ff in bits.items():
            name_map[f"{scope}.{bus}[{i}]"] = ff
        n += 1
    for ff in sorted(tls):
        if ff in in_bus:
            continue
        ref = re.sub(r"\s", "_", ff)
        variables.append((code_of(n), 1, ref, [ff]))
        name_map[f"{scope}.{ref}"] = ff
        n += 1

    values = {ff: tl.values() for ff, tl in tls.items()}

    def word(order, c):
        return "".join(str(values[f][c]) if f in values else "0" for f in order)

    lines = ["$timescale 1ns $end", f"$comment clock_period {period} $end", f"$scope module {scope} $end"]
    for code, width, ref, _ in variables:
        lines.append(f"$var reg {width} {code} {ref} $end")
    lines += ["$upscope $end", "$enddefinitions $end", "#0", "$dumpvars"]
    prev = {}
    for code, width, _, order in variables:
        w = word(order, 0)
        prev[code] = w
        lines.append(w + code if width == 1 else f"b{w} {code}")
    lines.append("$end")
    for c in range(1, horizon):
        chunk = []
        for code, width, _, order in variables:
            w = word(order, c)
            if w != prev[code]:
                prev[code] = w
                chunk.append(w + code if width == 1 else f"b{w} {code}")
        if chunk:
            lines.append(f"#{c * period}")
            lines.extend(chunk)
    lines.append(f"#{horizon * period}")
    return "\n".join(lines) + "\n", name_map


def load_name_map(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        m = json.load(fh)
    if not isinstance(m, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in m.items()):
        raise VcdError(f"{path}: name map must be a JSON object of strings")
    return m

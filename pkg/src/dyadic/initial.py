"""Named, reproducible families of initial shell vectors.

Descriptors are written like function calls, e.g. ``unit_shell(1)``,
``geometric(0.5, 8)``, ``random_positive(7, 10)`` or
``signed(2, geometric(0.5, 8))``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigurationError

__all__ = ["InitialCondition", "parse_initial_condition", "FAMILIES"]

FAMILIES = ("zero", "unit_shell", "geometric", "random_positive", "signed")


@dataclass(frozen=True)
class InitialCondition:
    family: str
    params: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown initial-condition family {self.family!r}; "
                                     f"expected one of {FAMILIES}")
        object.__setattr__(self, "params", tuple(self.params))

    def __str__(self):
        args = ", ".join(str(p) if isinstance(p, InitialCondition) else repr(p) for p in self.params)
        return f"{self.family}({args})"

    def build(self, n_shells, seed=0):
        """Shell vector of length ``n_shells``."""
        if n_shells < 1:
            raise ConfigurationError("n_shells must be at least 1")
        x = np.zeros(n_shells)
        p = self.params
        if self.family == "zero":
            _arity(self, 0)
        elif self.family == "unit_shell":
            _arity(self, 1)
            j = _index(p[0], n_shells, "shell")
            x[j - 1] = 1.0
        elif self.family == "geometric":
            _arity(self, 2)
            r = float(p[0])
            support = _index(p[1], n_shells, "n_support")
            n = np.arange(1, support + 1)
            x[:support] = r ** n
        elif self.family == "random_positive":
            if len(p) == 1:
                rng_seed, support = seed, p[0]
            else:
                _arity(self, 2)
                rng_seed, support = p
            support = _index(support, n_shells, "n_support")
            rng = np.random.default_rng(int(rng_seed))
            vals = 1.0 - rng.random(support)  # uniform on (0, 1]
            x[:support] = vals / np.sqrt(np.sum(vals * vals))
        elif self.family == "signed":
            _arity(self, 2)
            m, base = p
            if not isinstance(base, InitialCondition):
                raise ConfigurationError("signed(m, base) needs a nested family as base")
            m = int(m)
            if not 0 <= m <= n_shells:
                raise ConfigurationError(f"signed: m={m} outside 0..{n_shells}")
            x = base.build(n_shells, seed)
            x[:m] = -x[:m]
        return x

    def negative_count(self):
        return int(self.params[0]) if self.family == "signed" else 0


def _arity(ic, n):
    if len(ic.params) != n:
        raise ConfigurationError(f"{ic.family} takes {n} parameter(s), got {len(ic.params)}")


def _index(value, n_shells, what):
    if float(value) != int(float(value)):
        raise ConfigurationError(f"{what} must be an integer, got {value!r}")
    v = int(float(value))
    if not 1 <= v <= n_shells:
        raise ConfigurationError(f"{what}={v} outside 1..{n_shells}")
    return v


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z_0-9]*)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(.))")


def parse_initial_condition(text, params=None):
    """Parse ``family(args)``; a bare family name takes ``params`` (string or sequence)."""
    text = text.strip()
    if params is not None and "(" not in text:
        if isinstance(params, str):
            body = params.strip()
        else:
            body = ", ".join(str(v) for v in params)
        text = f"{text}({body})"
    elif "(" not in text:
        text = f"{text}()"
    tokens = [m for m in _TOKEN.finditer(text) if m.group(0).strip()]
    pos = 0

    def expect(ch):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos].group(3) != ch:
            raise ConfigurationError(f"malformed initial condition {text!r}: expected {ch!r}")
        pos += 1

    def value():
        nonlocal pos
        if pos >= len(tokens):
            raise ConfigurationError(f"malformed initial condition {text!r}")
        tok = tokens[pos]
        if tok.group(2) is not None:
            pos += 1
            num = tok.group(2)
            return int(num) if re.fullmatch(r"[-+]?\d+", num) else float(num)
        if tok.group(1) is not None:
            return call()
        raise ConfigurationError(f"malformed initial condition {text!r} near {tok.group(0)!r}")

    def call():
        nonlocal pos
        name = tokens[pos].group(1)
        pos += 1
        expect("(")
        args = []
        if pos < len(tokens) and tokens[pos].group(3) == ")":
            pos += 1
            return InitialCondition(name, ())
        while True:
            args.append(value())
            if pos < len(tokens) and tokens[pos].group(3) == ",":
                pos += 1
                continue
            expect(")")
            return InitialCondition(name, tuple(args))

    if not tokens or tokens[0].group(1) is None:
        raise ConfigurationError(f"malformed initial condition {text!r}")
    ic = call()
    if pos != len(tokens):
        raise ConfigurationError(f"trailing text in initial condition {text!r}")
    return ic

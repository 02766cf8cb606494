from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Permutation:
    """A bijection on {0, ..., K-1}; ``p(i)`` is the target chart paired with source chart i."""

    mapping: tuple

    def __post_init__(self):
        mapping = tuple(int(v) for v in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"{mapping} is not a permutation of 0..{len(mapping) - 1}")
        object.__setattr__(self, "mapping", mapping)

    @classmethod
    def identity(cls, k: int) -> "Permutation":
        return cls(tuple(range(k)))

    @classmethod
    def all(cls, k: int):
        return [cls(p) for p in itertools.permutations(range(k))]

    @classmethod
    def random(cls, k: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(rng.permutation(k).tolist()))

    def __call__(self, i: int) -> int:
        return self.mapping[i]

    def __len__(self):
        return len(self.mapping)

    @property
    def k(self) -> int:
        return len(self.mapping)

    def is_identity(self) -> bool:
        return all(i == v for i, v in enumerate(self.mapping))

    def inverse(self) -> "Permutation":
        inv = [0] * self.k
        for i, v in enumerate(self.mapping):
            inv[v] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """``(self o other)(i) = self(other(i))``."""
        return Permutation(tuple(self.mapping[other.mapping[i]] for i in range(self.k)))

    def matrix(self) -> np.ndarray:
        """P with P[i, p(i)] = 1."""
        m = np.zeros((self.k, self.k))
        m[np.arange(self.k), self.mapping] = 1.0
        return m

    def cycles(self):
        seen, out = set(), []
        for start in range(self.k):
            if start in seen:
                continue
            cyc, i = [], start
            while i not in seen:
                seen.add(i)
                cyc.append(i)
                i = self.mapping[i]
            out.append(tuple(cyc))
        return out

    def cycle_string(self) -> str:
        """Cycle notation without fixed points, e.g. ``(0 1)(2 3)``; identity is ``e``."""
        parts = ["(" + " ".join(map(str, c)) + ")" for c in self.cycles() if len(c) > 1]
        return "".join(parts) or "e"

    @classmethod
    def from_cycle_string(cls, text: str, k: int) -> "Permutation":
        mapping = list(range(k))
        if text.strip() != "e":
            for body in re.findall(r"\(([^)]*)\)", text):
                cyc = [int(t) for t in body.split()]
                for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                    mapping[a] = b
        return cls(tuple(mapping))

    def __str__(self):
        return self.cycle_string()

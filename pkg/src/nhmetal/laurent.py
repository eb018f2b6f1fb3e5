"""Exact Laurent polynomials with integer coefficients and half-integer exponents.

Exponents are stored doubled (``key = 2 * exponent``) so that t^(1/2) has key 1.
"""

from __future__ import annotations

from fractions import Fraction


class LaurentPoly:
    __slots__ = ("terms", "var")

    def __init__(self, terms=None, var: str = "t"):
        clean = {}
        for k, c in (terms or {}).items():
            if c:
                clean[int(k)] = clean.get(int(k), 0) + int(c)
        self.terms = {k: c for k, c in clean.items() if c}
        self.var = var

    @classmethod
    def from_exponents(cls, exps: dict, var: str = "t") -> "LaurentPoly":
        """Build from ``{exponent: coefficient}`` where exponents may be half-integers."""
        terms = {}
        for e, c in exps.items():
            k = Fraction(e) * 2
            if k.denominator != 1:
                raise ValueError(f"exponent {e} is not a half-integer")
            terms[int(k)] = terms.get(int(k), 0) + c
        return cls(terms, var)

    @classmethod
    def monomial(cls, exponent, coeff: int = 1, var: str = "t") -> "LaurentPoly":
        return cls.from_exponents({exponent: coeff}, var)

    def exponents(self) -> dict[Fraction, int]:
        return {Fraction(k, 2): c for k, c in sorted(self.terms.items())}

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0) + c
        return LaurentPoly(out, self.var)

    __radd__ = __add__

    def __neg__(self):
        return LaurentPoly({k: -c for k, c in self.terms.items()}, self.var)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out: dict[int, int] = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                out[k1 + k2] = out.get(k1 + k2, 0) + c1 * c2
        return LaurentPoly(out, self.var)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            if len(self.terms) != 1:
                raise ValueError("only monomials have Laurent inverses")
            (k, c), = self.terms.items()
            if abs(c) != 1:
                raise ValueError("monomial inverse needs a unit coefficient")
            return LaurentPoly({-k * -n: c ** -n}, self.var)
        out = LaurentPoly({0: 1}, self.var)
        for _ in range(n):
            out = out * self
        return out

    def _coerce(self, other):
        if isinstance(other, LaurentPoly):
            return other
        if isinstance(other, int):
            return LaurentPoly({0: other}, self.var)
        return NotImplemented

    def __eq__(self, other):
        if isinstance(other, int):
            other = LaurentPoly({0: other})
        if not isinstance(other, LaurentPoly):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def mirror(self) -> "LaurentPoly":
        """Substitute t -> 1/t."""
        return LaurentPoly({-k: c for k, c in self.terms.items()}, self.var)

    def evaluate_half(self, half) -> complex:
        """Value with t^(1/2) replaced by ``half``."""
        return sum(c * complex(half) ** k for k, c in self.terms.items())

    def determinant(self) -> int:
        """|V(-1)| with t^(1/2) = i, computed exactly on Gaussian integers."""
        re = im = 0
        for k, c in self.terms.items():
            r = k % 4  # i^k
            if r == 0:
                re += c
            elif r == 1:
                im += c
            elif r == 2:
                re -= c
            else:
                im -= c
        n2 = re * re + im * im
        root = int(round(n2 ** 0.5))
        if root * root != n2:
            raise ArithmeticError(f"|V(-1)|^2 = {n2} is not a perfect square")
        return root

    def span(self) -> Fraction:
        if not self.terms:
            return Fraction(0)
        return Fraction(max(self.terms) - min(self.terms), 2)

    def to_dict(self) -> dict:
        return {"variable": self.var,
                "terms": [[str(Fraction(k, 2)), c] for k, c in sorted(self.terms.items())]}

    @classmethod
    def from_dict(cls, doc: dict) -> "LaurentPoly":
        return cls.from_exponents({Fraction(e): c for e, c in doc["terms"]}, doc.get("variable", "t"))

    def __repr__(self):
        return f"LaurentPoly({self})"

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for k, c in sorted(self.terms.items()):
            e = Fraction(k, 2)
            mono = "" if e == 0 else (self.var if e == 1 else f"{self.var}^({e})")
            coef = str(abs(c)) if (abs(c) != 1 or not mono) else ""
            body = coef + ("*" if coef and mono else "") + mono
            parts.append(("-" if c < 0 else "+") + " " + body)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]

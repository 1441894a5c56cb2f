"""Exact calculus on power sums of a unitary matrix.

Expressions are integer linear combinations of monomials

    n^k * prod_j p_j^{a_j} * conj(p_j)^{b_j},      p_j = Tr(U^j),

stored as ``{(PowerSumWord, k): coefficient}``.  Coefficients are therefore
integer polynomials in the symbolic dimension ``n``, and ``p_0 = Tr(I) = n``
is folded into them.

The Laplacian is available on monomials in ``p_1`` and ``conj(p_1)`` only,
via ``Delta p_1 = -n p_1``, ``grad p_k . grad p_l = -k l p_{k+l}`` and the
product rule.  Images may contain ``p_2`` and ``conj(p_2)``; applying the
Laplacian to those raises :class:`UnsupportedGeneratorError`.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Union


class UnsupportedGeneratorError(ValueError):
    pass


class MomentValidityError(ValueError):
    pass


def _canon(exps: Mapping[int, int]) -> tuple:
    items = []
    for j, e in exps.items():
        if j < 1 or e < 0:
            raise ValueError(f"bad power-sum exponent p_{j}^{e}")
        if e:
            items.append((int(j), int(e)))
    return tuple(sorted(items))


@dataclass(frozen=True, order=True)
class PowerSumWord:
    """``prod_j p_j^{a_j} conj(p_j)^{b_j}`` with sorted ``(j, exponent)`` tuples."""

    a: tuple = ()
    b: tuple = ()

    @classmethod
    def make(cls, a: Optional[Mapping[int, int]] = None, b: Optional[Mapping[int, int]] = None) -> "PowerSumWord":
        return cls(_canon(a or {}), _canon(b or {}))

    @classmethod
    def from_partitions(cls, p: Iterable[int] = (), pbar: Iterable[int] = ()) -> "PowerSumWord":
        """``from_partitions((2, 1, 1), (1, 1))`` is ``p_2 p_1^2 conj(p_1)^2``."""
        return cls.make(Counter(p), Counter(pbar))

    def conj(self) -> "PowerSumWord":
        return PowerSumWord(self.b, self.a)

    def __mul__(self, other: "PowerSumWord") -> "PowerSumWord":
        a, b = Counter(dict(self.a)), Counter(dict(self.b))
        a.update(dict(other.a))
        b.update(dict(other.b))
        return PowerSumWord.make(a, b)

    @property
    def degree(self) -> int:
        return sum(j * e for j, e in self.a + self.b)

    @property
    def size(self) -> int:
        """``sum_j (a_j + b_j)``: the number of trace factors."""
        return sum(e for _, e in self.a + self.b)

    def partitions(self) -> tuple[tuple, tuple]:
        def parts(exps):
            return tuple(sorted((j for j, e in exps for _ in range(e)), reverse=True))

        return parts(self.a), parts(self.b)

    def factors(self) -> Counter:
        """Signed factor indices: ``j`` for ``p_j``, ``-j`` for ``conj(p_j)``."""
        c = Counter(dict(self.a))
        c.update({-j: e for j, e in self.b})
        return c

    def render(self) -> str:
        p, pb = self.partitions()
        out = []
        if p:
            out.append("p[" + ",".join(map(str, p)) + "]")
        if pb:
            out.append("pbar[" + ",".join(map(str, pb)) + "]")
        return "*".join(out)


ONE = PowerSumWord()
Key = tuple  # (PowerSumWord, n_power)


class NPolynomialExpr:
    """Integer combination of ``n^k * word`` terms, kept in canonical form."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Optional[Mapping[Key, int]] = None):
        clean = {}
        for (word, k), c in (terms or {}).items():
            if k < 0:
                raise ValueError("negative power of n")
            if c:
                clean[(word, int(k))] = int(c)
        self._terms = clean

    # constructors
    @classmethod
    def word(cls, word: PowerSumWord, coeff: int = 1, n_power: int = 0) -> "NPolynomialExpr":
        return cls({(word, n_power): coeff})

    @classmethod
    def p(cls, j: int) -> "NPolynomialExpr":
        """``p_j`` for ``j > 0``, ``conj(p_{-j})`` for ``j < 0``, ``n`` for ``j = 0``."""
        if j == 0:
            return cls.n()
        return cls.word(PowerSumWord.make({j: 1}) if j > 0 else PowerSumWord.make(b={-j: 1}))

    @classmethod
    def n(cls) -> "NPolynomialExpr":
        return cls({(ONE, 1): 1})

    @classmethod
    def const(cls, c: int) -> "NPolynomialExpr":
        return cls({(ONE, 0): c})

    @classmethod
    def lift(cls, x) -> "NPolynomialExpr":
        if isinstance(x, NPolynomialExpr):
            return x
        if isinstance(x, int):
            return cls.const(x)
        if isinstance(x, PowerSumWord):
            return cls.word(x)
        raise TypeError(f"cannot use {type(x).__name__} in a power-sum expression")

    # ring structure
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def coefficients(self) -> dict:
        """``{word: {n_power: coeff}}``."""
        out = defaultdict(dict)
        for (word, k), c in self._terms.items():
            out[word][k] = c
        return dict(out)

    def __add__(self, other):
        other = self.lift(other)
        t = dict(self._terms)
        for key, c in other._terms.items():
            t[key] = t.get(key, 0) + c
        return NPolynomialExpr(t)

    __radd__ = __add__

    def __neg__(self):
        return NPolynomialExpr({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self.lift(other))

    def __rsub__(self, other):
        return self.lift(other) - self

    def __mul__(self, other):
        other = self.lift(other)
        t: dict = {}
        for (w1, k1), c1 in self._terms.items():
            for (w2, k2), c2 in other._terms.items():
                key = (w1 * w2, k1 + k2)
                t[key] = t.get(key, 0) + c1 * c2
        return NPolynomialExpr(t)

    __rmul__ = __mul__

    def __pow__(self, e: int):
        out = NPolynomialExpr.const(1)
        for _ in range(e):
            out = out * self
        return out

    def __eq__(self, other):
        try:
            other = self.lift(other)
        except TypeError:
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __bool__(self):
        return bool(self._terms)

    def conj(self) -> "NPolynomialExpr":
        return NPolynomialExpr({(w.conj(), k): c for (w, k), c in self._terms.items()})

    def is_scalar(self) -> bool:
        return all(w == ONE for w, _ in self._terms)

    def scalar_poly(self) -> dict:
        """``{n_power: coeff}`` of a scalar expression."""
        if not self.is_scalar():
            raise ValueError("expression is not a scalar polynomial in n")
        return {k: c for (_, k), c in self._terms.items()}

    def evaluate_n(self, n: int) -> "NPolynomialExpr":
        """Substitute a numeric dimension."""
        t: dict = {}
        for (w, k), c in self._terms.items():
            t[(w, 0)] = t.get((w, 0), 0) + c * n**k
        return NPolynomialExpr(t)

    # text / json
    def to_text(self) -> str:
        """Render as e.g. ``-4n*p[1,1]*pbar[1,1] - 2*p[1,1]*pbar[2] + 8n*p[1]*pbar[1]``."""
        if not self._terms:
            return "0"
        groups = self.coefficients()
        order = sorted(groups, key=lambda w: (-w.degree, w.partitions()))
        pieces = []
        for word in order:
            sign, body = _render_term(groups[word], word.render())
            pieces.append((sign, body))
        first_sign, first = pieces[0]
        out = ("-" if first_sign < 0 else "") + first
        for sign, body in pieces[1:]:
            out += (" - " if sign < 0 else " + ") + body
        return out

    __str__ = to_text

    def __repr__(self):
        return f"NPolynomialExpr({self.to_text()!r})"

    def to_json(self) -> str:
        rows = []
        for (w, k), c in sorted(self._terms.items(), key=lambda kv: (kv[0][0].partitions(), kv[0][1])):
            p, pb = w.partitions()
            rows.append({"p": list(p), "pbar": list(pb), "n_power": k, "coeff": c})
        return json.dumps({"terms": rows})

    @classmethod
    def from_json(cls, text: str) -> "NPolynomialExpr":
        t = {}
        for row in json.loads(text)["terms"]:
            t[(PowerSumWord.from_partitions(row["p"], row["pbar"]), row["n_power"])] = row["coeff"]
        return cls(t)


def _render_monomial(k: int) -> str:
    return "" if k == 0 else ("n" if k == 1 else f"n^{k}")


def _render_term(poly: dict, factor: str) -> tuple[int, str]:
    if len(poly) == 1:
        (k, c), = poly.items()
        mag = abs(c)
        nk = _render_monomial(k)
        if not factor:
            return (1 if c > 0 else -1), (str(mag) if mag != 1 or not nk else "") + nk
        coeff = (str(mag) if mag != 1 else "") + nk
        return (1 if c > 0 else -1), (coeff + "*" + factor if coeff else factor)
    parts = []
    for k in sorted(poly, reverse=True):
        c = poly[k]
        nk = _render_monomial(k)
        mag = abs(c)
        body = (str(mag) if mag != 1 or not nk else "") + nk
        parts.append(("-" if c < 0 else "+", body))
    text = ("-" if parts[0][0] == "-" else "") + parts[0][1]
    for s, b in parts[1:]:
        text += f" {s} {b}"
    return 1, f"({text})" + ("*" + factor if factor else "")


# --------------------------------------------------------------------------
# differential calculus

_BASE_LAPLACIAN = {1: -1, -1: -1}  # Delta p_{+-1} = -n p_{+-1}


def nabla_pair(k: int, l: int) -> NPolynomialExpr:
    """``grad p_k . grad p_l = -k l p_{k+l}`` with ``p_{-j} = conj(p_j)``, ``p_0 = n``."""
    if k == 0 or l == 0:
        raise ValueError("power-sum indices must be nonzero")
    return -k * l * NPolynomialExpr.p(k + l)


def _word_from_factors(factors: Counter) -> PowerSumWord:
    return PowerSumWord.make({j: e for j, e in factors.items() if j > 0}, {-j: e for j, e in factors.items() if j < 0})


def _check_supported(word: PowerSumWord) -> Counter:
    fac = word.factors()
    bad = [j for j in fac if j not in _BASE_LAPLACIAN]
    if bad:
        raise UnsupportedGeneratorError(
            f"Laplacian of {word.render()} needs rules for p_j with |j| >= 2 (factors {sorted(bad)})"
        )
    return fac


def _laplacian_word(word: PowerSumWord) -> NPolynomialExpr:
    fac = _check_supported(word)
    out = NPolynomialExpr()
    for j, e in fac.items():
        out = out + NPolynomialExpr.word(word, _BASE_LAPLACIAN[j] * e, 1)
    idx = sorted(fac)
    for i, j in enumerate(idx):
        for l in idx[i:]:
            pairs = math.comb(fac[j], 2) if j == l else fac[j] * fac[l]
            if not pairs:
                continue
            rest = Counter(fac)
            rest[j] -= 1
            rest[l] -= 1
            out = out + 2 * pairs * nabla_pair(j, l) * NPolynomialExpr.word(_word_from_factors(rest))
    return out


def laplacian(expr) -> NPolynomialExpr:
    """Laplacian on U(n) of a polynomial in ``p_1``, ``conj(p_1)`` (and ``n``)."""
    expr = NPolynomialExpr.lift(expr)
    out = NPolynomialExpr()
    for (word, k), c in expr.terms.items():
        if word == ONE:
            continue
        out = out + c * NPolynomialExpr({(w, kk + k): cc for (w, kk), cc in _laplacian_word(word).terms.items()})
    return out


def gradient_pairing(f, g) -> NPolynomialExpr:
    """``grad f . grad g`` for polynomials in ``p_1``, ``conj(p_1)``, by Leibniz."""
    f, g = NPolynomialExpr.lift(f), NPolynomialExpr.lift(g)
    out = NPolynomialExpr()
    for (w1, k1), c1 in f.terms.items():
        f1 = _check_supported(w1) if w1 != ONE else Counter()
        for (w2, k2), c2 in g.terms.items():
            f2 = _check_supported(w2) if w2 != ONE else Counter()
            for i, ei in f1.items():
                for j, ej in f2.items():
                    rest = f1 + f2
                    rest[i] -= 1
                    rest[j] -= 1
                    term = nabla_pair(i, j) * NPolynomialExpr.word(_word_from_factors(rest), ei * ej * c1 * c2, k1 + k2)
                    out = out + term
    return out


def drift_coefficient(f) -> NPolynomialExpr:
    """Coefficient of ``t`` in ``E[f(U') | U]`` for one heat-kernel step."""
    return laplacian(f)


def quadratic_variation(f) -> NPolynomialExpr:
    """Coefficient of ``t`` in ``E[(f(U') - f(U))^2 | U]``: ``Delta(f^2) - 2 f Delta f``."""
    f = NPolynomialExpr.lift(f)
    return laplacian(f * f) - 2 * f * laplacian(f)


# --------------------------------------------------------------------------
# Haar moments


class _Invalid:
    """Marker returned by :func:`haar_moment` outside the exact-moment range."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "OUTSIDE_VALIDITY"

    def __bool__(self):
        return False


OUTSIDE_VALIDITY = _Invalid()


def min_dimension(word: PowerSumWord) -> int:
    """Smallest ``n`` at which :func:`haar_moment` of ``word`` is exact."""
    side = max(sum(j * e for j, e in word.a), sum(j * e for j, e in word.b))
    return max(word.size, side)


def haar_moment(word: PowerSumWord, n_value: Optional[int] = None) -> Union[int, _Invalid]:
    """``E prod_j p_j^{a_j} conj(p_j)^{b_j}`` for Haar ``U`` in U(n).

    Equals ``prod_j j^{a_j} a_j!`` when ``a = b`` and 0 otherwise, provided
    ``n >= sum_j (a_j + b_j)`` and ``n >= max(sum_j j a_j, sum_j j b_j)``.
    The first condition alone is not enough: ``E|Tr U^4|^2 = 2`` on U(2),
    not 4.  For smaller numeric ``n`` the marker :data:`OUTSIDE_VALIDITY` is
    returned.  ``n_value=None`` means symbolic ``n``, taken to be large
    enough.
    """
    if n_value is not None and n_value < min_dimension(word):
        return OUTSIDE_VALIDITY
    if word.a != word.b:
        return 0
    out = 1
    for j, e in word.a:
        out *= j**e * math.factorial(e)
    return out


def expectation(expr, n_value: Optional[int] = None):
    """Haar expectation, termwise.

    Symbolic ``n`` returns a scalar :class:`NPolynomialExpr`; a numeric
    ``n_value`` returns an int.  Raises :class:`MomentValidityError` if any
    word has more trace factors than ``n_value``.
    """
    expr = NPolynomialExpr.lift(expr)
    bad = sorted({w.render() for (w, _) in expr.terms if haar_moment(w, n_value) is OUTSIDE_VALIDITY})
    if bad:
        raise MomentValidityError(f"moments not exact at n={n_value} for: {', '.join(bad)}")
    out = NPolynomialExpr()
    for (w, k), c in expr.terms.items():
        m = haar_moment(w, n_value)
        if m:
            out = out + NPolynomialExpr({(ONE, k): c * m})
    if n_value is None:
        return out
    return sum(c * n_value**k for k, c in out.scalar_poly().items())


def W() -> NPolynomialExpr:
    """``|Tr U|^2 = p_1 conj(p_1)``."""
    return NPolynomialExpr.p(1) * NPolynomialExpr.p(-1)


@dataclass(frozen=True)
class FourthMomentCoefficient:
    """t-coefficient of ``E(W' - W)^4`` and its two nonzero contributions."""

    value: NPolynomialExpr
    cubic_term: NPolynomialExpr  # t-coefficient of -8 E[W^3 E[W'|U]]
    quadratic_term: NPolynomialExpr  # t-coefficient of 6 E[W^2 E[W'^2|U]]
    min_n: int


def fourth_moment_coefficient() -> FourthMomentCoefficient:
    """Coefficient of ``t`` in ``E(W' - W)^4`` via exchangeability.

    ``E(W'-W)^4 = 2 E W^4 - 8 E[W^3 E[W'|U]] + 6 E[W^2 E[W'^2|U]]``; the
    ``t^0`` parts cancel (2 - 8 + 6 = 0) and the ``t`` parts come from
    ``Delta W`` and ``Delta W^2``.
    """
    w = W()
    cubic = -8 * (w**3 * drift_coefficient(w))
    quad = 6 * (w**2 * drift_coefficient(w**2))
    min_n = max(min_dimension(t) for (t, _) in (cubic + quad).terms)
    c, q = expectation(cubic), expectation(quad)
    return FourthMomentCoefficient(c + q, c, q, min_n)

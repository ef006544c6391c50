"""Hash family, inner codes, and the composed bucket-assignment code.

A sketching code maps a cell index to one bucket per measurement row.  It is
built by composing an affine hash over a prime field with an inner
error-correcting code (Reed-Solomon or CRT residues), which keeps bucket
assignments pairwise independent per coordinate while staying decodable from
a constant fraction of corrupted rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence, Union

import numpy as np

from . import ConfigError

# Erasure mark used inside codewords (a row with no usable bucket).
ERASURE = None


def _is_prime(n: int) -> bool:
    from sympy import isprime

    return bool(isprime(n))


def _next_prime(n: int) -> int:
    from sympy import nextprime

    return int(nextprime(n - 1))


def select_prime(lo: int, hi: int) -> int:
    """Smallest prime in [lo, hi], or ConfigError if the interval has none."""
    if lo < 2:
        lo = 2
    p = lo if _is_prime(lo) else _next_prime(lo)
    if p > hi:
        raise ConfigError(f"no prime in [{lo}, {hi}]")
    return p


def affine_eval(a: int, b: int, p: int, x) -> int:
    """Raw family member (a*x + b) mod p, no parameter validation."""
    return (a * x + b) % p


# ---------------------------------------------------------------------------
# Affine hash over a prime field


@dataclass(frozen=True)
class HashParams:
    """One member h(x) = (a*x + b) mod modulus of the affine family.

    The full family draws a, b uniformly from [modulus]; sampled members used
    for sketching keep a != 0 so the map is invertible.
    """

    a: int
    b: int
    modulus: int

    def __post_init__(self):
        p = self.modulus
        if not _is_prime(p):
            raise ConfigError(f"hash modulus {p} is not prime")
        if not 1 <= self.a < p:
            raise ConfigError(f"hash slope a={self.a} outside [1, {p})")
        if not 0 <= self.b < p:
            raise ConfigError(f"hash offset b={self.b} outside [0, {p})")


def hash_eval(h: HashParams, x: int) -> int:
    """Evaluate h at x; x must lie in the hash domain [modulus)."""
    if not 0 <= x < h.modulus:
        raise ValueError(f"hash input {x} outside [0, {h.modulus})")
    return (h.a * x + h.b) % h.modulus


def hash_invert(h: HashParams, y: int) -> int:
    """Unique preimage of y under h (a != 0 makes h a bijection on [modulus))."""
    if not 0 <= y < h.modulus:
        raise ValueError(f"hash value {y} outside [0, {h.modulus})")
    a_inv = pow(h.a, -1, h.modulus)
    return (a_inv * (y - h.b)) % h.modulus


def sample_hash(modulus: int, rng: np.random.Generator) -> HashParams:
    a = int(rng.integers(1, modulus))
    b = int(rng.integers(0, modulus))
    return HashParams(a=a, b=b, modulus=modulus)


# ---------------------------------------------------------------------------
# Reed-Solomon inner code


@dataclass(frozen=True)
class RsCodeSpec:
    """Polynomial-evaluation code [q^r] -> [q]^s at points 1..s over F_q."""

    q: int
    r: int
    s: int

    def __post_init__(self):
        if not _is_prime(self.q):
            raise ConfigError(f"RS field size q={self.q} is not prime")
        if not 1 <= self.r < self.s:
            raise ConfigError(f"RS needs 1 <= r < s, got r={self.r}, s={self.s}")
        if self.s > self.q:
            raise ConfigError(f"RS needs s <= q for distinct evaluation points")

    @property
    def distance(self) -> int:
        return self.s - self.r

    @property
    def message_space(self) -> int:
        return self.q**self.r


def _rs_digits(spec: RsCodeSpec, x: int) -> list[int]:
    # Little-endian base-q digits; digit j is the coefficient of xi^j.
    digits = []
    for _ in range(spec.r):
        digits.append(x % spec.q)
        x //= spec.q
    return digits


def _rs_eval(coeffs: Sequence[int], xi: int, q: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * xi + c) % q
    return acc


def rs_encode(spec: RsCodeSpec, x: int) -> list[int]:
    """Evaluate the degree-(r-1) polynomial with base-q digits of x at 1..s."""
    if not 0 <= x < spec.message_space:
        raise ValueError(f"RS message {x} outside [0, {spec.message_space})")
    coeffs = _rs_digits(spec, x)
    return [_rs_eval(coeffs, xi, spec.q) for xi in range(1, spec.s + 1)]


def _solve_mod_p(rows: list[list[int]], rhs: list[int], p: int) -> Optional[list[int]]:
    """One solution of the linear system mod prime p, or None (free vars -> 0)."""
    m = len(rows)
    n = len(rows[0]) if m else 0
    aug = [[v % p for v in row] + [rhs[i] % p] for i, row in enumerate(rows)]
    pivots = []
    row_at = 0
    for col in range(n):
        pivot = next((i for i in range(row_at, m) if aug[i][col] % p != 0), None)
        if pivot is None:
            continue
        aug[row_at], aug[pivot] = aug[pivot], aug[row_at]
        inv = pow(aug[row_at][col], -1, p)
        aug[row_at] = [(v * inv) % p for v in aug[row_at]]
        for i in range(m):
            if i != row_at and aug[i][col] % p != 0:
                f = aug[i][col]
                aug[i] = [(vi - f * vr) % p for vi, vr in zip(aug[i], aug[row_at])]
        pivots.append(col)
        row_at += 1
        if row_at == m:
            break
    # Inconsistent if a zero row has nonzero rhs.
    for i in range(row_at, m):
        if all(v % p == 0 for v in aug[i][:n]) and aug[i][n] % p != 0:
            return None
    sol = [0] * n
    for i, col in enumerate(pivots):
        sol[col] = aug[i][n] % p
    return sol


def _poly_divmod(num: list[int], den: list[int], p: int):
    """Quotient and remainder of polynomials mod p (low-order-first coeffs)."""
    num = [v % p for v in num]
    den = [v % p for v in den]
    while den and den[-1] == 0:
        den.pop()
    if not den:
        raise ZeroDivisionError("polynomial division by zero")
    deg_d = len(den) - 1
    inv_lead = pow(den[-1], -1, p)
    quot = [0] * max(len(num) - deg_d, 0)
    rem = list(num)
    for k in range(len(quot) - 1, -1, -1):
        if len(rem) < deg_d + k + 1:
            continue
        coef = (rem[deg_d + k] * inv_lead) % p
        quot[k] = coef
        if coef:
            for j, dv in enumerate(den):
                rem[j + k] = (rem[j + k] - coef * dv) % p
    while rem and rem[-1] == 0:
        rem.pop()
    return quot, rem


def rs_decode(spec: RsCodeSpec, word: Sequence[int]) -> Optional[int]:
    """Berlekamp-Welch unique decoding.

    Returns the message x whenever the word differs from rs_encode(spec, x)
    in fewer than (s - r)/2 positions, else None.
    """
    if len(word) != spec.s:
        raise ValueError(f"word length {len(word)} != s={spec.s}")
    q, r, s = spec.q, spec.r, spec.s
    word = [int(y) % q for y in word]
    points = list(range(1, s + 1))
    t_max = (spec.distance - 1) // 2
    for e in range(t_max, -1, -1):
        # Unknowns: e coefficients of monic locator E, r+e coefficients of Q.
        rows, rhs = [], []
        for xi, y in zip(points, word):
            xpow = [pow(xi, j, q) for j in range(r + e + 1)]
            row = [(-y * xpow[j]) % q for j in range(e)] + xpow[: r + e]
            rows.append(row)
            rhs.append((y * xpow[e]) % q)
        sol = _solve_mod_p(rows, rhs, q)
        if sol is None:
            continue
        e_coeffs = sol[:e] + [1]  # monic
        q_coeffs = sol[e:]
        try:
            m_coeffs, rem = _poly_divmod(q_coeffs, e_coeffs, q)
        except ZeroDivisionError:
            continue
        if rem or len(m_coeffs) > r:
            continue
        m_coeffs = (m_coeffs + [0] * r)[:r]
        candidate = [_rs_eval(m_coeffs, xi, q) for xi in points]
        if sum(a != b for a, b in zip(candidate, word)) <= t_max:
            x = 0
            for c in reversed(m_coeffs):
                x = x * q + c
            return x
    return None


# ---------------------------------------------------------------------------
# CRT inner code


@dataclass(frozen=True)
class CrtCodeSpec:
    """Residue code [P] -> prod [p_i]; any r residues pin down the message."""

    moduli: tuple[int, ...]
    r: int
    P: int

    def __post_init__(self):
        mods = self.moduli
        if len(mods) < 2:
            raise ConfigError("CRT code needs at least two moduli")
        for i, j in combinations(range(len(mods)), 2):
            if math.gcd(mods[i], mods[j]) != 1:
                raise ConfigError(
                    f"moduli {mods[i]} and {mods[j]} are not coprime"
                )
        if not 1 <= self.r < len(mods):
            raise ConfigError(f"CRT needs 1 <= r < s, got r={self.r}, s={len(mods)}")
        if self.P < 2:
            raise ConfigError(f"CRT message bound P={self.P} too small")
        smallest_r = math.prod(sorted(mods)[: self.r])
        if smallest_r < self.P:
            raise ConfigError(
                f"product of the {self.r} smallest moduli ({smallest_r}) is "
                f"below P={self.P}; r residues would not determine a message"
            )

    @property
    def s(self) -> int:
        return len(self.moduli)

    @property
    def distance(self) -> int:
        return self.s - self.r

    @property
    def message_space(self) -> int:
        return self.P


def crt_encode(spec: CrtCodeSpec, x: int) -> list[int]:
    if not 0 <= x < spec.P:
        raise ValueError(f"CRT message {x} outside [0, {spec.P})")
    return [x % p for p in spec.moduli]


def crt_reconstruct(residues: Sequence[tuple[int, int]]) -> int:
    """Unique x mod prod(moduli) matching all (value, modulus) pairs."""
    for (_, p1), (_, p2) in combinations(residues, 2):
        if math.gcd(p1, p2) != 1:
            raise ConfigError(f"moduli {p1} and {p2} are not coprime")
    x, m = 0, 1
    for v, p in residues:
        t = ((v - x) * pow(m % p, -1, p)) % p
        x += m * t
        m *= p
    return x % m


def crt_decode(spec: CrtCodeSpec, word: Sequence[int]) -> Optional[int]:
    """Subset-vote unique decoding.

    Every r-subset of residues proposes a candidate; a candidate below P that
    agrees with all but fewer than (s - r)/2 coordinates is the answer.
    """
    if len(word) != spec.s:
        raise ValueError(f"word length {len(word)} != s={spec.s}")
    t_max = (spec.distance - 1) // 2
    word = [int(w) for w in word]
    best = None
    for subset in combinations(range(spec.s), spec.r):
        x = crt_reconstruct([(word[i] % spec.moduli[i], spec.moduli[i]) for i in subset])
        if x >= spec.P:
            continue
        errs = sum(x % spec.moduli[i] != word[i] for i in range(spec.s))
        if errs <= t_max:
            # Unique within the decoding radius: two acceptable candidates
            # would have to agree on more than r residues and thus be equal.
            if best is not None and best != x:
                raise AssertionError("two candidates inside the decoding radius")
            best = x
    return best


def coprime_moduli(q: int, s: int) -> tuple[int, ...]:
    """Smallest s pairwise-coprime integers in [q, 2q], primes preferred."""
    from sympy import primerange

    chosen = list(primerange(q, 2 * q + 1))[:s]
    if len(chosen) < s:
        for n in range(q, 2 * q + 1):
            if n in chosen:
                continue
            if all(math.gcd(n, c) == 1 for c in chosen):
                chosen.append(n)
                if len(chosen) == s:
                    break
    if len(chosen) < s:
        raise ConfigError(f"no {s} pairwise-coprime integers in [{q}, {2 * q}]")
    return tuple(sorted(chosen))


# ---------------------------------------------------------------------------
# Composed sketching code

InnerSpec = Union[RsCodeSpec, CrtCodeSpec]


@dataclass(frozen=True)
class IndependentCode:
    """Bucket assignment g_i(c) = inner_i(hash(c)) for rows i = 1..s."""

    kind: str
    inner: InnerSpec
    hash_params: HashParams
    n_cells: int

    def __post_init__(self):
        if self.kind not in ("rs", "crt"):
            raise ConfigError(f"unknown code kind {self.kind!r}")
        if self.n_cells > self.hash_params.modulus:
            raise ConfigError(
                f"cell domain {self.n_cells} exceeds hash modulus "
                f"{self.hash_params.modulus}"
            )

    @property
    def P(self) -> int:
        return self.hash_params.modulus

    @property
    def s(self) -> int:
        return self.inner.s

    @property
    def r(self) -> int:
        return self.inner.r

    @property
    def distance(self) -> int:
        return self.inner.distance

    @property
    def alphabet_sizes(self) -> tuple[int, ...]:
        if self.kind == "rs":
            return (self.inner.q,) * self.inner.s
        return self.inner.moduli

    def encode(self, cell: int) -> list[int]:
        if not 0 <= cell < self.n_cells:
            raise ValueError(f"cell {cell} outside [0, {self.n_cells})")
        y = hash_eval(self.hash_params, cell)
        if self.kind == "rs":
            return rs_encode(self.inner, y)
        return crt_encode(self.inner, y)

    def encode_all(self, n: Optional[int] = None) -> np.ndarray:
        """Bucket assignment table, shape (s, n); matches encode() row-wise."""
        n = self.n_cells if n is None else n
        if n > self.n_cells:
            raise ValueError(f"requested {n} cells, code covers {self.n_cells}")
        if self.P >= 2**31:
            return np.array([self.encode(c) for c in range(n)], dtype=np.int64).T
        cells = np.arange(n, dtype=np.int64)
        h = (self.hash_params.a * cells + self.hash_params.b) % self.P
        if self.kind == "crt":
            mods = np.asarray(self.inner.moduli, dtype=np.int64)
            return h[None, :] % mods[:, None]
        q = self.inner.q
        digits = np.empty((self.inner.r, n), dtype=np.int64)
        rest = h.copy()
        for j in range(self.inner.r):
            digits[j] = rest % q
            rest //= q
        out = np.empty((self.s, n), dtype=np.int64)
        for i, xi in enumerate(range(1, self.s + 1)):
            acc = np.zeros(n, dtype=np.int64)
            for c in digits[::-1]:
                acc = (acc * xi + c) % q
            out[i] = acc
        return out

    def decode(self, word: Sequence[Optional[int]]) -> Optional[int]:
        """Decode a codeword with erasures back to a cell index, or None.

        Erasures are replaced by symbol 0 (turning each into at most one
        error), the inner code is decoded, and the hash is inverted.
        """
        if len(word) != self.s:
            raise ValueError(f"word length {len(word)} != s={self.s}")
        if all(sym is ERASURE for sym in word):
            return None
        filled = [0 if sym is ERASURE else int(sym) for sym in word]
        if self.kind == "rs":
            y = rs_decode(self.inner, filled)
        else:
            y = crt_decode(self.inner, filled)
        if y is None or y >= self.P:
            return None
        return hash_invert(self.hash_params, y)


def code_encode(code: IndependentCode, cell: int) -> list[int]:
    return code.encode(cell)


def code_decode(code: IndependentCode, word: Sequence[Optional[int]]) -> Optional[int]:
    return code.decode(word)


def sample_independent_code(
    kind: str,
    n_cells: int,
    s: int,
    q: int,
    r: int,
    rng: np.random.Generator,
) -> IndependentCode:
    """Draw the hash member and assemble the composed code.

    The working prime P is deterministic given the parameters: the smallest
    prime >= max(q**r / 2, n_cells) that still fits below q**r.  Only the
    hash coefficients consume randomness.
    """
    kind = kind.lower()
    if kind not in ("rs", "crt"):
        raise ConfigError(f"unknown code kind {kind!r}")
    if s <= r:
        raise ConfigError(f"need s > r, got s={s}, r={r}")
    space = q**r
    if n_cells > space:
        raise ConfigError(f"cell domain {n_cells} exceeds message space q^r={space}")
    lo = max((space + 1) // 2, n_cells, 2)
    P = select_prime(lo, space)
    if kind == "rs":
        inner: InnerSpec = RsCodeSpec(q=q, r=r, s=s)
    else:
        inner = CrtCodeSpec(moduli=coprime_moduli(q, s), r=r, P=P)
    hp = sample_hash(P, rng)
    return IndependentCode(kind=kind, inner=inner, hash_params=hp, n_cells=n_cells)

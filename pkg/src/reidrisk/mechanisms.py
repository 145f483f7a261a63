"""Local obfuscation mechanisms and channel algebra.

Two concrete mechanisms are provided: symbol-level randomized response (keep
the true symbol with a boosted probability, otherwise emit any symbol at a
small uniform probability) and hashed randomized response (hash the symbol
into g buckets with a randomly drawn member of a universal hash family, then
randomize over buckets). Both expose their channel matrix, sample records,
and parallelize through explicit per-worker random streams.

Probabilities are parameterized through e^(-epsilon), so arbitrarily large
epsilon values never overflow: the keep probability is
1 / (1 + (k-1) e^(-eps)) and the leak probability e^(-eps) of that.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .probcore import SUM_TOL, Alphabet, _as_alphabet

# smallest prime above 2^31; default modulus for the pairwise hash family
PRODUCTION_PRIME = 2147483659


class MechanismKernel:
    """Column-stochastic channel matrix Q with Q[y, x] = P(output y | input x)."""

    __slots__ = ("input_size", "output_size", "matrix")

    def __init__(self, input_size: int, output_size: int, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (output_size, input_size):
            raise ValueError(f"kernel shape {m.shape} does not match ({output_size}, {input_size})")
        if np.any(m < 0):
            raise ValueError("kernel has negative entries")
        col_mass = m.sum(axis=0)
        if np.any(np.abs(col_mass - 1.0) > SUM_TOL):
            raise ValueError("kernel columns must each sum to 1")
        m = m / col_mass
        m.setflags(write=False)
        object.__setattr__(self, "input_size", input_size)
        object.__setattr__(self, "output_size", output_size)
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("MechanismKernel is immutable")

    @classmethod
    def identity(cls, size: int) -> "MechanismKernel":
        return cls(size, size, np.eye(size))

    def __repr__(self):
        return f"MechanismKernel({self.input_size} -> {self.output_size})"


def _keep_leak(epsilon: float, k: int) -> tuple[float, float, float]:
    """(keep, leak, shrink) probabilities for k-ary randomized response.

    keep = e^eps / (k + e^eps - 1) on the diagonal, leak = 1 / (k + e^eps - 1)
    elsewhere, shrink = keep - leak. Computed via t = e^(-eps) so eps may be
    arbitrarily large (math.inf gives a pass-through channel).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    t = np.exp(-float(epsilon))
    denom = 1.0 + (k - 1) * t
    keep = 1.0 / denom
    leak = t / denom
    return keep, leak, (1.0 - t) / denom


@dataclass(frozen=True)
class RandomizedResponse:
    """Randomized response over a k-symbol alphabet at privacy level epsilon."""

    epsilon: float
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("randomized response needs an alphabet of size >= 2")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def mu(self) -> float:
        """Probability of reporting the true symbol."""
        return _keep_leak(self.epsilon, self.size)[0]

    @property
    def nu(self) -> float:
        """Probability of reporting any one specific other symbol."""
        return _keep_leak(self.epsilon, self.size)[1]

    @property
    def theta(self) -> float:
        """Probability of the 'emit the truth' branch in the two-stage view.

        With probability theta the true symbol is emitted, otherwise a
        uniform symbol (which may coincide with the truth); this reproduces
        mu on the diagonal exactly and is also the channel's information
        shrink factor.
        """
        return _keep_leak(self.epsilon, self.size)[2]

    def kernel(self) -> "MechanismKernel":
        return rr_kernel(self.epsilon, self.size)


def rr_kernel(epsilon: float, alphabet: Union[Alphabet, int]) -> MechanismKernel:
    """Channel matrix of randomized response: keep prob on the diagonal."""
    size = _as_alphabet(alphabet).size
    if size < 2:
        raise ValueError("randomized response needs an alphabet of size >= 2")
    keep, leak, _ = _keep_leak(epsilon, size)
    m = np.full((size, size), leak)
    np.fill_diagonal(m, keep)
    return MechanismKernel(size, size, m)


@dataclass(frozen=True)
class ObfuscatedRecord:
    """One released datum: a symbol for RR, or a (hash descriptor, bucket) pair.

    For hashed records `descriptor` is (a, b) for the pairwise family (the
    modulus and bucket count live in `prime`/`g`) or an integer table index
    for the exhaustive family. Buckets are 1-based.
    """

    y: int
    descriptor: Optional[tuple] = None
    prime: Optional[int] = None
    g: Optional[int] = None

    @property
    def is_hashed(self) -> bool:
        return self.descriptor is not None


@dataclass(frozen=True)
class RrBatch:
    """Column form of many RR records."""

    ys: np.ndarray


@dataclass(frozen=True)
class GlhBatch:
    """Column form of many hashed records sharing one (prime, g) family."""

    a: np.ndarray
    b: np.ndarray
    ys: np.ndarray
    prime: int
    g: int

    def __len__(self):
        return len(self.ys)


def rr_sample(mech: RandomizedResponse, x: int, rng: np.random.Generator) -> ObfuscatedRecord:
    """Obfuscate one symbol: emit x with probability theta, else uniform."""
    if not (0 <= x < mech.size):
        raise ValueError(f"symbol {x} outside alphabet of size {mech.size}")
    if rng.random() < mech.theta:
        return ObfuscatedRecord(y=int(x))
    return ObfuscatedRecord(y=int(rng.integers(mech.size)))


def rr_sample_batch(mech: RandomizedResponse, xs: np.ndarray, rng: np.random.Generator) -> RrBatch:
    """Vectorized randomized response over a whole symbol array."""
    xs = np.asarray(xs, dtype=np.int64)
    if xs.size and (xs.min() < 0 or xs.max() >= mech.size):
        raise ValueError("symbol outside alphabet")
    keep = rng.random(xs.size) < mech.theta
    uniform = rng.integers(0, mech.size, size=xs.size)
    return RrBatch(ys=np.where(keep, xs, uniform))


def _is_prime(n: int) -> bool:
    # deterministic Miller-Rabin, valid far beyond 64-bit range
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime_above(n: int) -> int:
    c = n + 1
    while not _is_prime(c):
        c += 1
    return c


class CarterWegman:
    """Pairwise hash family h(x) = (((a x + b) mod P) mod g) + 1.

    Members are identified by (a, b) with a in [1, P-1], b in [0, P-1].
    Collision probability for x != x' is at most 1/g + O(1/P), a documented
    approximation of an exactly universal family; the oracle module uses the
    exhaustive family where exactness matters.
    """

    def __init__(self, prime: int, g: int):
        if g < 2:
            raise ValueError("need at least two buckets")
        if not _is_prime(prime):
            raise ValueError(f"{prime} is not prime")
        self.prime = int(prime)
        self.g = int(g)

    @classmethod
    def for_domain(cls, domain_size: int, g: int) -> "CarterWegman":
        """Family with the production modulus: smallest prime above max(|X|, 2^31)."""
        if domain_size < PRODUCTION_PRIME:
            return cls(PRODUCTION_PRIME, g)
        return cls(next_prime_above(domain_size), g)

    def sample_descriptor(self, rng: np.random.Generator) -> tuple[int, int]:
        return int(rng.integers(1, self.prime)), int(rng.integers(0, self.prime))

    def sample_descriptors(self, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        a = rng.integers(1, self.prime, size=count, dtype=np.int64)
        b = rng.integers(0, self.prime, size=count, dtype=np.int64)
        return a, b

    def eval(self, descriptor: tuple[int, int], x) -> np.ndarray:
        a, b = descriptor
        if not (1 <= a < self.prime and 0 <= b < self.prime):
            raise ValueError("invalid hash descriptor")
        x = np.asarray(x, dtype=np.int64)
        return ((a * x + b) % self.prime) % self.g + 1

    def descriptor_count(self) -> int:
        return (self.prime - 1) * self.prime


class ExhaustiveTable:
    """All g^domain functions from the domain into [g]; exactly universal.

    Oracle-only: permitted while g^domain stays at or below 10^6. Member
    index i maps x to digit x of i written in base g (plus 1 for 1-based
    buckets), which enumerates every function exactly once.
    """

    MAX_FUNCTIONS = 10 ** 6

    def __init__(self, domain_size: int, g: int):
        if g < 2 or domain_size < 1:
            raise ValueError("need g >= 2 and a non-empty domain")
        count = g ** domain_size
        if count > self.MAX_FUNCTIONS:
            raise ValueError(f"exhaustive family would hold {count} functions (cap {self.MAX_FUNCTIONS})")
        self.domain_size = int(domain_size)
        self.g = int(g)
        self.count = int(count)

    def sample_descriptor(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.count))

    def eval(self, descriptor: int, x) -> np.ndarray:
        if not (0 <= descriptor < self.count):
            raise ValueError("invalid table index")
        x = np.asarray(x, dtype=np.int64)
        return (descriptor // self.g ** x) % self.g + 1

    def all_tables(self) -> np.ndarray:
        """Dense (count, domain) matrix of every member's bucket values."""
        idx = np.arange(self.count)[:, None]
        powers = self.g ** np.arange(self.domain_size)[None, :]
        return (idx // powers) % self.g + 1


HashFamily = Union[CarterWegman, ExhaustiveTable]


def hash_eval(family: HashFamily, descriptor, x):
    """Bucket of symbol x under the family member named by descriptor (1-based)."""
    out = family.eval(descriptor, x)
    return int(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class GeneralLocalHash:
    """Hash into g buckets with a random family member, then randomize buckets."""

    epsilon: float
    g: int
    family: HashFamily

    def __post_init__(self):
        if self.g < 2:
            raise ValueError("need at least two buckets")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.family.g != self.g:
            raise ValueError("family bucket count disagrees with g")

    @classmethod
    def with_production_family(cls, epsilon: float, g: int, domain_size: int) -> "GeneralLocalHash":
        return cls(epsilon, g, CarterWegman.for_domain(domain_size, g))

    @property
    def mu(self) -> float:
        """Probability that the reported bucket equals the hashed value."""
        return _keep_leak(self.epsilon, self.g)[0]

    @property
    def nu(self) -> float:
        """Marginal probability of any fixed bucket: 1/g by universality."""
        return 1.0 / self.g

    @property
    def off_bucket(self) -> float:
        """Probability of any one specific wrong bucket."""
        return _keep_leak(self.epsilon, self.g)[1]

    @property
    def theta_bucket(self) -> float:
        """'Emit the hashed value' branch probability of the bucket channel."""
        return _keep_leak(self.epsilon, self.g)[2]

    def bucket_kernel(self) -> MechanismKernel:
        """The channel on bucket values conditioned on any fixed hash member."""
        return rr_kernel(self.epsilon, self.g)


def glh_sample(mech: GeneralLocalHash, x: int, rng: np.random.Generator) -> ObfuscatedRecord:
    """Draw a family member, hash x, and randomize the bucket."""
    desc = mech.family.sample_descriptor(rng)
    z = hash_eval(mech.family, desc, int(x))
    if rng.random() < mech.theta_bucket:
        y = z
    else:
        y = int(rng.integers(1, mech.g + 1))
    if isinstance(mech.family, CarterWegman):
        return ObfuscatedRecord(y=y, descriptor=desc, prime=mech.family.prime, g=mech.g)
    return ObfuscatedRecord(y=y, descriptor=(desc,), g=mech.g)


def glh_sample_batch(mech: GeneralLocalHash, xs: np.ndarray, rng: np.random.Generator) -> GlhBatch:
    """Vectorized hashed obfuscation; one fresh family member per record."""
    if not isinstance(mech.family, CarterWegman):
        raise ValueError("batch sampling requires the pairwise family")
    xs = np.asarray(xs, dtype=np.int64)
    a, b = mech.family.sample_descriptors(xs.size, rng)
    z = ((a * xs + b) % mech.family.prime) % mech.g + 1
    keep = rng.random(xs.size) < mech.theta_bucket
    uniform = rng.integers(1, mech.g + 1, size=xs.size)
    return GlhBatch(a=a, b=b, ys=np.where(keep, z, uniform),
                    prime=mech.family.prime, g=mech.g)


@dataclass(frozen=True)
class LdpBudget:
    """Smallest epsilon for which a kernel satisfies the local-privacy ratio.

    `value` is None when no finite epsilon exists (some output has zero
    probability under one input but not another); this is the explicit
    unbounded variant, never a sentinel float.
    """

    value: Optional[float]

    @property
    def unbounded(self) -> bool:
        return self.value is None

    @classmethod
    def finite(cls, v: float) -> "LdpBudget":
        return cls(float(v))

    @classmethod
    def infinite(cls) -> "LdpBudget":
        return cls(None)


def ldp_epsilon_of_kernel(k: MechanismKernel) -> LdpBudget:
    """Audit a channel: max over outputs y of ln(max_x Q(y|x) / min_x Q(y|x))."""
    worst = 0.0
    for row in k.matrix:
        top = row.max()
        if top == 0:
            continue
        low = row.min()
        if low == 0:
            return LdpBudget.infinite()
        worst = max(worst, float(np.log(top / low)))
    return LdpBudget.finite(worst)


def postprocess(k: MechanismKernel, channel: MechanismKernel) -> MechanismKernel:
    """Compose a post-processing channel on the mechanism's output."""
    if channel.input_size != k.output_size:
        raise ValueError("channel input alphabet must equal kernel output alphabet")
    return MechanismKernel(k.input_size, channel.output_size, channel.matrix @ k.matrix)


def mixture_kernel(w: float, q1: MechanismKernel, q2: MechanismKernel) -> MechanismKernel:
    """Entrywise mixture: run q1 with probability w, else q2."""
    if not (0.0 <= w <= 1.0):
        raise ValueError("mixture weight must lie in [0, 1]")
    if (q1.input_size, q1.output_size) != (q2.input_size, q2.output_size):
        raise ValueError("mixture components must share alphabets")
    return MechanismKernel(q1.input_size, q1.output_size, w * q1.matrix + (1.0 - w) * q2.matrix)


@dataclass(frozen=True)
class MixtureMechanism:
    weight: float
    first: MechanismKernel
    second: MechanismKernel

    def kernel(self) -> MechanismKernel:
        return mixture_kernel(self.weight, self.first, self.second)


RR_HEADER = ["user_idx", "y"]
GLH_HEADER = ["user_idx", "a", "b", "P", "g", "y"]


def write_records(path, user_idx: Sequence[int], batch: Union[RrBatch, GlhBatch]) -> None:
    """Write obfuscated records as CSV; rows are self-describing for GLH."""
    user_idx = np.asarray(user_idx, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(batch, RrBatch):
            w.writerow(RR_HEADER)
            for u, y in zip(user_idx, batch.ys):
                w.writerow([int(u), int(y)])
        else:
            w.writerow(GLH_HEADER)
            for u, a, b, y in zip(user_idx, batch.a, batch.b, batch.ys):
                w.writerow([int(u), int(a), int(b), batch.prime, batch.g, int(y)])


def read_records(path) -> tuple[np.ndarray, Union[RrBatch, GlhBatch]]:
    """Read a record CSV back into column form; detects RR vs GLH by header."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header == RR_HEADER:
            rows = [(int(u), int(y)) for u, y in r]
            users = np.array([u for u, _ in rows], dtype=np.int64)
            ys = np.array([y for _, y in rows], dtype=np.int64)
            return users, RrBatch(ys=ys)
        if header == GLH_HEADER:
            users, aa, bb, pp, gg, ys = [], [], [], [], [], []
            for u, a, b, p, g, y in r:
                users.append(int(u)); aa.append(int(a)); bb.append(int(b))
                pp.append(int(p)); gg.append(int(g)); ys.append(int(y))
            if len(set(pp)) > 1 or len(set(gg)) > 1:
                raise ValueError("record file mixes hash families (varying P or g)")
            return (np.array(users, dtype=np.int64),
                    GlhBatch(a=np.array(aa, dtype=np.int64), b=np.array(bb, dtype=np.int64),
                             ys=np.array(ys, dtype=np.int64), prime=pp[0], g=gg[0]))
        raise ValueError(f"unrecognized record header: {header}")

"""Agent population synthesis, toolset assignment and the dormant-seed registry.

Agents are stored as static profiles (genotype, narrative, embedding, tier,
toolset) and looked up by a 32-bit id. Embeddings are synthetic: a per-domain
unit center plus Gaussian noise, so that clustering structure exists without
a real embedding model.
"""

from __future__ import annotations

import functools
import hashlib
import io
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Sequence

import numpy as np

DEFAULT_DIM = 64
SIGMA_EMBED = 0.1
SIGMA_TOOL = 0.15
MAX_GENOTYPE_CHARS = 1024

SMMR_LAMBDA = 0.7
SMMR_SIGMA = 0.05
K_TOOLS = 10

_CENTER_SALT = 0x5EED_C0DE
_ID_MASK = 0xFFFF_FFFF


class InvalidDimension(ValueError):
    pass


class InsufficientPool(ValueError):
    pass


class AgentNotFound(KeyError):
    pass


class Tier(Enum):
    LIGHT = "light"
    STANDARD = "standard"
    FRONTIER = "frontier"


class Archetype(Enum):
    EXCELLENT = "excellent"
    MEDIOCRE = "mediocre"
    MALICIOUS = "malicious"
    WEAK = "weak"
    GENERIC = "generic"


# Ability bands per archetype. Malicious agents always "finish" but their
# output quality is near zero, so ability is pinned low.
ABILITY_BANDS = {
    Archetype.EXCELLENT: (0.9, 1.0),
    Archetype.MEDIOCRE: (0.4, 0.7),
    Archetype.MALICIOUS: (0.0, 0.1),
    Archetype.WEAK: (0.0, 0.2),
    Archetype.GENERIC: (0.0, 1.0),
}

_TIER_CODES = {Tier.LIGHT: 0, Tier.STANDARD: 1, Tier.FRONTIER: 2}
_ARCHETYPE_CODES = {a: i for i, a in enumerate(Archetype)}


@dataclass(frozen=True)
class Rqt:
    """Role-qualifier-task genotype."""

    role: str
    qualifier: str
    task_domain: str

    def text(self) -> str:
        return f"{self.role} | {self.qualifier} | {self.task_domain}"


@dataclass(frozen=True)
class ToolDescriptor:
    tool_id: int
    domain_id: int
    embedding: np.ndarray = field(repr=False, compare=False)
    name: str = ""


@dataclass
class AgentProfile:
    agent_id: int
    genotype: Rqt
    narrative: str
    embedding: np.ndarray = field(repr=False)
    tier: Tier
    toolset: tuple[int, ...]
    archetype: Archetype
    ability: float
    domain_id: int = 0

    @property
    def topic(self) -> str:
        return domain_topic(self.domain_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AgentProfile):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.genotype == other.genotype
            and self.narrative == other.narrative
            and np.array_equal(self.embedding, other.embedding)
            and self.tier == other.tier
            and self.toolset == other.toolset
            and self.archetype == other.archetype
            and self.ability == other.ability
            and self.domain_id == other.domain_id
        )


def domain_topic(domain_id: int) -> str:
    return f"domain-{domain_id}"


def user_topic(user_id: str) -> str:
    return f"user:{user_id}"


# ---------------------------------------------------------------------------
# embeddings


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


@functools.lru_cache(maxsize=4096)
def _center(domain_id: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([_CENTER_SALT, domain_id, dim])
    c = normalize(rng.standard_normal(dim))
    c.flags.writeable = False
    return c


def domain_center(domain_id: int, dim: int = DEFAULT_DIM) -> np.ndarray:
    return _center(domain_id, dim).copy()


def synth_embedding(seed: int, domain_id: int, dim: int = DEFAULT_DIM, sigma: float = SIGMA_EMBED) -> np.ndarray:
    """Unit vector ``normalize(center(domain_id) + N(0, sigma^2 I))``."""
    if dim < 2:
        raise InvalidDimension(f"dimension must be >= 2, got {dim}")
    if domain_id < 0:
        raise ValueError("domain_id must be non-negative")
    rng = np.random.default_rng([seed & 0xFFFF_FFFF_FFFF_FFFF, domain_id, dim])
    return normalize(_center(domain_id, dim) + sigma * rng.standard_normal(dim))


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# genotypes

ROLES = (
    "Senior Analyst", "Research Engineer", "Technical Writer", "Data Engineer",
    "Consultant", "Auditor", "Designer", "Strategist", "Developer", "Curator",
)
QUALIFIERS = (
    "Privacy-focused", "Detail-oriented", "Fast", "Rigorous", "Cost-aware",
    "Creative", "Pragmatic", "Skeptical", "Concise", "Exhaustive",
)
TASK_DOMAINS = (
    "Financial Report Visualization", "Kernel Debugging", "Literature Survey",
    "Contract Review", "Data Cleaning", "Market Forecasting", "UI Prototyping",
    "Log Analysis", "Translation", "Signal Demodulation", "Tax Preparation",
    "Dataset Labeling", "Threat Modeling", "Lesson Planning", "Recipe Design",
    "Patent Search", "Load Testing", "Grant Writing", "Route Planning",
    "Schema Migration",
)
DEFAULT_INCOMPATIBLE = frozenset({("Poet", "Kernel Debugging"), ("Auditor", "Recipe Design")})


def validate_genotype(rqt: Rqt, incompatible: Iterable[tuple[str, str]] = DEFAULT_INCOMPATIBLE) -> bool:
    """Rule-based stand-in for the genotype discriminator."""
    fields = (rqt.role, rqt.qualifier, rqt.task_domain)
    if any(not f or not f.strip() for f in fields):
        return False
    if len(set(fields)) < 3:
        return False
    if sum(len(f) for f in fields) > MAX_GENOTYPE_CHARS:
        return False
    return (rqt.role, rqt.task_domain) not in set(incompatible)


def domain_task_name(domain_id: int) -> str:
    base = TASK_DOMAINS[domain_id % len(TASK_DOMAINS)]
    cycle = domain_id // len(TASK_DOMAINS)
    return base if cycle == 0 else f"{base} {cycle + 1}"


def agent_id_for(rqt: Rqt, variant: int, salt: int = 0) -> int:
    h = hashlib.blake2b(f"{rqt.text()}#{variant}#{salt}".encode(), digest_size=4)
    return int.from_bytes(h.digest(), "big")


def tier_for(agent_id: int) -> Tier:
    shard = agent_id % 100
    if shard < 70:
        return Tier.LIGHT
    if shard < 95:
        return Tier.STANDARD
    return Tier.FRONTIER


# ---------------------------------------------------------------------------
# S-MMR


def _argmax_lowest_id(scores: np.ndarray, ids: np.ndarray) -> int:
    best = scores.max()
    cands = np.flatnonzero(scores == best)
    if len(cands) == 1:
        return int(cands[0])
    return int(cands[np.argmin(ids[cands])])


def smmr_select(
    v_a: np.ndarray,
    pool: Sequence[ToolDescriptor],
    k: int,
    sigma: float = SMMR_SIGMA,
    lam: float = SMMR_LAMBDA,
    agent_id: int = 0,
) -> list[int]:
    """Stochastic maximal marginal relevance toolset selection.

    One Gaussian perturbation per tool is drawn from an RNG seeded by
    ``agent_id``; the greedy loop then maximizes
    ``lam * (sim(v_a, t) + eps_t) - (1 - lam) * max_{s in S} sim(t, s)``.
    Ties go to the lowest tool_id. Returns tool ids in selection order.
    """
    if k > len(pool):
        raise InsufficientPool(f"k={k} exceeds pool size {len(pool)}")
    ids = np.array([t.tool_id for t in pool], dtype=np.int64)
    mat = np.stack([t.embedding for t in pool])
    eps = _perturbation(agent_id, len(pool), sigma)
    return [int(ids[i]) for i in _smmr_indices(np.asarray(v_a, dtype=float), mat, ids, eps, k, lam)]


def _perturbation(agent_id: int, n: int, sigma: float) -> np.ndarray:
    if sigma == 0:
        return np.zeros(n)
    return np.random.default_rng(agent_id & _ID_MASK).normal(0.0, sigma, size=n)


def _smmr_indices(v_a, mat, ids, eps, k, lam) -> list[int]:
    relevance = mat @ v_a + eps
    # redundancy is 0 only while S is empty; afterwards a true max over S
    redundancy = np.zeros(len(mat))
    available = np.ones(len(mat), dtype=bool)
    chosen: list[int] = []
    while len(chosen) < k:
        score = lam * relevance - (1.0 - lam) * redundancy
        score = np.where(available, score, -np.inf)
        best = _argmax_lowest_id(score, ids)
        chosen.append(best)
        available[best] = False
        if len(chosen) < k:
            sims = mat @ mat[best]
            redundancy = sims if len(chosen) == 1 else np.maximum(redundancy, sims)
    return chosen


def smmr_select_batch(
    agent_vecs: np.ndarray,
    agent_ids: Sequence[int],
    pool_matrix: np.ndarray,
    tool_ids: np.ndarray,
    k: int,
    sigma: float = SMMR_SIGMA,
    lam: float = SMMR_LAMBDA,
) -> np.ndarray:
    """Row-wise :func:`smmr_select` for many agents; returns (n_agents, k) tool ids."""
    n_tools = len(pool_matrix)
    if k > n_tools:
        raise InsufficientPool(f"k={k} exceeds pool size {n_tools}")
    out = np.empty((len(agent_vecs), k), dtype=np.int64)
    for i, (v, aid) in enumerate(zip(agent_vecs, agent_ids)):
        eps = _perturbation(int(aid), n_tools, sigma)
        out[i] = tool_ids[_smmr_indices(v, pool_matrix, tool_ids, eps, k, lam)]
    return out


# ---------------------------------------------------------------------------
# tool pools


def synth_tool_pool(n_tools: int, k_domains: int, seed: int, dim: int = DEFAULT_DIM, sigma: float = SIGMA_TOOL) -> list[ToolDescriptor]:
    """Synthetic stand-in for a public tool catalog; tools spread evenly over domains."""
    rng = np.random.default_rng([seed, 0x7001])
    domains = np.arange(n_tools) % k_domains
    rng.shuffle(domains)
    tools = []
    for i, d in enumerate(domains):
        emb = synth_embedding((seed << 24) ^ (i + 1), int(d), dim, sigma)
        tools.append(ToolDescriptor(tool_id=i, domain_id=int(d), embedding=emb, name=f"tool-{d}-{i}"))
    return tools


# ---------------------------------------------------------------------------
# registry


class AgentRegistry:
    """Keyed profile store plus a flat embedding index and topic subscriptions.

    Point lookups go through a single hash-map access; ``probes`` counts
    those accesses so the constant-cost property can be checked directly.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self._store: dict[int, AgentProfile] = {}
        self._order: list[int] = []
        self.topic_index: dict[str, set[int]] = {}
        self.probes = 0
        self._matrix: np.ndarray | None = None
        self._ids: np.ndarray | None = None
        self._unit: np.ndarray | None = None
        self._rows: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, agent_id: int) -> bool:
        return agent_id in self._store

    def __iter__(self):
        return (self._store[a] for a in self._order)

    def insert(self, profile: AgentProfile) -> None:
        if profile.agent_id in self._store:
            raise ValueError(f"duplicate agent_id {profile.agent_id:#010x}")
        if profile.embedding.shape != (self.dim,):
            raise InvalidDimension(f"embedding shape {profile.embedding.shape} != ({self.dim},)")
        self._store[profile.agent_id] = profile
        self._order.append(profile.agent_id)
        self.subscribe(profile.topic, profile.agent_id)
        self._matrix = None

    def subscribe(self, topic: str, agent_id: int) -> None:
        self.topic_index.setdefault(topic, set()).add(agent_id)

    def subscribers(self, topic: str) -> set[int]:
        return self.topic_index.get(topic, set())

    def lookup(self, agent_id: int) -> AgentProfile:
        self.probes += 1
        try:
            return self._store[agent_id]
        except KeyError:
            raise AgentNotFound(agent_id) from None

    @property
    def ids(self) -> np.ndarray:
        self._build_index()
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        self._build_index()
        return self._matrix

    def row_of(self, agent_id: int) -> int:
        self._build_index()
        return self._rows[agent_id]

    def rows_of(self, agent_ids: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`row_of`; every id must be registered."""
        self._build_index()
        ids = np.asarray(agent_ids, dtype=np.int64)
        pos = np.searchsorted(self._sorted_ids, ids)
        pos = np.minimum(pos, max(len(self._sorted_ids) - 1, 0))
        if len(ids) and (len(self._sorted_ids) == 0 or np.any(self._sorted_ids[pos] != ids)):
            missing = ids[self._sorted_ids[pos] != ids] if len(self._sorted_ids) else ids
            raise AgentNotFound(int(missing[0]))
        return self._sort_idx[pos]

    def cosines(self, q: np.ndarray) -> np.ndarray:
        """Cosine of ``q`` against every profile, in insertion order."""
        self._build_index()
        qn = float(np.sqrt(q @ q))
        if qn == 0:
            raise ValueError("query embedding is the zero vector")
        return self._unit @ (q / qn)

    def _build_index(self) -> None:
        if self._matrix is None:
            self._ids = np.array(self._order, dtype=np.int64)
            self._rows = {a: i for i, a in enumerate(self._order)}
            self._sort_idx = np.argsort(self._ids, kind="stable")
            self._sorted_ids = self._ids[self._sort_idx]
            if self._order:
                self._matrix = np.stack([self._store[a].embedding for a in self._order])
            else:
                self._matrix = np.zeros((0, self.dim))
            norms = np.linalg.norm(self._matrix, axis=1)
            self._unit = self._matrix / np.where(norms == 0, 1.0, norms)[:, None]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AgentRegistry):
            return NotImplemented
        return (
            self.dim == other.dim
            and self._order == other._order
            and all(self._store[a] == other._store[a] for a in self._order)
            and self.topic_index == other.topic_index
        )

    # -- binary persistence -------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()

    def write(self, fh: BinaryIO) -> None:
        fh.write(MAGIC)
        fh.write(struct.pack("<HQH", FORMAT_VERSION, len(self), self.dim))
        for p in self:
            fh.write(encode_profile(p))
        extra = sorted(
            (topic, aid)
            for topic, members in self.topic_index.items()
            for aid in members
            if topic != domain_topic(self._store[aid].domain_id)
        )
        fh.write(struct.pack("<I", len(extra)))
        for topic, aid in extra:
            fh.write(_pack_str(topic))
            fh.write(struct.pack("<I", aid))

    @classmethod
    def from_bytes(cls, data: bytes) -> "AgentRegistry":
        return cls.read(io.BytesIO(data))

    @classmethod
    def read(cls, fh: BinaryIO) -> "AgentRegistry":
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError("not a registry file (bad magic)")
        version, count, dim = struct.unpack("<HQH", _read_exact(fh, 12))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported registry version {version}")
        reg = cls(dim)
        for _ in range(count):
            reg.insert(_decode_profile(fh, dim))
        (n_extra,) = struct.unpack("<I", _read_exact(fh, 4))
        for _ in range(n_extra):
            topic = _read_str(fh)
            (aid,) = struct.unpack("<I", _read_exact(fh, 4))
            reg.subscribe(topic, aid)
        return reg


MAGIC = b"AGENTREG"
FORMAT_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise ValueError("truncated registry file")
    return b


def _read_str(fh: BinaryIO) -> str:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    return _read_exact(fh, n).decode("utf-8")


def encode_profile(p: AgentProfile) -> bytes:
    parts = [
        struct.pack("<IBdBH", p.agent_id, _TIER_CODES[p.tier], p.ability, _ARCHETYPE_CODES[p.archetype], p.domain_id),
        np.asarray(p.embedding, dtype="<f8").tobytes(),
        struct.pack("<B", len(p.toolset)),
        struct.pack(f"<{len(p.toolset)}I", *p.toolset),
        _pack_str(p.genotype.role),
        _pack_str(p.genotype.qualifier),
        _pack_str(p.genotype.task_domain),
        _pack_str(p.narrative),
    ]
    return b"".join(parts)


def _decode_profile(fh: BinaryIO, dim: int) -> AgentProfile:
    aid, tier, ability, arch, dom = struct.unpack("<IBdBH", _read_exact(fh, 16))
    emb = np.frombuffer(_read_exact(fh, 8 * dim), dtype="<f8").astype(float)
    (nt,) = struct.unpack("<B", _read_exact(fh, 1))
    tools = struct.unpack(f"<{nt}I", _read_exact(fh, 4 * nt))
    rqt = Rqt(_read_str(fh), _read_str(fh), _read_str(fh))
    narrative = _read_str(fh)
    tiers = {v: k for k, v in _TIER_CODES.items()}
    archs = {v: k for k, v in _ARCHETYPE_CODES.items()}
    return AgentProfile(aid, rqt, narrative, emb, tiers[tier], tuple(tools), archs[arch], ability, dom)


# ---------------------------------------------------------------------------
# population synthesis

_NARRATIVE_STYLES = (
    "works methodically and documents every step",
    "prefers short iterations with frequent checkpoints",
    "cross-checks results against independent sources",
    "optimizes for turnaround time",
    "favors conservative, well-tested approaches",
)


@dataclass
class PopulationSpec:
    """Knobs for :func:`synthesize_population` beyond (n, k_domains, seed)."""

    dim: int = DEFAULT_DIM
    sigma_embed: float = SIGMA_EMBED
    variants_per_genotype: int = 3
    k_tools: int = K_TOOLS
    smmr_lambda: float = SMMR_LAMBDA
    smmr_sigma: float = SMMR_SIGMA
    archetypes: Sequence[Archetype] | None = None
    incompatible: frozenset = DEFAULT_INCOMPATIBLE


def draw_ability(archetype: Archetype, rng: np.random.Generator) -> float:
    lo, hi = ABILITY_BANDS[archetype]
    return float(rng.uniform(lo, hi))


def synthesize_population(
    n: int,
    k_domains: int,
    seed: int,
    tool_pool: Sequence[ToolDescriptor] | None = None,
    spec: PopulationSpec | None = None,
) -> AgentRegistry:
    """Build ``n`` dormant agent seeds spread over ``k_domains`` domains.

    Genotypes come from domain-templated vocabularies and pass
    :func:`validate_genotype`; each genotype yields up to
    ``variants_per_genotype`` phenotypic variants that differ in narrative and
    embedding seed. Tiers follow ``agent_id mod 100`` sharding (70/25/5).
    """
    if n < 1 or k_domains < 1:
        raise ValueError("n and k_domains must be >= 1")
    spec = spec or PopulationSpec()
    if tool_pool is None:
        tool_pool = synth_tool_pool(max(40 * k_domains, spec.k_tools), k_domains, seed, spec.dim)
    rng = np.random.default_rng([seed, 0xA6E7])

    profiles: list[tuple[AgentProfile, np.ndarray]] = []
    seen: set[int] = set()
    i = 0
    genotype_no = 0
    while len(profiles) < n:
        domain = genotype_no % k_domains
        rqt = Rqt(
            ROLES[int(rng.integers(len(ROLES)))],
            QUALIFIERS[int(rng.integers(len(QUALIFIERS)))],
            domain_task_name(domain),
        )
        genotype_no += 1
        if not validate_genotype(rqt, spec.incompatible):
            continue
        for variant in range(spec.variants_per_genotype):
            if len(profiles) >= n:
                break
            salt = 0
            aid = agent_id_for(rqt, genotype_no * 16 + variant, salt)
            while aid in seen:
                salt += 1
                aid = agent_id_for(rqt, genotype_no * 16 + variant, salt)
            seen.add(aid)
            if spec.archetypes is not None:
                arch = spec.archetypes[i % len(spec.archetypes)]
            else:
                arch = Archetype.GENERIC
            style = _NARRATIVE_STYLES[(genotype_no + variant) % len(_NARRATIVE_STYLES)]
            narrative = f"A {rqt.qualifier.lower()} {rqt.role.lower()} for {rqt.task_domain.lower()} who {style} (variant {variant + 1})."
            emb = synth_embedding((seed << 32) ^ (i + 1), domain, spec.dim, spec.sigma_embed)
            profile = AgentProfile(
                agent_id=aid,
                genotype=rqt,
                narrative=narrative,
                embedding=emb,
                tier=tier_for(aid),
                toolset=(),
                archetype=arch,
                ability=draw_ability(arch, rng),
                domain_id=domain,
            )
            profiles.append((profile, emb))
            i += 1

    pool_matrix = np.stack([t.embedding for t in tool_pool])
    tool_ids = np.array([t.tool_id for t in tool_pool], dtype=np.int64)
    toolsets = smmr_select_batch(
        np.stack([e for _, e in profiles]),
        [p.agent_id for p, _ in profiles],
        pool_matrix,
        tool_ids,
        spec.k_tools,
        spec.smmr_sigma,
        spec.smmr_lambda,
    )
    reg = AgentRegistry(spec.dim)
    for (p, _), ts in zip(profiles, toolsets):
        p.toolset = tuple(int(t) for t in ts)
        reg.insert(p)
    return reg

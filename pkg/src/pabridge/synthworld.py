"""Synthetic universe: clustered users and starters on the unit sphere, a
Zipf popularity prior over starters, an invertible affine shift that moves
actively-typed queries off the starter manifold, and a logistic click model.

Acts as the embedding provider for the rest of the system: every event
carries its query vector, so no text encoder is involved. Precomputed
embeddings can also be loaded from the PABE binary format.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DOMAIN_ACTIVE = "active"
DOMAIN_STARTER = "starter"

# Geometry constants: pull of the shared "generic" direction on intent
# centroids, and within-cluster spread for starters/users.
SHARED_PULL = 0.6
CLUSTER_SIGMA = 0.45

# Exposure skew of the logging policy: starter events are drawn with
# probability proportional to popularity * exp(AFFINITY_SLOPE * <u, s>).
AFFINITY_SLOPE = 2.0

MAX_SHIFT_CONDITION = 50.0

EMBED_MAGIC = b"PABE"
EMBED_VERSION = 1


class ConfigError(ValueError):
    """A world configuration violates its invariants."""


class FormatError(ValueError):
    """A binary/event file is malformed."""


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible generator for (seed, name)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    child = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, child]))


@dataclass
class WorldConfig:
    n_users: int = 200
    n_starters: int = 1000
    embed_dim: int = 16
    n_intents: int = 12
    zipf_exponent: float = 1.0
    shift_scale: float = 1.0
    active_noise_sigma: float = 0.15
    p_active: float = 0.3
    seed: int = 0
    # logistic click model p = sigmoid(slope * <u, q> + offset)
    click_slope: float = 4.0
    click_offset: float = -1.0

    def validate(self) -> None:
        if min(self.n_users, self.n_starters, self.embed_dim, self.n_intents) <= 0:
            raise ConfigError("counts and dims must be positive")
        if self.n_intents > self.n_starters:
            raise ConfigError("n_intents must not exceed n_starters")
        if not 0.0 <= self.p_active <= 1.0:
            raise ConfigError("p_active must lie in [0, 1]")
        if self.zipf_exponent < 0 or self.shift_scale < 0 or self.active_noise_sigma < 0:
            raise ConfigError("zipf_exponent, shift_scale, active_noise_sigma must be >= 0")


@dataclass
class InteractionEvent:
    user_id: int
    query_embedding: np.ndarray
    domain: str
    starter_id: int | None
    label: int
    timestamp: int

    def __post_init__(self):
        if self.domain == DOMAIN_ACTIVE:
            if self.label != 1:
                raise ConfigError("active events are expressed positives (label=1)")
            if self.starter_id is not None:
                raise ConfigError("active events carry no starter_id")
        elif self.domain == DOMAIN_STARTER:
            if self.starter_id is None or self.starter_id < 0:
                raise ConfigError("starter events need a valid starter_id")
        else:
            raise ConfigError(f"unknown domain {self.domain!r}")


@dataclass
class SyntheticWorld:
    config: WorldConfig
    user_intents: np.ndarray  # n_users x d, unit rows
    starter_embeddings: np.ndarray  # n_starters x d, unit rows
    popularity: np.ndarray  # n_starters, sums to 1
    shift_matrix: np.ndarray  # d x d
    shift_offset: np.ndarray  # d
    intent_of_starter: np.ndarray  # n_starters, centroid index
    _exposure_cdf: np.ndarray | None = field(default=None, repr=False)

    def shift(self, z: np.ndarray) -> np.ndarray:
        """Apply the active-domain affine map row-wise."""
        return z @ self.shift_matrix.T + self.shift_offset

    def click_probability(self, user_ids: np.ndarray, starter_ids: np.ndarray) -> np.ndarray:
        dots = np.einsum(
            "ij,ij->i",
            self.user_intents[user_ids],
            self.starter_embeddings[starter_ids],
        )
        return _sigmoid(self.config.click_slope * dots + self.config.click_offset)

    def exposure_cdf(self) -> np.ndarray:
        """Per-user CDF over starters for the offline logging policy."""
        if self._exposure_cdf is None:
            logits = AFFINITY_SLOPE * (self.user_intents @ self.starter_embeddings.T)
            w = np.exp(logits - logits.max(axis=1, keepdims=True)) * self.popularity
            w /= w.sum(axis=1, keepdims=True)
            self._exposure_cdf = np.cumsum(w, axis=1)
        return self._exposure_cdf


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-exponent)
    return w / w.sum()


def generate_world(config: WorldConfig) -> SyntheticWorld:
    """Deterministic world from config.seed; starter index order is the
    popularity rank (index 0 most popular)."""
    config.validate()
    d = config.embed_dim
    scale = 1.0 / np.sqrt(d)

    rng_geo = named_stream(config.seed, "world.geometry")
    shared_dir = rng_geo.normal(size=d)
    shared_dir /= max(np.linalg.norm(shared_dir), 1e-12)
    centroids = _unit_rows(
        SHARED_PULL * shared_dir + rng_geo.normal(0.0, scale, size=(config.n_intents, d))
    )

    intent_of_starter = np.arange(config.n_starters) % config.n_intents
    starters = _unit_rows(
        centroids[intent_of_starter]
        + CLUSTER_SIGMA * rng_geo.normal(0.0, scale, size=(config.n_starters, d))
    )

    rng_users = named_stream(config.seed, "world.users")
    user_intent_idx = rng_users.integers(0, config.n_intents, size=config.n_users)
    intents = _unit_rows(
        centroids[user_intent_idx]
        + CLUSTER_SIGMA * rng_users.normal(0.0, scale, size=(config.n_users, d))
    )

    popularity = zipf_weights(config.n_starters, config.zipf_exponent)

    rng_shift = named_stream(config.seed, "world.shift")
    if config.shift_scale == 0.0:
        shift_matrix = np.eye(d)
        shift_offset = np.zeros(d)
    else:
        while True:
            r = rng_shift.normal(0.0, scale, size=(d, d))
            shift_matrix = np.eye(d) + config.shift_scale * r
            if np.linalg.cond(shift_matrix) <= MAX_SHIFT_CONDITION:
                break
        shift_offset = config.shift_scale * rng_shift.normal(0.0, scale, size=d)

    return SyntheticWorld(
        config=config,
        user_intents=intents,
        starter_embeddings=starters,
        popularity=popularity,
        shift_matrix=shift_matrix,
        shift_offset=shift_offset,
        intent_of_starter=intent_of_starter,
    )


def sample_events(
    world: SyntheticWorld,
    n: int,
    p_active: float | None = None,
    rng: np.random.Generator | None = None,
    start_ts: int = 0,
) -> list[InteractionEvent]:
    """Draw n logged events from the offline logging policy.

    Active events: query = shift(intent + gaussian noise), label 1.
    Starter events: starter ~ popularity x affinity, label from the click model.
    """
    if n <= 0:
        raise ConfigError("n must be positive")
    cfg = world.config
    if p_active is None:
        p_active = cfg.p_active
    if rng is None:
        rng = named_stream(cfg.seed, "events")

    users = rng.integers(0, cfg.n_users, size=n)
    is_active = rng.random(n) < p_active
    noise = rng.normal(0.0, 1.0, size=(n, cfg.embed_dim))

    active_embeds = world.shift(
        world.user_intents[users] + cfg.active_noise_sigma * noise / np.sqrt(cfg.embed_dim)
    )

    cdf = world.exposure_cdf()
    starter_ids = np.empty(n, dtype=np.int64)
    u_draws = rng.random(n)
    for uid in np.unique(users):
        rows = np.nonzero(users == uid)[0]
        starter_ids[rows] = np.searchsorted(cdf[uid], u_draws[rows])
    starter_ids = np.minimum(starter_ids, cfg.n_starters - 1)

    p_click = world.click_probability(users, starter_ids)
    clicks = (rng.random(n) < p_click).astype(np.int64)

    events = []
    for i in range(n):
        if is_active[i]:
            events.append(
                InteractionEvent(
                    user_id=int(users[i]),
                    query_embedding=active_embeds[i],
                    domain=DOMAIN_ACTIVE,
                    starter_id=None,
                    label=1,
                    timestamp=start_ts + i,
                )
            )
        else:
            sid = int(starter_ids[i])
            events.append(
                InteractionEvent(
                    user_id=int(users[i]),
                    query_embedding=world.starter_embeddings[sid],
                    domain=DOMAIN_STARTER,
                    starter_id=sid,
                    label=int(clicks[i]),
                    timestamp=start_ts + i,
                )
            )
    return events


def embed(event: InteractionEvent) -> np.ndarray:
    """1 x d view of the event's stored query embedding (pure lookup)."""
    return np.asarray(event.query_embedding, dtype=np.float64).reshape(1, -1)


def embed_batch(events: list[InteractionEvent]) -> np.ndarray:
    return np.stack([np.asarray(e.query_embedding, dtype=np.float64) for e in events])


def write_event_log(path: str | Path, events: list[InteractionEvent]) -> None:
    """Newline-delimited JSON, one event per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            record = {
                "user_id": e.user_id,
                "domain": e.domain,
                "starter_id": e.starter_id,
                "label": e.label,
                "ts": e.timestamp,
                "embedding": [float(v) for v in np.asarray(e.query_embedding)],
            }
            fh.write(json.dumps(record) + "\n")


def read_event_log(path: str | Path) -> list[InteractionEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                events.append(
                    InteractionEvent(
                        user_id=int(rec["user_id"]),
                        query_embedding=np.asarray(rec["embedding"], dtype=np.float64),
                        domain=rec["domain"],
                        starter_id=rec["starter_id"],
                        label=int(rec["label"]),
                        timestamp=int(rec["ts"]),
                    )
                )
            except (KeyError, json.JSONDecodeError) as exc:
                raise FormatError(f"{path}:{line_no}: bad event record: {exc}") from exc
    return events


def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    """PABE binary: magic, u32 version, u32 dim, u64 count, float32 rows (LE)."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise FormatError("embedding matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<IIQ", EMBED_VERSION, m.shape[1], m.shape[0]))
        fh.write(m.tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:4] != EMBED_MAGIC:
        raise FormatError(f"{path}: not a PABE embedding file")
    version, dim, count = struct.unpack("<IIQ", blob[4:20])
    if version != EMBED_VERSION:
        raise FormatError(f"{path}: unsupported PABE version {version}")
    expected = 20 + 4 * dim * count
    if len(blob) != expected:
        raise FormatError(f"{path}: truncated (got {len(blob)} bytes, want {expected})")
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(count, dim)
    return data.astype(np.float64)

"""Synthetic untrimmed-video timelines and the curriculum clip samplers.

A timeline is a long "video" made of shots: every clip observation is the
sum of a topic latent (shared by all videos of a topic), a per-shot latent,
a slow within-video drift, and observation noise.  That construction makes
the hierarchy literal: clips close in time share their shot latent (visually
consistent), while any two clips of a video share only the topic latent
(topically consistent).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import Rng, as_f64

# Floor on the visual-distance bound so a zero cap still defines a valid
# "same center, independent augmentation" pair.
CENTER_EPS = 1e-6


@dataclass
class Timeline:
    """One synthetic untrimmed video."""

    id: int
    duration: float
    topic_id: int
    shot_boundaries: np.ndarray  # ascending times strictly inside (0, duration)
    shot_latents: np.ndarray     # (n_shots, d_feat), n_shots == len(boundaries) + 1
    topic_latent: np.ndarray     # (d_feat,)

    def __post_init__(self):
        self.shot_boundaries = as_f64(self.shot_boundaries)
        self.shot_latents = as_f64(self.shot_latents)
        self.topic_latent = as_f64(self.topic_latent)
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        b = self.shot_boundaries
        if b.size and (np.any(b <= 0) or np.any(b >= self.duration) or np.any(np.diff(b) <= 0)):
            raise ValueError("shot boundaries must be strictly ascending inside (0, duration)")
        if self.shot_latents.shape[0] != b.size + 1:
            raise ValueError("need exactly one shot latent per shot")

    @property
    def n_shots(self) -> int:
        return self.shot_latents.shape[0]

    def shot_index(self, t: float) -> int:
        return int(np.searchsorted(self.shot_boundaries, t, side="right"))


@dataclass(frozen=True)
class Clip:
    timeline_id: int
    center: float
    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("clip length must be positive")


@dataclass(frozen=True)
class SamplerSchedule:
    """Curriculum state: epoch position plus the distance caps it scales."""

    alpha: int
    alpha_max: int
    delta_cap: float = 1.0
    topical_cap: float = math.inf
    gs_visual: bool = True
    gs_topical: bool = True

    def __post_init__(self):
        if not 0 <= self.alpha <= self.alpha_max:
            raise ValueError("alpha must lie in [0, alpha_max]")
        if self.delta_cap < 0:
            raise ValueError("delta cap must be nonnegative")
        if self.topical_cap < self.delta_cap:
            raise ValueError("topical cap must be at least the visual cap")


@dataclass
class ClipTriple:
    """The three clips observed for one video in a batch: a visually
    consistent pair plus a topical clip from farther away."""

    vi: Clip
    vj: Clip
    vk: Clip
    xi: np.ndarray
    xj: np.ndarray
    xk: np.ndarray

    def __post_init__(self):
        ids = {self.vi.timeline_id, self.vj.timeline_id, self.vk.timeline_id}
        if len(ids) != 1:
            raise ValueError("all three clips must come from one timeline")


def gradual_delta(sched: SamplerSchedule) -> float:
    """Active maximum visual-pair distance: grows linearly with epoch when
    gradual sampling is on, otherwise stays at the cap."""
    if sched.alpha_max == 0:
        raise ValueError("degenerate schedule: alpha_max is zero")
    if not sched.gs_visual:
        return sched.delta_cap
    return (sched.alpha / sched.alpha_max) * sched.delta_cap


def gradual_topical_cap(sched: SamplerSchedule, duration: float | None = None) -> float:
    """Active topical-clip distance bound, scaled the same way as the
    visual bound.  An infinite cap means the whole video, so under gradual
    sampling it ramps over the timeline duration (which must be supplied)."""
    if sched.alpha_max == 0:
        raise ValueError("degenerate schedule: alpha_max is zero")
    cap = sched.topical_cap
    if math.isinf(cap) and duration is not None:
        cap = duration
    if not sched.gs_topical:
        return cap
    if math.isinf(cap):
        raise ValueError("infinite topical cap needs a duration to ramp over")
    return (sched.alpha / sched.alpha_max) * cap


def temporal_distance(a: Clip, b: Clip) -> float:
    if a.timeline_id != b.timeline_id:
        raise ValueError("cross-video distance is undefined")
    return abs(a.center - b.center)


def _center_range(t: Timeline, length: float) -> tuple[float, float]:
    half = length / 2.0
    lo, hi = half, t.duration - half
    if hi < lo:
        raise ValueError("clip length exceeds timeline duration")
    return lo, hi


def sample_visual_pair(
    t: Timeline, sched: SamplerSchedule, rng: Rng, clip_length: float
) -> tuple[Clip, Clip]:
    """Sample a visually consistent pair.

    The gap |c_i - c_j| is uniform on [0, active bound); the pair placement
    is uniform over the centers that keep both clips inside the timeline.
    At a zero bound the two centers coincide exactly (the pair differs only
    by augmentation downstream).
    """
    lo, hi = _center_range(t, clip_length)
    span = hi - lo
    delta = gradual_delta(sched)
    bound = min(delta, span)
    if bound <= 0.0:
        c = lo + rng.uniform() * span
        return Clip(t.id, c, clip_length), Clip(t.id, c, clip_length)
    gap = rng.uniform(0.0, bound)
    first = lo + rng.uniform() * (span - gap)
    if rng.uniform() < 0.5:
        ci, cj = first, first + gap
    else:
        ci, cj = first + gap, first
    return Clip(t.id, ci, clip_length), Clip(t.id, cj, clip_length)


def sample_topical_clip(
    t: Timeline, anchor: Clip, sched: SamplerSchedule, rng: Rng
) -> Clip:
    """Sample a topical clip uniformly over valid centers within the active
    topical bound of the anchor; an infinite bound means the whole video."""
    if anchor.timeline_id != t.id:
        raise ValueError("anchor clip does not belong to this timeline")
    lo, hi = _center_range(t, anchor.length)
    cap = gradual_topical_cap(sched, duration=t.duration)
    if cap >= t.duration:
        c = lo + rng.uniform() * (hi - lo)
        return Clip(t.id, c, anchor.length)
    wlo = max(lo, anchor.center - cap)
    whi = min(hi, anchor.center + cap)
    if whi <= wlo:
        return Clip(t.id, anchor.center, anchor.length)
    c = wlo + rng.uniform() * (whi - wlo)
    return Clip(t.id, c, anchor.length)


def _drift_axis(t: Timeline) -> np.ndarray:
    # Deterministic unit direction reconstructible from stored fields.
    v = np.roll(t.topic_latent, 1)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ValueError("degenerate topic latent")
    return v / n


def observe_features(
    t: Timeline,
    clip: Clip,
    rng: Rng,
    drift_rate: float = 0.02,
    noise_std: float = 0.1,
) -> np.ndarray:
    """Observed feature vector of a clip: topic latent + active shot latent
    + slow linear drift along a per-timeline axis + isotropic noise."""
    if clip.timeline_id != t.id:
        raise ValueError("clip does not belong to this timeline")
    shot = t.shot_latents[t.shot_index(clip.center)]
    x = t.topic_latent + shot
    if drift_rate != 0.0:
        x = x + drift_rate * (clip.center - t.duration / 2.0) * _drift_axis(t)
    if noise_std > 0.0:
        x = x + noise_std * rng.normal(size=x.shape)
    return x


@dataclass(frozen=True)
class CorpusConfig:
    """Knobs of the synthetic corpus generator."""

    n_videos: int = 64
    k_topics: int = 8
    d_feat: int = 16
    duration: float = 60.0
    shots_min: int = 4
    shots_max: int = 8
    min_shot_len: float = 3.0
    topic_scale: float = 2.0
    shot_scale: float = 1.5
    drift_rate: float = 0.02
    noise_std: float = 0.1
    theta_min: float = math.pi / 3  # minimum pairwise angle between topics
    # Shots of a topic cluster around shared appearance modes (0 = fully
    # independent shot latents).  Mode vectors are zero-mean within each
    # topic, so a video's average feature carries little mode content:
    # relating a topic's unlike-looking modes requires cross-shot
    # association, not averaging.
    modes_per_topic: int = 0
    mode_frac: float = 0.7  # fraction of shot variance carried by the mode

    def __post_init__(self):
        if self.n_videos < self.k_topics or self.k_topics < 2:
            raise ValueError("need n_videos >= k_topics >= 2")
        if not 1 <= self.shots_min <= self.shots_max:
            raise ValueError("invalid shot count range")
        if self.shots_max * self.min_shot_len > self.duration:
            raise ValueError("shots do not fit in the duration")

    def trimmed(
        self, shot_scale: float | None = None, noise_std: float | None = None
    ) -> "CorpusConfig":
        """Short single-shot variant: every clip pair is visually consistent.

        A trimmed clip is the topic-expressive segment of a longer video, so
        its residual per-video variation defaults to a fraction of the
        untrimmed shot scale.
        """
        return replace(
            self,
            duration=8.0,
            shots_min=1,
            shots_max=1,
            min_shot_len=1.0,
            shot_scale=0.3 * self.shot_scale if shot_scale is None else shot_scale,
            noise_std=self.noise_std if noise_std is None else noise_std,
        )


@dataclass
class Corpus:
    d_feat: int
    k_topics: int
    drift_rate: float
    noise_std: float
    timelines: list[Timeline] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.timelines)

    def observe(self, clip: Clip, rng: Rng) -> np.ndarray:
        t = self.timelines[clip.timeline_id]
        return observe_features(t, clip, rng, self.drift_rate, self.noise_std)


def _separated_topic_latents(cfg: CorpusConfig, rng: Rng) -> np.ndarray:
    max_tries = 1000
    cos_cap = math.cos(cfg.theta_min)
    for _ in range(max_tries):
        v = rng.normal(size=(cfg.k_topics, cfg.d_feat))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        sims = v @ v.T
        np.fill_diagonal(sims, -1.0)
        if np.max(sims) <= cos_cap:
            return cfg.topic_scale * v
    raise ValueError(
        f"cannot separate {cfg.k_topics} topics by {cfg.theta_min:.3f} rad "
        f"in dimension {cfg.d_feat}"
    )


def _shot_boundaries(cfg: CorpusConfig, n_shots: int, rng: Rng) -> np.ndarray:
    if n_shots == 1:
        return np.empty(0)
    slack = cfg.duration - n_shots * cfg.min_shot_len
    if slack < 0:
        raise ValueError("could not place shot boundaries with the requested spacing")
    # uniform spacings conditioned on the minimum length == floor plus a
    # Dirichlet(1, ..., 1) split of the slack
    e = -np.log(rng.uniform(size=n_shots))
    gaps = cfg.min_shot_len + slack * e / float(np.sum(e))
    return np.cumsum(gaps)[:-1]


def generate_corpus(cfg: CorpusConfig, rng: Rng) -> Corpus:
    """Deterministically generate a corpus from (config, seed)."""
    topics = _separated_topic_latents(cfg, rng.split("topics"))
    modes = None
    if cfg.modes_per_topic > 0:
        mode_rng = rng.split("modes")
        modes = mode_rng.normal(size=(cfg.k_topics, cfg.modes_per_topic, cfg.d_feat))
        if cfg.modes_per_topic > 1:
            modes -= modes.mean(axis=1, keepdims=True)
        modes *= cfg.shot_scale * math.sqrt(cfg.mode_frac / cfg.d_feat)
    timelines = []
    for vid in range(cfg.n_videos):
        rv = rng.split(("timeline", vid))
        topic_id = vid % cfg.k_topics
        n_shots = int(rv.integers(cfg.shots_min, cfg.shots_max + 1))
        boundaries = _shot_boundaries(cfg, n_shots, rv)
        idio = 1.0 if modes is None else math.sqrt(1.0 - cfg.mode_frac)
        latents = idio * cfg.shot_scale / math.sqrt(cfg.d_feat) * rv.normal(
            size=(n_shots, cfg.d_feat)
        )
        if modes is not None:
            picks = rv.integers(0, cfg.modes_per_topic, size=n_shots)
            latents = latents + modes[topic_id, picks]
        timelines.append(
            Timeline(
                id=vid,
                duration=cfg.duration,
                topic_id=topic_id,
                shot_boundaries=boundaries,
                shot_latents=latents,
                topic_latent=topics[topic_id].copy(),
            )
        )
    return Corpus(
        d_feat=cfg.d_feat,
        k_topics=cfg.k_topics,
        drift_rate=cfg.drift_rate,
        noise_std=cfg.noise_std,
        timelines=timelines,
    )


CORPUS_FORMAT = "hico-corpus-v1"


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "format": CORPUS_FORMAT,
        "d_feat": corpus.d_feat,
        "k_topics": corpus.k_topics,
        "drift_rate": corpus.drift_rate,
        "noise_std": corpus.noise_std,
        "timelines": [
            {
                "id": t.id,
                "duration": t.duration,
                "topic_id": t.topic_id,
                "shot_boundaries": t.shot_boundaries.tolist(),
                "shot_latents": t.shot_latents.tolist(),
                "topic_latent": t.topic_latent.tolist(),
            }
            for t in corpus.timelines
        ],
    }


def corpus_from_dict(data: dict) -> Corpus:
    if data.get("format") != CORPUS_FORMAT:
        raise ValueError(f"unrecognized corpus format: {data.get('format')!r}")
    timelines = [
        Timeline(
            id=int(t["id"]),
            duration=float(t["duration"]),
            topic_id=int(t["topic_id"]),
            shot_boundaries=np.array(t["shot_boundaries"], dtype=np.float64),
            shot_latents=np.array(t["shot_latents"], dtype=np.float64),
            topic_latent=np.array(t["topic_latent"], dtype=np.float64),
        )
        for t in data["timelines"]
    ]
    return Corpus(
        d_feat=int(data["d_feat"]),
        k_topics=int(data["k_topics"]),
        drift_rate=float(data["drift_rate"]),
        noise_std=float(data["noise_std"]),
        timelines=timelines,
    )


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w") as fh:
        json.dump(corpus_to_dict(corpus), fh, indent=1)
        fh.write("\n")


def load_corpus(path) -> Corpus:
    with open(path) as fh:
        return corpus_from_dict(json.load(fh))

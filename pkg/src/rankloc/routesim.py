"""Synthetic cross-domain route world and the episode engine.

One latent appearance per viewpoint is shared by three domains (landmark,
train, test); each domain observes ``rotate(gain * latent) + noise``.
Feature-poor segments have their latent variance scaled down so that views
there carry little place-specific information.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .features import FeatureCollection, load_features, save_collection


@dataclass
class DomainTransform:
    gain: float = 1.0
    noise: float = 0.0
    angle: float = 0.0


def _default_domains():
    return {
        "landmark": DomainTransform(1.0, 1.5, 0.3),
        "train": DomainTransform(1.0, 1.5, 0.0),
        "test": DomainTransform(0.9, 1.5, 0.15),
    }


@dataclass
class WorldParams:
    n_viewpoints: int = 200
    spacing: float = 1.0
    dim: int = 64
    corr_length: float = 2.0        # meters; latent smoothing along the route
    poor_fraction: float = 0.3      # share of the route that is feature-poor
    poor_variance: float = 0.05
    segment_length: int = 10        # viewpoints per salience block
    domains: Dict[str, DomainTransform] = field(default_factory=_default_domains)

    def set(self, key: str, value: str) -> None:
        """Assign one ``key=value`` setting; domain keys look like ``test_noise``."""
        if "_" in key and key.split("_", 1)[0] in self.domains:
            dom, attr = key.split("_", 1)
            if attr not in ("gain", "noise", "angle"):
                raise KeyError(f"unknown world parameter {key!r}")
            setattr(self.domains[dom], attr, float(value))
            return
        types = {f.name: f.type for f in dataclasses.fields(self) if f.name != "domains"}
        if key not in types:
            raise KeyError(f"unknown world parameter {key!r}")
        cast = int if types[key] in (int, "int") else float
        setattr(self, key, cast(value))

    def items(self):
        for f in dataclasses.fields(self):
            if f.name != "domains":
                yield f.name, getattr(self, f.name)
        for dom, tr in self.domains.items():
            for attr in ("gain", "noise", "angle"):
                yield f"{dom}_{attr}", getattr(tr, attr)

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.items())


def parse_config(text: str, params: WorldParams | None = None) -> WorldParams:
    params = params or WorldParams()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        params.set(key, value)
    return params


def rotate(features: np.ndarray, angle: float) -> np.ndarray:
    """Rotate consecutive coordinate pairs by ``angle`` radians."""
    if angle == 0:
        return features
    out = features.copy()
    c, s = np.cos(angle), np.sin(angle)
    even = features[:, 0:-1:2]
    odd = features[:, 1::2]
    out[:, 0:-1:2] = c * even - s * odd
    out[:, 1::2] = s * even + c * odd
    return out


@dataclass
class RouteWorld:
    params: WorldParams
    latent: np.ndarray
    feature_poor: np.ndarray
    collections: Dict[str, FeatureCollection]

    @property
    def arclengths(self) -> np.ndarray:
        return np.arange(self.params.n_viewpoints) * self.params.spacing

    def __getitem__(self, domain) -> FeatureCollection:
        return self.collections[domain]


def generate(seed: int, params: WorldParams | None = None) -> RouteWorld:
    """Deterministically build the three domain collections for ``seed``."""
    params = params or WorldParams()
    n, d = params.n_viewpoints, params.dim
    ss = np.random.SeedSequence(seed)
    latent_ss, mask_ss, *domain_ss = ss.spawn(2 + len(params.domains))

    latent = np.random.default_rng(latent_ss).standard_normal((n, d))
    width = params.corr_length / params.spacing
    if width > 0:
        latent = gaussian_filter1d(latent, width, axis=0, mode="nearest")
        latent /= latent.std(axis=0, keepdims=True)

    poor = np.zeros(n, dtype=bool)
    if params.poor_fraction > 0:
        seg = max(1, params.segment_length)
        n_blocks = -(-n // seg)
        n_poor = int(round(params.poor_fraction * n_blocks))
        blocks = np.random.default_rng(mask_ss).choice(n_blocks, n_poor, replace=False)
        for b in blocks:
            poor[b * seg:(b + 1) * seg] = True
        latent[poor] *= np.sqrt(params.poor_variance)

    arcs = np.arange(n) * params.spacing
    collections = {}
    for (name, tr), dss in zip(params.domains.items(), domain_ss):
        obs = rotate(tr.gain * latent, tr.angle)
        if tr.noise > 0:
            obs = obs + tr.noise * np.random.default_rng(dss).standard_normal((n, d))
        collections[name] = FeatureCollection(obs.astype(np.float32), arcs, name)
    return RouteWorld(params, latent, poor, collections)


def write_world(world: RouteWorld, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, coll in world.collections.items():
        save_collection(coll, out / f"{name}.fvec", out / f"{name}.csv")
    (out / "world.cfg").write_text(world.params.to_text())
    lines = ["image_id,feature_poor\n"]
    lines += [f"{i},{int(p)}\n" for i, p in enumerate(world.feature_poor)]
    (out / "salience.csv").write_text("".join(lines))


def load_domain(world_dir, domain: str) -> FeatureCollection:
    root = Path(world_dir)
    return load_features(root / f"{domain}.fvec", root / f"{domain}.csv")


# -- episode engine -----------------------------------------------------------

@dataclass
class EpisodeState:
    true_position: float
    step: int = 0
    particles: object = None
    cumulative_reward: float = 0.0


class RouteEnv:
    """Moves an agent forward along the route and serves test-domain views."""

    def __init__(self, test: FeatureCollection):
        self.test = test
        self.arclengths = np.asarray(test.arclengths)
        self.start = float(self.arclengths[0])
        self.end = float(self.arclengths[-1])
        self._edges = 0.5 * (self.arclengths[1:] + self.arclengths[:-1])

    @property
    def n_viewpoints(self) -> int:
        return len(self.arclengths)

    def viewpoint(self, position: float) -> int:
        return int(np.searchsorted(self._edges, position, side="left"))

    def observe(self, position: float):
        """``(viewpoint_id, feature)`` of the test image nearest ``position``."""
        vp = self.viewpoint(position)
        return vp, self.test.features[vp]

    def step(self, state: EpisodeState, action: float):
        pos = float(np.clip(state.true_position + action, self.start, self.end))
        new = dataclasses.replace(state, true_position=pos, step=state.step + 1)
        return self.observe(pos)[1], new

"""Synthetic driving scenes: latent factors, a rule-based label oracle,
feature rendering, feature-space augmentations and dataset files.

A scene becomes a variable-length set of region vectors plus one global
vector. Each entity region is ``[type one-hot (8) | attribute one-hot (8) |
zero pad]`` plus Gaussian jitter, scaled by the scene illumination. The
attribute slots are shared between entity types, so the mean over regions
cannot tell which entity carries which attribute.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .nn import Rng

__all__ = [
    "ACTIONS",
    "EXPLANATIONS",
    "LIGHTS",
    "OBSTACLES",
    "LANE_STATES",
    "TURNING",
    "PERTURBATION_FAMILIES",
    "DatasetError",
    "LatentScene",
    "SceneSample",
    "GeneratorConfig",
    "PerturbationSpec",
    "sample_scene",
    "label_oracle",
    "render_features",
    "build_global",
    "generate_scenes",
    "generate_dataset",
    "perturb",
    "random_perturbation",
    "perturb_heavy",
    "feature_stats",
    "corrupt",
    "write_dataset",
    "read_dataset",
    "split_samples",
]

ACTIONS = ("forward", "stop", "left", "right")
EXPLANATIONS = (
    "follow_traffic",
    "road_clear",
    "green_light",
    "obstacles",
    "red_light",
    "traffic_sign",
    "front_car_turn_left",
    "on_left_turn_lane",
    "left_traffic_allows",
    "obstacles_on_left",
    "no_lane_on_left",
    "solid_lane_on_left",
    "front_car_turn_right",
    "on_right_turn_lane",
    "right_traffic_allows",
    "obstacles_on_right",
    "no_lane_on_right",
    "solid_lane_on_right",
    # the target schema has 21 outputs but names only 18; these stay 0
    "reserved_18",
    "reserved_19",
    "reserved_20",
)

LIGHTS = ("none", "green", "red")
OBSTACLES = ("none", "pedestrian", "car", "rider")
LANE_STATES = ("open_turn_lane", "clear", "no_lane", "solid_line", "obstacle")
TURNING = ("none", "left", "right")
PERTURBATION_FAMILIES = ("brightness", "contrast", "channel_scale", "noise", "normalize")

# entity types -> one-hot slot in the type block
_T_LIGHT, _T_OBSTACLE, _T_SIGN, _T_LEAD, _T_LEFT, _T_RIGHT, _T_TURNING, _T_DISTRACTOR = range(8)
_TYPE_DIMS = 8
_ATTR_DIMS = 8
_MARKER_ATTR = {"open_turn_lane": 0, "no_lane": 1, "solid_line": 2, "obstacle": 3}

BRIGHTNESS_RANGE = (-0.2, 0.2)
CONTRAST_RANGE = (0.8, 1.25)
CHANNEL_SCALE_MAX = 0.1
NOISE_SIGMA_MAX = 0.05


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LatentScene:
    light: str = "none"
    front_obstacle: str = "none"
    stop_sign: bool = False
    lead_vehicle: bool = False
    left_state: str = "clear"
    right_state: str = "clear"
    front_car_turning: str = "none"
    illumination: float = 1.0
    n_distractors: int = 0

    def __post_init__(self):
        for name, domain in (
            ("light", LIGHTS),
            ("front_obstacle", OBSTACLES),
            ("left_state", LANE_STATES),
            ("right_state", LANE_STATES),
            ("front_car_turning", TURNING),
        ):
            if getattr(self, name) not in domain:
                raise ValueError(f"{name}={getattr(self, name)!r} not in {domain}")
        if not 0.2 <= self.illumination <= 1.0:
            raise ValueError("illumination must lie in [0.2, 1.0]")
        if not 0 <= self.n_distractors <= 6:
            raise ValueError("n_distractors must lie in [0, 6]")


@dataclass(eq=False)
class SceneSample:
    """One rendered scene.

    ``causal_regions`` maps label names to the index of the region that
    caused the label; index ``len(regions)`` denotes the global slot and is
    used for labels with no causing entity (e.g. road_clear).
    """

    id: int
    regions: np.ndarray
    global_features: np.ndarray
    actions: np.ndarray
    explanations: np.ndarray
    causal_regions: dict[str, int] = field(default_factory=dict)
    split: str = "train"
    corrupted: bool = False

    @property
    def n_regions(self) -> int:
        return self.regions.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneSample):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and self.corrupted == other.corrupted
            and self.causal_regions == other.causal_regions
            and np.array_equal(self.regions, other.regions)
            and np.array_equal(self.global_features, other.global_features)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.explanations, other.explanations)
        )


def _default_priors():
    return {
        "light": {"none": 0.35, "green": 0.35, "red": 0.30},
        "front_obstacle": {"none": 0.76, "pedestrian": 0.09, "car": 0.09, "rider": 0.06},
        "stop_sign": 0.10,
        "lead_vehicle": 0.50,
        "left_state": {"open_turn_lane": 0.15, "clear": 0.25, "no_lane": 0.20,
                       "solid_line": 0.20, "obstacle": 0.20},
        "right_state": {"open_turn_lane": 0.15, "clear": 0.25, "no_lane": 0.20,
                        "solid_line": 0.20, "obstacle": 0.20},
        "front_car_turning": {"none": 0.80, "left": 0.10, "right": 0.10},
    }


_CATEGORICAL = {
    "light": LIGHTS,
    "front_obstacle": OBSTACLES,
    "left_state": LANE_STATES,
    "right_state": LANE_STATES,
    "front_car_turning": TURNING,
}


@dataclass
class GeneratorConfig:
    seed: int = 7
    region_feature_dim: int = 16
    jitter: float = 0.05
    n_train: int = 4000
    n_val: int = 560
    n_test: int = 1120
    illumination_min: float = 0.2
    illumination_max: float = 1.0
    max_distractors: int = 6
    priors: dict = field(default_factory=_default_priors)

    def validate(self) -> "GeneratorConfig":
        if self.region_feature_dim < _TYPE_DIMS + _ATTR_DIMS:
            raise ValueError("region_feature_dim must be at least 16")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be >= 0")
        if not 0.2 <= self.illumination_min <= self.illumination_max <= 1.0:
            raise ValueError("illumination range must lie inside [0.2, 1.0]")
        if not 0 <= self.max_distractors <= 6:
            raise ValueError("max_distractors must lie in [0, 6]")
        for key, domain in _CATEGORICAL.items():
            table = self.priors[key]
            if set(table) - set(domain):
                raise ValueError(f"prior {key}: unknown categories {set(table) - set(domain)}")
            probs = np.array([table.get(c, 0.0) for c in domain], dtype=np.float64)
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError(f"prior {key} must be nonnegative and sum to 1")
        for key in ("stop_sign", "lead_vehicle"):
            if not 0.0 <= self.priors[key] <= 1.0:
                raise ValueError(f"prior {key} must be a probability")
        return self

    def to_flat(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "priors"}
        for key, value in self.priors.items():
            if isinstance(value, dict):
                for cat, p in value.items():
                    out[f"prior.{key}.{cat}"] = p
            else:
                out[f"prior.{key}"] = value
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "GeneratorConfig":
        names = {f.name for f in fields(cls)} - {"priors"}
        kwargs, priors = {}, _default_priors()
        touched = set()
        for key, value in flat.items():
            if key.startswith("prior."):
                parts = key.split(".")
                if len(parts) == 2 and parts[1] in ("stop_sign", "lead_vehicle"):
                    priors[parts[1]] = float(value)
                elif len(parts) == 3 and parts[1] in _CATEGORICAL:
                    if parts[1] not in touched:
                        priors[parts[1]] = {}
                        touched.add(parts[1])
                    priors[parts[1]][parts[2]] = float(value)
                else:
                    raise ValueError(f"unknown prior key {key!r}")
            elif key in names:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown generator config key {key!r}")
        return cls(priors=priors, **kwargs).validate()

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        return cls.from_flat(json.loads(Path(path).read_text()))


def sample_scene(rng: np.random.Generator, config: GeneratorConfig) -> LatentScene:
    pri = config.priors

    def pick(key):
        domain = _CATEGORICAL[key]
        probs = np.array([pri[key].get(c, 0.0) for c in domain])
        return domain[int(rng.choice(len(domain), p=probs))]

    light = pick("light")
    obstacle = pick("front_obstacle")
    sign = bool(rng.random() < pri["stop_sign"])
    lead = bool(rng.random() < pri["lead_vehicle"])
    left = pick("left_state")
    right = pick("right_state")
    turning = pick("front_car_turning")
    illum = float(rng.uniform(config.illumination_min, config.illumination_max))
    n_dis = int(rng.integers(0, config.max_distractors + 1))
    return LatentScene(light, obstacle, sign, lead, left, right, turning, illum, n_dis)


def label_oracle(scene: LatentScene) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (actions[4], explanations[21]) bits for a latent scene."""
    red = scene.light == "red"
    green = scene.light == "green"
    obstacle = scene.front_obstacle != "none"
    stop = red or obstacle or scene.stop_sign
    forward = not stop
    left_ok = scene.left_state in ("open_turn_lane", "clear")
    right_ok = scene.right_state in ("open_turn_lane", "clear")
    left = (left_ok and not red) or (scene.front_car_turning == "left" and left_ok)
    right = (right_ok and not red) or (scene.front_car_turning == "right" and right_ok)

    actions = np.array([forward, stop, left, right], dtype=np.int8)
    expl = np.zeros(len(EXPLANATIONS), dtype=np.int8)
    expl[0] = forward and scene.lead_vehicle
    expl[1] = forward and not scene.lead_vehicle
    expl[2] = green
    expl[3] = obstacle
    expl[4] = red
    expl[5] = scene.stop_sign
    for base, side, ok, state in (
        (6, "left", left, scene.left_state),
        (12, "right", right, scene.right_state),
    ):
        expl[base] = scene.front_car_turning == side
        expl[base + 1] = state == "open_turn_lane"
        expl[base + 2] = ok and green
        expl[base + 3] = state == "obstacle"
        expl[base + 4] = state == "no_lane"
        expl[base + 5] = state == "solid_line"
    return actions, expl


def _entities(scene: LatentScene):
    """(key, type, attribute) for every active entity, in canonical order."""
    out = []
    if scene.light != "none":
        out.append(("light", _T_LIGHT, LIGHTS.index(scene.light) - 1))
    if scene.front_obstacle != "none":
        out.append(("obstacle", _T_OBSTACLE, OBSTACLES.index(scene.front_obstacle) - 1))
    if scene.stop_sign:
        out.append(("sign", _T_SIGN, 0))
    if scene.lead_vehicle:
        out.append(("lead", _T_LEAD, 0))
    if scene.left_state != "clear":
        out.append(("left_marker", _T_LEFT, _MARKER_ATTR[scene.left_state]))
    if scene.right_state != "clear":
        out.append(("right_marker", _T_RIGHT, _MARKER_ATTR[scene.right_state]))
    if scene.front_car_turning != "none":
        out.append(("turning_car", _T_TURNING, TURNING.index(scene.front_car_turning) - 1))
    return out


def _causes(scene: LatentScene, actions, expl) -> dict[str, str]:
    """Label name -> entity key (or "global") for every positive bit."""
    red = scene.light == "red"
    causes = {}
    if actions[1]:
        # several causes can force a stop at once; record the one whose region
        # type alone decides it (obstacle, sign) before the state-dependent light
        if scene.front_obstacle != "none":
            causes["stop"] = "obstacle"
        elif scene.stop_sign:
            causes["stop"] = "sign"
        else:
            causes["stop"] = "light"
    if actions[0]:
        causes["forward"] = "lead" if scene.lead_vehicle else "global"
    for idx, side, state in ((2, "left", scene.left_state), (3, "right", scene.right_state)):
        if actions[idx]:
            if red:
                causes[side] = "turning_car"
            elif state == "open_turn_lane":
                causes[side] = f"{side}_marker"
            else:
                causes[side] = "global"
    per_bit = {
        "follow_traffic": "lead",
        "road_clear": "global",
        "green_light": "light",
        "obstacles": "obstacle",
        "red_light": "light",
        "traffic_sign": "sign",
        "front_car_turn_left": "turning_car",
        "on_left_turn_lane": "left_marker",
        "left_traffic_allows": "light",
        "obstacles_on_left": "left_marker",
        "no_lane_on_left": "left_marker",
        "solid_lane_on_left": "left_marker",
        "front_car_turn_right": "turning_car",
        "on_right_turn_lane": "right_marker",
        "right_traffic_allows": "light",
        "obstacles_on_right": "right_marker",
        "no_lane_on_right": "right_marker",
        "solid_lane_on_right": "right_marker",
    }
    for i, name in enumerate(EXPLANATIONS):
        if expl[i]:
            causes[name] = per_bit[name]
    return causes


def build_global(regions: np.ndarray, illumination: float) -> np.ndarray:
    """[mean of regions | illumination | region-count features | zero pad]."""
    d = regions.shape[1]
    g = np.zeros(2 * d)
    g[:d] = regions.mean(axis=0)
    g[d] = illumination
    g[d + 1] = regions.shape[0] / 8.0
    g[d + 2] = 1.0 / regions.shape[0]
    return g


def render_features(
    scene: LatentScene,
    rng: np.random.Generator,
    config: GeneratorConfig,
    sample_id: int = 0,
    split: str = "train",
) -> SceneSample:
    d = config.region_feature_dim
    ents = _entities(scene)
    keys = [k for k, _, _ in ents]
    codes = [(t, a) for _, t, a in ents]
    codes += [(_T_DISTRACTOR, i % _ATTR_DIMS) for i in range(scene.n_distractors)]
    keys += ["distractor"] * scene.n_distractors
    if not codes:
        # empty scene still needs one region: a plain background patch
        codes.append((_T_DISTRACTOR, 0))
        keys.append("distractor")

    n = len(codes)
    base = np.zeros((n, d))
    for row, (t, a) in enumerate(codes):
        base[row, t] = 1.0
        base[row, _TYPE_DIMS + a] = 1.0
    jitter = rng.normal(0.0, 1.0, size=(n, d)) * config.jitter
    regions = (base + jitter) * scene.illumination
    global_features = build_global(regions, scene.illumination)

    order = rng.permutation(n)
    regions = regions[order]
    position = {int(old): new for new, old in enumerate(order)}
    slot_of = {key: position[i] for i, key in enumerate(keys) if key != "distractor"}
    slot_of["global"] = n

    actions, expl = label_oracle(scene)
    causal = {name: slot_of[key] for name, key in _causes(scene, actions, expl).items()}
    return SceneSample(
        id=sample_id,
        regions=regions,
        global_features=global_features,
        actions=actions,
        explanations=expl,
        causal_regions=causal,
        split=split,
    )


def _split_of(index: int, config: GeneratorConfig) -> str:
    if index < config.n_train:
        return "train"
    if index < config.n_train + config.n_val:
        return "val"
    return "test"


def generate_scenes(config: GeneratorConfig) -> list[tuple[LatentScene, SceneSample]]:
    config.validate()
    rng = Rng(config.seed)
    total = config.n_train + config.n_val + config.n_test
    out = []
    for i in range(total):
        scene = sample_scene(rng.stream("scene", i), config)
        sample = render_features(scene, rng.stream("render", i), config, i, _split_of(i, config))
        out.append((scene, sample))
    return out


def generate_dataset(config: GeneratorConfig) -> list[SceneSample]:
    return [s for _, s in generate_scenes(config)]


def split_samples(samples, split: str) -> list[SceneSample]:
    return [s for s in samples if s.split == split]


@dataclass(frozen=True)
class PerturbationSpec:
    """A feature-space augmentation.

    ``magnitude`` is the shift (brightness), the contrast factor (contrast),
    the maximum relative per-channel change (channel_scale) or the noise
    standard deviation (noise); it is clamped to the allowed range. Random
    draws come from ``Rng(seed).stream("perturb", family, *stream)``.
    ``stats`` holds (region_mean, region_std, global_mean, global_std) for
    ``normalize``.
    """

    family: str
    magnitude: float = 0.0
    seed: int = 0
    stream: tuple = ()
    stats: tuple | None = None


def _clamp(x, lo, hi):
    return min(max(float(x), lo), hi)


def perturb(sample: SceneSample, spec: PerturbationSpec) -> SceneSample:
    """Apply one augmentation to every feature vector; labels are untouched."""
    r, g = sample.regions, sample.global_features
    fam = spec.family
    if fam == "brightness":
        beta = _clamp(spec.magnitude, *BRIGHTNESS_RANGE)
        r, g = r + beta, g + beta
    elif fam == "contrast":
        gamma = _clamp(spec.magnitude, *CONTRAST_RANGE)
        rm = r.mean(axis=1, keepdims=True)
        gm = g.mean()
        r, g = rm + gamma * (r - rm), gm + gamma * (g - gm)
    elif fam == "channel_scale":
        delta = _clamp(spec.magnitude, 0.0, CHANNEL_SCALE_MAX)
        rng = Rng(spec.seed).stream("perturb", fam, *spec.stream)
        scale = rng.uniform(1.0 - delta, 1.0 + delta, size=g.shape[0])
        r, g = r * scale[: r.shape[1]], g * scale
    elif fam == "noise":
        sigma = _clamp(spec.magnitude, 0.0, NOISE_SIGMA_MAX)
        rng = Rng(spec.seed).stream("perturb", fam, *spec.stream)
        r = r + sigma * rng.normal(size=r.shape)
        g = g + sigma * rng.normal(size=g.shape)
    elif fam == "normalize":
        if spec.stats is None:
            raise ValueError("normalize needs training-split statistics")
        rmean, rstd, gmean, gstd = spec.stats
        r, g = (r - rmean) / rstd, (g - gmean) / gstd
    else:
        raise ValueError(f"unknown perturbation family {fam!r}")
    return replace(sample, regions=r, global_features=g)


def random_perturbation(
    family: str, rng: np.random.Generator, seed: int = 0, stream: tuple = ()
) -> PerturbationSpec:
    """Draw a magnitude for ``family`` uniformly inside its allowed range."""
    if family == "brightness":
        mag = rng.uniform(*BRIGHTNESS_RANGE)
    elif family == "contrast":
        mag = math.exp(rng.uniform(math.log(CONTRAST_RANGE[0]), math.log(CONTRAST_RANGE[1])))
    elif family == "channel_scale":
        mag = CHANNEL_SCALE_MAX
    elif family == "noise":
        mag = NOISE_SIGMA_MAX
    else:
        raise ValueError(f"no random magnitude for family {family!r}")
    return PerturbationSpec(family, float(mag), seed, tuple(stream))


def perturb_heavy(sample: SceneSample, rng: np.random.Generator, seed: int = 0,
                  stream: tuple = ()) -> SceneSample:
    """Stack every augmentation family at its largest allowed magnitude.

    Brightness and contrast directions are drawn from ``rng``. Used to build
    stress-test splits; labels are untouched as with :func:`perturb`.
    """
    up = rng.random(2) < 0.5
    specs = [
        PerturbationSpec("brightness", BRIGHTNESS_RANGE[int(up[0])], seed, tuple(stream)),
        PerturbationSpec("contrast", CONTRAST_RANGE[int(up[1])], seed, tuple(stream)),
        PerturbationSpec("channel_scale", CHANNEL_SCALE_MAX, seed, tuple(stream)),
        PerturbationSpec("noise", NOISE_SIGMA_MAX, seed, tuple(stream)),
    ]
    for spec in specs:
        sample = perturb(sample, spec)
    return sample


def feature_stats(samples) -> tuple:
    """Per-dimension (region_mean, region_std, global_mean, global_std)."""
    regions = np.concatenate([s.regions for s in samples])
    glob = np.stack([s.global_features for s in samples])
    rstd = regions.std(axis=0)
    gstd = glob.std(axis=0)
    return (regions.mean(axis=0), np.where(rstd > 0, rstd, 1.0),
            glob.mean(axis=0), np.where(gstd > 0, gstd, 1.0))


def corrupt(sample: SceneSample, severity: float, rng: np.random.Generator,
            noise_norm: float = 1.0) -> SceneSample:
    """Out-of-distribution probe: swap a fraction of regions for noise and darken.

    Replacement vectors are isotropic Gaussian with expected squared norm
    ``noise_norm**2``, i.e. on the scale of a clean region vector.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError("severity must lie in [0, 1]")
    if noise_norm <= 0.0:
        raise ValueError("noise_norm must be positive")
    if severity == 0.0:
        return replace(sample, regions=sample.regions.copy(),
                       global_features=sample.global_features.copy())
    n, d = sample.regions.shape
    k = int(round(severity * n))
    regions = sample.regions.copy()
    if k:
        idx = rng.choice(n, size=k, replace=False)
        regions[idx] = rng.normal(scale=noise_norm / math.sqrt(d), size=(k, d))
    darken = 1.0 - 0.5 * severity
    regions *= darken
    illum = sample.global_features[d] * darken
    return replace(sample, regions=regions,
                   global_features=build_global(regions, illum), corrupted=True)


_FIELDS = ("id", "regions", "global", "actions", "explanations", "causal_regions",
           "split", "corrupted")


def _record(sample: SceneSample) -> dict:
    return {
        "id": int(sample.id),
        "regions": sample.regions.tolist(),
        "global": sample.global_features.tolist(),
        "actions": sample.actions.astype(int).tolist(),
        "explanations": sample.explanations.astype(int).tolist(),
        "causal_regions": {k: int(v) for k, v in sample.causal_regions.items()},
        "split": sample.split,
        "corrupted": bool(sample.corrupted),
    }


def write_dataset(samples, path) -> None:
    """One JSON object per line; floats use repr so values round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(_record(s), separators=(",", ":")))
            fh.write("\n")


def read_dataset(path, region_feature_dim: int | None = None) -> list[SceneSample]:
    out = []
    dim = region_feature_dim
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"{path}:{lineno}: record is not an object")
            missing = [f for f in _FIELDS if f not in rec]
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            try:
                regions = np.asarray(rec["regions"], dtype=np.float64)
                glob = np.asarray(rec["global"], dtype=np.float64)
                actions = np.asarray(rec["actions"], dtype=np.int8)
                expl = np.asarray(rec["explanations"], dtype=np.int8)
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad array ({exc})") from None
            if regions.ndim != 2 or regions.shape[0] < 1:
                raise DatasetError(f"{path}:{lineno}: regions must be a non-empty 2-D list")
            if dim is None:
                dim = regions.shape[1]
            if regions.shape[1] != dim:
                raise DatasetError(
                    f"{path}:{lineno}: region feature dim {regions.shape[1]}, expected {dim}"
                )
            if glob.shape != (2 * dim,):
                raise DatasetError(
                    f"{path}:{lineno}: global feature dim {glob.shape}, expected {2 * dim}"
                )
            if actions.shape != (len(ACTIONS),) or expl.shape != (len(EXPLANATIONS),):
                raise DatasetError(f"{path}:{lineno}: expected 4 action and 21 explanation bits")
            causal = {str(k): int(v) for k, v in rec["causal_regions"].items()}
            if any(not 0 <= v <= regions.shape[0] for v in causal.values()):
                raise DatasetError(f"{path}:{lineno}: causal region index out of range")
            out.append(SceneSample(int(rec["id"]), regions, glob, actions, expl, causal,
                                   str(rec["split"]), bool(rec["corrupted"])))
    return out

"""Declarative experiment manifests in ``key = value`` INI form."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
from pathlib import Path

from miaudit.attacks import ATTACK_NAMES, AttackParams, get_attack
from miaudit.calibrate import MODES
from miaudit.dataspec import SPLIT_NAMES, DataSpec
from miaudit.errors import ConfigurationError
from miaudit.models import CAPACITY_PRESETS, UNLEARN_METHODS, DPConfig, ModelConfig, TrainConfig

EXTRA_UNLEARN_METHODS = ("exact_retrain", "none")


@dataclasses.dataclass(frozen=True)
class PostTraining:
    kind: str  # finetune | unlearning
    # finetune: the model is pretrained on a separate draw first
    pretrain_per_class_count: int = 100
    pretrain_epochs: int = 20
    # unlearning
    forget_mode: str = "random_fraction"
    forget_fraction: float = 0.1
    forget_class: int = 0
    methods: tuple = UNLEARN_METHODS
    unlearn_epochs: int = 5
    unlearn_lr: float = 0.05

    def validate(self):
        if self.kind not in ("finetune", "unlearning"):
            raise ConfigurationError(f"post_training kind must be finetune or unlearning, got {self.kind!r}")
        if self.kind == "unlearning":
            if self.forget_mode not in ("random_fraction", "single_category"):
                raise ConfigurationError(f"unknown forget mode {self.forget_mode!r}")
            bad = [m for m in self.methods if m not in UNLEARN_METHODS + EXTRA_UNLEARN_METHODS]
            if bad:
                raise ConfigurationError(f"unknown unlearning methods {bad}")


@dataclasses.dataclass(frozen=True)
class ExperimentManifest:
    name: str = "experiment"
    seed: int = 0
    data: DataSpec = DataSpec()
    fractions: tuple = (0.25, 0.25, 0.25, 0.25)
    mislabel_portion: float = 0.0
    mislabel_aux: bool = False
    superclass_group: int = 1
    eval_size: int | None = None
    model_preset: str = "medium"
    hidden_widths: tuple | None = None
    activation: str = "relu"
    training: TrainConfig = TrainConfig()
    dp: DPConfig | None = None
    n_shadows: int = 5
    shadow_rate: float = 0.8
    attacks: tuple = ATTACK_NAMES
    modes: tuple = MODES
    attack_params: AttackParams = AttackParams()
    alphas: tuple = (0.001, 0.01)
    betas: tuple = (0.001, 0.01)
    post_training: PostTraining | None = None
    workers: int = 1  # execution only, not part of the hash

    def validate(self) -> "ExperimentManifest":
        self.data.validate()
        for a in self.attacks:
            get_attack(a)
        if not self.attacks:
            raise ConfigurationError("manifest lists no attacks")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigurationError(f"modes must be a non-empty subset of {MODES}, got {list(self.modes)}")
        if len(self.fractions) != len(SPLIT_NAMES):
            raise ConfigurationError(f"fractions needs {len(SPLIT_NAMES)} values ({', '.join(SPLIT_NAMES)})")
        if self.hidden_widths is None and self.model_preset not in CAPACITY_PRESETS:
            raise ConfigurationError(f"unknown capacity preset {self.model_preset!r}; choose from {sorted(CAPACITY_PRESETS)}")
        needs = any(get_attack(a).needs_ensemble for a in self.attacks) or "attack" in self.modes
        if needs and int(self.n_shadows) < 1:
            raise ConfigurationError("listed attacks or attack mode need a shadow block with n >= 1")
        if not 0 < self.shadow_rate <= 1:
            raise ConfigurationError("shadow r must lie in (0, 1]")
        if self.eval_size is not None and self.eval_size < 1:
            raise ConfigurationError("eval_size must be positive")
        if self.post_training is not None:
            self.post_training.validate()
        if int(self.workers) < 1:
            raise ConfigurationError("workers must be >= 1")
        return self

    @property
    def split_fractions(self) -> dict:
        return dict(zip(SPLIT_NAMES, self.fractions))

    @property
    def num_classes(self) -> int:
        return -(-self.data.num_classes // self.superclass_group)

    def model_config(self, init_seed: int = 0) -> ModelConfig:
        widths = self.hidden_widths if self.hidden_widths is not None else CAPACITY_PRESETS[self.model_preset]
        return ModelConfig(self.data.dim, self.num_classes, widths, self.activation, init_seed)

    def train_config(self, seed: int = 0) -> TrainConfig:
        return dataclasses.replace(self.training, dp=self.dp, seed=seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("workers")
        return _plain(d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentManifest":
        return self.replace(seed=int(seed), data=dataclasses.replace(self.data, seed=int(seed)))

    def replace(self, **kw) -> "ExperimentManifest":
        return dataclasses.replace(self, **kw).validate()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {"name": self.name, "seed": str(self.seed), "workers": str(self.workers)}
        data = {f.name: str(getattr(self.data, f.name)) for f in dataclasses.fields(DataSpec) if f.name != "seed"}
        data.update(fractions=_join(self.fractions), mislabel_portion=repr(self.mislabel_portion),
                    mislabel_aux=str(self.mislabel_aux).lower(), superclass_group=str(self.superclass_group),
                    eval_size=str(self.eval_size or 0))
        cp["data"] = data
        model = {"preset": self.model_preset, "activation": self.activation}
        if self.hidden_widths is not None:
            model["hidden_widths"] = _join(self.hidden_widths)
        cp["model"] = model
        cp["training"] = {k: repr(getattr(self.training, k)) for k in _TRAIN_KEYS}
        if self.dp is not None:
            cp["dp"] = {"clip_norm": repr(self.dp.clip_norm), "noise_multiplier": repr(self.dp.noise_multiplier)}
        cp["shadow"] = {"n": str(self.n_shadows), "r": repr(self.shadow_rate)}
        attacks = {"names": _join(self.attacks), "modes": _join(self.modes)}
        attacks.update({k: str(v) for k, v in dataclasses.asdict(self.attack_params).items() if v is not None})
        cp["attacks"] = attacks
        cp["metrics"] = {"alphas": _join(self.alphas), "betas": _join(self.betas)}
        if self.post_training is not None:
            pt = dataclasses.asdict(self.post_training)
            pt["methods"] = _join(pt["methods"])
            cp["post_training"] = {k: str(v) for k, v in pt.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "checkpoint_every")


def _join(xs) -> str:
    return ", ".join(str(x) for x in xs)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _list(raw: str, cast=str) -> tuple:
    return tuple(cast(v.strip()) for v in raw.split(",") if v.strip())


def _section(cp, name) -> dict:
    return dict(cp[name]) if cp.has_section(name) else {}


def _take(sec: dict, key, cast, default):
    if key not in sec:
        return default
    raw = sec.pop(key)
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _check_empty(section: str, sec: dict):
    if sec:
        raise ConfigurationError(f"unknown keys in [{section}]: {', '.join(sorted(sec))}")


def parse_manifest(text: str) -> ExperimentManifest:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"manifest parse error: {exc}") from None
    known = {"experiment", "data", "model", "training", "dp", "shadow", "attacks", "metrics", "post_training"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigurationError(f"unknown manifest sections: {sorted(extra)}")
    base = ExperimentManifest()
    kw = {}

    sec = _section(cp, "experiment")
    kw["name"] = _take(sec, "name", str, base.name)
    kw["seed"] = _take(sec, "seed", int, base.seed)
    kw["workers"] = _take(sec, "workers", int, base.workers)
    _check_empty("experiment", sec)

    sec = _section(cp, "data")
    dkw = {f.name: _take(sec, f.name, type(getattr(base.data, f.name)), getattr(base.data, f.name))
           for f in dataclasses.fields(DataSpec) if f.name != "seed"}
    kw["data"] = DataSpec(**dkw, seed=kw["seed"])
    kw["fractions"] = _take(sec, "fractions", lambda r: _list(r, float), base.fractions)
    kw["mislabel_portion"] = _take(sec, "mislabel_portion", float, 0.0)
    kw["mislabel_aux"] = _take(sec, "mislabel_aux", _bool, False)
    kw["superclass_group"] = _take(sec, "superclass_group", int, 1)
    kw["eval_size"] = _take(sec, "eval_size", int, 0) or None
    _check_empty("data", sec)

    sec = _section(cp, "model")
    kw["model_preset"] = _take(sec, "preset", str, base.model_preset)
    kw["hidden_widths"] = _take(sec, "hidden_widths", lambda r: _list(r, int), None)
    kw["activation"] = _take(sec, "activation", str, base.activation)
    _check_empty("model", sec)

    sec = _section(cp, "training")
    tkw = {k: _take(sec, k, type(getattr(base.training, k)), getattr(base.training, k)) for k in _TRAIN_KEYS}
    kw["training"] = TrainConfig(**tkw)
    _check_empty("training", sec)

    if cp.has_section("dp"):
        sec = _section(cp, "dp")
        clip = _take(sec, "clip_norm", float, 1.0)
        noise = _take(sec, "noise_multiplier", float, 0.0)
        _check_empty("dp", sec)
        kw["dp"] = DPConfig(clip, noise)

    sec = _section(cp, "shadow")
    kw["n_shadows"] = _take(sec, "n", int, base.n_shadows)
    kw["shadow_rate"] = _take(sec, "r", float, base.shadow_rate)
    _check_empty("shadow", sec)

    sec = _section(cp, "attacks")
    names = _take(sec, "names", lambda r: _list(r), base.attacks)
    kw["attacks"] = ATTACK_NAMES if names == ("all",) else names
    kw["modes"] = _take(sec, "modes", lambda r: _list(r), base.modes)
    pkw = {}
    for f in dataclasses.fields(AttackParams):
        default = getattr(base.attack_params, f.name)
        cast = float if f.name == "merlin_sigma" else type(default)
        if f.name in sec:
            pkw[f.name] = _take(sec, f.name, cast, default)
    kw["attack_params"] = AttackParams(**pkw)
    _check_empty("attacks", sec)

    sec = _section(cp, "metrics")
    kw["alphas"] = _take(sec, "alphas", lambda r: _list(r, float), base.alphas)
    kw["betas"] = _take(sec, "betas", lambda r: _list(r, float), base.betas)
    _check_empty("metrics", sec)

    if cp.has_section("post_training"):
        sec = _section(cp, "post_training")
        d = PostTraining(kind="unlearning")
        pt = {"kind": _take(sec, "kind", str, "unlearning")}
        for f in dataclasses.fields(PostTraining):
            if f.name == "kind" or f.name not in sec:
                continue
            cast = (lambda r: _list(r)) if f.name == "methods" else type(getattr(d, f.name))
            pt[f.name] = _take(sec, f.name, cast, getattr(d, f.name))
        _check_empty("post_training", sec)
        kw["post_training"] = PostTraining(**pt)

    return ExperimentManifest(**kw).validate()


def load_manifest(path) -> ExperimentManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from None
    return parse_manifest(text)

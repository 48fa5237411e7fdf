"""Validated configuration models for every superinfo run.

Config files are flat ``key = value`` text (see ``superinfo.parser``); dotted
keys select a section. Every section forbids unknown keys.
"""
import hashlib
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, \
    field_validator, model_validator

from superinfo.parser import ParseError, format_config, nest, parse_config, split_list


class ConfigError(Exception):
    """Raised for invalid, unknown or missing configuration keys."""
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', validate_assignment=True)


def _listify(value):
    if isinstance(value, str):
        return split_list(value)
    return value


# ── sections ─────────────────────────────────────────────────────────────────

class LossWeights(_Section):
    """λ1..λ4 weigh KL(v1), KL(v2), recon(v1|z2), recon(v2|z1); tau is the NT-Xent temperature."""

    lambda1: float = Field(0.01, ge=0)
    lambda2: float = Field(0.01, ge=0)
    lambda3: float = Field(0.1, ge=0)
    lambda4: float = Field(0.1, ge=0)
    tau: float = Field(0.5, gt=0)

    @classmethod
    def recommended(cls) -> 'LossWeights':
        return cls(lambda1=0.01, lambda2=0.01, lambda3=0.1, lambda4=0.1, tau=0.5)

    @classmethod
    def symmetric(cls, lambda_a: float, lambda_b: float, tau: float = 0.5) -> 'LossWeights':
        """Map the two-multiplier objective onto four weights: λ1=λ4=λa, λ2=λ3=λb."""
        return cls(lambda1=lambda_a, lambda2=lambda_b, lambda3=lambda_b, lambda4=lambda_a,
                   tau=tau)

    @classmethod
    def from_tuple(cls, lambdas: Iterable[float], tau: float = 0.5) -> 'LossWeights':
        l1, l2, l3, l4 = (float(x) for x in lambdas)
        return cls(lambda1=l1, lambda2=l2, lambda3=l3, lambda4=l4, tau=tau)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)


class AugmentationConfig(_Section):
    crop_fraction: List[float] = Field(default_factory=lambda: [0.6, 1.0])
    flip_prob: float = Field(0.5, ge=0, le=1)
    pixel_noise_std: float = Field(0.05, ge=0)
    channel_scale: List[float] = Field(default_factory=lambda: [0.8, 1.2])

    split_lists = field_validator('crop_fraction', 'channel_scale', mode='before')(_listify)

    @field_validator('crop_fraction')
    @classmethod
    def _check_crop(cls, v):
        if len(v) != 2 or not 0 < v[0] <= v[1] <= 1:
            raise ValueError('crop_fraction must be [lo, hi] with 0 < lo <= hi <= 1')
        return v

    @field_validator('channel_scale')
    @classmethod
    def _check_scale(cls, v):
        if len(v) != 2 or not 0 <= v[0] <= v[1]:
            raise ValueError('channel_scale must be [lo, hi] with 0 <= lo <= hi')
        return v

    @classmethod
    def identity(cls) -> 'AugmentationConfig':
        return cls(crop_fraction=[1.0, 1.0], flip_prob=0.0, pixel_noise_std=0.0,
                   channel_scale=[1.0, 1.0])


class SyntheticSpec(_Section):
    """Block structure of the synthetic two-view benchmark.

    Each view concatenates a shared block (class code common to both views),
    a view-specific task-relevant block and a nuisance block, then applies a
    fixed random linear mix and observation noise.
    """

    n_classes: int = Field(4, ge=2)
    d_shared: int = Field(4, ge=0)
    d_specific: int = Field(4, ge=0)
    d_nuisance: int = Field(8, ge=0)
    n_samples: int = Field(512, ge=1)
    n_test: int = Field(256, ge=0)
    mixing_seed: int = Field(0, ge=0)
    noise_std: float = Field(0.1, ge=0)
    nuisance_scale: float = Field(1.0, ge=0)
    jitter_std: float = Field(0.1, ge=0)
    identical_mixing: bool = False
    n_transfer_classes: int = Field(0, ge=0)

    @property
    def dim(self) -> int:
        return self.d_shared + self.d_specific + self.d_nuisance

    @model_validator(mode='after')
    def _check_dims(self):
        if self.dim < 1:
            raise ValueError('d_shared + d_specific + d_nuisance must be at least 1')
        if self.n_transfer_classes == 1:
            raise ValueError('n_transfer_classes must be 0 (disabled) or at least 2')
        return self


class ModelSpec(_Section):
    input_dim: Optional[int] = Field(None, ge=1)
    encoder_widths: List[int] = Field(default_factory=lambda: [256, 256])
    repr_dim: int = Field(128, ge=1)
    proj_dim: int = Field(64, ge=1)
    proj_widths: List[int] = Field(default_factory=list)
    decoder_widths: List[int] = Field(default_factory=lambda: [256])

    split_lists = field_validator('encoder_widths', 'proj_widths', 'decoder_widths',
                                mode='before')(_listify)

    @field_validator('encoder_widths', 'proj_widths', 'decoder_widths')
    @classmethod
    def _positive(cls, v):
        if any(w < 1 for w in v):
            raise ValueError('layer widths must be positive')
        return v


class ProbeConfig(_Section):
    lr: float = Field(0.1, gt=0)
    iterations: int = Field(500, ge=1)
    standardize: bool = True
    tol: float = Field(1e-3, gt=0)
    seed: int = Field(0, ge=0)


class TrainSection(_Section):
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(64, ge=2)
    learning_rate: float = Field(3e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    recon_target: Literal['cross', 'self'] = 'cross'
    freeze_heads: bool = False
    log_wall_time: bool = False
    checkpoint_every: int = Field(0, ge=0)


class AblateSection(_Section):
    grid: Optional[str] = None
    seeds: int = Field(1, ge=1)
    jobs: int = Field(1, ge=1)


class OutputSection(_Section):
    dir: Optional[str] = None
    checkpoint: Optional[str] = None
    metrics: Optional[str] = None
    probe: Optional[str] = None
    report: Optional[str] = None


class SuperInfoConfig(_Section):
    """Everything one pretraining run depends on."""

    weights: LossWeights = Field(default_factory=LossWeights)
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(64, ge=2)
    learning_rate: float = Field(3e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0)
    dtype: Literal['f32', 'f64'] = 'f32'
    augmentation: AugmentationConfig = Field(default_factory=AugmentationConfig)
    model: ModelSpec = Field(default_factory=ModelSpec)
    recon_target: Literal['cross', 'self'] = 'cross'
    freeze_heads: bool = False
    log_wall_time: bool = False
    checkpoint_every: int = Field(0, ge=0)

    def echo(self) -> str:
        return format_config(flatten(self))

    @classmethod
    def from_echo(cls, text: str) -> 'SuperInfoConfig':
        try:
            tree = nest(_parse(text))
        except ParseError as e:
            raise ConfigError(str(e)) from None
        return _validate(cls, tree)

    @property
    def run_id(self) -> str:
        """12 hex chars identifying the run; extending ``epochs`` keeps the id."""
        flat = flatten(self)
        flat.pop('epochs')
        return hashlib.blake2b(format_config(flat).encode('utf-8'), digest_size=6).hexdigest()


# ── run config ───────────────────────────────────────────────────────────────

REQUIRED_KEYS: Dict[str, Tuple[str, ...]] = {
    'gen-data': ('data.n_classes', 'data.d_shared', 'data.d_specific', 'data.d_nuisance',
                 'data.n_samples'),
    'pretrain': ('seed', 'train.epochs', 'train.batch_size'),
    'probe': (),
    'ablate': ('seed', 'train.epochs', 'train.batch_size', 'data.n_classes',
               'data.d_shared', 'data.d_specific', 'data.d_nuisance', 'data.n_samples'),
}


class RunConfig(_Section):
    """Whole config file: top-level ``seed``/``dtype`` plus one model per section."""

    seed: int = Field(0, ge=0)
    dtype: Literal['f32', 'f64'] = 'f32'
    train: TrainSection = Field(default_factory=TrainSection)
    loss: LossWeights = Field(default_factory=LossWeights)
    model: ModelSpec = Field(default_factory=ModelSpec)
    aug: AugmentationConfig = Field(default_factory=AugmentationConfig)
    data: SyntheticSpec = Field(default_factory=SyntheticSpec)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    ablate: AblateSection = Field(default_factory=AblateSection)
    out: OutputSection = Field(default_factory=OutputSection)

    _provided: frozenset = PrivateAttr(default=frozenset())

    @classmethod
    def from_text(cls, text: str) -> 'RunConfig':
        flat = _parse(text)
        cfg = _validate(cls, nest(flat))
        cfg._provided = frozenset(flat)
        return cfg

    @classmethod
    def from_file(cls, path) -> 'RunConfig':
        try:
            text = Path(path).read_text(encoding='utf-8')
        except FileNotFoundError:
            raise ConfigError(f'config file not found: {path}') from None
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError(f'cannot read config {path}: {e}') from None
        return cls.from_text(text)

    def require(self, command: str) -> None:
        missing = [k for k in REQUIRED_KEYS.get(command, ()) if k not in self._provided]
        if missing:
            raise ConfigError(f'{command}: missing required keys: {", ".join(missing)}')

    def superinfo_config(self, input_dim: Optional[int] = None,
                         weights: Optional[LossWeights] = None,
                         seed: Optional[int] = None) -> SuperInfoConfig:
        model = self.model
        if input_dim is not None:
            if model.input_dim is not None and model.input_dim != input_dim:
                raise ConfigError(
                    f'model.input_dim = {model.input_dim} but the data has {input_dim} columns')
            model = model.model_copy(update={'input_dim': input_dim})
        t = self.train
        return SuperInfoConfig(
            weights=weights if weights is not None else self.loss,
            epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
            beta1=t.beta1, beta2=t.beta2, eps=t.eps,
            seed=self.seed if seed is None else seed, dtype=self.dtype,
            augmentation=self.aug, model=model, recon_target=t.recon_target,
            freeze_heads=t.freeze_heads, log_wall_time=t.log_wall_time,
            checkpoint_every=t.checkpoint_every,
        )

    def echo(self) -> str:
        return format_config(flatten(self))


# ── helpers ──────────────────────────────────────────────────────────────────

def _parse(text: str) -> Dict[str, str]:
    try:
        return parse_config(text)
    except ParseError as e:
        raise ConfigError(str(e)) from None


def _validate(model_cls, data):
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e)) from None


def describe_validation_error(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        key = '.'.join(str(p) for p in err['loc']) or '<root>'
        if err['type'] == 'extra_forbidden':
            lines.append(f'unknown key {key!r}')
        else:
            lines.append(f'{key}: {err["msg"]}')
    return '; '.join(lines)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ', '.join(_format_value(v) for v in value)
    text = str(value)
    if any(c in text for c in '#,"') or text != text.strip():
        return "'" + text + "'"
    return text


def flatten(model: BaseModel, prefix: str = '') -> Dict[str, str]:
    """Dotted-key view of a config model; ``None`` values are omitted."""
    flat: Dict[str, str] = {}
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f'{prefix}{name}'
        if isinstance(value, BaseModel):
            flat.update(flatten(value, key + '.'))
        elif value is not None:
            flat[key] = _format_value(value)
    return flat

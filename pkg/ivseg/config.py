"""
Run configuration.

A config file is a flat UTF-8 `key = value` text. It is read through the
data-processing layering:

KeyValueFileDataProvider -> ConcreteDataInterface -> ConstrainedDataInterface
    -> DefaultingDataInterface

so that unknown keys are errors and missing keys take the `RunConfig`
defaults.

Naming practices by example:
- `ovp_layers`: N1, perceiver layers;
- `vmtf_layers`: N2, text fusion layers;
- `t_r`: number of reference frames;
- `lambda_*`: loss weights.
"""

import dataclasses

import ivseg.data_processing.data_interface as data_interface
import ivseg.data_processing.data_provider as data_provider
import ivseg.model.vmtf as vmtf
import ivseg.synthdata.corpus as corpus
import ivseg.synthdata.instruction as instruction
import ivseg.synthdata.scene as scene
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

ConfigError = data_interface.ConfigError


@dataclasses.dataclass
class RunConfig:
    # Model
    model_dim: int = 128
    heads: int = 4
    llm_layers: int = 4
    ovp_layers: int = 3
    vmtf_layers: int = 3
    decoder_layers: int = 3
    n_queries: int = 8
    n_mask_tokens: int = 16
    pixel_dim: int = 64
    image_feature_dim: int = 64
    encoder_dim: int = 64
    patch_size: int = 8
    similarity: str = "dot"
    score_pooling: str = "max"
    score_threshold: float = 0.5
    precision: str = "double"

    # Data
    image_size: int = 32
    clip_length: int = 4
    t_r: int = 4
    train_size: int = 2000
    eval_size: int = 200
    difficulty_mix: str = "easy:1"
    mode_mix: str = "RES:1,ReasonSeg:1,R-VOS:1,ReasonVOS:1"
    train_manifest: str = ""  # Generated in memory when empty
    seed: int = 0

    # Optimization
    lr: float = 3e-4
    lr_floor: float = 0.0
    weight_decay: float = 0.0
    warmup_steps: int = 100  # 5% of `total_steps`
    total_steps: int = 2000
    batch_size: int = 4
    checkpoint_every: int = 500
    eval_every: int = 500

    # Loss weights
    lambda_cls: float = 1.0
    lambda_mask: float = 1.0
    lambda_b: float = 1.0
    lambda_d: float = 1.0

    # Toggles
    ovp_enabled: bool = True
    vmtf_enabled: bool = True
    fusion_mode: str = "both"
    lora_mode: bool = False
    lora_rank: int = 4
    lora_scaling: float = 1.0

    def validate(self):
        """
        Raises `ConfigError` listing every violated range
        """
        problems = []

        for name, (low, high) in _RANGES.items():
            value = getattr(self, name)

            if not (low <= value <= high):
                problems.append(f"{name}={value} outside [{low}, {high}]")

        for name, choices in _CHOICES.items():
            if getattr(self, name) not in choices:
                problems.append(f"{name}={getattr(self, name)} not in {choices}")

        if self.model_dim % self.heads:
            problems.append(f"heads={self.heads} does not divide model_dim={self.model_dim}")

        if self.patch_size & (self.patch_size - 1) or self.image_size % self.patch_size:
            problems.append(f"patch_size={self.patch_size} must be a power of two dividing image_size={self.image_size}")

        if self.image_size % 4:
            problems.append(f"image_size={self.image_size} must be divisible by 4")

        if self.warmup_steps >= self.total_steps:
            problems.append(f"warmup_steps={self.warmup_steps} must be below total_steps={self.total_steps}")

        if self.lr_floor > self.lr:
            problems.append(f"lr_floor={self.lr_floor} exceeds lr={self.lr}")

        if self.lora_mode and self.lora_rank >= self.model_dim:
            problems.append(f"lora_rank={self.lora_rank} must be below model_dim={self.model_dim}")

        for name, allowed in (("difficulty_mix", scene.DIFFICULTIES), ("mode_mix", instruction.MODES)):
            try:
                corpus.parse_mix(getattr(self, name), allowed)
            except ValueError as e:
                problems.append(f"{name}: {e}")

        if problems:
            raise ConfigError("Invalid configuration: " + "; ".join(problems))

        return self

    def difficulties(self):
        return corpus.parse_mix(self.difficulty_mix, scene.DIFFICULTIES)

    def modes(self):
        return corpus.parse_mix(self.mode_mix, instruction.MODES)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def to_rows(self):
        """
        `[(key, string value)]` in declaration order
        """
        return [(f.name, _format(getattr(self, f.name))) for f in dataclasses.fields(self)]

    def save(self, path):
        data_provider.write_key_value_file(path, self.to_rows())

    @staticmethod
    def schema():
        return data_interface.KeySchema({f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type
            for f in dataclasses.fields(RunConfig)})

    @staticmethod
    def from_provider(provider: data_provider.DataProviderBase):
        concrete = data_interface.ConcreteDataInterface(provider, RunConfig.schema())
        constrained = data_interface.ConstrainedDataInterface(concrete)
        constrained.validate()
        defaults = RunConfig()
        source = data_interface.DefaultingDataInterface(constrained,
            {f.name: getattr(defaults, f.name) for f in dataclasses.fields(RunConfig)})

        return RunConfig(**{f.name: source.data(f.name) for f in dataclasses.fields(RunConfig)}).validate()

    @staticmethod
    def load(path):
        try:
            provider = data_provider.KeyValueFileDataProvider(path)
        except ValueError as e:
            raise ConfigError(str(e))

        log.debug(RunConfig.load, "loading", path)

        return RunConfig.from_provider(provider)

    @staticmethod
    def from_rows(rows):
        return RunConfig.from_provider(data_provider.RamDataProvider(rows))


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}

_RANGES = {
    "model_dim": (8, 1024),
    "heads": (1, 64),
    "llm_layers": (1, 32),
    "ovp_layers": (1, 16),
    "vmtf_layers": (1, 16),
    "decoder_layers": (1, 16),
    "n_queries": (1, 256),
    "n_mask_tokens": (1, 256),
    "pixel_dim": (1, 1024),
    "image_feature_dim": (1, 1024),
    "encoder_dim": (1, 1024),
    "patch_size": (1, 64),
    "score_threshold": (1e-6, 1.0 - 1e-6),
    "image_size": (8, 512),
    "clip_length": (2, 64),
    "t_r": (0, 64),
    "train_size": (1, 10 ** 7),
    "eval_size": (1, 10 ** 6),
    "seed": (0, 2 ** 31 - 1),
    "lr": (0.0, 1.0),
    "lr_floor": (0.0, 1.0),
    "weight_decay": (0.0, 1.0),
    "warmup_steps": (0, 10 ** 7),
    "total_steps": (1, 10 ** 7),
    "batch_size": (1, 4096),
    "checkpoint_every": (1, 10 ** 7),
    "eval_every": (1, 10 ** 7),
    "lambda_cls": (0.0, 100.0),
    "lambda_mask": (0.0, 100.0),
    "lambda_b": (0.0, 100.0),
    "lambda_d": (0.0, 100.0),
    "lora_rank": (1, 256),
    "lora_scaling": (0.0, 100.0),
}

_CHOICES = {
    "similarity": ("dot", "cosine"),
    "score_pooling": ("max", "mean"),
    "precision": ("double", "single"),
    "fusion_mode": vmtf.FUSION_MODES,
    "ovp_enabled": (True, False),
    "vmtf_enabled": (True, False),
    "lora_mode": (True, False),
}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"

    if isinstance(value, float):
        return repr(value)

    return str(value)


def make_test_config(**overrides) -> RunConfig:
    """
    Reduced configuration for the test suite: tiny widths, 16 px canvas
    """
    cfg = RunConfig(
        model_dim=16,
        heads=2,
        llm_layers=1,
        ovp_layers=1,
        vmtf_layers=1,
        decoder_layers=1,
        n_queries=2,
        n_mask_tokens=4,
        pixel_dim=8,
        image_feature_dim=8,
        encoder_dim=8,
        patch_size=4,
        image_size=16,
        clip_length=3,
        t_r=2,
        train_size=8,
        eval_size=4,
        lr=3e-3,
        warmup_steps=2,
        total_steps=20,
        batch_size=2,
        checkpoint_every=10,
        eval_every=10,
        lora_rank=2,
    )

    return cfg.replace(**overrides)

import json
import logging
import os
from typing import List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from exceptions import ConfigError
from helpers import derive_seed
from waveforms.audio_io import DEFAULT_TEST_FRACTION

# Load environment variables from .env file if it exists
load_dotenv()

logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')

# Held-out share of the bundled synthetic task (200 train / 40 test at 10 x 24)
SYNTHETIC_TEST_FRACTION = 1.0 / 6.0


class Config:
    # Where runs land when --out is not given
    OUTPUT_DIR = os.environ.get('DNPU_SIM_OUTPUT_DIR') or 'runs/'
    LOG_LEVEL = (os.environ.get('DNPU_SIM_LOG_LEVEL') or 'INFO').upper()

    # Extraction fan-out; results do not depend on these
    WORKERS = int(os.environ.get('DNPU_SIM_WORKERS') or 1)
    CHANNEL_CHUNK = int(os.environ.get('DNPU_SIM_CHANNEL_CHUNK') or 16)

    @staticmethod
    def validate():
        """Validate environment configuration."""
        if Config.LOG_LEVEL not in LOG_LEVELS:
            raise ConfigError(
                f"DNPU_SIM_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got '{Config.LOG_LEVEL}'"
            )
        if Config.WORKERS < 1:
            raise ConfigError(f"DNPU_SIM_WORKERS must be at least 1, got {Config.WORKERS}")
        if Config.CHANNEL_CHUNK < 1:
            raise ConfigError(f"DNPU_SIM_CHANNEL_CHUNK must be at least 1, got {Config.CHANNEL_CHUNK}")


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class DeviceSection(Section):
    seed: int = 0
    linear: bool = False


class CircuitSection(Section):
    C_ext: float = 100e-12
    buffer_impedance: float = 1e9
    oversample: int = 8

    def build(self):
        from dnpu.models import CircuitConfig
        return CircuitConfig(self.C_ext, self.buffer_impedance, self.oversample)


class BankSection(Section):
    n_channels: int = 16
    control_seed: int = 0
    downsample: int = 10
    per_channel_devices: bool = False

    def build(self, n_channels=None):
        from features.models import BankSpec
        return BankSpec(n_channels or self.n_channels, self.control_seed, self.downsample,
                        self.per_channel_devices)


class DatasetSection(Section):
    kind: Literal['synthetic', 'directory'] = 'synthetic'
    path: Optional[str] = None
    n_classes: int = 10
    per_class: int = 24
    test_fraction: float = SYNTHETIC_TEST_FRACTION
    snr_db: float = 20.0
    seed: int = 0

    @model_validator(mode='before')
    @classmethod
    def _default_test_fraction(cls, data):
        # Directory datasets hold out 10% per class unless told otherwise
        if isinstance(data, dict) and data.get('test_fraction') is None and data.get('kind') == 'directory':
            data = {**data, 'test_fraction': DEFAULT_TEST_FRACTION}
        return data

    @field_validator('test_fraction')
    @classmethod
    def _fraction(cls, value):
        if not 0.0 < value < 1.0:
            raise ValueError('test_fraction must lie in (0, 1)')
        return value

    @model_validator(mode='after')
    def _directory_needs_path(self):
        if self.kind == 'directory' and not self.path:
            raise ValueError('dataset.path is required when dataset.kind is "directory"')
        return self


class PreprocessSection(Section):
    trim: bool = True
    threshold: float = 0.05
    mode: Literal['pointwise', 'edges'] = 'pointwise'
    vmax: float = 0.75
    n_samples: int = 12500


class ArchSection(Section):
    name: str = 'head-16'
    layers: Optional[List[dict]] = None
    head: Literal['log_softmax', 'log_sigmoid'] = 'log_softmax'
    init_seed: int = 0

    def build(self, n_channels, input_len, n_classes):
        from net.arch import ArchSpec, catalog
        if self.layers is not None:
            return ArchSpec.from_dict({'name': self.name, 'layers': self.layers, 'head': self.head})
        return catalog(self.name, n_channels=n_channels, input_len=input_len, n_classes=n_classes)


class TrainSection(Section):
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def build(self):
        from net.train import TrainConfig
        return TrainConfig(self.lr, self.weight_decay, self.epochs, self.batch_size, self.seed)


class HwaSection(Section):
    weight_noise_frac: float = 0.12
    mvm_out_noise_sigma: float = 0.1
    clip_factor: float = 1.5
    input_bits: Optional[int] = 8
    output_bits: Optional[int] = 8
    epochs: Optional[int] = None
    seed: int = 0

    def build(self):
        from aimc.hwa import HwaConfig
        return HwaConfig(self.weight_noise_frac, self.mvm_out_noise_sigma, self.clip_factor,
                         self.input_bits, self.output_bits, self.seed)


class CrossbarSection(Section):
    tile_dim: int = 256
    sigma_prog: float = 0.03
    seed: int = 0


class InferSection(Section):
    repetitions: int = 10
    sigma_prog_sweep: List[float] = Field(default_factory=lambda: [0.0, 0.01, 0.03, 0.05, 0.1])
    seed: int = 0


class EnergySection(Section):
    e_mvm_full_chip: float = 0.86e-6
    t_mvm: float = 133e-9
    n_cores: int = 64
    p_dnpu_channel: float = 5e-9
    p_dnpu_measured: float = 1.9e-9
    duration_s: float = 1.0
    interface_energy_J: Optional[float] = None

    def build(self):
        from energy.model import EnergyConstants
        return EnergyConstants(self.e_mvm_full_chip, self.t_mvm, self.n_cores, self.p_dnpu_channel,
                               self.p_dnpu_measured)


class CharacterizeSection(Section):
    n_tau_sets: int = 500
    n_power_sets: int = 500
    n_chirp_random: int = 2
    f1: float = 74.0
    f2: float = 174.0
    seed: int = 1


SEEDED_SECTIONS = ('device', 'dataset', 'arch', 'train', 'hwa', 'crossbar', 'infer', 'characterize')


class RunConfig(Section):
    """
    Validated run configuration; every section rejects unknown keys.
    """
    schema_version: Literal[1] = 1
    seed: int = 0
    device: DeviceSection = Field(default_factory=DeviceSection)
    circuit: CircuitSection = Field(default_factory=CircuitSection)
    bank: BankSection = Field(default_factory=BankSection)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    preprocess: PreprocessSection = Field(default_factory=PreprocessSection)
    arch: ArchSection = Field(default_factory=ArchSection)
    train: TrainSection = Field(default_factory=TrainSection)
    hwa: HwaSection = Field(default_factory=HwaSection)
    crossbar: CrossbarSection = Field(default_factory=CrossbarSection)
    infer: InferSection = Field(default_factory=InferSection)
    energy: EnergySection = Field(default_factory=EnergySection)
    characterize: CharacterizeSection = Field(default_factory=CharacterizeSection)

    def with_master_seed(self, seed):
        """
        Copy whose section seeds all derive from `seed`.

        Args:
            seed (int): New master seed

        Returns:
            RunConfig
        """
        updates = {'seed': seed}
        for name in SEEDED_SECTIONS:
            section = getattr(self, name)
            key = 'init_seed' if name == 'arch' else 'seed'
            updates[name] = section.model_copy(update={key: derive_seed(seed, name)})
        updates['bank'] = self.bank.model_copy(update={'control_seed': derive_seed(seed, 'bank')})
        return self.model_copy(update=updates)

    def with_channels(self, n_channels):
        """Copy with a different bank width; per-width catalog names follow it."""
        updates = {'bank': self.bank.model_copy(update={'n_channels': n_channels})}
        prefix, _, width = self.arch.name.rpartition('-')
        if prefix in ('head', 'linear-dnpu') and width.isdigit() and self.arch.layers is None:
            updates['arch'] = self.arch.model_copy(update={'name': f"{prefix}-{n_channels}"})
        return self.model_copy(update=updates)

    def snapshot(self):
        return self.model_dump(mode='json')


def load_run_config(path=None, seed=None, channels=None):
    """
    Read and validate a JSON run configuration.

    Args:
        path (str, optional): Config file; defaults only when None
        seed (int, optional): Master seed override
        channels (int, optional): Channel count override

    Returns:
        RunConfig

    Raises:
        ConfigError: For unreadable files, unknown keys or invalid values
    """
    payload = {}
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                payload = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e

    try:
        config = RunConfig.model_validate(payload)
        if seed is not None:
            config = config.with_master_seed(seed)
        if channels is not None:
            if channels < 1:
                raise ConfigError(f"--channels must be at least 1, got {channels}")
            config = config.with_channels(channels)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.debug(f"Loaded run configuration from {path or 'defaults'}")
    return config

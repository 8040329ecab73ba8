import logging
from dataclasses import asdict, dataclass
from typing import List, Optional

import pandas as pd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyConstants:
    """
    Chip and device figures of the efficiency model.

    Attributes:
        e_mvm_full_chip (float): Energy of one MVM with all cores active (J)
        t_mvm (float): Delay of one MVM (s)
        n_cores (int): Cores on the chip
        p_dnpu_channel (float): Conservative power of one DNPU channel (W)
        p_dnpu_measured (float): Measured mean DNPU power, informational (W)
    """
    e_mvm_full_chip: float = 0.86e-6
    t_mvm: float = 133e-9
    n_cores: int = 64
    p_dnpu_channel: float = 5e-9
    p_dnpu_measured: float = 1.9e-9

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LayerSchedule:
    """MVMs one layer issues per input and the cores its partitions occupy."""
    name: str
    mvm_count: int
    core_count: int

    def __post_init__(self):
        if self.mvm_count < 0 or self.core_count < 1:
            raise ValueError(f"layer '{self.name}': need mvm_count >= 0 and core_count >= 1")


def mvm_schedule(p, input_len_per_layer=None) -> List[LayerSchedule]:
    """
    Per-layer MVM counts of a crossbar program.

    A conv layer issues one MVM per output time step; a linear layer issues one.
    The core count of a layer is the number of tiles it was split into.

    Args:
        p (CrossbarProgram): Mapped program
        input_len_per_layer (dict, optional): layer index -> input length of that layer;
            defaults to the counts recorded when the program was mapped

    Returns:
        list: LayerSchedule per mapped layer
    """
    schedule = []
    for lm in p.layers:
        if lm.kind == 'linear':
            count = 1
        elif input_len_per_layer is not None:
            length = input_len_per_layer[lm.layer_index]
            count = (length - lm.weight_shape[-1]) // lm.stride + 1
        elif lm.mvm_count is not None:
            count = lm.mvm_count
        else:
            raise ValueError(f"layer {lm.layer_index}: no input length known; map with input_len or pass lengths")
        schedule.append(LayerSchedule(f"{lm.kind}{lm.layer_index}", int(count), len(lm.tiles)))
    return schedule


def published_gsc_schedule(fused_fc=True):
    """
    Published per-layer MVM counts of the 6-layer keyword-spotting CNN on 18 cores.

    The four conv layers issue 1977, 492, 121 and 28 MVMs on 2, 2, 6 and 7 cores.
    With `fused_fc` the two fully connected layers share one core and one MVM,
    which reproduces both published totals (5,861 core-weighted, 2,619 sequential);
    otherwise each counts one MVM on that core (5,862 and 2,620).
    """
    schedule = [
        LayerSchedule('conv0', 1977, 2),
        LayerSchedule('conv1', 492, 2),
        LayerSchedule('conv2', 121, 6),
        LayerSchedule('conv3', 28, 7),
    ]
    if fused_fc:
        schedule.append(LayerSchedule('fc4+fc5', 1, 1))
    else:
        schedule += [LayerSchedule('fc4', 1, 1), LayerSchedule('fc5', 1, 1)]
    return schedule


def core_weighted_mvms(schedule):
    return sum(s.mvm_count * s.core_count for s in schedule)


def sequential_mvms(schedule):
    return sum(s.mvm_count for s in schedule)


def aimc_energy(schedule, c: Optional[EnergyConstants] = None):
    """Energy (J): core-weighted MVMs over the chip's cores times the full-chip MVM energy."""
    if not schedule:
        raise ValueError("schedule must not be empty")
    c = c or EnergyConstants()
    return core_weighted_mvms(schedule) / c.n_cores * c.e_mvm_full_chip


def aimc_latency(schedule, c: Optional[EnergyConstants] = None):
    """Latency (s): layers run one after another, partitions of a layer in parallel."""
    if not schedule:
        raise ValueError("schedule must not be empty")
    c = c or EnergyConstants()
    return sequential_mvms(schedule) * c.t_mvm


def dnpu_bank_power(n_channels, c: Optional[EnergyConstants] = None):
    if n_channels < 1:
        raise ValueError(f"n_channels must be at least 1, got {n_channels}")
    c = c or EnergyConstants()
    return n_channels * c.p_dnpu_channel


def dnpu_energy(duration_s, n_channels=64, c: Optional[EnergyConstants] = None):
    """Energy (J) of the DNPU bank over one input of `duration_s` seconds."""
    if duration_s < 0:
        raise ValueError(f"duration_s must be non-negative, got {duration_s}")
    return dnpu_bank_power(n_channels, c) * duration_s


def schedule_frame(schedule, c: Optional[EnergyConstants] = None):
    """Per-layer breakdown as a DataFrame (mvm_count, core_count, energy_J, latency_s)."""
    c = c or EnergyConstants()
    frame = pd.DataFrame([asdict(s) for s in schedule], columns=['name', 'mvm_count', 'core_count'])
    frame['core_weighted'] = frame['mvm_count'] * frame['core_count']
    frame['energy_J'] = frame['core_weighted'] / c.n_cores * c.e_mvm_full_chip
    frame['latency_s'] = frame['mvm_count'] * c.t_mvm
    return frame

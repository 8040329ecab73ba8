import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import pandas as pd

from energy.model import (EnergyConstants, aimc_energy, aimc_latency, core_weighted_mvms, dnpu_bank_power,
                          dnpu_energy, published_gsc_schedule, sequential_mvms)
from helpers import write_json

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

ASSUMPTIONS = [
    "one-phase read mode energy and delay figures",
    "partitions of a layer run in parallel on separate cores; layers run sequentially",
    "batch normalization, activations and pooling are exact and free (off-chip)",
    "buffering delays between layers are excluded",
    "DNPU feature extraction runs in real time and adds no latency",
    "interface (ADC / sample-and-hold) energy is not included; see interface_energy_J",
]


@dataclass
class EnergyReport:
    """
    Energy and latency of one classified input.

    Attributes:
        layers (list): Per-layer dicts with name, mvm_count, core_count
        core_weighted_mvms (int): Sum of mvm_count * core_count
        sequential_mvms (int): Sum of mvm_count
        aimc_energy_J (float): Classifier energy
        aimc_latency_s (float): Classifier latency
        n_channels (int): DNPU channels
        dnpu_power_W (float): Bank power
        duration_s (float): Input duration
        dnpu_energy_J (float): Bank energy per input
        total_energy_J (float): aimc_energy_J + dnpu_energy_J (+ interface energy when set)
        total_latency_s (float): aimc_latency_s (the DNPU adds none)
        energy_delay_product (float): aimc_energy_J * (aimc_latency_s + dnpu_latency_s)
    """
    layers: List[dict]
    core_weighted_mvms: int
    sequential_mvms: int
    aimc_energy_J: float
    aimc_latency_s: float
    n_channels: int
    dnpu_power_W: float
    duration_s: float
    dnpu_energy_J: float
    total_energy_J: float
    total_latency_s: float
    energy_delay_product: float
    constants: dict
    name: str = 'run'
    macs: Optional[int] = None
    energy_per_mac_J: Optional[float] = None
    interface_energy_J: Optional[float] = None
    dnpu_latency_s: float = 0.0
    notes: dict = field(default_factory=dict)
    assumptions: List[str] = field(default_factory=lambda: list(ASSUMPTIONS))
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    def summary_row(self):
        """One flat row for batch sweeps."""
        return {
            'name': self.name,
            'n_channels': self.n_channels,
            'core_weighted_mvms': self.core_weighted_mvms,
            'sequential_mvms': self.sequential_mvms,
            'aimc_energy_J': self.aimc_energy_J,
            'aimc_latency_s': self.aimc_latency_s,
            'dnpu_power_W': self.dnpu_power_W,
            'dnpu_energy_J': self.dnpu_energy_J,
            'total_energy_J': self.total_energy_J,
            'energy_delay_product': self.energy_delay_product,
            'macs': self.macs,
        }


def build_report(schedule, n_channels, duration_s=1.0, c: Optional[EnergyConstants] = None, name='run',
                 macs=None, interface_energy_J=None):
    """
    Aggregate the efficiency model for one input into an EnergyReport.

    Args:
        schedule (list): LayerSchedule entries of the classifier
        n_channels (int): DNPU channels in the feature bank
        duration_s (float): Input duration
        c (EnergyConstants): Chip and device figures
        name (str): Label of the run
        macs (int, optional): Classifier MACs per input, for energy per MAC
        interface_energy_J (float, optional): Extra interface energy to add to the total

    Returns:
        EnergyReport
    """
    c = c or EnergyConstants()
    energy = aimc_energy(schedule, c)
    latency = aimc_latency(schedule, c)
    bank_energy = dnpu_energy(duration_s, n_channels, c)
    total = energy + bank_energy + (interface_energy_J or 0.0)
    dnpu_latency = 0.0
    report = EnergyReport(
        layers=[asdict(s) for s in schedule],
        core_weighted_mvms=core_weighted_mvms(schedule),
        sequential_mvms=sequential_mvms(schedule),
        aimc_energy_J=energy,
        aimc_latency_s=latency,
        n_channels=n_channels,
        dnpu_power_W=dnpu_bank_power(n_channels, c),
        duration_s=duration_s,
        dnpu_energy_J=bank_energy,
        total_energy_J=total,
        total_latency_s=latency + dnpu_latency,
        energy_delay_product=energy * (latency + dnpu_latency),
        constants=c.to_dict(),
        name=name,
        macs=macs,
        energy_per_mac_J=energy / macs if macs else None,
        interface_energy_J=interface_energy_J,
        dnpu_latency_s=dnpu_latency,
        notes={'dnpu_latency': 'real-time, hence introducing virtually no latency',
               'dnpu_measured_power_W': c.p_dnpu_measured * n_channels},
    )
    logger.info(f"{name}: classifier {energy * 1e6:.3f} uJ in {latency * 1e6:.3f} us, "
                f"DNPU bank {report.dnpu_power_W * 1e9:.1f} nW / {bank_energy * 1e9:.1f} nJ")
    return report


def published_reference(c: Optional[EnergyConstants] = None):
    """Both readings of the published keyword-spotting schedule, with a 64-channel bank."""
    c = c or EnergyConstants()
    fused = build_report(published_gsc_schedule(fused_fc=True), 64, 1.0, c, name='gsc-published')
    separate = build_report(published_gsc_schedule(fused_fc=False), 64, 1.0, c, name='gsc-published-separate-fc')
    return {'fused_fc': fused, 'separate_fc': separate}


def write_report(report: EnergyReport, path):
    write_json(path, report.to_dict())


def write_summary_csv(reports, path):
    pd.DataFrame([r.summary_row() for r in reports]).to_csv(path, index=False)

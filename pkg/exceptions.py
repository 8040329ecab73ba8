"""Error hierarchy shared by every package of the simulator."""


class SimulatorError(Exception):
    """Base class for all simulator errors."""


class EmptyAfterTrim(SimulatorError, ValueError):
    """No sample survived silence trimming."""


class AllZero(SimulatorError, ValueError):
    """A waveform has no nonzero sample and cannot be normalized."""


class MalformedWav(SimulatorError, ValueError):
    """The RIFF/WAVE header could not be parsed."""


class UnsupportedEncoding(SimulatorError, ValueError):
    """The WAV file is not 16-bit PCM mono."""


class EmptyClassDirectory(SimulatorError, ValueError):
    """A label directory of a dataset holds no WAV file."""


class StepTooLarge(SimulatorError, ValueError):
    """The ODE step exceeds a fifth of the local RC time constant."""

    def __init__(self, dt, tau_est, sample_index=0):
        self.dt = dt
        self.tau_est = tau_est
        self.sample_index = sample_index
        super().__init__(
            f"dt={dt:.3e} s exceeds tau_est/5={tau_est / 5:.3e} s at sample {sample_index}; "
            f"raise the oversample factor"
        )


class NoSettle(SimulatorError, RuntimeError):
    """A step response did not reach steady state within the time limit."""


class SchemaMismatch(SimulatorError, ValueError):
    """A stored artefact disagrees with its own header."""


class ShapeMismatch(SimulatorError, ValueError):
    """Tensor or layer shapes are incompatible."""


class TrainingDiverged(SimulatorError, ArithmeticError):
    """The training loss became NaN or infinite."""

    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"Training diverged at epoch {epoch}")


class ConfigError(SimulatorError, ValueError):
    """The run configuration is invalid."""


class MissingArtifact(SimulatorError, FileNotFoundError):
    """An upstream stage artefact does not exist."""


class HashMismatch(SimulatorError, RuntimeError):
    """An upstream artefact changed since the stage that produced it."""


class StageFailure(SimulatorError, RuntimeError):
    """A pipeline stage failed."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")

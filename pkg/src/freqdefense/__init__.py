"""Frequency-domain Wiener filtering as a defense against adversarial perturbations
of semantic segmentation networks, with a small numpy network, attacks,
baseline defenses, metrics and spectrum analysis."""

from .attacks import (AttackSpec, Perturbation, apply_perturbation, bpda_attack, iterative_mirror,
                      metzen_llm, mfgsm, mopuri, run_attack)
from .baselines import DefenseSpec, bit_depth_reduce, jpeg_dct, median_blur, nl_means
from .errors import (CompositionError, ConfigError, EstimationError, FormatError, FreqDefenseError,
                     MaskConstructionError, ShapeError, SizedInputError, SpecError, SymmetryError)
from .metrics import ConfusionAccumulator, miou, mse, ssim
from .micronet import LossSpec, MicroNet, desk_net, desk_net_spec, small_net_spec
from .spectra import average_amplitude_spectrum, harmonic_peak_score
from .tensor import dft3, fftshift_log_magnitude, idft3
from .wiener import (WienerFilter, filter_combined, filter_from_pair, filter_single_attack,
                     load_filter, save_filter)

__version__ = "0.1.0"

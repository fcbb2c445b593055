"""
Where the grid in the perturbation spectrum comes from
======================================================

Average |F(r)| over mFGSM perturbations of one network under each
interpolation mode.  Nearest-neighbour resampling leaves energy on the rows
and columns at multiples of H/2 and W/2; smoother kernels suppress it.
Spectrum images land in ``demo_out/``.
"""

from pathlib import Path

from freqdefense.attacks import AttackSpec, mfgsm
from freqdefense.data import synthetic_dataset
from freqdefense.formats import write_png
from freqdefense.micronet import RESAMPLE_MODES, desk_net
from freqdefense.spectra import average_amplitude_spectrum, harmonic_peak_score
from freqdefense.tensor import fftshift_log_magnitude

out = Path("demo_out")
scenes = [x for x, _ in synthetic_dataset(seed=0, n=32, stream="spectra")]
spec = AttackSpec("mfgsm", epsilon=10, target_class=0)
base = desk_net()

for mode in RESAMPLE_MODES:
    net = base.with_mode(mode)              # same weights, different resampler
    S = average_amplitude_spectrum(mfgsm(net, x, spec).r for x in scenes)
    write_png(out / f"spectrum_{mode}.png", fftshift_log_magnitude(S))
    print(f"{mode:<9} peak score s=2: {harmonic_peak_score(S, 2):5.2f}   s=4: {harmonic_peak_score(S, 4):5.2f}")

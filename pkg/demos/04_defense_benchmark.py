"""
Desk benchmark: Wiener filter against the spatial baselines
===========================================================

Fit one filter per attack on 32 training scenes, average them into a
combined filter, then compare every defense on 8 validation scenes.
mIoU is measured against the network's own prediction on the clean scene.
"""

import numpy as np

from freqdefense.attacks import AttackSpec, apply_perturbation, run_attack
from freqdefense.baselines import bit_depth_reduce, jpeg_dct, median_blur, nl_means
from freqdefense.data import synthetic_dataset
from freqdefense.metrics import ConfusionAccumulator, mse, ssim
from freqdefense.micronet import desk_net
from freqdefense.wiener import apply, filter_combined, filter_single_attack

net = desk_net(mode="nearest")
train = [x for x, _ in synthetic_dataset(0, 32, stream="train")]
val = [x for x, _ in synthetic_dataset(0, 8, stream="val")]
attacks = [
    AttackSpec("mfgsm", epsilon=10, target_class=0),
    AttackSpec("iterative_mirror", epsilon=10),
    AttackSpec("mopuri", epsilon=10),
]

# stage 1: filters from the training split only
filters = {a.label: filter_single_attack([(x, run_attack(net, x, a).r) for x in train], a.label, 10)
           for a in attacks}
G = filter_combined(filters.values())

defenses = {
    "none": lambda z: z,
    "wiener": G,
    "wiener+nlm": lambda z: nl_means(apply(G, z)),
    "jpeg q90": jpeg_dct,
    "median 3": median_blur,
    "bits 5": bit_depth_reduce,
    "nlm": nl_means,
}

# stage 2: evaluation
refs = [net.predict(x) for x in val]
for a in attacks:
    advs = [apply_perturbation(x, run_attack(net, x, a).r) for x in val]
    print(f"\n{a.label}")
    print(f"  {'defense':<12}{'MSE':>8}{'SSIM':>7}{'mIoU':>7}")
    for name, d in defenses.items():
        acc = ConfusionAccumulator(net.num_classes)
        errs, sims = [], []
        for x, xa, ref in zip(val, advs, refs):
            out = d(xa)
            errs.append(mse(out, x))
            sims.append(ssim(out, x))
            acc.update(net.predict(out), ref)
        print(f"  {name:<12}{np.mean(errs):8.1f}{np.mean(sims):7.3f}{acc.miou():7.3f}")

print("\nclean scenes through the combined filter: SSIM",
      np.mean([ssim(apply(G, x), x) for x in val]).round(3))

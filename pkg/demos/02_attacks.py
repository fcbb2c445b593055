"""
Four attacks on the desk network
================================

mFGSM, the class-erasing Metzen attack, the iterative mirror attack and the
data-free Mopuri attack, all at epsilon = 10 under l_inf.
"""

import numpy as np

from freqdefense.attacks import AttackSpec, apply_perturbation, run_attack
from freqdefense.data import synthetic_dataset
from freqdefense.micronet import desk_net

net = desk_net(mode="nearest")
scenes = [x for x, _ in synthetic_dataset(seed=0, n=4, stream="val")]

specs = [
    AttackSpec("mfgsm", epsilon=10, target_class=0),
    AttackSpec("metzen_llm", epsilon=10, target_class=0),
    AttackSpec("iterative_mirror", epsilon=10),
    AttackSpec("mopuri", epsilon=10, seed=1),
]

print(f"{'attack':<18}{'|r|_inf':>8}{'agreement':>11}{'class-0 share':>15}")
for spec in specs:
    agree, share, norms = [], [], []
    for x in scenes:
        p = run_attack(net, x, spec)
        clean = net.predict(x)
        adv = net.predict(apply_perturbation(x, p.r))
        agree.append(np.mean(clean == adv))
        share.append(np.mean(adv == 0))
        norms.append(p.norm())
    print(f"{spec.label:<18}{max(norms):8.2f}{np.mean(agree):11.3f}{np.mean(share):15.3f}")

# for reference: the share of class 0 on clean inputs
print("clean class-0 share:", np.mean([np.mean(net.predict(x) == 0) for x in scenes]).round(3))

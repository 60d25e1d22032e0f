"""What the complement term adds to cross entropy.

Run: python3 demos/loss_behaviour.py
"""
import numpy as np

from dacbnet.losses import LossConfig, cce_total, complement_entropy, cross_entropy, focal_loss

# Same confidence in the true class (0.6), different spread over the three wrong classes.
peaked = np.array([[0.6, 0.38, 0.01, 0.01]])
flat = np.array([[0.6, 0.4 / 3, 0.4 / 3, 0.4 / 3]])
y = [0]

for name, p in (("peaked", peaked), ("flat", flat)):
    ce, _ = cross_entropy(p, y)
    h, _ = complement_entropy(p, y)
    cce, _ = cce_total(p, y, LossConfig("cce", 4))
    print(f"{name:>6}: CE {ce:.4f}  complement entropy {h:.4f} (max ln 3 = {np.log(3):.4f})  CCE {cce:.4f}")

# CE cannot tell the two apart. With beta = -1 the CCE objective is lower for the
# flat case, so training is pushed to spread wrong-class mass evenly instead of
# letting one confusable class absorb it.

# gradient on the probabilities: the complement term pulls the largest wrong class down
_, g = cce_total(peaked, y, LossConfig("cce", 4))
print("d CCE / d p for the peaked row:", np.round(g[0], 4))

# focal loss down-weights confident samples instead
for pg in (0.5, 0.9, 0.99):
    p = np.array([[pg, 1 - pg]])
    print(f"p_g={pg}: CE {cross_entropy(p, [0])[0]:.4f}  focal(gamma=2) {focal_loss(p, [0], LossConfig('focal', 2))[0]:.5f}")

"""The closed forms behind posterior fusion, one small example each.

Fusion takes a weighted geometric mean of densities. For Gaussians this is
covariance intersection; for a Bernoulli (a maybe-present target) it also
mixes the existence probabilities; for a Poisson part it averages the
expected counts. The fusion map decides which component of one sensor's
posterior is fused with which component of the other's.

Run:  python demos/03_fusion_algebra.py
"""
import numpy as np

from etpmb.densities import BernoulliComponent, EtState, GammaDensity, GaussianDensity, PppComponent
from etpmb.fusion import FusionComponent, build_fusion_map, fuse_bernoullis, fuse_gaussians, fuse_mixed, fuse_ppps


def gauss(mean, var):
    return GaussianDensity(np.atleast_1d(np.asarray(mean, float)), np.atleast_2d(var).astype(float))


# 1. Two scalar Gaussians with equal variance: the mean lands halfway and the
#    variance does not shrink, unlike a naive Kalman-style combination.
g, log_c = fuse_gaussians([gauss(0.0, 2.0), gauss(2.0, 2.0)], [0.5, 0.5])
print(f"fused N({g.mean[0]:.3f}, {g.cov[0, 0]:.3f}), log normalizer {log_c:.4f}")

# 2. Two sensors agree on where a target is but not on whether it exists.
same = EtState(GammaDensity(5.0, 1.0), gauss(0.0, 1.0))
b = fuse_bernoullis([BernoulliComponent(0.9, same, 0), BernoulliComponent(0.5, same, 1)], [0.5, 0.5])
print(f"existence 0.9 with 0.5 -> {b.r:.5f}")

# 3. Undetected-target intensity: expected counts 4 and 9 average to 6.
ppp = fuse_ppps([PppComponent(4.0, same.spatial, same.rate), PppComponent(9.0, same.spatial, same.rate)], [0.5, 0.5])
print(f"PPP mass 4 with 9 -> {ppp.mass:.5f}")

# 4. One sensor has a track, the other only a faint undetected intensity
#    there: the result is still a Bernoulli, with much lower existence.
m = fuse_mixed([BernoulliComponent(0.9, same, 0)], [PppComponent(0.1, same.spatial, same.rate)], [0.5, 0.5])
print(f"track r=0.9 with PPP mass 0.1 -> r = {m.r:.5f}")

# 5. Sensor B lists the same two targets in the opposite order. The fusion
#    map pairs them by symmetric KL divergence and undoes the swap.
left, right = gauss([0.0, 0.0], np.eye(2)), gauss([3.0, 0.0], np.eye(2))
ref = [FusionComponent("bernoulli", 0.9, left, 0), FusionComponent("bernoulli", 0.9, right, 0)]
other = [FusionComponent("bernoulli", 0.9, right, 0), FusionComponent("bernoulli", 0.9, left, 0)]
perm, cost = build_fusion_map(ref, other, center_only=False)
print(f"fusion map {perm.tolist()}, total divergence {cost:.3g}")

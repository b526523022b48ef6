"""Dev scratch: measure conjugator flow behaviour (not part of the package)."""
import time
import numpy as np
from abclab.flows import ham_flow_batch, FlowConfig, CoveringField, exact_frac_mul

cfg = FlowConfig()

# 1. boundary invariance + energy conservation, pure field
rng = np.random.default_rng(0)
theta = rng.random(100)
y = rng.uniform(-0.9, 0.9, 100)
for K, freq in [(0.05, 1), (0.2, 3), (1.0, 6)]:
    t1, y1 = ham_flow_batch(K, freq, theta, y, cfg)
    H0 = K * (1 - y**2) * np.cos(2 * np.pi * freq * theta)
    H1 = K * (1 - y1**2) * np.cos(2 * np.pi * freq * t1)
    print(f"K={K} freq={freq}: energy drift {np.abs(H1-H0).max():.2e}")

# boundary fixed
t1, y1 = ham_flow_batch(0.7, 4, theta, np.ones_like(theta), cfg)
print("boundary y drift:", np.abs(y1 - 1).max())

# 2. inverse roundtrip accuracy
t1, y1 = ham_flow_batch(0.5, 5, theta, y, cfg)
t2, y2 = ham_flow_batch(0.5, 5, t1, y1, cfg, backward=True)
dd = np.maximum(np.minimum(np.abs(t2-theta), 1-np.abs(t2-theta)), np.abs(y2-y))
print("fwd/back roundtrip:", dd.max())

# 3. commutation with Rot_{1/q}: freq = q*M
q, M = 3, 7
K = 0.3
alpha = 1.0/3.0
tr = np.mod(theta + 1.0/3.0, 1.0)
a1, b1 = ham_flow_batch(K, q*M, tr, y, cfg)
a2, b2 = ham_flow_batch(K, q*M, theta, y, cfg)
a2 = np.mod(a2 + 1.0/3.0, 1.0)
dd = np.maximum(np.minimum(np.abs(a1-a2), 1-np.abs(a1-a2)), np.abs(b1-b2))
print("commutation residual (float rot):", dd.max())

# 4. variational jacobian vs FD, det
t0 = 0.21; y0 = 0.13
th = np.array([t0]); yy = np.array([y0])
_, _, J = ham_flow_batch(0.8, 4, th, yy, cfg, with_jacobian=True)
J = J[:, 0]
det = J[0]*J[3] - J[1]*J[2]
print("variational det-1:", abs(det-1))
s = 1e-6
outs = {}
for dth, dy in [(s,0),(-s,0),(0,s),(0,-s)]:
    a, b = ham_flow_batch(0.8, 4, np.array([t0+dth]), np.array([y0+dy]), cfg)
    outs[(dth,dy)] = (a[0], b[0])
fd00 = (outs[(s,0)][0]-outs[(-s,0)][0])/(2*s)
fd10 = (outs[(s,0)][1]-outs[(-s,0)][1])/(2*s)
fd01 = (outs[(0,s)][0]-outs[(0,-s)][0])/(2*s)
fd11 = (outs[(0,s)][1]-outs[(0,-s)][1])/(2*s)
print("jac variational:", J)
print("jac FD:         ", [fd00, fd01, fd10, fd11])

# 5. curve spreading: what K_eff reaches 1-eps, covering behaviour
def curve_stats(K, freq, collar, n=2048):
    th = np.arange(n)/n
    y0 = np.zeros(n)
    t1, y1 = ham_flow_batch(K, freq, th, y0, cfg, collar=collar)
    return t1, y1

for eps, M in [(1/3, 3), (1/18, 18), (0.02, 50)]:
    freq = M
    collar = min(0.02, eps/4)
    for Keff in [1, 2, 4, 8, 16, 32]:
        K = Keff/freq
        t1, y1 = curve_stats(K, freq, collar)
        reach = min(y1.max(), -y1.min())
        if reach >= 1 - eps:
            print(f"eps={eps:.4f} M={M}: K_eff={Keff} reaches {reach:.4f}")
            break
    else:
        print(f"eps={eps:.4f} M={M}: no reach up to K_eff=32 (max {reach:.4f})")

# 6. timing of a batch flow
big = rng.random(20000)
bigy = rng.uniform(-1, 1, 20000)
t0c = time.time()
ham_flow_batch(8/50, 50, big, bigy, cfg, collar=0.005)
print(f"20k batch, K_eff=8: {time.time()-t0c:.2f}s")

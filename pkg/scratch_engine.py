"""Dev scratch: exercise the 3-stage induction and print every certificate."""
import time
import numpy as np
from abclab.engine import (initial_stage, step, DEFAULT_POLICY, EnginePolicy,
                           liouville_certificate, lift_to_surface,
                           transitivity_witness, angle_str)

policy = DEFAULT_POLICY
s0 = initial_stage()
stages = [s0]
t_all = time.time()
for n in range(3):
    t0 = time.time()
    s = step(stages[-1], policy)
    dt = time.time() - t0
    stages.append(s)
    print(f"--- stage {s.n} ({dt:.1f}s) alpha={angle_str(s.alpha)[:80]} "
          f"qbits={s.q_bits}")
    for k, v in s.certificates.items():
        if isinstance(v, dict):
            print(f"    {k}: {v}")
        else:
            print(f"    {k}: {v}")
    print(f"    j={s.j} N={s.orbit_len} theta0={s.theta0} nu_log2={s.nu_log2}")
print(f"total run {time.time()-t_all:.1f}s")

rep = liouville_certificate([s.alpha for s in stages])
print("liouville:", rep["ok"])
for p in rep["pairs"]:
    print("   ", p)

t0 = time.time()
lift = lift_to_surface(stages[2], "sphere")
print("seam sphere:", lift.seam_residual(), f"({time.time()-t0:.1f}s)")
w = transitivity_witness(stages[2], 0.5)
print("witness:", w)

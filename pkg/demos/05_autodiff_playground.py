# The reverse-mode tape on its own: primitives, gradient checking, Adam,
# and the plateau schedule.

import numpy as np

from wirepinn import autodiff as ad

# build a small graph and differentiate it
rng = np.random.default_rng(0)
w = ad.Tensor(rng.standard_normal((4, 3)))
b = ad.Tensor(np.zeros(4))
x = ad.Tensor(rng.standard_normal(3))

y = ad.elu(ad.dense(x, w, b))
loss = ad.mse(y, 0.5)
ad.backward(loss)
print("loss:", float(loss.value))
print("dL/db:", b.grad)

# check one coordinate against a central difference
h = 1e-6
keep = w.value[2, 1]
w.value[2, 1] = keep + h
f_plus = float(ad.mse(ad.elu(ad.dense(x, w, b)), 0.5).value)
w.value[2, 1] = keep - h
f_minus = float(ad.mse(ad.elu(ad.dense(x, w, b)), 0.5).value)
w.value[2, 1] = keep
fd = (f_plus - f_minus) / (2 * h)
print(f"dL/dw[2,1]: analytic {w.grad[2, 1]:.10f} vs finite difference {fd:.10f}")

# Adam on a scalar quadratic
wopt = ad.Tensor(np.array([0.0]))
state = ad.AdamState([wopt], lr=1e-2)
for _ in range(2000):
    ad.adam_step(state, [wopt], [2.0 * (wopt.value - 3.0)])
print(f"\nAdam on (w-3)^2 from 0: w = {wopt.value[0]:.6f}")

# plateau schedule: halves on stagnation, floors at 1e-5
sched = ad.PlateauScheduler(lr=1e-3, patience=100)
lrs = [ad.scheduler_step(sched, 1.0) for _ in range(1200)]
marks = sorted(set(lrs), reverse=True)
print("lr ladder under a constant loss:", ", ".join(f"{v:g}" for v in marks))

# the generator network is deterministic in its seed
net_a = ad.GeneratorNet(n_out=16, hidden=(4, 8), seed=42)
net_b = ad.GeneratorNet(n_out=16, hidden=(4, 8), seed=42)
print("\nsame seed, identical outputs:",
      np.array_equal(net_a.forward(0.5).value, net_b.forward(0.5).value))
print("generator arch:", net_a.arch_string())

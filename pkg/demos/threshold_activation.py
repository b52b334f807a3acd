"""A quantized tanh is just a staircase: compare it with its thresholds."""

import numpy as np

from qrnn import ActivationKind, QuantParams, gen_thresholds, multithreshold, quant_fused

qp = QuantParams(scale=0.5, zero_point=0, bits=2, signed=True)
attrs = gen_thresholds(ActivationKind.TANH, qp)
print("INT2 tanh thresholds:", np.round(attrs.thresholds[0], 4))
print(f"output = {attrs.out_scale} * count + {attrs.out_bias}")

x = np.linspace(-2, 2, 9)
print(f"{'x':>6} {'quant(tanh x)':>14} {'multithreshold':>15}")
for xi, a, b in zip(x, quant_fused(np.tanh(x), qp), multithreshold(x, attrs)):
    print(f"{xi:6.2f} {a:14.2f} {b:15.2f}")

"""From a feature map to a quality score, and how that score re-weights the logits.

The quality head never sees a quality label.  Sequence scores are weighted
inner products of each temporal feature with a learned softmax weight; three
temporal channels (causal motion window, forward-looking hysteresis window,
and a linear regression) are fused into a positive video score.  Tune-CLS
multiplies each clip's largest logit by that score: above 1 it sharpens the
prediction, below 1 it can overturn it.
"""

import numpy as np

from sslv3.heads import HeadConfig, init_heads, mc_classify, quality_forward, tune_cls
from sslv3.tensor import ParameterStore, Tensor

rng = np.random.default_rng(1)
d, n_t, bs = 8, 4, 3
store = ParameterStore()
init_heads(store, d, n_t, HeadConfig(), rng)

f = Tensor(rng.normal(size=(bs, n_t + 1, d)))  # row 0: class token, rows 1..n_t: sequences
q = quality_forward(f, store, n_t, "full")
print("sequence scores\n", np.round(q.sqs.data, 3))
print("motion weights (rows sum to 1)\n", np.round(q.m_hat.data, 3))
print("channels s1, s2, s3:", np.round(q.s1.data, 3), np.round(q.s2.data, 3), np.round(q.s3.data, 3))
print("video quality scores:", np.round(q.vqs.data, 4), "(start near 1 by construction of the output bias)")

logits = mc_classify(f, store, 3)
tuned, yhat = tune_cls(logits, q.vqs)
print("raw logits\n", np.round(logits.data, 3), "\ntuned logits\n", np.round(tuned.data, 3), "\npredictions", yhat)

for vqs in (1.5, 0.1):
    t, y = tune_cls(Tensor([[2.0, 1.0]]), Tensor([vqs]))
    print(f"logits [2, 1] with quality {vqs}: tuned {t.data[0]}, predicted class {y[0]}")
t, y = tune_cls(Tensor([[-1.0, -2.0]]), Tensor([3.0]))
print(f"all-negative logits [-1, -2] with quality 3: tuned {t.data[0]}, predicted class {y[0]} (literal rule)")

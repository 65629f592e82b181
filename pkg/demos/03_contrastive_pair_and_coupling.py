"""Two weight-shared branches, the pair-matching labels, and the gradient path into the quality head.

Branch 2 sees an independently augmented, shuffled copy of the batch.  Pairs
whose labels agree are pulled together by the contrastive loss, the others
pushed at least a margin apart.  Because the quality score multiplies the
logits, the classification loss alone already delivers gradient to the
quality head; switching Tune-CLS off cuts that path exactly.
"""

import numpy as np

from sslv3.backbone import BackboneConfig, ClipSpec
from sslv3.combined import dual_forward, make_pair, verify_chain_coupling
from sslv3.data import AugmentPolicy, synth_generate
from sslv3.heads import HeadConfig
from sslv3.losses import contrastive_loss
from sslv3.model import ModelConfig, init_model

spec = ClipSpec(T=8, H=16, W=16, t=2, h=4, w=4, d=16)
rng = np.random.default_rng(0)
batch = synth_generate(4, 1, spec, (0.2, 1.0), rng)
pair = make_pair(batch, rng, AugmentPolicy(hflip=0.0))
print("labels x1", pair.x1.labels, " x2", pair.x2.labels, " perm", pair.perm, " match", pair.match)

for mode in ("full", "off"):
    cfg = ModelConfig(spec, BackboneConfig(1, 1, 2, 2), HeadConfig(vqa_mode=mode))
    store = init_model(cfg, 0)
    b1, b2 = dual_forward(pair, store, cfg)
    cl = contrastive_loss(b1.logits, b2.logits, pair.match)
    report = verify_chain_coupling(store, pair, cfg, strict=False)
    top = sorted(report.grad_norms.items(), key=lambda kv: -kv[1])[:3]
    print(f"\nvqa={mode}: contrastive loss {cl.item():.4f}; quality-head gradient norms from the focal loss alone:")
    for name, g in top:
        print(f"  {name:24s} {g:.3e}")

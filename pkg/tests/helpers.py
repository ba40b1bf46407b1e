"""Tiny configurations shared by the fast tests."""
from psco.config import ModelConfig, TrainConfig
from psco.data import SyntheticSpec, make_synthetic


def tiny_config(**kw):
    cfg = TrainConfig(N=16, K=2, M=128, d=8, epochs=3,
                      model=ModelConfig(backbone_hidden=(16, 16), proj_hidden=16, pred_hidden=16))
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg.validate()


def tiny_dataset(seed=0, **kw):
    args = dict(n_classes=4, dim=8, samples_per_class=32, seed=seed)
    args.update(kw)
    spec = SyntheticSpec(**args)
    return make_synthetic(spec)

"""
Heat-plate degradation images and time-to-failure prediction
============================================================

Simulate a small fleet of heated plates, extract MPCA features from the
image streams and fit a lognormal time-to-failure regression.
"""

import numpy as np

from fmpca import (
    SimConfig,
    generate_dataset,
    lls_fit,
    mpca_fit,
    predict_ttf,
    prediction_error,
    project_features,
    simulate_heat,
)

cfg = SimConfig(n=11, kept=(30, 60, 90, 120, 150), asset_count=125)

# one noiseless plate: the center warms up toward the boundary temperature
plate = simulate_heat(1e-4, cfg)
center = plate[cfg.n // 2, cfg.n // 2]
print("center temperature at kept frames:", np.round(center[[k - 1 for k in cfg.kept]], 3))

ds = generate_dataset(cfg)
x, ttf = ds.tensors(), ds.ttfs()
print(f"{len(ds.assets)} assets of shape {x.shape[1:]}, generator ranks {ds.ranks}")

train, test = slice(0, 100), slice(100, None)
model = mpca_fit(x[train], 0.97)
prog = lls_fit(project_features(x[train], model), ttf[train], "lognormal")

# point predictions for the held-out plates
feats = project_features(x[test], model)
err = [prediction_error(predict_ttf(prog, f)[2], z) for f, z in zip(feats, ttf[test])]
print(f"ranks {model.ranks}, median relative error {np.median(err):.3f}")

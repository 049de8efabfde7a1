"""The jitted kernels and the plain-Python fallback are the same source;
this checks the two execution modes agree numerically."""

import os
import subprocess
import sys

import numpy as np

SCRIPT = r"""
import numpy as np
from surveycast.linear import fit_elastic_net, fit_logistic
from surveycast.trees import fit_gbt, fit_random_forest

rng = np.random.default_rng(1234)
X = rng.normal(size=(60, 6))
y = X @ np.array([1.5, -2.0, 0.0, 0.7, 0.0, 0.3]) + 0.2 * rng.normal(size=60)
en = fit_elastic_net(X, y, alpha=0.08, l1_ratio=0.6, tol=1e-10)
print("en", en.coef.tobytes().hex())

yb = (y > np.median(y)).astype(float)
lg = fit_logistic(X, yb, l2_penalty=1e-2)
print("lg", np.concatenate([lg.coef, [lg.intercept]]).tobytes().hex())

gbt = fit_gbt(X, y, learning_rate=0.3, n_estimators=15, max_depth=2,
              subsample=0.8, colsample_bytree=0.7, seed=5)
print("gbt", gbt.predict(X).tobytes().hex())

rf = fit_random_forest(X, y, n_estimators=5, seed=9)
print("rf", rf.predict(X).tobytes().hex())
"""


def run_mode(no_numba: bool) -> dict:
    env = dict(os.environ)
    if no_numba:
        env["SURVEYCAST_NO_NUMBA"] = "1"
    else:
        env.pop("SURVEYCAST_NO_NUMBA", None)
    proc = subprocess.run([sys.executable, "-c", SCRIPT], env=env,
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    return dict(line.split(" ", 1) for line in proc.stdout.strip().splitlines())


def test_fallback_matches_numba():
    with_numba = run_mode(no_numba=False)
    without = run_mode(no_numba=True)
    for key in ("en", "lg", "gbt", "rf"):
        a = np.frombuffer(bytes.fromhex(with_numba[key]))
        b = np.frombuffer(bytes.fromhex(without[key]))
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12, err_msg=key)

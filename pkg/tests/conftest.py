import json

import numpy as np
import pytest

from stackd.simlab import conjugate_loglik_matrix


@pytest.fixture
def conjugate_fixture():
    """Fixed n=30 dataset with two conjugate models' draw matrices."""
    rng = np.random.default_rng(2024)
    y = rng.normal(0.0, 1.0, size=30)
    narrow = conjugate_loglik_matrix(y, 1.0, 2.0, 4000, seed=11, model_id="narrow")
    wide = conjugate_loglik_matrix(y, 1.0, 20.0, 4000, seed=12, model_id="wide")
    return y, [narrow, wide]


def write_manifest(tmp_path, matrices, n_obs, time_ordered=False, content="draws",
                   fmt="csv", r_effs=None):
    """Write model files plus a manifest; returns the manifest path."""
    entries = []
    for i, m in enumerate(matrices):
        model_id = getattr(m, "model_id", f"model_{i}")
        values = getattr(m, "values", m)
        if fmt == "csv":
            path = tmp_path / f"{model_id}.csv"
            np.savetxt(path, np.atleast_2d(values), delimiter=",", fmt="%.17g")
        else:
            path = tmp_path / f"{model_id}.ndjson"
            with open(path, "w") as fh:
                for s, row in enumerate(np.atleast_2d(values)):
                    fh.write(json.dumps({"draw": s, "loglik": list(map(float, row))}))
                    fh.write("\n")
        entry = {"model_id": model_id, "path": path.name, "format": fmt}
        if r_effs is not None and r_effs[i] is not None:
            reff_path = tmp_path / f"{model_id}_reff.txt"
            reff_path.write_text("\n".join(f"{v:.17g}" for v in r_effs[i]) + "\n")
            entry["r_eff_path"] = reff_path.name
        entries.append(entry)
    manifest = {
        "n_obs": n_obs,
        "time_ordered": time_ordered,
        "content": content,
        "models": entries,
    }
    manifest_path = tmp_path / "manifest.json"
    manifest_path.write_text(json.dumps(manifest))
    return manifest_path

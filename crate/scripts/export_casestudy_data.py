"""Export the lung and diabetic retinopathy datasets from R's `survival`
package into the CSV layout read by `dpcox fit` / `dpcox casestudy`.

Requires `lifelines` (lung) and `rdatasets` (diabetic):
    pip install lifelines rdatasets
"""
import hashlib
import pathlib
import sys

import rdatasets
from lifelines.datasets import load_lung


def write(df, path):
    df.to_csv(path, index=False, na_rep="NA", lineterminator="\n")
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    print(f"{path}: {len(df)} rows, sha256 {digest}")


def main(out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lung = load_lung()
    # lifelines recodes R's status (1 = censored, 2 = dead) to 0/1.
    lung["event"] = lung["status"].astype(int)
    cols = ["time", "event", "inst", "age", "sex", "ph.ecog", "ph.karno",
            "pat.karno", "meal.cal", "wt.loss"]
    write(lung[cols], out / "lung.csv")

    diab = rdatasets.data("survival", "diabetic").drop(columns=["rownames"])
    diab["event"] = diab["status"].astype(int)
    diab["laser"] = (diab["laser"] == "xenon").astype(int)
    diab["eye"] = (diab["eye"] == "left").astype(int)
    diab["treatment"] = diab["trt"].astype(int)
    write(diab[["time", "event", "laser", "age", "eye", "treatment"]],
          out / "diabetic.csv")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data")

"""Ablation tables as config rows, and the comparative desk-scale runner.

Row naming follows the study layout: table 2 toggles the two modules
(rows: baseline, w/o MFA, w/o DDA, full); table 3 varies the alignment
internals with the aggregation module replaced by plain concat fusion;
table 4 varies the aggregation internals with alignment disabled.
"""

import csv
import os
from dataclasses import replace

from .model import ModelConfig, build_model
from .train import TrainConfig, train

TABLE2 = [
    ("baseline", dict(use_dda=False, use_mfa=False)),
    ("wo_mfa", dict(use_dda=True, use_mfa=False)),
    ("wo_dda", dict(use_dda=False, use_mfa=True)),
    ("full", dict(use_dda=True, use_mfa=True)),
]

TABLE3 = [(f"da={da}_dga={'on' if dga else 'off'}",
           dict(use_mfa=False,
                use_dda=(da != "none" or dga),
                lda_mode=da, dga_enabled=dga))
          for da in ("none", "in", "bn", "lda") for dga in (False, True)]

TABLE4 = [(f"gc={'on' if gc else 'off'}_attn={attn}",
           dict(use_dda=False, use_mfa=True,
                gc_enabled=gc, attention_mode=attn))
          for gc in (False, True) for attn in ("none", "ca", "sa", "pa")]

TABLES = {2: TABLE2, 3: TABLE3, 4: TABLE4}


def table_configs(table, base=None):
    """(row_name, ModelConfig) for every row of the given table."""
    if table not in TABLES:
        raise ValueError(f"unknown ablation table {table} (have 2, 3, 4)")
    base = base if base is not None else ModelConfig()
    return [(name, replace(base, **overrides).validate())
            for name, overrides in TABLES[table]]


def run_table(table, pairs, out_dir, scale, steps=2000, base_model=None,
              base_train=None, dtype="float32", log=None):
    """Train every row on the same data and seeds; writes a comparative CSV.

    Returns {row_name: (final_loss, mean_rmse)}.
    """
    os.makedirs(out_dir, exist_ok=True)
    base_train = base_train or TrainConfig(steps=steps)
    results = {}
    for name, cfg in table_configs(table, base_model):
        model = build_model(cfg, dtype=dtype)
        run_dir = os.path.join(out_dir, name)
        res = train(model, pairs, replace(base_train, steps=steps), run_dir, scale=scale)
        rmse_val = res.report.mean_rmse if res.report else float("nan")
        results[name] = (res.final_loss, rmse_val)
        if log:
            log(f"{name}: final_loss={res.final_loss:.6f} train_rmse={rmse_val:.4f}"
                + (" [HALTED]" if res.halted else ""))
    csv_path = os.path.join(out_dir, f"table{table}.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "final_loss", "train_rmse"])
        for name, (loss, rm) in results.items():
            w.writerow([name, f"{loss:.9g}", f"{rm:.9g}"])
    return results

"""Writes the bundled market-like return panel (data/market_panel.csv).

Three factors with GARCH(1,1) volatility and fat tails, ten assets whose
betas drift slowly and shift once. Business days only, no beta columns.
"""

import argparse
from pathlib import Path

import numpy as np
import pandas as pd


def garch_returns(rng, n, omega, alpha, beta, df):
    shocks = rng.standard_t(df, size=n) * np.sqrt((df - 2) / df)
    out = np.empty(n)
    var = omega / (1 - alpha - beta)
    for t in range(n):
        out[t] = np.sqrt(var) * shocks[t]
        var = omega + alpha * out[t] ** 2 + beta * var
    return out


def make_panel(n_assets=10, n_days=2000, seed=20160104):
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range("2016-01-04", periods=n_days).strftime("%Y-%m-%d")
    vols = [1e-2, 5e-3, 5e-3]
    factors = np.column_stack(
        [garch_returns(rng, n_days, v * v * 0.05, 0.08, 0.87, 5) for v in vols]
    )
    factors[:, 0] += 3e-4

    rows = []
    for a in range(n_assets):
        start = np.array([rng.uniform(0.6, 1.5), rng.normal(0, 0.4), rng.normal(0, 0.4)])
        drift = np.cumsum(rng.normal(0, 0.01, size=(n_days, 3)), axis=0)
        betas = start + drift
        shift_at = rng.integers(n_days // 5, 4 * n_days // 5)
        betas[shift_at:] += rng.normal(0, 0.3, size=3)
        idio = garch_returns(rng, n_days, (1.2e-2) ** 2 * 0.05, 0.06, 0.89, 6)
        y = np.einsum("td,td->t", betas, factors) + idio
        for t in range(n_days):
            rows.append((dates[t], f"A{a:02d}", y[t], *factors[t]))

    frame = pd.DataFrame(rows, columns=["date", "asset", "y", "x_1", "x_2", "x_3"])
    return frame.sort_values(["date", "asset"], kind="stable")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "market_panel.csv")
    parser.add_argument("--seed", type=int, default=20160104)
    args = parser.parse_args()
    frame = make_panel(seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="\n") as fh:
        fh.write("date,asset,y,x_1,x_2,x_3\n")
        for r in frame.itertuples(index=False):
            fh.write(f"{r.date},{r.asset},{r.y!r},{r.x_1!r},{r.x_2!r},{r.x_3!r}\n")


if __name__ == "__main__":
    main()

"""Weighted l^p ratios of the discrete CZ operator over an L ladder with T = L^2."""
import argparse
import json
from dataclasses import asdict, dataclass, field

from stochhom.fourier import cz_ladder


@dataclass
class CZConfig:
    p: float = 2.0
    gammas: list = field(default_factory=lambda: [0.0, 0.25, 0.4])
    sizes: list = field(default_factory=lambda: [16, 32, 64])
    trials: int = 50
    seed: int = 0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = CZConfig(p=args.p, trials=args.trials, seed=args.seed)
    out = {}
    for gam in cfg.gammas:
        res = cz_ladder(2, cfg.sizes, cfg.p, gam, cfg.trials, cfg.seed)
        res.pop("reports")
        out[str(gam)] = res
    print(json.dumps({"config": asdict(cfg), "results": out}, indent=2))


if __name__ == "__main__":
    main()

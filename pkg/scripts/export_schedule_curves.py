"""Export shifting-schedule curves for plotting.

Writes one CSV per configuration (t, eta, alpha, sqrt_eta, rel_noise):
a sweep over p at T=15, kappa=2, a sweep over kappa at T=15, p=0.3, and the
kappa=40, p=0.8, T=1000 configuration whose noise level climbs like a
standard latent-diffusion schedule.

    python scripts/export_schedule_curves.py --out curves/
"""

import argparse
from pathlib import Path

from resshift.schedule import ScheduleParams, build_schedule, relative_noise_intensity, write_schedule_csv

P_SWEEP = (0.3, 0.5, 1.0, 2.0)
KAPPA_SWEEP = (0.5, 1.0, 2.0, 4.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("curves"))
    ap.add_argument("--signal-power", type=float, default=1.0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    configs = [ScheduleParams(T=15, p=p, kappa=2.0) for p in P_SWEEP]
    configs += [ScheduleParams(T=15, p=0.3, kappa=k) for k in KAPPA_SWEEP if k != 2.0]
    configs.append(ScheduleParams(T=1000, p=0.8, kappa=40.0))
    for params in configs:
        s = build_schedule(params)
        path = args.out / f"schedule_T{params.T}_p{params.p:g}_kappa{params.kappa:g}.csv"
        write_schedule_csv(s, path, args.signal_power)
        rel = relative_noise_intensity(s, args.signal_power)
        print(f"{path.name:<40} eta_1={s.eta[0]:.3e}  rel_noise {rel[0]:.4f} -> {rel[-1]:.4f}")


if __name__ == "__main__":
    main()

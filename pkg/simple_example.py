#!/usr/bin/env python
"""
简单示例 - 模拟数据、估计 TVP-SIRD 并预测
"""
import sys
from pathlib import Path

import numpy as np

# 添加项目路径
sys.path.insert(0, str(Path(__file__).parent))

from src.cli_io import simulate, write_series_csv
from src.core_model import link_forward
from src.forecasting import simulate_forecast
from src.inference import rwmh_within_gibbs, summarize_draws
from src.schema import McmcConfig, RateTriple, SimSpec, StaticParams


def main():
    """主函数"""
    print("=" * 70)
    print("🚀 TVP-SIRD - 简单示例")
    print("=" * 70)

    # 步骤1: 模拟数据
    print("\n📊 步骤1: 模拟数据")
    print("-" * 70)
    theta = link_forward(RateTriple(beta=0.2, gamma=0.1, nu=0.01))
    params = StaticParams(theta_l0=theta, alpha=np.array([0.05, 0.02, 0.02]),
                          psi=np.zeros((3, 3)), psi_star=np.zeros((3, 3)))
    sim = simulate(SimSpec(params=params, n_days=120, population=1e7, i0=1000), seed=7)
    series = sim.series
    output_dir = Path("outputs") / "simple_example"
    write_series_csv(series, output_dir / "series.csv",
                     truth={"beta_true": sim.datasets[0].rates[:, 0]})
    print(f"   天数: {series.n_days}")
    print(f"   累计确诊: {series.delta_c.sum():.0f}")

    # 步骤2: 估计参数
    print("\n⚙️  步骤2: MCMC 估计")
    print("-" * 70)
    config = McmcConfig(n_iter=600, burn_in=200, adapt_start=100, path_draws=50, seed=7, progress=True)
    posterior = rwmh_within_gibbs(series, config)
    summary = summarize_draws(posterior)
    for name in ("alpha_beta", "alpha_gamma", "alpha_nu"):
        print(f"   {name}: {summary[name]['median']:.4f} "
              f"[{summary[name]['hpdi_lower']:.4f}, {summary[name]['hpdi_upper']:.4f}]")

    # 步骤3: 预测
    print("\n📈 步骤3: 14 天预测")
    print("-" * 70)
    forecast = simulate_forecast(series, posterior, 14, reps_per_draw=5, seed=7, max_draws=50)
    for h in (1, 7, 14):
        low, high = forecast.intervals["delta_c"][h - 1]
        print(f"   h={h:2d}: 新增确诊 {forecast.point['delta_c'][h - 1]:.0f} [{low:.0f}, {high:.0f}]")

    print("\n" + "=" * 70)
    print(f"✅ 完成！数据保存在: {output_dir}")
    print("=" * 70)


if __name__ == "__main__":
    main()

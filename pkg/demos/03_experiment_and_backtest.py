"""A reduced tuning experiment, its loglinear-variance analysis, and a rolling backtest."""
# %%
from seasoncast.analysis import analyze_runs, paired_comparison_report
from seasoncast.datagen import SimConfig, simulate_skill
from seasoncast.harness import BacktestPlan, full_factorial, run_backtest, run_experiment

skills = {f"S{k}": simulate_skill(SimConfig(n_weeks=7, seed=k, volume_scale=3.0), f"S{k}") for k in range(3)}

# %% 2 x 2 x 2 design over three skills and three days
design = full_factorial({"model.type": ["dense", "gru"], "nlayers": [1, 2], "mixed.cheat": [False, True],
                         "nnodes": [25], "kernel.L2.reg": [0.0001]})
runs = run_experiment(design, skills, [33, 34, 35], max_epochs=40)
print(len(runs), "runs,", sum(r.status == "ok" for r in runs), "ok")

res = analyze_runs(runs)
for row in res.variance_tests:
    print("variance %-14s chi2 %7.2f  p %.3f" % (row["source"], row["chi_square"], row["p"]))
print("best row:", res.selection.best_row, "upper PI WAPE %.3f" % res.selection.criterion)

# %% rolling day-ahead backtest of the classical models
plan = BacktestPlan(skills=list(skills), n_forecast_days=5, models=["DoublyStoch", "Winters", "ARIMA",
                                                                   "SeasonalNaive"])
bt = run_backtest(plan, skills)
for row in bt.summary:
    print(row["split"], row["sum_call_vol"], {m: round(row[m], 4) for m in plan.models})
print(paired_comparison_report(bt.wape_table(), "Winters", "DoublyStoch"))

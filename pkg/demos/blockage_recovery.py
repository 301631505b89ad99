# %% [markdown]
# # Rate splitting versus private-only transmission under blockage
#
# The same seed, channels and blockage schedule run twice. One run may
# regroup users into common-message groups after each blockage; the other
# treats all cross traffic as noise. Both are scored with the resilience
# metric.

# %%
import numpy as np

from rsrecover import ScenarioConfig, compare_modes

config = ScenarioConfig(n_users=6, blockage_times_s=(2.0, 4.0), observation_length_s=6.0,
                        qos_rate_bps=60e6, seed=3)
comparison = compare_modes(config)
table = comparison.table()

# %% [markdown]
# Before the first blockage the two runs are the same trajectory.

# %%
first = comparison.rs[0].event_indices()[0]
print("max gap before first event:", np.max(np.abs(table["perf_rs"][:first] - table["perf_tin"][:first])))

# %% [markdown]
# What each blockage did to the grouped run.

# %%
for report in comparison.rs[0].reports:
    ev = report.event
    adm = [(a.user, a.host, a.kind) for a in report.admissions]
    print(f"t={ev.time_s:.1f}s AP {ev.ap_index} -> user {ev.user_index}: purged {report.purged_from}, "
          f"admitted {adm or 'none'}")

# %% [markdown]
# Performance and the common-rate sum, every half second.

# %%
step = int(round(0.5 / config.tick_seconds))
print(" time   perf RS  perf TIN  common RS (Mbit/s)")
for t in range(0, len(table["time_s"]), step):
    print(f"{table['time_s'][t]:5.2f}  {table['perf_rs'][t]:8.4f}  {table['perf_tin'][t]:8.4f}  "
          f"{table['common_rate_sum_rs_bps'][t] / 1e6:8.3f}")

# %%
for name, (trace, summary) in (("RS", comparison.rs), ("TIN", comparison.tin)):
    for s in trace.scores:
        print(f"{name}: event at {s.t0:.2f}s, absorbed {s.r_abs:.4f}, adapted {s.r_ada:.4f} "
              f"at {s.t_n:.2f}s, above pre-event level: {s.antifragile}")

# %% [markdown]
# Optional figure, if matplotlib is around.

# %%
try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    ax1.plot(table["time_s"], table["perf_rs"], label="rate splitting")
    ax1.plot(table["time_s"], table["perf_tin"], label="private only")
    ax1.set_ylabel("performance")
    ax1.legend()
    ax2.plot(table["time_s"], table["common_rate_sum_rs_bps"] / 1e6)
    ax2.set_ylabel("common rate (Mbit/s)")
    ax2.set_xlabel("time (s)")
    fig.savefig("blockage_recovery.png", dpi=120)
    print("wrote blockage_recovery.png")

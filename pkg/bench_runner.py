#!/usr/bin/env python3

from collections import defaultdict
import json
import os
import re
import subprocess
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

RESULTS_FILE = "bench_results.json"
PLOTS_DIR = "plots"

def strip_ansi(text):
    return re.sub(r'\033\[[0-9;]*m', '', text)

def format_cell(text, width, align="right"):
    visible_len = len(strip_ansi(text))
    padding = " " * (width - visible_len)
    if align == "left":
        return text + padding
    return padding + text

def get_diff(curr, base):
    if base is None or base == 0: return "+0.0%"
    diff = (curr - base) / base * 100
    color = "\033[91m" if diff > 5 else "\033[92m" if diff < -5 else ""
    reset = "\033[0m" if color else ""
    return f"{color}{diff:+.1f}%{reset}"

def format_value(value):
    if value is None:
        return "-"
    if isinstance(value, int):
        return str(value)
    return f"{value:.4g}"

def run_bench(path):
    print(f"Running {path}...", end="", flush=True)
    result = subprocess.run([sys.executable, path], capture_output=True, text=True)
    print(" Done.")
    if result.returncode != 0:
        print(f"Error running {path}:\n{result.stderr}")
        return []
    try:
        return json.loads(result.stdout)
    except json.JSONDecodeError:
        print(f"Failed to parse JSON from {path}")
        return []

def key(res):
    return (res["test"], res["implementation"], res["n"], res.get("metric", ""))

def print_results(all_results, baseline):
    base_by_key = {key(b): b for b in baseline}

    test_w = max([len(res["test"]) for res in all_results] + [4]) + 2
    impl_w = max([len(res["implementation"]) for res in all_results] + [4]) + 2
    metric_w = max([len(res.get("metric", "")) for res in all_results] + [6]) + 2

    table_width = test_w + impl_w + metric_w + 6 + 10 + 8 + 10 + 12 + 24

    print("\n" + "="*table_width)
    header = (f"| {format_cell('Test', test_w, 'left')} | {format_cell('Impl', impl_w, 'left')} | {'N':6} | "
              f"{'Time (ms)':10} | {'Diff':8} | {'Iters':10} | {format_cell('Metric', metric_w, 'left')} | {'Value':12} |")
    print(header)
    print("-" * table_width)

    for res in all_results:
        base = base_by_key.get(key(res))
        diff_str = get_diff(res["time_ms"], base["time_ms"] if base else None)
        value = format_value(res.get("value"))
        if base is not None and res.get("value") is not None and base.get("value") is not None:
            value = f"{value} ({format_value(base['value'])})"
        row = (f"| {format_cell(res['test'], test_w, 'left')} | {format_cell(res['implementation'], impl_w, 'left')} | "
               f"{res['n']:6} | {res['time_ms']:10.2f} | {format_cell(diff_str, 8)} | "
               f"{format_cell(str(res.get('iters', 1)), 10)} | {format_cell(res.get('metric', ''), metric_w, 'left')} | "
               f"{format_cell(value, 12)} |")
        print(row)

def plot_results(all_results):
    if not os.path.exists(PLOTS_DIR):
        os.makedirs(PLOTS_DIR)

    # Group timings by test; only scaling runs (several N) get a plot
    tests = defaultdict(lambda: defaultdict(dict))
    for entry in all_results:
        tests[entry["test"]][entry["implementation"]][entry["n"]] = entry["time_ms"]
    tests = {t: impls for t, impls in tests.items() if any(len(points) > 1 for points in impls.values())}

    print(f"Generating {len(tests)} plots in {PLOTS_DIR}/...")

    for test_name, impls in sorted(tests.items()):
        plt.figure(figsize=(10, 6))

        for impl, points in impls.items():
            ns = sorted(points)
            plt.plot(ns, [points[n] for n in ns], marker='o', label=impl)

        plt.title(f"Scaling: {test_name}")
        plt.xlabel("N (grid points per axis)")
        plt.ylabel("Time (ms)")
        plt.xscale('log', base=2)
        plt.yscale('log')
        plt.grid(True, which="both", ls="-", alpha=0.5)
        plt.legend()

        safe_name = re.sub(r'[^a-z0-9]+', '_', test_name.lower()).strip('_')
        filename = os.path.join(PLOTS_DIR, f"bench_{safe_name}.png")
        plt.savefig(filename)
        plt.close()
        print(f"  - {test_name}")

    print("\nDone.")

def main():
    update_baseline = "--update" in sys.argv
    only = [a for a in sys.argv[1:] if not a.startswith("--")]
    bench_dir = "benchmarks"

    files = [os.path.join(bench_dir, f) for f in os.listdir(bench_dir)
             if f.endswith(".py") and (not only or os.path.splitext(f)[0] in only)]
    files.sort()

    all_results = []
    for f in files:
        all_results.extend(run_bench(f))
    if not all_results:
        print("No results.")
        return

    all_results.sort(key=lambda x: (x["test"], x["implementation"], x["n"]))

    baseline = []
    if os.path.exists(RESULTS_FILE):
        with open(RESULTS_FILE, "r") as f:
            baseline = json.load(f)

    print_results(all_results, baseline)

    if update_baseline:
        with open(RESULTS_FILE, "w") as f:
            json.dump(all_results, f, indent=2)
        print(f"\nBaseline updated in {RESULTS_FILE}")

    plot_results(all_results)

if __name__ == "__main__":
    main()

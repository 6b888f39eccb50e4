"""Print the summary block of every ``manifest.json`` under a results directory.

Usage: python3 scripts/summarize.py [results]
"""
import json
import sys
from pathlib import Path


def main():
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "results")
    for manifest in sorted(root.glob("*/manifest.json")):
        data = json.loads(manifest.read_text())
        print(f"{data['name']} [{data['mode']}] seed {data['base_seed']}, "
              f"{len(data['trial_seeds'])} trials, config {data['config_hash'][:12]}")
        for key, value in data["summary"].items():
            print(f"  {key} = {value}")


if __name__ == "__main__":
    main()

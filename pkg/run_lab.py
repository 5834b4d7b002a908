#!/usr/bin/env python3
"""
run_lab.py - entry point for the stability lab CLI

    python run_lab.py bounds configs/two_node_pair.json
    python run_lab.py converge configs/ising_mis.json --jobs 4
    python run_lab.py oracle
"""

from stability_lab.cli import main

if __name__ == "__main__":
    main()

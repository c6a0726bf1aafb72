"""Entry point for running apw-dg as a module.

Usage:
    python -m apwdg solve --config config/example1.yaml
    python -m apwdg --help
"""

from apwdg.cli import main

if __name__ == "__main__":
    main()
